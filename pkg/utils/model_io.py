"""Versioned text formats for trained models.

Every file starts with a ``# tireforce model v1`` line followed by
``key value`` header lines and the normalization stats the model was trained
with. Networks then list their weight matrices row-major, one ``array`` block
per matrix; forests list each tree's nodes in preorder as ``split feature
threshold`` or ``leaf value`` lines. Floats are written with 17 significant
digits so a reloaded model predicts bit-identically.
"""

import os
import logging
from typing import Dict, List, Tuple

import numpy as np

from services.evaluation import ORACLE, FittedModel
from services.mlp_rprop import MlpModel, MlpNetwork
from services.preprocess import MinMaxStats
from services.random_forest import LEAF, Forest, RegressionTree
from services.rnn import RnnLayer, RnnModel, RnnNetwork
from utils.errors import DataError

logger = logging.getLogger(__name__)

FORMAT_HEADER = "# tireforce model v1"


def _f(x: float) -> str:
    return format(float(x), ".17g")


def _array_block(name: str, a: np.ndarray) -> List[str]:
    a = np.atleast_1d(a)
    shape = " ".join(str(d) for d in a.shape)
    return [f"array {name} {shape}", " ".join(_f(v) for v in a.ravel())]


def _header(fitted: FittedModel, extra: Dict[str, str]) -> List[str]:
    lines = [FORMAT_HEADER, f"method {fitted.method}", f"axis {fitted.axis}"]
    lines += [f"{key} {value}" for key, value in extra.items()]
    lines += [f"stats {name} {_f(lo)} {_f(hi)}" for name, (lo, hi) in fitted.stats.bounds.items()]
    return lines


def _mlp_lines(fitted: FittedModel) -> List[str]:
    model: MlpModel = fitted.model
    net = model.network
    lines = _header(fitted, {
        "layers": " ".join(str(s) for s in net.layer_sizes),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "target_offset": _f(model.target_offset),
        "target_scale": _f(model.target_scale),
    })
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines += _array_block(f"w{i}", w) + _array_block(f"b{i}", b)
    return lines


def _rnn_lines(fitted: FittedModel) -> List[str]:
    model: RnnModel = fitted.model
    net = model.network
    lines = _header(fitted, {
        "cell_type": net.cell_type,
        "activation": net.activation,
        "hidden_layers": " ".join(str(s) for s in net.hidden_sizes),
        "sequence_length": str(net.sequence_length),
        "sequence_mode": fitted.sequence_mode,
        "target_offset": _f(model.target_offset),
        "target_scale": _f(model.target_scale),
    })
    for i, layer in enumerate(net.layers):
        lines += _array_block(f"w_in{i}", layer.w_in)
        lines += _array_block(f"w_rec{i}", layer.w_rec)
        lines += _array_block(f"bias{i}", layer.bias)
    lines += _array_block("w_out", net.w_out) + _array_block("b_out", net.b_out)
    if model.input_offset is not None:
        lines += _array_block("input_offset", model.input_offset)
    return lines


def _forest_lines(fitted: FittedModel) -> List[str]:
    forest: Forest = fitted.model
    lines = _header(fitted, {"n_trees": str(len(forest.trees)), "mtry": str(forest.mtry),
                             "n_features": str(forest.n_features)})
    for i, tree in enumerate(forest.trees):
        seed = forest.tree_seeds[i] if i < len(forest.tree_seeds) else 0
        lines.append(f"tree {i} seed {seed} nodes {tree.n_nodes}")
        for node in range(tree.n_nodes):
            if tree.feature[node] == LEAF:
                lines.append(f"leaf {_f(tree.value[node])}")
            else:
                lines.append(f"split {tree.feature[node]} {_f(tree.threshold[node])} {_f(tree.value[node])}")
    return lines


def save_model(fitted: FittedModel, path: str):
    writers = {"mlp": _mlp_lines, "rnn": _rnn_lines, "forest": _forest_lines,
               ORACLE: lambda f: _header(f, {})}
    if fitted.method not in writers:
        raise DataError(f"cannot persist method {fitted.method!r}")
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(writers[fitted.method](fitted)) + "\n")
    except OSError as e:
        raise DataError(f"cannot write model {path}: {e}")
    logger.info(f"Saved {fitted.method} model for {fitted.axis} to {path}")


def _parse(lines: List[str]) -> Tuple[Dict[str, str], Dict[str, Tuple[float, float]], Dict[str, np.ndarray], List[str]]:
    header, stats, arrays, rest = {}, {}, {}, []
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "array":
            shape = tuple(int(d) for d in parts[2:])
            values = np.array([float(v) for v in lines[i + 1].split()]) if i + 1 < len(lines) else np.zeros(0)
            if values.size != int(np.prod(shape)):
                raise DataError(f"array {parts[1]} declares shape {shape} but has {values.size} values")
            arrays[parts[1]] = values.reshape(shape)
            i += 2
            continue
        if parts[0] == "stats":
            stats[parts[1]] = (float(parts[2]), float(parts[3]))
        elif parts[0] in ("tree", "split", "leaf"):
            rest.append(lines[i])
        else:
            header[parts[0]] = " ".join(parts[1:])
        i += 1
    return header, stats, arrays, rest


def _tree_from_preorder(node_lines: List[str], n_features: int) -> RegressionTree:
    n = len(node_lines)
    feature = np.full(n, LEAF, dtype=int)
    threshold = np.zeros(n)
    value = np.zeros(n)
    for i, line in enumerate(node_lines):
        parts = line.split()
        if parts[0] == "leaf":
            value[i] = float(parts[1])
        else:
            feature[i], threshold[i], value[i] = int(parts[1]), float(parts[2]), float(parts[3])

    # node ids are preorder positions: a left child follows its parent, the right child follows the left subtree
    size = np.ones(n, dtype=int)
    for i in range(n - 1, -1, -1):
        if feature[i] != LEAF:
            size[i] = 1 + size[i + 1] + size[i + 1 + size[i + 1]]
    left = np.full(n, LEAF, dtype=int)
    right = np.full(n, LEAF, dtype=int)
    split = feature != LEAF
    left[split] = np.nonzero(split)[0] + 1
    right[split] = left[split] + size[left[split]]
    return RegressionTree(feature, threshold, left, right, value, n_features)


def load_model(path: str) -> FittedModel:
    if not os.path.exists(path):
        raise DataError(f"missing model file {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or lines[0] != FORMAT_HEADER:
        raise DataError(f"{path} is not a v1 model file")
    try:
        header, bounds, arrays, rest = _parse(lines[1:])
        method, axis = header["method"], header["axis"]
        stats = MinMaxStats(bounds)

        if method == "mlp":
            sizes = [int(s) for s in header["layers"].split()]
            n_layers = len(sizes) - 1
            net = MlpNetwork(sizes, [arrays[f"w{i}"] for i in range(n_layers)],
                             [arrays[f"b{i}"] for i in range(n_layers)],
                             header["hidden_activation"], header["output_activation"])
            model = MlpModel(net, float(header["target_offset"]), float(header["target_scale"]))
            return FittedModel(method, axis, model, stats)

        if method == "rnn":
            n_layers = len(header["hidden_layers"].split())
            layers = [RnnLayer(arrays[f"w_in{i}"], arrays[f"w_rec{i}"], arrays[f"bias{i}"]) for i in range(n_layers)]
            net = RnnNetwork(layers, arrays["w_out"], arrays["b_out"], int(header["sequence_length"]),
                             header["cell_type"], header["activation"])
            model = RnnModel(net, float(header["target_offset"]), float(header["target_scale"]),
                             arrays.get("input_offset"))
            return FittedModel(method, axis, model, stats, sequence_mode=header["sequence_mode"],
                               sequence_length=net.sequence_length)

        if method == "forest":
            n_features = int(header["n_features"])
            trees, seeds, current = [], [], None
            for line in rest:
                if line.startswith("tree"):
                    if current is not None:
                        trees.append(_tree_from_preorder(current, n_features))
                    seeds.append(int(line.split()[3]))
                    current = []
                else:
                    current.append(line)
            if current is not None:
                trees.append(_tree_from_preorder(current, n_features))
            forest = Forest(trees, seeds, int(header["mtry"]), n_features)
            return FittedModel(method, axis, forest, stats)

        if method == ORACLE:
            return FittedModel(method, axis, None, stats)
    except (KeyError, ValueError, IndexError) as e:
        raise DataError(f"{path}: malformed model file ({e})")
    raise DataError(f"{path}: unknown method {header.get('method')!r}")
