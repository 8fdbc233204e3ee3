"""Metrics, dataset splits, cross-validation and the method-comparison harness.

Every estimator is driven through the same `AxisData` for a comparison run:
one seeded split, one set of min-max statistics fitted on its training part,
one normalized feature matrix. The methods differ only in how they fit and
predict.
"""

import time
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.mlp_rprop import TrainConfig, train_mlp
from services.preprocess import AXIS_CHANNELS, MinMaxStats, WindowSet
from services.random_forest import ForestConfig, train_forest
from services.rnn import (
    RnnTrainConfig,
    build_angular_sequences,
    build_sequences,
    stack_sequences,
    train_rnn,
)
from utils.errors import RejectedInputError, TireForceError, UndefinedNormalizerError

logger = logging.getLogger(__name__)

METHODS = ("mlp", "forest", "rnn")
ORACLE = "oracle"
SUMMARY_KEYS = ("min", "q1", "median", "q3", "max", "mean")


def nrms(measured: Sequence[float], estimated: Sequence[float], literal: bool = False) -> float:
    """RMS error as a percentage of the largest measured magnitude.

    With ``literal`` the unrooted, unaveraged sum of squared errors is divided
    by the largest magnitude instead, for comparison with the formula as
    printed in the source study.
    """
    measured = np.asarray(measured, dtype=float)
    estimated = np.asarray(estimated, dtype=float)
    if measured.shape != estimated.shape or measured.size == 0:
        raise RejectedInputError(f"series must have equal nonzero length, got {measured.shape} and {estimated.shape}")
    peak = float(np.max(np.abs(measured)))
    if peak == 0.0:
        raise UndefinedNormalizerError("measured series is all zero")
    squared = (measured - estimated) ** 2
    if literal:
        return float(np.sum(squared) / peak * 100.0)
    return float(np.sqrt(np.mean(squared)) / peak * 100.0)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    validation: float = 0.15
    test: float = 0.15
    rng_seed: int = 42

    def validate(self):
        fractions = (self.train, self.validation, self.test)
        if min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
            raise RejectedInputError(f"split fractions must be positive and sum to 1, got {fractions}")

    @classmethod
    def from_config(cls, cfg) -> "SplitSpec":
        return cls(cfg.split.train, cfg.split.validation, cfg.split.test, cfg.seed)


def split_dataset(n: int, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random partition of range(n) into sorted train/validation/test index arrays"""
    spec.validate()
    if n < 10:
        raise RejectedInputError(f"need at least 10 samples to split, got {n}")
    order = np.random.default_rng(spec.rng_seed).permutation(n)
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.validation * n))
    n_train = min(n_train, n - 2)
    n_val = max(1, min(n_val, n - n_train - 1))
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(np.sort(p) for p in parts)


def summarize_scores(scores: Sequence[float]) -> Dict[str, float]:
    values = np.asarray(scores, dtype=float)
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return {"min": float(values.min()), "q1": float(q1), "median": float(median),
            "q3": float(q3), "max": float(values.max()), "mean": float(values.mean())}


@dataclass
class CvResult:
    scores: List[float]
    folds: List[np.ndarray]
    summary: Dict[str, float]


def kfold_cv(n: int, k: int, trainer: Callable[[np.ndarray, np.ndarray, int], Tuple[np.ndarray, np.ndarray]],
             seed: int = 42, literal: bool = False) -> CvResult:
    """k-fold cross-validation; trainer(train_idx, test_idx, fold_seed) returns (measured, estimated)"""
    if k < 2:
        raise RejectedInputError("k must be at least 2")
    if k > n:
        raise RejectedInputError(f"k={k} exceeds the dataset size {n}")
    order = np.random.default_rng(seed).permutation(n)
    folds = [np.sort(f) for f in np.array_split(order, k)]
    scores = []
    for i, test_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        measured, estimated = trainer(train_idx, test_idx, seed + i)
        scores.append(nrms(measured, estimated, literal))
        logger.info(f"Fold {i + 1}/{k}: NRMS {scores[-1]:.3f}%")
    return CvResult(scores=scores, folds=folds, summary=summarize_scores(scores))


@dataclass
class AxisData:
    """Usable windows for one axis, a split of them and the features normalized on its training part"""
    windows: WindowSet
    axis: str
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    stats: MinMaxStats
    features: np.ndarray
    targets: np.ndarray

    @classmethod
    def prepare(cls, windows: WindowSet, axis: str, train: np.ndarray, validation: np.ndarray,
                test: np.ndarray) -> "AxisData":
        stats = windows.subset(train).fit_minmax(axis)
        return cls(windows, axis, np.asarray(train), np.asarray(validation), np.asarray(test), stats,
                   windows.features(axis, stats), windows.targets(axis))

    @classmethod
    def from_split(cls, all_windows: WindowSet, axis: str, spec: SplitSpec) -> "AxisData":
        usable = all_windows.usable_for(axis)
        train, validation, test = split_dataset(len(usable), spec)
        return cls.prepare(usable, axis, train, validation, test)

    def with_stats(self, stats: MinMaxStats) -> "AxisData":
        return AxisData(self.windows, self.axis, self.train, self.validation, self.test, stats,
                        self.windows.features(self.axis, stats), self.targets)


@dataclass
class FittedModel:
    method: str
    axis: str
    model: Any
    stats: MinMaxStats
    history: List[Dict] = field(default_factory=list)
    sequence_mode: str = "revolutions"
    sequence_length: int = 10


def rnn_sequences(data: AxisData, mode: str = "revolutions", length: int = 10):
    """Sequences over all usable rows; membership in a split part goes by the final revolution"""
    if mode == "angular":
        return build_angular_sequences(data.features, data.targets, len(AXIS_CHANNELS[data.axis]))
    w = data.windows
    return build_sequences(data.features, data.targets, w.entry_indices, w.revolution_indices, length)


def _select(sequences, index: np.ndarray):
    members = set(int(i) for i in index)
    return [s for s in sequences if s.last_index in members]


def fit_model(method: str, data: AxisData, cfg, seed: int) -> FittedModel:
    """Train one method on data.train (validation part used where the method needs it)"""
    if method == "mlp":
        model, history = train_mlp((data.features[data.train], data.targets[data.train]),
                                   (data.features[data.validation], data.targets[data.validation]),
                                   TrainConfig.from_config(cfg.mlp, seed))
        return FittedModel(method, data.axis, model, data.stats, history.rows())
    if method == "forest":
        model = train_forest(data.features[data.train], data.targets[data.train],
                             ForestConfig.from_config(cfg.forest, seed))
        return FittedModel(method, data.axis, model, data.stats)
    if method == "rnn":
        mode, length = cfg.rnn.sequence_mode, cfg.rnn.sequence_length
        sequences = rnn_sequences(data, mode, length)
        train_seq = _select(sequences, data.train)
        if not train_seq:
            raise RejectedInputError(f"no RNN training sequences of length {length} for {data.axis}")
        validation = _select(sequences, data.validation)
        model, history = train_rnn(train_seq, RnnTrainConfig.from_config(cfg.rnn, seed), validation or None)
        return FittedModel(method, data.axis, model, data.stats, history.rows(), mode,
                           model.network.sequence_length)
    if method == ORACLE:
        return FittedModel(method, data.axis, None, data.stats)
    raise RejectedInputError(f"unknown method {method!r}")


def predict_rows(fitted: FittedModel, data: AxisData, index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rows that could be estimated (all of `index` except RNN rows without full history) and the estimates"""
    index = np.asarray(index)
    if fitted.method == ORACLE:
        return index, data.targets[index].copy()
    if fitted.method == "rnn":
        selected = _select(rnn_sequences(data, fitted.sequence_mode, fitted.sequence_length), index)
        if not selected:
            raise RejectedInputError("no evaluation rows have a full RNN history")
        X, _ = stack_sequences(selected)
        return np.array([s.last_index for s in selected]), fitted.model.predict(X)
    return index, np.asarray(fitted.model.predict(data.features[index]), dtype=float)


@dataclass
class MethodResult:
    method: str
    axis: str
    nrms: float = float("nan")
    n_train: int = 0
    n_test: int = 0
    train_seconds: float = 0.0
    status: str = "ok"
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    estimated: np.ndarray = field(default_factory=lambda: np.zeros(0))
    per_maneuver: Dict[str, float] = field(default_factory=dict)
    above_train_max: float = float("nan")
    fitted: Optional[FittedModel] = None


@dataclass
class EvalReport:
    results: List[MethodResult] = field(default_factory=list)
    cv: Dict[Tuple[str, str], CvResult] = field(default_factory=dict)
    series: Dict[Tuple[str, str], List[Dict]] = field(default_factory=dict)
    slip_series: Dict[Tuple[str, str], List[Dict]] = field(default_factory=dict)

    def summary_rows(self) -> List[Dict]:
        rows = []
        for r in self.results:
            row = {"method": r.method, "axis": r.axis, "n_train": r.n_train, "n_test": r.n_test,
                   "nrms_pct": r.nrms, "status": r.status}
            for maneuver, value in sorted(r.per_maneuver.items()):
                row[f"nrms_{maneuver}_pct"] = value
            if not np.isnan(r.above_train_max):
                row["share_above_train_max"] = r.above_train_max
            rows.append(row)
        return rows

    def timing_rows(self) -> List[Dict]:
        return [{"method": r.method, "axis": r.axis, "n_train": r.n_train, "train_seconds": r.train_seconds}
                for r in self.results]

    def fold_rows(self) -> List[Dict]:
        rows = []
        for (method, axis), result in sorted(self.cv.items()):
            for i, score in enumerate(result.scores):
                rows.append({"method": method, "axis": axis, "fold": i + 1, "nrms_pct": score})
        return rows

    def boxplot_rows(self, axis: str) -> List[Dict]:
        return [{"method": method, **{key: result.summary[key] for key in SUMMARY_KEYS}}
                for (method, a), result in sorted(self.cv.items()) if a == axis]

    def text(self) -> str:
        lines = ["method   axis  n_train  n_test  NRMS(%)  status"]
        for r in self.results:
            lines.append(f"{r.method:<8} {r.axis:<5} {r.n_train:>7} {r.n_test:>7} {r.nrms:>8.3f}  {r.status}")
            for maneuver, value in sorted(r.per_maneuver.items()):
                lines.append(f"{'':<14}{maneuver:<14} {value:>8.3f}")
        for (method, axis), result in sorted(self.cv.items()):
            stats = "  ".join(f"{key}={result.summary[key]:.3f}" for key in SUMMARY_KEYS)
            lines.append(f"cv {method} {axis} k={len(result.scores)}: {stats}")
        return "\n".join(lines) + "\n"


def nrms_by_maneuver(data: AxisData, rows: np.ndarray, estimated: np.ndarray, literal: bool = False) -> Dict[str, float]:
    """NRMS over every maneuver kind present in the rows, plus 'all'"""
    measured = data.targets[rows]
    out = {}
    maneuvers = data.windows.maneuvers[rows]
    for maneuver in sorted(set(maneuvers)):
        mask = maneuvers == maneuver
        try:
            out[maneuver] = nrms(measured[mask], estimated[mask], literal)
        except UndefinedNormalizerError:
            out[maneuver] = float("nan")
    out["all"] = nrms(measured, estimated, literal)
    return out


def measured_vs_estimated(data: AxisData, rows: np.ndarray, estimated: np.ndarray) -> List[Dict]:
    """Plot-data rows sorted by sample (trace) index"""
    trace_ids = data.windows.trace_ids[rows]
    order = np.argsort(trace_ids, kind="stable")
    return [{"sample_index": int(trace_ids[i]), "measured_n": float(data.targets[rows[i]]),
             "estimated_n": float(estimated[i])} for i in order]


def lateral_force_vs_slip(data: AxisData, rows: np.ndarray, estimated: np.ndarray) -> List[Dict]:
    slip = data.windows.slip_angles[rows]
    order = np.argsort(slip, kind="stable")
    return [{"slip_deg": float(slip[i]), "measured_n": float(data.targets[rows[i]]),
             "estimated_n": float(estimated[i])} for i in order]


def evaluate_fitted(fitted: FittedModel, data: AxisData, index: np.ndarray, literal: bool = False) -> MethodResult:
    rows, estimated = predict_rows(fitted, data, index)
    per_maneuver = nrms_by_maneuver(data, rows, estimated, literal)
    return MethodResult(method=fitted.method, axis=data.axis, nrms=per_maneuver.pop("all"),
                        n_train=len(data.train), n_test=len(rows), rows=rows, estimated=estimated,
                        per_maneuver=per_maneuver if len(per_maneuver) > 1 else {}, fitted=fitted)


def run_method(method: str, data: AxisData, cfg, seed: int, literal: bool = False) -> MethodResult:
    """Fit on the training part, score on the test part; failures are recorded, not raised"""
    start = time.perf_counter()
    try:
        fitted = fit_model(method, data, cfg, seed)
        elapsed = time.perf_counter() - start
        result = evaluate_fitted(fitted, data, data.test, literal)
        result.train_seconds = elapsed
    except TireForceError as e:
        logger.error(f"Method {method} failed on {data.axis}: {e}")
        return MethodResult(method=method, axis=data.axis, n_train=len(data.train),
                            train_seconds=time.perf_counter() - start, status=f"failed: {e}")
    logger.info(f"{method} {data.axis}: test NRMS {result.nrms:.3f}% on {result.n_test} rows")
    return result


def add_series(report: EvalReport, result: MethodResult, data: AxisData):
    if result.status != "ok":
        return
    report.series[(result.method, result.axis)] = measured_vs_estimated(data, result.rows, result.estimated)
    if data.axis == "fy":
        report.slip_series[(result.method, result.axis)] = lateral_force_vs_slip(data, result.rows, result.estimated)


def score_on_shared_rows(results: Sequence[MethodResult], data: AxisData, literal: bool = False):
    """Rescore successful results on the test rows every one of them could estimate"""
    ok = [r for r in results if r.status == "ok"]
    if len(ok) < 2:
        return
    shared = ok[0].rows
    for r in ok[1:]:
        shared = np.intersect1d(shared, r.rows)
    if shared.size == 0:
        logger.warning(f"No test rows shared by {[r.method for r in ok]} on {data.axis}, scores use each method's own rows")
        return
    for r in ok:
        if len(r.rows) == shared.size:
            continue
        keep = np.isin(r.rows, shared)
        logger.info(f"{r.method} {data.axis}: scoring {shared.size} of {len(r.rows)} rows shared with the other methods")
        r.rows, r.estimated = r.rows[keep], r.estimated[keep]
        per_maneuver = nrms_by_maneuver(data, r.rows, r.estimated, literal)
        r.nrms = per_maneuver.pop("all")
        r.per_maneuver = per_maneuver if len(per_maneuver) > 1 else {}
        r.n_test = len(r.rows)


def compare_methods(data: AxisData, cfg, methods: Sequence[str] = METHODS,
                    report: Optional[EvalReport] = None) -> EvalReport:
    """Train every method on the same split and features, scoring all of them on the same test rows"""
    report = report or EvalReport()
    results = [run_method(method, data, cfg, cfg.seed, cfg.eval.nrms_literal) for method in methods]
    score_on_shared_rows(results, data, cfg.eval.nrms_literal)
    for result in results:
        report.results.append(result)
        add_series(report, result, data)
    return report


def rows_with_history(windows: WindowSet, length: int) -> np.ndarray:
    """Rows preceded by length - 1 consecutive revolutions of the same schedule entry"""
    samples = build_sequences(np.zeros((len(windows), 1)), np.zeros(len(windows)), windows.entry_indices,
                              windows.revolution_indices, length)
    return np.array([s.last_index for s in samples], dtype=int)


def cross_validate(windows: WindowSet, axis: str, method: str, cfg, history_length: int = 0) -> CvResult:
    """k-fold CV over the usable windows of one axis; per fold the remainder is split into train and validation.

    With ``history_length`` every fold is scored only on rows that have that
    many consecutive revolutions, so methods with and without sequence input
    are compared on the same rows.
    """
    usable = windows.usable_for(axis)
    val_share = cfg.split.validation / (cfg.split.train + cfg.split.validation)
    scored = rows_with_history(usable, history_length) if history_length > 1 else None

    def trainer(train_idx, test_idx, fold_seed):
        shuffled = np.random.default_rng(fold_seed).permutation(train_idx)
        n_val = max(1, int(round(val_share * len(shuffled))))
        if scored is not None:
            test_idx = test_idx[np.isin(test_idx, scored)]
        data = AxisData.prepare(usable, axis, np.sort(shuffled[n_val:]), np.sort(shuffled[:n_val]), test_idx)
        fitted = fit_model(method, data, cfg, fold_seed)
        rows, estimated = predict_rows(fitted, data, test_idx)
        return data.targets[rows], estimated

    logger.info(f"Cross-validating {method} on {axis}: {len(usable)} windows, k={cfg.cv.k}")
    return kfold_cv(len(usable), cfg.cv.k, trainer, cfg.seed, cfg.eval.nrms_literal)


def extrapolation_split(targets: np.ndarray, quantile: float, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train/validation drawn from labels at or below the quantile, test is everything above it"""
    if not 0 < quantile < 1:
        raise RejectedInputError(f"extrapolation quantile must lie in (0, 1), got {quantile}")
    threshold = float(np.quantile(targets, quantile))
    inside = np.nonzero(targets <= threshold)[0]
    outside = np.nonzero(targets > threshold)[0]
    if len(inside) < 2 or len(outside) == 0:
        raise RejectedInputError("extrapolation split leaves an empty band")
    order = np.random.default_rng(spec.rng_seed).permutation(inside)
    n_val = max(1, int(round(spec.validation / (spec.train + spec.validation) * len(order))))
    return np.sort(order[n_val:]), np.sort(order[:n_val]), outside


def extrapolation_study(windows: WindowSet, axis: str, cfg, methods: Sequence[str] = METHODS) -> EvalReport:
    """Score every method on labels beyond the training range; reports the share of estimates above the training maximum"""
    usable = windows.usable_for(axis)
    targets = usable.targets(axis)
    train, validation, test = extrapolation_split(targets, cfg.eval.extrapolation_quantile, SplitSpec.from_config(cfg))
    data = AxisData.prepare(usable, axis, train, validation, test)
    train_max = float(targets[train].max())
    report = compare_methods(data, cfg, methods)
    for result in report.results:
        if result.status == "ok":
            result.above_train_max = float(np.mean(result.estimated > train_max + 1e-9))
            logger.info(f"{result.method} {axis}: {result.above_train_max:.1%} of estimates above training max {train_max:.1f} N")
    return report
