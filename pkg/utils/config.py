"""Run configuration: typed defaults, flat YAML documents and overrides.

Every key lives in a section and is addressed with a dotted name, e.g.
``tire.vertical_stiffness`` or ``mlp.max_epochs``. The document on disk is a
flat mapping of those dotted names to scalar or list values.
"""

import os
import logging
import typing
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, List, Optional

import yaml

from utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class SimulatorConfig:
    sample_rate: float = 10000.0
    noise_std: float = 5.0
    # when set, overrides noise_std per revolution (boundary-spike amplitude / noise)
    snr_db: Optional[float] = None
    # "full" mirrors the published test schedule, "smoke" keeps only its first entries
    schedule: str = "full"
    schedule_path: str = ""
    revolutions: int = 10
    conditions: int = 1
    n_jobs: int = 1


@dataclass
class TireConfig:
    unloaded_radius: float = 0.30
    effective_rolling_radius: float = 0.29
    vertical_stiffness: float = 700000.0
    cornering_stiffness: float = 78000.0
    longitudinal_stiffness: float = 150000.0
    friction_coefficient: float = 1.1
    inner_liner_radius: float = 0.28


@dataclass
class PreprocessConfig:
    cutoff_hz: float = 400.0
    filter_order: int = 4
    window_span_deg: float = 35.0
    grid_step_deg: float = 0.5
    # "total": span is the whole window around C; "half": span extends each side of C
    window_mode: str = "total"
    level_scaling: bool = True
    prominence_factor: float = 3.0


@dataclass
class MlpConfig:
    hidden_layers: List[int] = field(default_factory=lambda: [10, 5, 1])
    max_epochs: int = 10000
    patience: int = 500
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.1
    delta_min: float = 1e-6
    delta_max: float = 50.0


@dataclass
class ForestConfig:
    n_trees: int = 100
    # 0 selects ceil(p / 3)
    mtry: int = 0
    min_leaf: int = 5
    # 0 means unbounded
    max_depth: int = 0
    bootstrap: bool = True
    n_jobs: int = 1


@dataclass
class RnnConfig:
    hidden_layers: List[int] = field(default_factory=lambda: [10, 5])
    sequence_length: int = 10
    # "revolutions": consecutive revolutions; "angular": grid points of one window
    sequence_mode: str = "revolutions"
    batch_size: int = 50
    epochs: int = 10000
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    # 0 disables early stopping
    patience: int = 0


@dataclass
class SplitConfig:
    train: float = 0.70
    validation: float = 0.15
    test: float = 0.15


@dataclass
class CvConfig:
    k: int = 10


@dataclass
class EvalConfig:
    nrms_literal: bool = False
    extrapolation_quantile: float = 0.7


@dataclass
class RunConfig:
    seed: int = 42
    out: str = "runs/default"
    log_level: str = "INFO"
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    tire: TireConfig = field(default_factory=TireConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    rnn: RnnConfig = field(default_factory=RnnConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    cv: CvConfig = field(default_factory=CvConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_flat_dict(self) -> Dict[str, Any]:
        """Flatten into dotted keys, the on-disk document layout"""
        flat = {}
        for key, value in asdict(self).items():
            if isinstance(value, dict):
                for sub_key, sub_value in value.items():
                    flat[f"{key}.{sub_key}"] = sub_value
            else:
                flat[key] = value
        return flat

    def dump(self) -> str:
        return yaml.safe_dump(self.to_flat_dict(), sort_keys=False)


def _coerce(value: Any, target: Any, key: str) -> Any:
    """Coerce a YAML/CLI value to the annotated field type"""
    origin = typing.get_origin(target)
    if origin is typing.Union:
        args = [a for a in typing.get_args(target) if a is not type(None)]
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
            return None
        return _coerce(value, args[0], key)
    if origin in (list, List):
        (item_type,) = typing.get_args(target)
        if isinstance(value, str):
            value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_coerce(v, item_type, key) for v in value]
    try:
        if target is bool:
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("true", "yes", "1", "on"):
                    return True
                if lowered in ("false", "no", "0", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if target is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if target is float:
            return float(value)
        if target is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {getattr(target, '__name__', target)}")
    return value


def apply_overrides(cfg: RunConfig, flat: Dict[str, Any]) -> RunConfig:
    """Apply dotted-key overrides in place, rejecting unknown keys"""
    top_hints = typing.get_type_hints(RunConfig)
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) == 1:
            if parts[0] not in top_hints or _is_section(top_hints[parts[0]]):
                raise ConfigError(f"unknown configuration key: {key}")
            setattr(cfg, parts[0], _coerce(value, top_hints[parts[0]], key))
        elif len(parts) == 2:
            section_name, name = parts
            if section_name not in top_hints or not _is_section(top_hints[section_name]):
                raise ConfigError(f"unknown configuration key: {key}")
            section = getattr(cfg, section_name)
            hints = typing.get_type_hints(type(section))
            if name not in hints:
                raise ConfigError(f"unknown configuration key: {key}")
            setattr(section, name, _coerce(value, hints[name], key))
        else:
            raise ConfigError(f"unknown configuration key: {key}")
    validate(cfg)
    return cfg


def _is_section(tp: Any) -> bool:
    return isinstance(tp, type) and hasattr(tp, "__dataclass_fields__")


def validate(cfg: RunConfig):
    """Reject values outside their documented ranges"""
    if str(cfg.log_level).upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise ConfigError(f"log_level must be DEBUG, INFO, WARNING or ERROR, got {cfg.log_level!r}")
    if cfg.preprocess.window_mode not in ("total", "half"):
        raise ConfigError(f"preprocess.window_mode must be 'total' or 'half', got {cfg.preprocess.window_mode!r}")
    if cfg.rnn.sequence_mode not in ("revolutions", "angular"):
        raise ConfigError(f"rnn.sequence_mode must be 'revolutions' or 'angular', got {cfg.rnn.sequence_mode!r}")
    if cfg.simulator.schedule not in ("full", "smoke"):
        raise ConfigError(f"simulator.schedule must be 'full' or 'smoke', got {cfg.simulator.schedule!r}")
    if cfg.preprocess.cutoff_hz >= cfg.simulator.sample_rate / 2:
        raise ConfigError("preprocess.cutoff_hz must be below the Nyquist frequency")
    fractions = (cfg.split.train, cfg.split.validation, cfg.split.test)
    if min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be positive and sum to 1, got {fractions}")
    if cfg.cv.k < 2:
        raise ConfigError("cv.k must be at least 2")
    for key, value in (("mlp.max_epochs", cfg.mlp.max_epochs), ("rnn.epochs", cfg.rnn.epochs),
                       ("forest.n_trees", cfg.forest.n_trees), ("rnn.batch_size", cfg.rnn.batch_size),
                       ("rnn.sequence_length", cfg.rnn.sequence_length)):
        if value < 1:
            raise ConfigError(f"{key} must be >= 1")
    if any(size < 1 for size in cfg.mlp.hidden_layers + cfg.rnn.hidden_layers):
        raise ConfigError("hidden layer sizes must be >= 1")


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Resolve defaults, then the YAML file, then environment, then explicit overrides"""
    cfg = RunConfig()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                document = yaml.safe_load(fh) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}")
        if not isinstance(document, dict):
            raise ConfigError(f"{path}: expected a flat key-value document")
        apply_overrides(cfg, document)
        logger.debug(f"Loaded {len(document)} keys from {path}")

    env = {}
    if os.getenv("TIREFORCE_SEED"):
        env["seed"] = os.getenv("TIREFORCE_SEED")
    if os.getenv("TIREFORCE_OUT"):
        env["out"] = os.getenv("TIREFORCE_OUT")
    if env:
        apply_overrides(cfg, env)

    if overrides:
        apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg
