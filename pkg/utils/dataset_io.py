"""CSV persistence for raw traces, processed windows, normalization stats and report tables."""

import os
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from services.preprocess import CHANNELS, MinMaxStats, WindowSet
from services.simulator import ForceLabel, ManeuverKind, OperatingCondition, RevolutionTrace, usable_axes
from utils.errors import DataError

logger = logging.getLogger(__name__)

SAMPLES_FILE = "samples.csv"
TRACES_FILE = "traces.csv"
WINDOWS_FILE = "windows.csv"
AXES = ("fx", "fy", "fz")

TRACE_COLUMNS = ["trace_id", "entry_index", "revolution_index", "velocity_kph", "pressure_kpa", "fz_cmd_n",
                 "slip_deg", "torque_nm", "maneuver", "fx_n", "fy_n", "fz_n", "sample_rate_hz"]
# raw accelerations carry noise of several m/s^2, 7 significant digits keep far more than that
RAW_FLOAT_FORMAT = "%.7g"
EXACT_FLOAT_FORMAT = "%.17g"


def _write_csv(df: pd.DataFrame, path: str, float_format: str = EXACT_FLOAT_FORMAT):
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        df.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}")
    logger.debug(f"Wrote {len(df)} rows to {path}")


def _read_csv(path: str, **kwargs) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataError(f"missing input file {path}")
    try:
        return pd.read_csv(path, **kwargs)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read {path}: {e}")


def write_raw_dataset(traces: Sequence[RevolutionTrace], directory: str) -> List[str]:
    """Per-sample and per-trace CSVs; returns the written paths"""
    samples = pd.DataFrame({
        "trace_id": np.concatenate([np.full(len(t), t.trace_id) for t in traces]),
        "angle_deg": np.concatenate([t.angles for t in traces]),
        "ax": np.concatenate([t.ax for t in traces]),
        "ay": np.concatenate([t.ay for t in traces]),
        "az": np.concatenate([t.az for t in traces]),
    })
    rows = []
    for t in traces:
        c = t.condition
        rows.append([t.trace_id, t.entry_index, t.revolution_index, c.velocity, c.inflation_pressure,
                     c.vertical_load, c.slip_angle, c.drive_torque, c.maneuver_kind.value,
                     t.label.fx, t.label.fy, t.label.fz, t.sample_rate])
    per_trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)

    samples_path = os.path.join(directory, SAMPLES_FILE)
    traces_path = os.path.join(directory, TRACES_FILE)
    _write_csv(samples, samples_path, RAW_FLOAT_FORMAT)
    _write_csv(per_trace, traces_path)
    return [samples_path, traces_path]


def read_raw_dataset(directory: str) -> List[RevolutionTrace]:
    per_trace = _read_csv(os.path.join(directory, TRACES_FILE))
    samples = _read_csv(os.path.join(directory, SAMPLES_FILE))
    missing = set(TRACE_COLUMNS) - set(per_trace.columns)
    if missing:
        raise DataError(f"{TRACES_FILE} lacks columns {sorted(missing)}")

    groups = {tid: frame for tid, frame in samples.groupby("trace_id", sort=False)}
    traces = []
    for row in per_trace.itertuples(index=False):
        if row.trace_id not in groups:
            raise DataError(f"trace {row.trace_id} has no samples in {SAMPLES_FILE}")
        frame = groups[row.trace_id]
        cond = OperatingCondition(
            velocity=float(row.velocity_kph), vertical_load=float(row.fz_cmd_n),
            maneuver_kind=ManeuverKind(row.maneuver), slip_angle=float(row.slip_deg),
            drive_torque=float(row.torque_nm), inflation_pressure=float(row.pressure_kpa),
        )
        traces.append(RevolutionTrace(
            angles=frame["angle_deg"].to_numpy(dtype=float), ax=frame["ax"].to_numpy(dtype=float),
            ay=frame["ay"].to_numpy(dtype=float), az=frame["az"].to_numpy(dtype=float),
            sample_rate=float(row.sample_rate_hz), condition=cond,
            label=ForceLabel(float(row.fx_n), float(row.fy_n), float(row.fz_n)),
            trace_id=int(row.trace_id), entry_index=int(row.entry_index),
            revolution_index=int(row.revolution_index),
        ))
    logger.info(f"Loaded {len(traces)} traces from {directory}")
    return traces


def channel_columns(n_points: int) -> List[str]:
    return [f"{name}_{i:03d}" for name in CHANNELS for i in range(n_points)]


def write_windows(windows: WindowSet, path: str):
    """One row per window: identifiers, per-axis usable flags, channel values and force labels"""
    n, _, n_points = windows.data.shape
    df = pd.DataFrame({
        "trace_id": windows.trace_ids,
        "entry_index": windows.entry_indices,
        "revolution_index": windows.revolution_indices,
        "maneuver": windows.maneuvers,
        "slip_deg": windows.slip_angles,
        "velocity_kph": windows.velocities,
    })
    for axis in AXES:
        df[f"usable_{axis}"] = [int(axis in usable_axes(ManeuverKind(m))) for m in windows.maneuvers]
    values = pd.DataFrame(windows.data.reshape(n, -1), columns=channel_columns(n_points))
    labels = pd.DataFrame(windows.labels, columns=[f"{axis}_n" for axis in AXES])
    _write_csv(pd.concat([df, values, labels], axis=1), path)


def read_windows(path: str, offsets: Optional[np.ndarray] = None) -> WindowSet:
    df = _read_csv(path, keep_default_na=False)
    value_columns = [c for c in df.columns if c[:3] in ("ax_", "ay_", "az_")]
    if not value_columns or len(value_columns) % len(CHANNELS):
        raise DataError(f"{path} has no complete set of channel columns")
    n_points = len(value_columns) // len(CHANNELS)
    if value_columns != channel_columns(n_points):
        raise DataError(f"{path}: channel columns are not in ax/ay/az grid order")
    if offsets is None:
        offsets = np.arange(n_points, dtype=float)
    elif len(offsets) != n_points:
        raise DataError(f"{path} has {n_points} grid points, configuration expects {len(offsets)}")
    return WindowSet(
        data=df[value_columns].to_numpy(dtype=float).reshape(len(df), len(CHANNELS), n_points),
        offsets=np.asarray(offsets, dtype=float),
        labels=df[[f"{axis}_n" for axis in AXES]].to_numpy(dtype=float),
        trace_ids=df["trace_id"].to_numpy(dtype=int),
        entry_indices=df["entry_index"].to_numpy(dtype=int),
        revolution_indices=df["revolution_index"].to_numpy(dtype=int),
        maneuvers=df["maneuver"].astype(str).to_numpy(),
        slip_angles=df["slip_deg"].to_numpy(dtype=float),
        velocities=df["velocity_kph"].to_numpy(dtype=float),
    )


def write_stats(stats: MinMaxStats, axis: str, path: str):
    lines = ["# tireforce stats v1", f"axis {axis}"]
    lines += [f"{name} {lo!r} {hi!r}" for name, (lo, hi) in stats.bounds.items()]
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}")


def read_stats(path: str) -> Tuple[str, MinMaxStats]:
    """Axis name and per-channel (min, max) from a stats file"""
    if not os.path.exists(path):
        raise DataError(f"missing stats file {path}")
    axis, bounds = "", {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "axis":
                axis = parts[1]
            elif parts[0] in CHANNELS and len(parts) == 3:
                bounds[parts[0]] = (float(parts[1]), float(parts[2]))
            else:
                raise DataError(f"{path}: unexpected line {line.strip()!r}")
    return axis, MinMaxStats(bounds)


def write_table(rows: Sequence[Dict], path: str, columns: Optional[Sequence[str]] = None):
    """Report and plot-data tables"""
    _write_csv(pd.DataFrame(list(rows), columns=columns), path, "%.10g")


def write_skipped(skipped: Sequence[Dict], path: str):
    write_table(skipped, path, columns=["trace_id", "reason", "message"])
