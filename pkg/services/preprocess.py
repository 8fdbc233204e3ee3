"""Revolution traces to fixed-length, normalized contact-patch features.

Four steps per revolution: low-pass filtering, contact-patch identification
from the tangential boundary spikes, resampling onto a fixed wheel-angle grid
around the patch centre, and min-max normalization fitted on training data.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from services.simulator import ForceLabel, OperatingCondition, RevolutionTrace, usable_axes
from utils.errors import (
    CorruptStreamError,
    DegenerateChannelError,
    DimensionMismatchError,
    PatchNotFoundError,
    RejectedInputError,
    RejectedTraceError,
)

logger = logging.getLogger(__name__)

CHANNELS = ("ax", "ay", "az")
AXIS_CHANNELS = {
    "fx": ("ax", "az"),
    "fz": ("ax", "az"),
    "fy": ("ax", "ay", "az"),
}


@dataclass(frozen=True)
class PatchMarkers:
    entry_angle: float
    center_angle: float
    exit_angle: float


@dataclass
class PatchWindow:
    angles: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    az: np.ndarray
    condition: Optional[OperatingCondition] = None
    label: Optional[ForceLabel] = None
    trace_id: int = 0
    entry_index: int = 0
    revolution_index: int = 0
    normalized: bool = False

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def __len__(self):
        return len(self.angles)


@dataclass(frozen=True)
class MinMaxStats:
    bounds: Dict[str, Tuple[float, float]]

    def transform(self, channel: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[channel]
        return (np.asarray(values, dtype=float) - lo) / (hi - lo)

    def inverse(self, channel: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[channel]
        return np.asarray(values, dtype=float) * (hi - lo) + lo

    @property
    def channels(self) -> Tuple[str, ...]:
        return tuple(self.bounds)


@dataclass
class SampleStream:
    """Continuous recording: encoder angle (deg, modulo 360) and three accelerations"""
    angles: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    az: np.ndarray
    sample_rate: float = 10000.0


@dataclass
class SegmentReport:
    n_revolutions: int = 0
    # (start index, sample count) of partial revolutions that were dropped
    discarded: List[Tuple[int, int]] = field(default_factory=list)


@dataclass
class FeatureVector:
    values: np.ndarray
    target: float
    axis: str


def lowpass_filter(trace: RevolutionTrace, cutoff: float = 400.0, order: int = 4) -> RevolutionTrace:
    """Zero-phase Butterworth low-pass applied forward and backward on every channel"""
    nyquist = trace.sample_rate / 2.0
    if not 0 < cutoff < nyquist:
        raise RejectedInputError(f"cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")
    sos = signal.butter(order, cutoff, btype="low", fs=trace.sample_rate, output="sos")
    filtered = {name: signal.sosfiltfilt(sos, getattr(trace, name)) for name in CHANNELS}
    return replace(trace, angles=trace.angles.copy(), **filtered)


def segment_revolutions(stream: SampleStream) -> Tuple[List[RevolutionTrace], SegmentReport]:
    """Cut a continuous stream at encoder wrap-arounds into whole revolutions"""
    angles = np.asarray(stream.angles, dtype=float)
    n = len(angles)
    if n == 0:
        raise RejectedInputError("empty sample stream")
    steps = np.diff(angles)
    wraps = steps < -180.0
    if np.any((steps <= 0) & ~wraps):
        bad = int(np.argmax((steps <= 0) & ~wraps)) + 1
        raise CorruptStreamError(f"encoder angle not monotone at sample {bad}")

    positive = steps[steps > 0]
    step = float(np.median(positive)) if positive.size else 360.0 / n
    bounds = [0, *(np.nonzero(wraps)[0] + 1).tolist(), n]

    traces = []
    report = SegmentReport()
    for start, stop in zip(bounds[:-1], bounds[1:]):
        segment = angles[start:stop]
        complete = segment[0] <= 1.5 * step and segment[-1] >= 360.0 - 1.5 * step
        if not complete:
            report.discarded.append((start, stop - start))
            logger.info(f"Discarding partial revolution at sample {start} ({stop - start} samples)")
            continue
        traces.append(RevolutionTrace(
            angles=segment.copy(),
            ax=np.asarray(stream.ax[start:stop], dtype=float).copy(),
            ay=np.asarray(stream.ay[start:stop], dtype=float).copy(),
            az=np.asarray(stream.az[start:stop], dtype=float).copy(),
            sample_rate=stream.sample_rate,
            trace_id=len(traces),
            revolution_index=len(traces),
        ))
    report.n_revolutions = len(traces)
    return traces, report


def _refine_peak(values: np.ndarray, k: int) -> float:
    """Sub-sample offset of a discrete extremum by parabolic interpolation"""
    if k <= 0 or k >= len(values) - 1:
        return 0.0
    left, mid, right = values[k - 1], values[k], values[k + 1]
    denom = left - 2.0 * mid + right
    if denom == 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def detect_contact_patch(trace: RevolutionTrace, prominence_factor: float = 3.0) -> PatchMarkers:
    """Entry at the dominant positive ax spike, exit at the dominant negative spike after it"""
    ax = np.asarray(trace.ax, dtype=float)
    n = len(ax)
    if n < 3:
        raise PatchNotFoundError(f"trace {trace.trace_id} too short for patch detection")
    mad = float(np.median(np.abs(ax - np.median(ax))))
    threshold = max(prominence_factor * mad, 1e-12)

    # three copies so spikes near 0/360 deg are found with full prominence
    tiled = np.concatenate([ax, ax, ax])
    tiled_angles = np.concatenate([trace.angles - 360.0, trace.angles, trace.angles + 360.0])

    entry_peaks, entry_props = signal.find_peaks(tiled, prominence=threshold)
    in_middle = (entry_peaks >= n) & (entry_peaks < 2 * n)
    entry_peaks = entry_peaks[in_middle]
    if entry_peaks.size == 0:
        raise PatchNotFoundError(f"trace {trace.trace_id}: no entry spike above prominence {threshold:.3g}")
    entry = int(entry_peaks[np.argmax(tiled[entry_peaks])])

    exit_peaks, _ = signal.find_peaks(-tiled, prominence=threshold)
    following = exit_peaks[(exit_peaks > entry) & (exit_peaks < entry + n // 2)]
    if following.size == 0:
        raise PatchNotFoundError(f"trace {trace.trace_id}: no exit spike after entry")
    exit_ = int(following[np.argmin(tiled[following])])

    entry_angle = tiled_angles[entry] + _refine_peak(tiled, entry) * (tiled_angles[entry + 1] - tiled_angles[entry])
    exit_angle = tiled_angles[exit_] + _refine_peak(-tiled, exit_) * (tiled_angles[exit_ + 1] - tiled_angles[exit_])

    width = exit_angle - entry_angle
    entry_angle = entry_angle % 360.0
    return PatchMarkers(entry_angle=entry_angle, center_angle=entry_angle + 0.5 * width,
                        exit_angle=entry_angle + width)


def window_offsets(span_deg: float = 35.0, step_deg: float = 0.5, mode: str = "total") -> np.ndarray:
    """Grid offsets from the patch centre; 'total' spans +-span/2, 'half' spans +-span"""
    half = span_deg / 2.0 if mode == "total" else span_deg
    n_points = int(round(2.0 * half / step_deg)) + 1
    return -half + step_deg * np.arange(n_points)


def angular_resample(trace: RevolutionTrace, markers: PatchMarkers, span_deg: float = 35.0,
                     step_deg: float = 0.5, mode: str = "total") -> PatchWindow:
    """Linear interpolation of every channel onto the fixed angle grid around the patch centre"""
    grid = markers.center_angle + window_offsets(span_deg, step_deg, mode)
    angles = np.asarray(trace.angles, dtype=float)
    raw_step = float(np.median(np.diff(angles))) if len(angles) > 1 else 360.0
    full_revolution = angles[-1] - angles[0] >= 360.0 - 1.5 * raw_step

    if full_revolution:
        channels = {name: np.interp(grid, angles, getattr(trace, name), period=360.0) for name in CHANNELS}
    else:
        if grid[0] < angles[0] or grid[-1] > angles[-1]:
            raise RejectedTraceError(
                f"trace {trace.trace_id}: window [{grid[0]:.2f}, {grid[-1]:.2f}] deg "
                f"exceeds coverage [{angles[0]:.2f}, {angles[-1]:.2f}] deg")
        channels = {name: np.interp(grid, angles, getattr(trace, name)) for name in CHANNELS}

    return PatchWindow(angles=grid, condition=trace.condition, label=trace.label, trace_id=trace.trace_id,
                       entry_index=trace.entry_index, revolution_index=trace.revolution_index, **channels)


def estimate_centripetal_level(trace: RevolutionTrace, markers: PatchMarkers, exclusion_deg: float = 60.0) -> float:
    """Median az away from the contact patch"""
    distance = np.abs((np.asarray(trace.angles) - markers.center_angle + 180.0) % 360.0 - 180.0)
    outside = distance > exclusion_deg
    if not np.any(outside):
        raise RejectedTraceError(f"trace {trace.trace_id}: no samples outside the patch region")
    level = float(np.median(np.asarray(trace.az)[outside]))
    if not level > 0:
        raise RejectedTraceError(f"trace {trace.trace_id}: non-positive centripetal level {level}")
    return level


def scale_by_centripetal_level(window: PatchWindow, level: float) -> PatchWindow:
    return replace(window, ax=window.ax / level, ay=window.ay / level, az=window.az / level)


def fit_minmax(training_windows: Sequence[PatchWindow], channels: Iterable[str] = CHANNELS) -> MinMaxStats:
    """Per-channel minimum and maximum over every training window"""
    if not training_windows:
        raise RejectedInputError("cannot fit normalization on an empty training set")
    bounds = {}
    for name in channels:
        lo = min(float(np.min(w.channel(name))) for w in training_windows)
        hi = max(float(np.max(w.channel(name))) for w in training_windows)
        if not hi > lo:
            raise DegenerateChannelError(f"channel {name} is constant ({lo}) over the training windows")
        bounds[name] = (lo, hi)
    return MinMaxStats(bounds)


def apply_minmax(window: PatchWindow, stats: MinMaxStats) -> PatchWindow:
    """Affine map of each fitted channel onto [0, 1] over its training range, unclipped"""
    scaled = {name: stats.transform(name, window.channel(name)) for name in stats.channels}
    return replace(window, normalized=True, **scaled)


def build_features(window: PatchWindow, target: str) -> FeatureVector:
    """Concatenate the channels used for the target axis"""
    axis = target.lower()
    if axis not in AXIS_CHANNELS:
        raise RejectedInputError(f"unknown target axis {target!r}")
    values = np.concatenate([window.channel(name) for name in AXIS_CHANNELS[axis]])
    label = window.label.for_axis(axis) if window.label is not None else float("nan")
    return FeatureVector(values=values, target=label, axis=axis)


@dataclass
class WindowSet:
    """Stacked windows of one dataset, shape (n, channel, grid point)"""
    data: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray
    trace_ids: np.ndarray
    entry_indices: np.ndarray
    revolution_indices: np.ndarray
    maneuvers: np.ndarray
    slip_angles: np.ndarray
    velocities: np.ndarray

    def __len__(self):
        return self.data.shape[0]

    @classmethod
    def from_windows(cls, windows: Sequence[PatchWindow]) -> "WindowSet":
        if not windows:
            raise RejectedInputError("no windows to stack")
        centers = [0.5 * (w.angles[0] + w.angles[-1]) for w in windows]
        return cls(
            data=np.stack([np.vstack([w.ax, w.ay, w.az]) for w in windows]),
            offsets=windows[0].angles - centers[0],
            labels=np.array([[w.label.fx, w.label.fy, w.label.fz] for w in windows], dtype=float),
            trace_ids=np.array([w.trace_id for w in windows], dtype=int),
            entry_indices=np.array([w.entry_index for w in windows], dtype=int),
            revolution_indices=np.array([w.revolution_index for w in windows], dtype=int),
            maneuvers=np.array([w.condition.maneuver_kind.value if w.condition else "" for w in windows]),
            slip_angles=np.array([w.condition.slip_angle if w.condition else 0.0 for w in windows]),
            velocities=np.array([w.condition.velocity if w.condition else 0.0 for w in windows]),
        )

    def subset(self, index) -> "WindowSet":
        index = np.asarray(index)
        return WindowSet(
            data=self.data[index], offsets=self.offsets, labels=self.labels[index],
            trace_ids=self.trace_ids[index], entry_indices=self.entry_indices[index],
            revolution_indices=self.revolution_indices[index], maneuvers=self.maneuvers[index],
            slip_angles=self.slip_angles[index], velocities=self.velocities[index],
        )

    def usable_for(self, axis: str) -> "WindowSet":
        keep = [axis in usable_axes(m) for m in self.maneuvers]
        return self.subset(np.nonzero(keep)[0])

    def targets(self, axis: str) -> np.ndarray:
        return self.labels[:, ("fx", "fy", "fz").index(axis.lower())]

    def channel(self, name: str) -> np.ndarray:
        """(n, grid) values of one channel across every window"""
        return self.data[:, CHANNELS.index(name), :]

    def fit_minmax(self, axis: str) -> MinMaxStats:
        """fit_minmax over the channels used by the axis, treating the whole set as one window"""
        if len(self) == 0:
            raise RejectedInputError("cannot fit normalization on an empty training set")
        return fit_minmax([self], AXIS_CHANNELS[axis.lower()])

    def features(self, axis: str, stats: MinMaxStats) -> np.ndarray:
        """(n, channels * grid) normalized feature matrix in build_features order"""
        blocks = []
        for name in AXIS_CHANNELS[axis.lower()]:
            if name not in stats.bounds:
                raise DimensionMismatchError(f"normalization stats lack channel {name} needed for {axis}")
            blocks.append(stats.transform(name, self.channel(name)))
        return np.concatenate(blocks, axis=1)


class SignalPreprocessor:
    """Runs the per-revolution preprocessing chain configured by a RunConfig"""

    def __init__(self, preprocess_cfg):
        self.cfg = preprocess_cfg

    def process_trace(self, trace: RevolutionTrace) -> PatchWindow:
        filtered = lowpass_filter(trace, self.cfg.cutoff_hz, self.cfg.filter_order)
        markers = detect_contact_patch(filtered, self.cfg.prominence_factor)
        window = angular_resample(filtered, markers, self.cfg.window_span_deg, self.cfg.grid_step_deg,
                                  self.cfg.window_mode)
        if self.cfg.level_scaling:
            window = scale_by_centripetal_level(window, estimate_centripetal_level(filtered, markers))
        return window

    def process_all(self, traces: Sequence[RevolutionTrace]) -> Tuple[List[PatchWindow], List[Dict]]:
        """Windows for every usable trace plus a record of skipped ones"""
        windows, skipped = [], []
        for trace in traces:
            try:
                windows.append(self.process_trace(trace))
            except (PatchNotFoundError, RejectedTraceError) as e:
                logger.warning(f"Skipping trace {trace.trace_id}: {e}")
                skipped.append({"trace_id": trace.trace_id, "reason": type(e).__name__, "message": str(e)})
        logger.info(f"Preprocessed {len(windows)} windows, skipped {len(skipped)} traces")
        return windows, skipped
