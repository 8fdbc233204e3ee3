"""Synthetic intelligent-tire rig.

Produces tri-axial inner-liner acceleration traces, one per wheel revolution,
together with the ground-truth tire forces for the operating condition that
produced them. The ground truth follows a brush (Fiala-type) lateral law and a
torque/radius longitudinal law; the signal model is a ring whose centripetal
acceleration collapses inside the contact patch, with tangential spikes at the
patch boundaries.
"""

import json
import math
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from utils.errors import RejectedInputError, UnphysicalLoadError

logger = logging.getLogger(__name__)

# Signal-model shape constants, all relative to the centripetal level.
PATCH_CENTER_DEG = 180.0
SPIKE_WIDTH_DEG = 2.0
EDGE_WIDTH_DEG = 1.5
SPIKE_GAIN = 0.6
SPIKE_FX_GAIN = 0.5
SHEAR_X_GAIN = 0.25
# odd circumferential shear under drive torque, zero slope at both patch edges
TILT_X_GAIN = 0.8
SHEAR_Y_GAIN = 0.4

RIG_SPEEDS_KPH = (30.0, 60.0, 90.0)
RIG_CORNERING_SPEEDS_KPH = (30.0, 60.0)
RIG_LOADS_N = (2080.0, 4160.0, 6240.0)
RIG_SLIP_MAGNITUDES_DEG = (6.0, 5.0, 4.0, 3.5, 3.0, 2.5, 2.0, 1.5, 1.0)
RIG_TORQUES_NM = (207.0, 218.0, 343.0, 400.0, 442.0, 526.0, 565.0, 650.0)
RIG_PRESSURE_KPA = 220.0


class ManeuverKind(str, Enum):
    FREE_ROLLING = "FreeRolling"
    CORNERING = "Cornering"
    DRIVING = "Driving"


@dataclass(frozen=True)
class TireParams:
    unloaded_radius: float = 0.30
    effective_rolling_radius: float = 0.29
    vertical_stiffness: float = 700000.0
    cornering_stiffness: float = 78000.0
    longitudinal_stiffness: float = 150000.0
    friction_coefficient: float = 1.1
    inner_liner_radius: float = 0.28

    def validate(self):
        """Raise RejectedInputError if any parameter is unphysical"""
        for name in ("unloaded_radius", "effective_rolling_radius", "inner_liner_radius",
                     "vertical_stiffness", "cornering_stiffness", "longitudinal_stiffness",
                     "friction_coefficient"):
            if not getattr(self, name) > 0:
                raise RejectedInputError(f"tire parameter {name} must be > 0, got {getattr(self, name)}")
        if self.effective_rolling_radius > self.unloaded_radius:
            raise RejectedInputError("effective_rolling_radius must not exceed unloaded_radius")

    @classmethod
    def from_config(cls, tire_cfg) -> "TireParams":
        return cls(**asdict(tire_cfg))


@dataclass(frozen=True)
class OperatingCondition:
    velocity: float
    vertical_load: float
    maneuver_kind: ManeuverKind = ManeuverKind.FREE_ROLLING
    slip_angle: float = 0.0
    drive_torque: float = 0.0
    inflation_pressure: float = RIG_PRESSURE_KPA

    def validate(self):
        """Raise RejectedInputError if the condition is inconsistent"""
        if not self.velocity > 0:
            raise RejectedInputError(f"velocity must be > 0, got {self.velocity}")
        if not self.vertical_load > 0:
            raise RejectedInputError(f"vertical load must be > 0, got {self.vertical_load}")
        kind = ManeuverKind(self.maneuver_kind)
        if kind is ManeuverKind.FREE_ROLLING and (self.slip_angle != 0 or self.drive_torque != 0):
            raise RejectedInputError("free rolling requires zero slip angle and zero torque")
        if kind is ManeuverKind.CORNERING and (self.slip_angle == 0 or self.drive_torque != 0):
            raise RejectedInputError("cornering requires a non-zero slip angle and zero torque")
        if kind is ManeuverKind.DRIVING and (self.drive_torque == 0 or self.slip_angle != 0):
            raise RejectedInputError("driving requires a non-zero torque and zero slip angle")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["maneuver_kind"] = ManeuverKind(self.maneuver_kind).value
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "OperatingCondition":
        d = dict(d)
        d["maneuver_kind"] = ManeuverKind(d.get("maneuver_kind", ManeuverKind.FREE_ROLLING.value))
        return cls(**d)


@dataclass(frozen=True)
class ForceLabel:
    fx: float
    fy: float
    fz: float

    def for_axis(self, axis: str) -> float:
        return {"fx": self.fx, "fy": self.fy, "fz": self.fz}[axis.lower()]


@dataclass
class RevolutionTrace:
    angles: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    az: np.ndarray
    sample_rate: float
    condition: Optional[OperatingCondition] = None
    label: Optional[ForceLabel] = None
    trace_id: int = 0
    entry_index: int = 0
    revolution_index: int = 0

    @property
    def samples(self) -> np.ndarray:
        """(n, 4) array of angle, ax, ay, az rows"""
        return np.column_stack([self.angles, self.ax, self.ay, self.az])

    def __len__(self):
        return len(self.angles)


@dataclass
class ScheduleEntry:
    condition: OperatingCondition
    n_revolutions: int
    # None for a step entry, "load" or "slip" for a triangular-wave sweep
    sweep: Optional[str] = None
    sweep_low: float = 0.0
    sweep_high: float = 0.0

    def conditions(self) -> List[OperatingCondition]:
        """Per-revolution conditions; sweeps follow a triangular wave low -> high -> low"""
        if self.sweep is None:
            return [self.condition] * self.n_revolutions
        values = triangular_wave(self.n_revolutions, self.sweep_low, self.sweep_high)
        if self.sweep == "load":
            return [replace(self.condition, vertical_load=float(v)) for v in values]
        if self.sweep == "slip":
            return [replace(self.condition, slip_angle=float(v)) for v in values]
        raise RejectedInputError(f"unknown sweep kind {self.sweep!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "condition": self.condition.to_dict(),
            "n_revolutions": self.n_revolutions,
            "sweep": self.sweep,
            "sweep_low": self.sweep_low,
            "sweep_high": self.sweep_high,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ScheduleEntry":
        return cls(
            condition=OperatingCondition.from_dict(d["condition"]),
            n_revolutions=int(d["n_revolutions"]),
            sweep=d.get("sweep"),
            sweep_low=float(d.get("sweep_low", 0.0)),
            sweep_high=float(d.get("sweep_high", 0.0)),
        )


@dataclass
class TestSchedule:
    entries: List[ScheduleEntry] = field(default_factory=list)
    rng_seed: int = 42
    noise_std: float = 5.0
    snr_db: Optional[float] = None

    __test__ = False  # not a pytest class

    def validate(self):
        if not self.entries:
            raise RejectedInputError("test schedule is empty")
        for i, entry in enumerate(self.entries):
            if entry.n_revolutions < 1:
                raise RejectedInputError(f"schedule entry {i} has n_revolutions < 1")
        if self.noise_std < 0:
            raise RejectedInputError("noise_std must be >= 0")

    @property
    def total_revolutions(self) -> int:
        return sum(e.n_revolutions for e in self.entries)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rng_seed": self.rng_seed,
            "noise_std": self.noise_std,
            "snr_db": self.snr_db,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TestSchedule":
        return cls(
            entries=[ScheduleEntry.from_dict(e) for e in d["entries"]],
            rng_seed=int(d.get("rng_seed", 42)),
            noise_std=float(d.get("noise_std", 5.0)),
            snr_db=d.get("snr_db"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def triangular_wave(n: int, low: float, high: float) -> np.ndarray:
    """n samples of one triangle period, taken at revolution mid-phases"""
    phase = (np.arange(n) + 0.5) / n
    tri = 1.0 - np.abs(2.0 * phase - 1.0)
    return low + (high - low) * tri


def usable_axes(maneuver: ManeuverKind) -> List[str]:
    """Force axes a revolution of this maneuver can be used to learn"""
    kind = ManeuverKind(maneuver)
    axes = ["fz"]
    if kind is ManeuverKind.CORNERING:
        axes.append("fy")
    if kind is ManeuverKind.DRIVING:
        axes.append("fx")
    return axes


def ground_truth_forces(cond: OperatingCondition, tire: TireParams) -> ForceLabel:
    """Tire forces for a condition: brush-law Fy, torque/radius Fx, commanded Fz"""
    cond.validate()
    tire.validate()
    fz = float(cond.vertical_load)
    mu_fz = tire.friction_coefficient * fz

    alpha = math.radians(cond.slip_angle)
    x = tire.cornering_stiffness * math.tan(alpha)
    if abs(x) < 3.0 * mu_fz:
        fy = -x * (1.0 - abs(x) / (3.0 * mu_fz) + x * x / (27.0 * mu_fz * mu_fz))
    else:
        fy = -math.copysign(mu_fz, alpha)

    fx = cond.drive_torque / tire.effective_rolling_radius
    fx = max(-mu_fz, min(mu_fz, fx))
    # keep the sign of zero stable so labels compare equal across runs
    return ForceLabel(fx=fx + 0.0, fy=fy + 0.0, fz=fz)


def contact_half_angle(fz: float, tire: TireParams) -> float:
    """Half angle (deg) subtended by the contact patch at the wheel centre"""
    if not fz > 0:
        raise RejectedInputError(f"vertical load must be > 0, got {fz}")
    radius = tire.unloaded_radius
    deflection = fz / tire.vertical_stiffness
    if deflection >= radius:
        raise UnphysicalLoadError(f"deflection {deflection:.4f} m exceeds radius {radius} m at Fz={fz} N")
    half_length = math.sqrt(2.0 * radius * deflection - deflection * deflection)
    return math.degrees(math.asin(half_length / radius))


def centripetal_level(cond: OperatingCondition, tire: TireParams) -> float:
    """omega^2 * r of the inner liner outside the contact patch (m/s^2)"""
    omega = (cond.velocity / 3.6) / tire.effective_rolling_radius
    return omega * omega * tire.inner_liner_radius


def boundary_spike_amplitude(label: ForceLabel, level: float) -> float:
    return level * SPIKE_GAIN * (1.0 + SPIKE_FX_GAIN * abs(label.fx) / label.fz)


def patch_signature(phi: np.ndarray, half_angle: float, label: ForceLabel):
    """Noiseless ax, ay, az relative to the centripetal level, phi relative to the patch centre"""
    inside = np.abs(phi) < half_angle
    bump = np.where(inside, np.cos(0.5 * np.pi * phi / half_angle) ** 2, 0.0)
    patch = 0.5 * (np.tanh((phi + half_angle) / EDGE_WIDTH_DEG) - np.tanh((phi - half_angle) / EDGE_WIDTH_DEG))
    u = np.clip(phi / half_angle, -1.0, 1.0)
    tilt = np.where(inside, -np.sin(np.pi * u) * np.cos(0.5 * np.pi * u) ** 2, 0.0)
    two_sigma_sq = 2.0 * SPIKE_WIDTH_DEG ** 2
    spikes = np.exp(-(phi + half_angle) ** 2 / two_sigma_sq) - np.exp(-(phi - half_angle) ** 2 / two_sigma_sq)

    spike_rel = SPIKE_GAIN * (1.0 + SPIKE_FX_GAIN * abs(label.fx) / label.fz)
    ax = spike_rel * spikes + (label.fx / label.fz) * (SHEAR_X_GAIN * bump + TILT_X_GAIN * tilt)
    ay = SHEAR_Y_GAIN * (label.fy / label.fz) * bump
    az = 1.0 - patch
    return ax, ay, az


def simulate_revolution(cond: OperatingCondition, tire: TireParams, rng: np.random.Generator,
                        sample_rate: float = 10000.0, noise_std: float = 5.0,
                        snr_db: Optional[float] = None) -> RevolutionTrace:
    """Simulate one wheel revolution sampled in time at sample_rate"""
    label = ground_truth_forces(cond, tire)
    half_angle = contact_half_angle(label.fz, tire)

    omega = (cond.velocity / 3.6) / tire.effective_rolling_radius
    n_samples = int(round(sample_rate * 2.0 * math.pi / omega))
    angles = np.arange(n_samples) * (360.0 / n_samples)

    level = centripetal_level(cond, tire)
    ax, ay, az = patch_signature(angles - PATCH_CENTER_DEG, half_angle, label)
    ax, ay, az = ax * level, ay * level, az * level

    if snr_db is not None:
        noise_std = boundary_spike_amplitude(label, level) / 10.0 ** (snr_db / 20.0)
    if noise_std > 0:
        noise = rng.normal(0.0, noise_std, size=(3, n_samples))
        ax, ay, az = ax + noise[0], ay + noise[1], az + noise[2]

    return RevolutionTrace(angles=angles, ax=ax, ay=ay, az=az, sample_rate=sample_rate,
                           condition=cond, label=label)


def revolution_rng(seed: int, entry_index: int, revolution_index: int) -> np.random.Generator:
    """Independent stream per (seed, schedule entry, revolution)"""
    return np.random.default_rng([int(seed), int(entry_index), int(revolution_index)])


def generate_dataset(schedule: TestSchedule, tire: TireParams, sample_rate: float = 10000.0,
                     n_jobs: int = 1) -> List[RevolutionTrace]:
    """One trace per scheduled revolution, in schedule order"""
    schedule.validate()
    tire.validate()

    jobs = []
    for entry_index, entry in enumerate(schedule.entries):
        for revolution_index, cond in enumerate(entry.conditions()):
            jobs.append((len(jobs), entry_index, revolution_index, cond))

    def run(job):
        trace_id, entry_index, revolution_index, cond = job
        rng = revolution_rng(schedule.rng_seed, entry_index, revolution_index)
        trace = simulate_revolution(cond, tire, rng, sample_rate=sample_rate,
                                    noise_std=schedule.noise_std, snr_db=schedule.snr_db)
        trace.trace_id = trace_id
        trace.entry_index = entry_index
        trace.revolution_index = revolution_index
        return trace

    logger.info(f"Generating {len(jobs)} revolutions from {len(schedule.entries)} schedule entries")
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


def stream_from_traces(traces: Sequence[RevolutionTrace]) -> Dict[str, np.ndarray]:
    """Concatenate traces into one continuous encoder/accelerometer recording"""
    return {
        "angle": np.concatenate([t.angles for t in traces]),
        "ax": np.concatenate([t.ax for t in traces]),
        "ay": np.concatenate([t.ay for t in traces]),
        "az": np.concatenate([t.az for t in traces]),
    }


def rig_schedule(seed: int = 42, noise_std: float = 5.0, snr_db: Optional[float] = None) -> TestSchedule:
    """Schedule mirroring the published test matrix: 6833 revolutions, 2713 cornering, 352 driving"""
    entries = []

    for velocity in RIG_SPEEDS_KPH:
        for load in RIG_LOADS_N:
            entries.append(ScheduleEntry(OperatingCondition(velocity, load), 314))
    for velocity in RIG_SPEEDS_KPH:
        entries.append(ScheduleEntry(OperatingCondition(velocity, 4000.0), 314,
                                     sweep="load", sweep_low=2000.0, sweep_high=6000.0))

    for velocity in RIG_CORNERING_SPEEDS_KPH:
        for load in RIG_LOADS_N:
            for magnitude in RIG_SLIP_MAGNITUDES_DEG:
                for sign in (1.0, -1.0):
                    cond = OperatingCondition(velocity, load, ManeuverKind.CORNERING, slip_angle=sign * magnitude)
                    entries.append(ScheduleEntry(cond, 20))
    sweep_lengths = iter((93, 92, 92, 92, 92, 92))
    for velocity in RIG_CORNERING_SPEEDS_KPH:
        for load in RIG_LOADS_N:
            cond = OperatingCondition(velocity, load, ManeuverKind.CORNERING, slip_angle=6.0)
            entries.append(ScheduleEntry(cond, next(sweep_lengths), sweep="slip", sweep_low=-6.0, sweep_high=6.0))

    for velocity in RIG_CORNERING_SPEEDS_KPH:
        for torque in RIG_TORQUES_NM:
            cond = OperatingCondition(velocity, RIG_LOADS_N[0], ManeuverKind.DRIVING, drive_torque=torque)
            entries.append(ScheduleEntry(cond, 22))

    return TestSchedule(entries=entries, rng_seed=seed, noise_std=noise_std, snr_db=snr_db)


def smoke_schedule(revolutions: int, conditions: int, seed: int = 42, noise_std: float = 5.0,
                   snr_db: Optional[float] = None) -> TestSchedule:
    """First `conditions` entries of the full rig schedule, each with `revolutions` revolutions"""
    if revolutions < 1 or conditions < 1:
        raise RejectedInputError("smoke schedule needs at least one condition and one revolution")
    base = rig_schedule(seed, noise_std, snr_db)
    entries = [replace(e, n_revolutions=revolutions) for e in base.entries[:conditions]]
    return TestSchedule(entries=entries, rng_seed=seed, noise_std=noise_std, snr_db=snr_db)


def usable_counts(schedule: TestSchedule) -> Dict[str, int]:
    """Number of revolutions usable for each force axis"""
    counts = {"fx": 0, "fy": 0, "fz": 0}
    for entry in schedule.entries:
        for axis in usable_axes(entry.condition.maneuver_kind):
            counts[axis] += entry.n_revolutions
    return counts


class TireSimulator:
    """Service wrapper binding tire parameters and sampling settings from a RunConfig"""

    def __init__(self, config):
        self.config = config
        self.tire = TireParams.from_config(config.tire)
        self.sample_rate = config.simulator.sample_rate
        self.n_jobs = config.simulator.n_jobs

    def build_schedule(self) -> TestSchedule:
        """Schedule selected by the simulator section of the config"""
        sim = self.config.simulator
        if sim.schedule_path:
            try:
                with open(sim.schedule_path, "r", encoding="utf-8") as fh:
                    schedule = TestSchedule.from_dict(json.load(fh))
            except (OSError, ValueError, KeyError) as e:
                raise RejectedInputError(f"cannot load schedule {sim.schedule_path}: {e}")
            schedule.rng_seed = self.config.seed
            return schedule
        if sim.schedule == "smoke":
            return smoke_schedule(sim.revolutions, sim.conditions, self.config.seed, sim.noise_std, sim.snr_db)
        return rig_schedule(self.config.seed, sim.noise_std, sim.snr_db)

    def generate(self, schedule: Optional[TestSchedule] = None) -> List[RevolutionTrace]:
        schedule = schedule or self.build_schedule()
        return generate_dataset(schedule, self.tire, sample_rate=self.sample_rate, n_jobs=self.n_jobs)
