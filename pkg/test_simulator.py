import math

import numpy as np
import pytest

from services.preprocess import detect_contact_patch
from services.simulator import (
    PATCH_CENTER_DEG,
    SHEAR_X_GAIN,
    TILT_X_GAIN,
    ForceLabel,
    ManeuverKind,
    OperatingCondition,
    ScheduleEntry,
    TestSchedule,
    TireParams,
    contact_half_angle,
    generate_dataset,
    ground_truth_forces,
    patch_signature,
    rig_schedule,
    simulate_revolution,
    smoke_schedule,
    triangular_wave,
    usable_counts,
)
from utils.errors import RejectedInputError, UnphysicalLoadError

TIRE = TireParams()


def noiseless(cond, tire=TIRE, seed=0):
    return simulate_revolution(cond, tire, np.random.default_rng(seed), noise_std=0.0)


def test_free_rolling_has_no_shear_forces():
    """Zero slip and zero torque give zero Fx and Fy"""
    label = ground_truth_forces(OperatingCondition(60.0, 4160.0), TIRE)
    assert (label.fx, label.fy, label.fz) == (0.0, 0.0, 4160.0)


def test_lateral_force_saturates_at_friction_limit():
    tire = TireParams(cornering_stiffness=1e7)
    label = ground_truth_forces(OperatingCondition(30.0, 2080.0, ManeuverKind.CORNERING, slip_angle=6.0), tire)
    assert label.fy == pytest.approx(-2288.0)


def test_longitudinal_force_is_torque_over_radius():
    tire = TireParams(unloaded_radius=0.32, effective_rolling_radius=0.31)
    label = ground_truth_forces(OperatingCondition(30.0, 4160.0, ManeuverKind.DRIVING, drive_torque=343.0), tire)
    assert label.fx == pytest.approx(343.0 / 0.31)
    assert label.fx == pytest.approx(1106.45, abs=0.01)


def test_lateral_force_is_odd_and_bounded():
    for slip in (0.5, 1.0, 2.5, 4.0, 5.0, 6.0, 12.0):
        for load in (2080.0, 4160.0, 6240.0):
            pos = ground_truth_forces(OperatingCondition(30.0, load, ManeuverKind.CORNERING, slip_angle=slip), TIRE)
            neg = ground_truth_forces(OperatingCondition(30.0, load, ManeuverKind.CORNERING, slip_angle=-slip), TIRE)
            assert pos.fy == -neg.fy
            assert abs(pos.fy) <= TIRE.friction_coefficient * load + 1e-9
            assert pos.fy < 0


def test_driving_force_is_clamped():
    label = ground_truth_forces(OperatingCondition(30.0, 2080.0, ManeuverKind.DRIVING, drive_torque=5000.0), TIRE)
    assert label.fx == pytest.approx(TIRE.friction_coefficient * 2080.0)


def test_invalid_conditions_are_rejected():
    with pytest.raises(RejectedInputError):
        ground_truth_forces(OperatingCondition(30.0, 0.0), TIRE)
    with pytest.raises(RejectedInputError):
        ground_truth_forces(OperatingCondition(30.0, 2080.0, ManeuverKind.CORNERING), TIRE)
    with pytest.raises(RejectedInputError):
        ground_truth_forces(OperatingCondition(30.0, 2080.0, slip_angle=2.0), TIRE)
    with pytest.raises(RejectedInputError):
        TireParams(effective_rolling_radius=0.35).validate()


def test_contact_half_angle_reference_value():
    """R = 0.3 m with 0.01 m deflection gives about 14.84 deg"""
    tire = TireParams(vertical_stiffness=100000.0)
    assert contact_half_angle(1000.0, tire) == pytest.approx(14.84, abs=0.01)


def test_contact_half_angle_limits_and_monotonicity():
    assert contact_half_angle(1e-6, TIRE) < 0.01
    angles = [contact_half_angle(fz, TIRE) for fz in (1000.0, 2080.0, 4160.0, 6240.0)]
    assert all(a < b for a, b in zip(angles, angles[1:]))
    assert angles[-1] < 17.5
    with pytest.raises(UnphysicalLoadError):
        contact_half_angle(TIRE.vertical_stiffness * TIRE.unloaded_radius, TIRE)
    with pytest.raises(RejectedInputError):
        contact_half_angle(0.0, TIRE)


def test_free_rolling_trace_has_no_lateral_signal():
    trace = noiseless(OperatingCondition(60.0, 4160.0))
    assert np.allclose(trace.ay, 0.0)


def test_sample_count_follows_revolution_period():
    for velocity in (30.0, 60.0, 90.0):
        trace = noiseless(OperatingCondition(velocity, 4160.0))
        period = 2.0 * math.pi * TIRE.effective_rolling_radius / (velocity / 3.6)
        assert len(trace) == round(10000.0 * period)
        assert np.all(np.diff(trace.angles) > 0)
        assert trace.angles[0] == 0.0 and trace.angles[-1] < 360.0


def test_az_collapses_inside_the_patch():
    cond = OperatingCondition(60.0, 4160.0)
    trace = noiseless(cond)
    level = ((cond.velocity / 3.6) / TIRE.effective_rolling_radius) ** 2 * TIRE.inner_liner_radius
    far = np.abs(trace.angles - PATCH_CENTER_DEG) > 60.0
    assert np.allclose(trace.az[far], level)
    center = np.argmin(np.abs(trace.angles - PATCH_CENTER_DEG))
    assert trace.az[center] < 0.01 * level


@pytest.mark.parametrize("cond", [
    OperatingCondition(30.0, 2080.0),
    OperatingCondition(90.0, 6240.0),
    OperatingCondition(60.0, 4160.0, ManeuverKind.CORNERING, slip_angle=-4.0),
    OperatingCondition(30.0, 2080.0, ManeuverKind.DRIVING, drive_torque=650.0),
])
def test_spike_extrema_are_two_half_angles_apart(cond):
    trace = noiseless(cond)
    step = 360.0 / len(trace)
    entry = trace.angles[np.argmax(trace.ax)]
    exit_ = trace.angles[np.argmin(trace.ax)]
    expected = contact_half_angle(cond.vertical_load, TIRE)
    assert abs((exit_ - entry) - 2.0 * expected) <= 2.0 * step
    assert abs(entry - (PATCH_CENTER_DEG - expected)) <= step


def test_patch_detector_recovers_boundaries_on_noiseless_traces():
    for velocity in (30.0, 60.0, 90.0):
        for load in (2080.0, 4160.0, 6240.0):
            trace = noiseless(OperatingCondition(velocity, load))
            markers = detect_contact_patch(trace)
            half = contact_half_angle(load, TIRE)
            step = 360.0 / len(trace)
            assert markers.entry_angle == pytest.approx(PATCH_CENTER_DEG - half, abs=step)
            assert markers.exit_angle == pytest.approx(PATCH_CENTER_DEG + half, abs=step)


def test_spike_amplitude_grows_with_driving_force():
    weak = noiseless(OperatingCondition(30.0, 2080.0, ManeuverKind.DRIVING, drive_torque=207.0))
    strong = noiseless(OperatingCondition(30.0, 2080.0, ManeuverKind.DRIVING, drive_torque=650.0))
    assert np.max(np.abs(strong.ax)) > np.max(np.abs(weak.ax))


def test_drive_torque_skews_the_circumferential_signal():
    half = contact_half_angle(2080.0, TIRE)
    phi = np.array([-half / 3.0, half / 3.0])
    free = patch_signature(phi, half, ForceLabel(0.0, 0.0, 2080.0))[0]
    driven = patch_signature(phi, half, ForceLabel(2080.0, 0.0, 2080.0))[0]
    lead, trail = driven - free
    assert lead + trail == pytest.approx(2.0 * SHEAR_X_GAIN * 0.75, abs=1e-12)
    assert lead - trail == pytest.approx(2.0 * TILT_X_GAIN * 3.0 * math.sqrt(3.0) / 8.0, abs=0.03)


def test_simulation_is_deterministic_per_seed():
    cond = OperatingCondition(60.0, 4160.0, ManeuverKind.CORNERING, slip_angle=2.0)
    a = simulate_revolution(cond, TIRE, np.random.default_rng(7))
    b = simulate_revolution(cond, TIRE, np.random.default_rng(7))
    c = simulate_revolution(cond, TIRE, np.random.default_rng(8))
    assert np.array_equal(a.ax, b.ax) and np.array_equal(a.az, b.az)
    assert not np.array_equal(a.ax, c.ax)


def test_snr_sets_noise_relative_to_spike():
    cond = OperatingCondition(60.0, 4160.0)
    clean = noiseless(cond)
    noisy = simulate_revolution(cond, TIRE, np.random.default_rng(1), noise_std=0.0, snr_db=20.0)
    spike = np.max(clean.ax)
    assert np.std(noisy.az - clean.az) == pytest.approx(spike / 10.0, rel=0.15)


def test_generate_dataset_counts_and_ordering():
    conds = [OperatingCondition(30.0, 2080.0), OperatingCondition(60.0, 4160.0), OperatingCondition(90.0, 6240.0)]
    schedule = TestSchedule(entries=[ScheduleEntry(c, 10) for c in conds], rng_seed=3)
    traces = generate_dataset(schedule, TIRE)
    assert len(traces) == 30
    assert [t.trace_id for t in traces] == list(range(30))
    assert [t.entry_index for t in traces] == [i // 10 for i in range(30)]
    assert traces[25].condition == conds[2]


def test_parallel_generation_matches_sequential():
    schedule = smoke_schedule(4, 3, seed=11)
    sequential = generate_dataset(schedule, TIRE, n_jobs=1)
    parallel = generate_dataset(schedule, TIRE, n_jobs=4)
    for a, b in zip(sequential, parallel):
        assert np.array_equal(a.ax, b.ax) and np.array_equal(a.ay, b.ay)


def test_empty_schedule_is_rejected():
    with pytest.raises(RejectedInputError):
        generate_dataset(TestSchedule(entries=[]), TIRE)


def test_triangular_sweep_is_symmetric_and_piecewise_linear():
    values = triangular_wave(21, -6.0, 6.0)
    assert np.allclose(values, values[::-1])
    assert np.allclose(np.diff(values[:10]), np.diff(values[:10])[0])
    assert values.max() <= 6.0 and values.min() >= -6.0


def test_rig_schedule_usable_counts():
    schedule = rig_schedule()
    assert schedule.total_revolutions == 6833
    assert usable_counts(schedule) == {"fx": 352, "fy": 2713, "fz": 6833}


def test_slip_sweeps_never_hit_zero_slip():
    for entry in rig_schedule().entries:
        if entry.sweep == "slip":
            assert all(c.slip_angle != 0.0 for c in entry.conditions())


def test_schedule_serialization_replays_exactly():
    schedule = smoke_schedule(3, 5, seed=9)
    restored = TestSchedule.from_dict(schedule.to_dict())
    assert restored.digest() == schedule.digest()
    assert restored.entries[0].condition == schedule.entries[0].condition
