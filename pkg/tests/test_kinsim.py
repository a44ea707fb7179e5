import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imumove.core_math import angle_between, axis_angle, random_rotation, rot_x, rot_y, rotation_angle
from imumove.kinsim import (
    DEFAULT_RATE,
    GRAVITY,
    HINGE_AXIS,
    MountingConfig,
    MovementEvent,
    TrajectoryFormatError,
    apply_movement,
    axis_error,
    gen_gait,
    gen_movement,
    load_stream,
    load_trajectory,
    save_stream,
    save_trajectory,
    spin_trajectory,
    static_trajectory,
    synth_imu,
)

RATE = DEFAULT_RATE


@pytest.fixture(scope="module")
def gait():
    return gen_gait(30.0, RATE, np.random.default_rng(0))


@pytest.fixture(scope="module")
def strict_gait():
    return gen_gait(30.0, RATE, np.random.default_rng(1), strict_hinge=True)


def quiet(mount: MountingConfig) -> MountingConfig:
    mount.noise_std_acc = 0.0
    mount.noise_std_gyr = 0.0
    return mount


# trajectory generation


def test_sample_count_at_default_rate():
    assert len(gen_gait(60.0, RATE, np.random.default_rng(0))) == 8888


@pytest.mark.parametrize("duration, rate", [(0.0, RATE), (-1.0, RATE), (10.0, 0.0), (np.inf, RATE), (10.0, np.nan)])
def test_gen_gait_rejects_bad_arguments(duration, rate):
    with pytest.raises(ValueError):
        gen_gait(duration, rate, np.random.default_rng(0))


def test_gen_gait_enforces_min_samples():
    with pytest.raises(ValueError):
        gen_gait(10.0, RATE, np.random.default_rng(0), min_samples=5000)


def test_strict_hinge_knee_rate_parallel_to_axis(strict_gait):
    # relative angular velocity of the shank, in thigh coordinates
    rel = np.einsum("nji,nj->ni", strict_gait.rot_thigh, strict_gait.gyr_shank - strict_gait.gyr_thigh)
    moving = np.linalg.norm(rel, axis=1) > 1e-6
    cosang = np.abs(rel[moving] @ HINGE_AXIS) / np.linalg.norm(rel[moving], axis=1)
    assert np.max(np.arccos(np.clip(cosang, -1.0, 1.0))) < 1e-9
    # the thigh itself swings about the same axis
    assert np.max(np.abs(strict_gait.gyr_thigh[:, [0, 2]])) < 1e-12


def test_default_gait_out_of_plane_rms(gait):
    # strip the flexion rotation; what is left is the knee's off-axis rotation
    residual = [rotation_angle(rot_y(f) @ rk) for f, rk in zip(gait.flexion, gait.rot_knee)]
    rms = np.degrees(np.sqrt(np.mean(np.square(residual))))
    assert 1.0 <= rms <= 5.0


def test_default_gait_flexion_is_gait_like(gait):
    span = np.degrees(np.ptp(gait.flexion))
    assert 40.0 < span < 90.0
    spectrum = np.abs(np.fft.rfft(gait.flexion - gait.flexion.mean()))
    peak_hz = np.fft.rfftfreq(len(gait), 1 / RATE)[np.argmax(spectrum)]
    assert 0.7 < peak_hz < 1.3


@pytest.mark.parametrize("segment", ["thigh", "shank"])
def test_angular_acceleration_matches_central_differences(gait, segment):
    w = getattr(gait, f"gyr_{segment}")
    dw = getattr(gait, f"dgyr_{segment}")
    h = 1.0 / RATE
    fd = (w[2:] - w[:-2]) / (2 * h)
    # truncation term of the central difference is h^2/6 times the third derivative
    third = (dw[2:] - 2 * dw[1:-1] + dw[:-2]) / h**2
    bound = h**2 / 6 * np.max(np.abs(third))
    assert np.max(np.abs(fd - dw[1:-1])) < 10 * bound


def test_generated_trajectory_validates(gait):
    gait.validate()


def test_gait_is_deterministic():
    a = gen_gait(5.0, RATE, np.random.default_rng(9))
    b = gen_gait(5.0, RATE, np.random.default_rng(9))
    np.testing.assert_array_equal(a.gyr_shank, b.gyr_shank)
    np.testing.assert_array_equal(a.rot_knee, b.rot_knee)


# trajectory files


def test_trajectory_round_trip_is_bit_equal(tmp_path, gait):
    traj = gait.slice(0, 300)
    path = tmp_path / "traj.csv"
    save_trajectory(traj, path)
    back = load_trajectory(path)
    for name in ("t", "acc_hip", "rot_thigh", "gyr_thigh", "dgyr_thigh", "gyr_shank", "dgyr_shank",
                 "rot_knee", "flexion", "gravity", "hinge_axis"):
        np.testing.assert_array_equal(getattr(back, name), getattr(traj, name))
    assert back.rate == traj.rate
    assert back.thigh_length == traj.thigh_length


def _rewrite(path, edit):
    lines = path.read_text().splitlines()
    path.write_text("\n".join(edit(lines)) + "\n")


def _header_index(lines):
    return next(i for i, line in enumerate(lines) if not line.startswith("#"))


def test_missing_column_is_named(tmp_path, gait):
    path = tmp_path / "traj.csv"
    save_trajectory(gait.slice(0, 20), path)

    def drop(lines):
        h = _header_index(lines)
        k = lines[h].split(",").index("wy_S")
        return lines[:h] + [",".join(c for i, c in enumerate(line.split(",")) if i != k) for line in lines[h:]]

    _rewrite(path, drop)
    with pytest.raises(TrajectoryFormatError, match="wy_S"):
        load_trajectory(path)


def test_timestamp_gap_is_rejected(tmp_path, gait):
    path = tmp_path / "traj.csv"
    save_trajectory(gait.slice(0, 20), path)

    def gap(lines):
        h = _header_index(lines)
        row = lines[h + 11].split(",")
        row[0] = repr(float(row[0]) + 2.0 / RATE)
        lines[h + 11] = ",".join(row)
        return lines

    _rewrite(path, gap)
    with pytest.raises(TrajectoryFormatError, match="non-uniform"):
        load_trajectory(path)


def test_nan_reports_line_number(tmp_path, gait):
    path = tmp_path / "traj.csv"
    save_trajectory(gait.slice(0, 20), path)
    target = {}

    def poison(lines):
        h = _header_index(lines)
        row = lines[h + 5].split(",")
        row[14] = "nan"
        lines[h + 5] = ",".join(row)
        target["line"] = h + 6
        return lines

    _rewrite(path, poison)
    with pytest.raises(TrajectoryFormatError, match=f"line\\(s\\) {target['line']}"):
        load_trajectory(path)


def test_missing_rate_line(tmp_path, gait):
    path = tmp_path / "traj.csv"
    save_trajectory(gait.slice(0, 5), path)
    _rewrite(path, lambda lines: [line for line in lines if not line.startswith("# rate")])
    with pytest.raises(TrajectoryFormatError, match="rate"):
        load_trajectory(path)


def test_stream_round_trip(tmp_path, gait):
    thigh, _ = synth_imu(gait.slice(0, 100), MountingConfig.random(np.random.default_rng(0)), np.random.default_rng(1))
    path = tmp_path / "thigh.csv"
    save_stream(thigh, path)
    back = load_stream(path)
    np.testing.assert_array_equal(back.acc, thigh.acc)
    np.testing.assert_array_equal(back.gyr, thigh.gyr)
    assert back.rate == thigh.rate and back.segment == "thigh"


# mounting


def test_random_mounting_levers_in_range():
    rng = np.random.default_rng(4)
    for _ in range(500):
        m = MountingConfig.random(rng)
        for lev in (m.lever_thigh, m.lever_shank):
            assert 0.0 < np.linalg.norm(lev) < 0.3


def test_true_axes_are_unit(gait):
    jt, js = MountingConfig.random(np.random.default_rng(5)).true_axes()
    assert np.linalg.norm(jt) == pytest.approx(1.0) and np.linalg.norm(js) == pytest.approx(1.0)


# synthesis


def test_static_gravity_only():
    rot_t = random_rotation(np.random.default_rng(2))
    traj = static_trajectory(50, rot_thigh=rot_t)
    mount = quiet(MountingConfig.random(np.random.default_rng(3)))
    thigh, shank = synth_imu(traj, mount, np.random.default_rng(0))
    chain = mount.rot_bs_thigh @ mount.base @ rot_t.T
    np.testing.assert_allclose(thigh.acc, np.tile(-chain @ GRAVITY, (50, 1)), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(shank.acc, axis=1), 9.81, atol=1e-12)
    assert np.all(thigh.gyr == 0) and np.all(shank.gyr == 0)


def test_no_lever_no_gravity_no_acceleration():
    traj = spin_trajectory(200, (0.3, -1.2, 2.0))
    mount = quiet(MountingConfig.random(np.random.default_rng(0)))
    mount.lever_thigh = np.zeros(3)
    mount.gravity = False
    thigh, _ = synth_imu(traj, mount, np.random.default_rng(0))
    assert np.max(np.abs(thigh.acc)) < 1e-12


def test_centripetal_magnitude():
    traj = spin_trajectory(300, 2.0 * HINGE_AXIS)
    mount = MountingConfig.aligned(lever_thigh=(0.1, 0.0, 0.0))
    mount.gravity = False
    thigh, _ = synth_imu(traj, mount, np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(thigh.acc, axis=1), 0.4, atol=1e-12)


def test_noise_statistics(gait):
    traj = gait.slice(0, 4000)
    mount = MountingConfig.random(np.random.default_rng(0))
    noisy, _ = synth_imu(traj, mount, np.random.default_rng(1))
    clean, _ = synth_imu(traj, quiet(MountingConfig.random(np.random.default_rng(0))), np.random.default_rng(1))
    assert np.std(noisy.acc - clean.acc) == pytest.approx(0.05, rel=0.05)
    assert np.std(noisy.gyr - clean.gyr) == pytest.approx(0.005, rel=0.05)
    assert abs(np.mean(noisy.gyr - clean.gyr)) < 5e-4


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_acc_norm_independent_of_orientations(seed):
    rng = np.random.default_rng(seed)
    traj = gen_gait(2.0, RATE, rng)
    a = quiet(MountingConfig.random(rng))
    b = quiet(MountingConfig.random(rng))
    b.lever_thigh, b.lever_shank = a.lever_thigh, a.lever_shank
    for sa, sb in zip(synth_imu(traj, a, rng), synth_imu(traj, b, rng)):
        np.testing.assert_allclose(np.linalg.norm(sa.acc, axis=1), np.linalg.norm(sb.acc, axis=1), atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(sa.gyr, axis=1), np.linalg.norm(sb.gyr, axis=1), atol=1e-12)


def test_synthesis_deterministic(gait):
    traj = gait.slice(0, 500)
    mount = MountingConfig.random(np.random.default_rng(0))
    a = synth_imu(traj, mount, np.random.default_rng(3))
    b = synth_imu(traj, mount, np.random.default_rng(3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.acc, y.acc)
        np.testing.assert_array_equal(x.gyr, y.gyr)


def test_strict_hinge_gravity_orthogonal_to_axis(strict_gait):
    # gravity and every motion term stay in the sagittal plane of a pure hinge
    mount = quiet(MountingConfig.random(np.random.default_rng(8)))
    thigh, shank = synth_imu(strict_gait, mount, np.random.default_rng(0))
    jt, js = mount.true_axes()
    assert np.max(np.abs(thigh.acc @ jt)) < 1e-10
    assert np.max(np.abs(shank.acc @ js)) < 1e-10


# movements


def test_zero_movement_is_identity():
    ev = gen_movement(0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(ev.rot_move, np.eye(3))


def test_half_turn_magnitude():
    ev = gen_movement(np.pi, np.random.default_rng(0))
    assert np.linalg.norm(ev.phi) == pytest.approx(np.pi)


def test_shift_lengths_in_range():
    rng = np.random.default_rng(0)
    lengths = [np.linalg.norm(gen_movement(np.pi / 2, rng).shift) for _ in range(1000)]
    assert 0.0 < min(lengths) and max(lengths) < 0.15


@pytest.mark.parametrize("phi_mag", [-0.1, np.pi + 1e-6])
def test_gen_movement_rejects_out_of_range(phi_mag):
    with pytest.raises(ValueError):
        gen_movement(phi_mag, np.random.default_rng(0))


def test_identity_movement_reproduces_synthesis(gait):
    traj = gait.slice(0, 400)
    mount = MountingConfig.random(np.random.default_rng(0))
    moved = apply_movement(traj, mount, MovementEvent.identity(100), np.random.default_rng(5))
    plain = synth_imu(traj, mount, np.random.default_rng(5))
    for x, y in zip(moved, plain):
        np.testing.assert_array_equal(x.acc, y.acc)
        np.testing.assert_array_equal(x.gyr, y.gyr)


def test_static_rotation_turns_acceleration():
    traj = static_trajectory(40)
    mount = MountingConfig.aligned()
    rot = rot_x(np.pi / 2)
    ev = MovementEvent(10, np.pi / 2, np.array([np.pi / 2, 0, 0]), rot, np.zeros(3))
    before, _ = synth_imu(traj, mount, np.random.default_rng(0))
    after, _ = apply_movement(traj, mount, ev, np.random.default_rng(0))
    np.testing.assert_array_equal(after.acc[:10], before.acc[:10])
    for k in range(10, 40):
        assert abs(angle_between(before.acc[k], after.acc[k]) - np.pi / 2) < 1e-9


@pytest.mark.parametrize("phi", [np.pi / 6, np.pi / 3, np.pi / 2])
def test_spin_rate_ratio_closed_form(phi):
    traj = spin_trajectory(500, 2.0 * HINGE_AXIS)
    mount = MountingConfig.aligned()
    rot = axis_angle((1.0, 0.0, 0.0), phi)
    ev = MovementEvent(0, phi, np.array([phi, 0, 0]), rot, np.zeros(3))
    before, _ = synth_imu(traj, mount, np.random.default_rng(0))
    after, _ = apply_movement(traj, mount, ev, np.random.default_rng(0))
    ratio = np.sum((after.gyr - before.gyr) ** 2) / np.sum(before.gyr**2)
    assert ratio == pytest.approx(4 * np.sin(phi / 2) ** 2, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 299))
def test_movement_locality(seed, k):
    rng = np.random.default_rng(seed)
    traj = gen_gait(2.1, RATE, rng).slice(0, 300)
    mount = MountingConfig.random(rng)
    ev = gen_movement(rng.uniform(0, np.pi), rng, t_move=k)
    moved_t, moved_s = apply_movement(traj, mount, ev, np.random.default_rng(seed))
    plain_t, plain_s = synth_imu(traj, mount, np.random.default_rng(seed))
    np.testing.assert_array_equal(moved_t.acc[:k], plain_t.acc[:k])
    np.testing.assert_array_equal(moved_t.gyr[:k], plain_t.gyr[:k])
    np.testing.assert_array_equal(moved_s.acc, plain_s.acc)
    np.testing.assert_array_equal(moved_s.gyr, plain_s.gyr)


def test_gyro_ignores_shift(gait):
    traj = gait.slice(0, 300)
    mount = quiet(MountingConfig.random(np.random.default_rng(0)))
    ev = gen_movement(1.0, np.random.default_rng(1), t_move=50)
    unshifted = MovementEvent(50, ev.phi_mag, ev.phi, ev.rot_move, np.zeros(3))
    a, _ = apply_movement(traj, mount, ev, np.random.default_rng(0))
    b, _ = apply_movement(traj, mount, unshifted, np.random.default_rng(0))
    np.testing.assert_array_equal(a.gyr, b.gyr)
    assert not np.allclose(a.acc[50:], b.acc[50:])


def test_rotation_preserves_acc_norm(gait):
    traj = gait.slice(0, 300)
    mount = quiet(MountingConfig.random(np.random.default_rng(0)))
    ev = gen_movement(2.0, np.random.default_rng(1), t_move=0)
    ev.shift[:] = 0.0
    a, _ = apply_movement(traj, mount, ev, np.random.default_rng(0))
    b, _ = synth_imu(traj, mount, np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(a.acc, axis=1), np.linalg.norm(b.acc, axis=1), atol=1e-12)


@pytest.mark.parametrize("t_move", [-1, 400])
def test_apply_movement_rejects_bad_time(gait, t_move):
    with pytest.raises(ValueError):
        apply_movement(gait.slice(0, 400), MountingConfig.aligned(), MovementEvent.identity(t_move),
                       np.random.default_rng(0))


def test_apply_movement_rejects_shank_target(gait):
    ev = MovementEvent.identity(0)
    ev.target = "shank"
    with pytest.raises(ValueError):
        apply_movement(gait.slice(0, 10), MountingConfig.aligned(), ev, np.random.default_rng(0))


# axis error


def test_axis_error_identical():
    d, ang = axis_error((0.0, 0.6, 0.8), (0.0, 0.6, 0.8))
    np.testing.assert_array_equal(d, 0.0)
    assert ang == 0.0


def test_axis_error_sign_ambiguity():
    d, ang = axis_error((0.0, 0.6, 0.8), (0.0, -0.6, -0.8))
    np.testing.assert_array_equal(d, 0.0)
    assert ang == pytest.approx(0.0, abs=1e-15)


def test_axis_error_planar():
    t = np.radians(10.0)
    _, ang = axis_error((1, 0, 0), (np.cos(t), np.sin(t), 0))
    assert np.degrees(ang) == pytest.approx(10.0)


def test_axis_error_rejects_non_unit():
    with pytest.raises(ValueError):
        axis_error((1, 0, 0), (2, 0, 0))
