"""Identity batteries on synthetic data with known ground truth.

Every check builds a zero-interval window pair: the first window holds the
unmoved streams and the second holds the same samples with the thigh sensor
moved from the first sample on.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .axisest import Window
from .core_math import axis_angle, normalize, random_unit_vec
from .kinsim import (
    DEFAULT_RATE,
    HINGE_AXIS,
    MountingConfig,
    MovementEvent,
    apply_movement,
    gen_gait,
    gen_movement,
    spin_trajectory,
    synth_imu,
)
from .metrics import WindowPair, check_rate_identity, check_accel_identity, rate_ratio

RATE_IDENTITY_TOL = 1e-9
ACCEL_IDENTITY_TOL = 1e-3
CLOSED_FORM_TOL = 1e-9


def zero_interval_pair(traj, mount: MountingConfig, event: MovementEvent, seed: int) -> WindowPair:
    """Unmoved and moved streams over the same samples, same noise draws."""
    before = synth_imu(traj, mount, np.random.default_rng(seed))
    after = apply_movement(traj, mount, event, np.random.default_rng(seed))
    return WindowPair(Window.from_streams(*before), Window.from_streams(*after))


def _stats(x) -> dict:
    x = np.asarray(x, dtype=float)
    return {"mean": float(np.mean(x)), "std": float(np.std(x)), "max_abs": float(np.max(np.abs(x)))}


def rate_identity_battery(runs: int = 100, seed: int = 0, n: int = 2000) -> dict:
    """Rate-ratio identity for random movements on a noise-free strict hinge."""
    diffs = []
    for run in range(runs):
        rng = np.random.default_rng([seed, 10, run])
        traj = gen_gait(n / DEFAULT_RATE + 1.0, DEFAULT_RATE, rng, strict_hinge=True).slice(0, n)
        mount = MountingConfig.random(rng, 0.0, 0.0)
        event = gen_movement(rng.uniform(0.0, np.pi), rng)
        pair = zero_interval_pair(traj, mount, event, run)
        j0, _ = mount.true_axes()
        diffs.append(check_rate_identity(pair, j0, event.rot_move @ j0))
    out = _stats(np.abs(diffs))
    out["passed"] = bool(out["max_abs"] < RATE_IDENTITY_TOL)
    return out


def accel_identity_battery(runs: int = 100, seed: int = 0, n: int = 2000) -> dict:
    """Acceleration identity on a noise-free strict hinge.

    Rotations are about axes orthogonal to the thigh hinge axis and the
    sensor is not shifted, which makes the sum vanish exactly. For scale,
    the same statistic is also reported for general movements on the
    default gait and for a gravity-free strict hinge with unshifted general
    rotations. Neither is expected to vanish.
    """
    exact, raw_general, norm_general, raw_free = [], [], [], []
    for run in range(runs):
        rng = np.random.default_rng([seed, 13, run])
        traj = gen_gait(n / DEFAULT_RATE + 1.0, DEFAULT_RATE, rng, strict_hinge=True).slice(0, n)
        mount = MountingConfig.random(rng, 0.0, 0.0)
        j0, _ = mount.true_axes()
        u = normalize(np.cross(j0, random_unit_vec(rng)))
        phi = rng.uniform(0.0, np.pi)
        rot = axis_angle(u, phi)
        event = MovementEvent(0, phi, phi * u, rot, np.zeros(3))
        res = check_accel_identity(zero_interval_pair(traj, mount, event, run), j0, rot @ j0)
        exact.append(res.normalized)

        traj_g = gen_gait(n / DEFAULT_RATE + 1.0, DEFAULT_RATE, rng).slice(0, n)
        mount_g = MountingConfig.random(rng, 0.0, 0.0)
        ev_g = gen_movement(rng.uniform(0.0, np.pi), rng)
        jg, _ = mount_g.true_axes()
        res_g = check_accel_identity(zero_interval_pair(traj_g, mount_g, ev_g, run), jg, ev_g.rot_move @ jg)
        raw_general.append(res_g.raw)
        norm_general.append(res_g.normalized)

        # motion-only model: no gravity, unshifted sensor, general rotation
        mount_f = MountingConfig.random(rng, 0.0, 0.0)
        mount_f.gravity = False
        ev_f = gen_movement(rng.uniform(0.0, np.pi), rng)
        ev_f.shift[:] = 0.0
        jf, _ = mount_f.true_axes()
        raw_free.append(check_accel_identity(zero_interval_pair(traj, mount_f, ev_f, run), jf, ev_f.rot_move @ jf).raw)
    out = {"strict": _stats(np.abs(exact))}
    out["strict"]["passed"] = bool(out["strict"]["max_abs"] < ACCEL_IDENTITY_TOL)
    out["general_raw"] = _stats(np.abs(raw_general))
    out["general_normalized"] = _stats(np.abs(norm_general))
    out["motion_only_raw"] = _stats(np.abs(raw_free))
    out["passed"] = out["strict"]["passed"]
    return out


@dataclass(frozen=True)
class ClosedFormCase:
    phi: float
    ratio: float
    expected: float

    @property
    def error(self) -> float:
        return abs(self.ratio - self.expected)


def closed_form_cases(phis=(np.pi / 6, np.pi / 3, np.pi / 2), n: int = 1000, speed: float = 2.0) -> list[ClosedFormCase]:
    """Constant spin about the hinge axis, sensor rotated about an orthogonal axis.

    The rate ratio then equals ``|(R - I) j|^2 = 4 sin^2(phi / 2)``.
    """
    traj = spin_trajectory(n, speed * HINGE_AXIS)
    mount = MountingConfig.aligned()
    cases = []
    for phi in phis:
        rot = axis_angle((1.0, 0.0, 0.0), phi)
        event = MovementEvent(0, float(phi), np.array([phi, 0.0, 0.0]), rot, np.zeros(3))
        pair = zero_interval_pair(traj, mount, event, 0)
        cases.append(ClosedFormCase(float(phi), rate_ratio(pair), 4 * np.sin(phi / 2) ** 2))
    return cases


def run_all(runs: int = 100, seed: int = 0) -> dict:
    """All batteries; ``passed`` is the conjunction of the asserted checks."""
    rate = rate_identity_battery(runs, seed)
    accel = accel_identity_battery(runs, seed)
    cases = closed_form_cases()
    closed = {
        "cases": [asdict(c) | {"error": c.error} for c in cases],
        "passed": all(c.error < CLOSED_FORM_TOL for c in cases),
    }
    return {
        "rate_identity": rate,
        "accel_identity": accel,
        "closed_form": closed,
        "passed": bool(rate["passed"] and accel["passed"] and closed["passed"]),
    }
