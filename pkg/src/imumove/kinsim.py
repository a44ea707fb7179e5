"""Synthetic thigh/shank IMU data with randomized mounting and sensor movements.

Kinematic model
---------------
A trajectory describes, in a fixed capture frame ``[m]``:

* the hip (base) acceleration ``acc_hip``,
* the thigh orientation ``rot_thigh`` (columns are thigh body axes in ``[m]``),
* the knee rotation ``rot_knee`` (shank relative to thigh),
* thigh and shank angular rates and angular accelerations in ``[m]``.

The knee centre sits at ``rot_thigh @ (0, 0, -thigh_length)`` from the hip.
The hinge axis is ``hinge_axis`` in both body frames.

A sensor is placed relative to its segment's joint centre (hip for the thigh,
knee for the shank) through a lever arm ``r`` pointing from the sensor to that
centre, expressed in the segment body frame. The specific force and angular
rate in the sensor frame are::

    acc = R_bs @ R_seg.T @ (a_centre - (dw x r_m + w x (w x r_m)) - g_m) + noise
    gyr = R_bs @ R_seg.T @ w + noise

with ``r_m = R_seg @ r`` and ``g_m = base.T @ (0, 0, -9.81)``: the random base
pose tilts gravity relative to the captured motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core_math import (
    angle_between,
    as_vec3,
    euler_xyz,
    random_rotation,
    random_unit_vec,
)

Segment = Literal["thigh", "shank"]

GRAVITY = np.array([0.0, 0.0, -9.81])
HINGE_AXIS = np.array([0.0, 1.0, 0.0])
E_X = np.array([1.0, 0.0, 0.0])
E_Z = np.array([0.0, 0.0, 1.0])

DEFAULT_RATE = 148.148
MAX_LEVER = 0.3
MAX_MOVE_SHIFT = 0.15


class TrajectoryFormatError(ValueError):
    """Raised when a trajectory or stream file violates its schema."""


# ---------------------------------------------------------------------------
# data types


@dataclass
class GaitTrajectory:
    rate: float
    t: NDArray[np.float64]
    acc_hip: NDArray[np.float64]
    rot_thigh: NDArray[np.float64]
    gyr_thigh: NDArray[np.float64]
    dgyr_thigh: NDArray[np.float64]
    gyr_shank: NDArray[np.float64]
    dgyr_shank: NDArray[np.float64]
    rot_knee: NDArray[np.float64]
    flexion: NDArray[np.float64]
    thigh_length: float = 0.42
    hinge_axis: NDArray[np.float64] = field(default_factory=lambda: HINGE_AXIS.copy())
    gravity: NDArray[np.float64] = field(default_factory=lambda: GRAVITY.copy())
    out_of_plane: NDArray[np.float64] | None = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def rot_shank(self) -> NDArray[np.float64]:
        return self.rot_thigh @ self.rot_knee

    def slice(self, start: int, stop: int) -> "GaitTrajectory":
        sl = np.s_[start:stop]
        oop = None if self.out_of_plane is None else self.out_of_plane[sl]
        return replace(
            self,
            t=self.t[sl],
            acc_hip=self.acc_hip[sl],
            rot_thigh=self.rot_thigh[sl],
            gyr_thigh=self.gyr_thigh[sl],
            dgyr_thigh=self.dgyr_thigh[sl],
            gyr_shank=self.gyr_shank[sl],
            dgyr_shank=self.dgyr_shank[sl],
            rot_knee=self.rot_knee[sl],
            flexion=self.flexion[sl],
            out_of_plane=oop,
        )

    def validate(self) -> None:
        n = len(self.t)
        if self.rate <= 0 or not math.isfinite(self.rate):
            raise ValueError(f"invalid sample rate {self.rate}")
        for name in ("acc_hip", "gyr_thigh", "dgyr_thigh", "gyr_shank", "dgyr_shank"):
            arr = getattr(self, name)
            if arr.shape != (n, 3):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n, 3)}")
        for name in ("rot_thigh", "rot_knee"):
            arr = getattr(self, name)
            if arr.shape != (n, 3, 3):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n, 3, 3)}")
            ortho = np.abs(np.einsum("nji,njk->nik", arr, arr) - np.eye(3)).max(initial=0.0)
            det = np.abs(np.linalg.det(arr) - 1.0).max(initial=0.0) if n else 0.0
            if ortho > 1e-6 or det > 1e-6:
                raise ValueError(f"{name} contains improper rotations")
        for name in ("t", "acc_hip", "rot_thigh", "gyr_thigh", "dgyr_thigh",
                     "gyr_shank", "dgyr_shank", "rot_knee", "flexion"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite samples")
        if n > 1:
            dt = np.diff(self.t)
            if np.any(dt <= 0) or np.any(dt > 1.5 / self.rate):
                raise ValueError("timestamps are not uniformly sampled")


@dataclass
class MountingConfig:
    """Sensor placement and noise for one simulation run.

    ``base`` is the random pose shared by both segments; it rotates the whole
    capture-frame signal, gravity included, before the sensor orientation.
    ``lever_thigh`` and ``lever_shank`` point from each sensor to the centre of
    its segment's joint (hip and knee), in the segment body frame.
    ``rot_bs_*`` maps base-rotated body coordinates into sensor coordinates.
    """

    base: NDArray[np.float64]
    rot_bs_thigh: NDArray[np.float64]
    rot_bs_shank: NDArray[np.float64]
    lever_thigh: NDArray[np.float64]
    lever_shank: NDArray[np.float64]
    noise_std_acc: float = 0.05
    noise_std_gyr: float = 0.005
    bias_acc: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    bias_gyr: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    gravity: bool = True
    centripetal: Literal["standard", "dot"] = "standard"

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        noise_std_acc: float = 0.05,
        noise_std_gyr: float = 0.005,
    ) -> "MountingConfig":
        """Random base pose, sensor orientations and lever arms."""
        base = random_rotation(rng)
        rot_t = random_rotation(rng)
        rot_s = random_rotation(rng)
        lev_t = random_unit_vec(rng) * _open_uniform(rng, MAX_LEVER)
        lev_s = random_unit_vec(rng) * _open_uniform(rng, MAX_LEVER)
        return cls(base, rot_t, rot_s, lev_t, lev_s, noise_std_acc, noise_std_gyr)

    @classmethod
    def aligned(cls, lever_thigh=(0.0, 0.0, 0.0), lever_shank=(0.0, 0.0, 0.0)) -> "MountingConfig":
        """Identity orientations, no noise: handy for closed-form checks."""
        eye = np.eye(3)
        return cls(eye, eye.copy(), eye.copy(), as_vec3(lever_thigh), as_vec3(lever_shank), 0.0, 0.0)

    def true_axes(self, hinge_axis: ArrayLike = HINGE_AXIS) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        j = as_vec3(hinge_axis)
        return self.rot_bs_thigh @ self.base @ j, self.rot_bs_shank @ self.base @ j

    def validate(self) -> None:
        for lev in (self.lever_thigh, self.lever_shank):
            if np.linalg.norm(lev) >= MAX_LEVER:
                raise ValueError(f"lever arm {lev} exceeds {MAX_LEVER} m")


@dataclass
class ImuStream:
    acc: NDArray[np.float64]
    gyr: NDArray[np.float64]
    rate: float
    segment: Segment = "thigh"

    def __len__(self) -> int:
        return len(self.acc)

    def __post_init__(self) -> None:
        if self.acc.shape != self.gyr.shape or self.acc.ndim != 2 or self.acc.shape[1] != 3:
            raise ValueError("acc and gyr must both have shape (N, 3)")

    def slice(self, start: int, stop: int) -> "ImuStream":
        return ImuStream(self.acc[start:stop], self.gyr[start:stop], self.rate, self.segment)


@dataclass
class MovementEvent:
    t_move: int
    phi_mag: float
    phi: NDArray[np.float64]
    rot_move: NDArray[np.float64]
    shift: NDArray[np.float64]
    target: Segment = "thigh"

    @classmethod
    def identity(cls, t_move: int = 0) -> "MovementEvent":
        return cls(t_move, 0.0, np.zeros(3), np.eye(3), np.zeros(3))


def _open_uniform(rng: np.random.Generator, high: float) -> float:
    while True:
        x = rng.uniform(0.0, high)
        if x > 0.0:
            return x


# ---------------------------------------------------------------------------
# gait generator


@dataclass
class _Profile:
    """Angle (or displacement) as a Fourier series in gait phase."""

    offset: float
    amps: tuple[float, ...]
    phases: tuple[float, ...]

    def eval(self, p: NDArray[np.float64]):
        v = np.full_like(p, self.offset)
        d1 = np.zeros_like(p)
        d2 = np.zeros_like(p)
        for h, (a, ph) in enumerate(zip(self.amps, self.phases), start=1):
            arg = h * p + ph
            c, s = np.cos(arg), np.sin(arg)
            v += a * c
            d1 -= a * h * s
            d2 -= a * h * h * c
        return v, d1, d2


def chain_kinematics(axes, angles, rates, accels):
    """Orientation, angular rate and angular acceleration of a rotation chain.

    The chain is ``E1(q1) @ E2(q2) @ ...`` where each ``Ek`` rotates about the
    fixed unit axis ``axes[k]`` of its parent frame. Rates and accelerations are
    returned in the root frame.
    """
    n = len(angles[0])
    rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    w = np.zeros((n, 3))
    dw = np.zeros((n, 3))
    for u, q, dq, ddq in zip(axes, angles, rates, accels):
        col = rot @ u
        dw += np.cross(w, col) * dq[:, None] + col * ddq[:, None]
        w = w + col * dq[:, None]
        k = np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])
        s = np.sin(q)[:, None, None]
        c = np.cos(q)[:, None, None]
        rot = rot @ (np.eye(3) + s * k + (1.0 - c) * (k @ k))
    return rot, w, dw


@dataclass
class GaitModel:
    """Periodic walking model with stride-to-stride cadence variability.

    Joint angles are Fourier series of a gait phase whose rate wanders around
    the mean cadence, so every derivative is available in closed form.
    """

    cadence: float = 0.95
    phase0: float = 0.0
    mod_amps: tuple[float, ...] = (0.02, 0.015, 0.01)
    mod_freqs: tuple[float, ...] = (0.031, 0.067, 0.13)
    mod_phases: tuple[float, ...] = (0.0, 1.0, 2.0)
    hip_flex: _Profile = field(default_factory=lambda: _Profile(np.radians(10), np.radians((22.0, 2.0)), (0.0, 0.5)))
    knee_flex: _Profile = field(default_factory=lambda: _Profile(np.radians(32), np.radians((27.0, 10.0, 2.0)), (1.88, -1.9, 0.3)))
    hip_abd: _Profile = field(default_factory=lambda: _Profile(0.0, np.radians((4.0,)), (0.4,)))
    hip_rot: _Profile = field(default_factory=lambda: _Profile(0.0, np.radians((4.0,)), (1.3,)))
    knee_abd: _Profile = field(default_factory=lambda: _Profile(0.0, np.radians((1.0, 0.35)), (0.2, 0.9)))
    knee_rot: _Profile = field(default_factory=lambda: _Profile(0.0, np.radians((1.4,)), (-0.7,)))
    hip_x: _Profile = field(default_factory=lambda: _Profile(0.0, (0.0, 0.03), (0.0, 0.3)))
    hip_y: _Profile = field(default_factory=lambda: _Profile(0.0, (0.02,), (0.8,)))
    hip_z: _Profile = field(default_factory=lambda: _Profile(0.0, (0.0, 0.025), (0.0, -0.2)))
    thigh_length: float = 0.42
    strict_hinge: bool = False

    @classmethod
    def random(cls, rng: np.random.Generator, strict_hinge: bool = False) -> "GaitModel":
        """Draw subject-like variability around the nominal gait."""
        base = cls()

        def jitter(p: _Profile) -> _Profile:
            scale = rng.uniform(0.85, 1.15)
            phases = tuple(ph + rng.uniform(-0.2, 0.2) for ph in p.phases)
            return _Profile(p.offset, tuple(a * scale for a in p.amps), phases)

        return cls(
            cadence=rng.uniform(0.85, 1.05),
            phase0=rng.uniform(0.0, 2 * np.pi),
            mod_amps=tuple(a * rng.uniform(0.7, 1.3) for a in base.mod_amps),
            mod_freqs=tuple(f * rng.uniform(0.7, 1.3) for f in base.mod_freqs),
            mod_phases=tuple(rng.uniform(0.0, 2 * np.pi, size=len(base.mod_amps))),
            hip_flex=jitter(base.hip_flex),
            knee_flex=jitter(base.knee_flex),
            hip_abd=jitter(base.hip_abd),
            hip_rot=jitter(base.hip_rot),
            knee_abd=jitter(base.knee_abd),
            knee_rot=jitter(base.knee_rot),
            hip_x=jitter(base.hip_x),
            hip_y=jitter(base.hip_y),
            hip_z=jitter(base.hip_z),
            thigh_length=rng.uniform(0.38, 0.46),
            strict_hinge=strict_hinge,
        )

    def phase(self, t: NDArray[np.float64]):
        w0 = 2 * np.pi * self.cadence
        p = self.phase0 + w0 * t
        dp = np.full_like(t, w0)
        ddp = np.zeros_like(t)
        for c, nu, ps in zip(self.mod_amps, self.mod_freqs, self.mod_phases):
            arg = 2 * np.pi * nu * t + ps
            p -= (self.cadence * c / nu) * (np.cos(arg) - np.cos(ps))
            dp += w0 * c * np.sin(arg)
            ddp += w0 * c * 2 * np.pi * nu * np.cos(arg)
        return p, dp, ddp

    def evaluate(self, t: ArrayLike, rate: float) -> GaitTrajectory:
        t = np.asarray(t, dtype=float)
        p, dp, ddp = self.phase(t)

        def angle(profile: _Profile, zero: bool = False):
            if zero:
                z = np.zeros_like(t)
                return z, z, z
            v, d1, d2 = profile.eval(p)
            return v, d1 * dp, d2 * dp**2 + d1 * ddp

        strict = self.strict_hinge
        hf = angle(self.hip_flex)
        kf = angle(self.knee_flex)
        ha = angle(self.hip_abd, strict)
        hr = angle(self.hip_rot, strict)
        ka = angle(self.knee_abd, strict)
        kr = angle(self.knee_rot, strict)

        # thigh: Rz(hip_rot) Rx(hip_abd) Ry(hip_flex); knee: Ry(-flex) Rx(abd) Rz(rot)
        axes = [E_Z, E_X, HINGE_AXIS, HINGE_AXIS, E_X, E_Z]
        parts = [hr, ha, hf, tuple(-x for x in kf), ka, kr]
        rot_t, w_t, dw_t = chain_kinematics(axes[:3], *zip(*parts[:3]))
        rot_s, w_s, dw_s = chain_kinematics(axes, *zip(*parts))
        rot_k = np.einsum("nji,njk->nik", rot_t, rot_s)

        acc = np.zeros((len(t), 3))
        for i, prof in enumerate((self.hip_x, self.hip_y, self.hip_z)):
            if strict and i == 1:
                continue
            _, d1, d2 = prof.eval(p)
            acc[:, i] = d2 * dp**2 + d1 * ddp

        return GaitTrajectory(
            rate=rate,
            t=t,
            acc_hip=acc,
            rot_thigh=rot_t,
            gyr_thigh=w_t,
            dgyr_thigh=dw_t,
            gyr_shank=w_s,
            dgyr_shank=dw_s,
            rot_knee=rot_k,
            flexion=kf[0],
            thigh_length=self.thigh_length,
            out_of_plane=np.column_stack([ka[0], kr[0]]),
        )


def sample_count(duration_s: float, sample_rate: float) -> int:
    if not (duration_s > 0 and math.isfinite(duration_s)):
        raise ValueError(f"invalid duration {duration_s}")
    if not (sample_rate > 0 and math.isfinite(sample_rate)):
        raise ValueError(f"invalid sample rate {sample_rate}")
    return int(math.floor(duration_s * sample_rate + 1e-9))


def gen_gait(
    duration_s: float,
    sample_rate: float,
    rng: np.random.Generator,
    strict_hinge: bool = False,
    min_samples: int = 0,
) -> GaitTrajectory:
    """Random periodic gait of ``floor(duration * rate)`` samples.

    With ``strict_hinge`` the hip and knee rotate only about the hinge axis and
    the hip moves in the sagittal plane, so the joint is an ideal 1-DoF hinge.
    """
    n = sample_count(duration_s, sample_rate)
    if n < max(min_samples, 2):
        raise ValueError(f"{n} samples is shorter than the required {max(min_samples, 2)}")
    model = GaitModel.random(rng, strict_hinge=strict_hinge)
    return model.evaluate(np.arange(n) / sample_rate, sample_rate)


def static_trajectory(n: int, rate: float = DEFAULT_RATE, rot_thigh=None, rot_knee=None) -> GaitTrajectory:
    """Motionless trajectory with constant orientations."""
    rt = np.eye(3) if rot_thigh is None else np.asarray(rot_thigh, dtype=float)
    rk = np.eye(3) if rot_knee is None else np.asarray(rot_knee, dtype=float)
    z = np.zeros((n, 3))
    return GaitTrajectory(
        rate=rate,
        t=np.arange(n) / rate,
        acc_hip=z.copy(),
        rot_thigh=np.broadcast_to(rt, (n, 3, 3)).copy(),
        gyr_thigh=z.copy(),
        dgyr_thigh=z.copy(),
        gyr_shank=z.copy(),
        dgyr_shank=z.copy(),
        rot_knee=np.broadcast_to(rk, (n, 3, 3)).copy(),
        flexion=np.zeros(n),
    )


def spin_trajectory(n: int, omega: ArrayLike, rate: float = DEFAULT_RATE) -> GaitTrajectory:
    """Thigh and shank spinning together at constant rate about a fixed axis."""
    w = as_vec3(omega)
    speed = float(np.linalg.norm(w))
    t = np.arange(n) / rate
    if speed > 0:
        rot, _, _ = chain_kinematics([w / speed], [speed * t], [np.full(n, speed)], [np.zeros(n)])
    else:
        rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    z = np.zeros((n, 3))
    ws = np.broadcast_to(w, (n, 3)).copy()
    return GaitTrajectory(
        rate=rate,
        t=t,
        acc_hip=z.copy(),
        rot_thigh=rot,
        gyr_thigh=ws,
        dgyr_thigh=z.copy(),
        gyr_shank=ws.copy(),
        dgyr_shank=z.copy(),
        rot_knee=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        flexion=np.zeros(n),
    )


# ---------------------------------------------------------------------------
# IMU synthesis


def _motion_acc(w, dw, lever_m, mode: str):
    if mode == "dot":
        # alternative (r . w) r form of the centripetal term
        return np.cross(dw, lever_m) + np.sum(lever_m * w, axis=1)[:, None] * lever_m
    return np.cross(dw, lever_m) + np.cross(w, np.cross(w, lever_m))


def _clean_imu(traj: GaitTrajectory, mount: MountingConfig, segment: Segment, lever, rot_bs):
    """Noise-free specific force and angular rate of one sensor."""
    if segment == "thigh":
        rot, w, dw = traj.rot_thigh, traj.gyr_thigh, traj.dgyr_thigh
        centre = traj.acc_hip
    else:
        rot, w, dw = traj.rot_shank, traj.gyr_shank, traj.dgyr_shank
        knee_m = traj.rot_thigh @ np.array([0.0, 0.0, -traj.thigh_length])
        centre = traj.acc_hip + _motion_acc(traj.gyr_thigh, traj.dgyr_thigh, knee_m, "standard")
    lever_m = rot @ lever
    # lever points from the sensor to the joint centre
    acc_m = centre - _motion_acc(w, dw, lever_m, mount.centripetal)
    if mount.gravity:
        acc_m = acc_m - traj.gravity
    to_sensor = rot_bs @ mount.base @ np.swapaxes(rot, 1, 2)
    acc = np.einsum("nij,nj->ni", to_sensor, acc_m)
    gyr = np.einsum("nij,nj->ni", to_sensor, w)
    return acc, gyr


def _noise(rng: np.random.Generator, n: int, mount: MountingConfig):
    acc = mount.noise_std_acc * rng.standard_normal((n, 3)) + mount.bias_acc
    gyr = mount.noise_std_gyr * rng.standard_normal((n, 3)) + mount.bias_gyr
    return acc, gyr


def _streams(traj, mount, rng, event: MovementEvent | None):
    n = len(traj)
    acc_t, gyr_t = _clean_imu(traj, mount, "thigh", mount.lever_thigh, mount.rot_bs_thigh)
    acc_s, gyr_s = _clean_imu(traj, mount, "shank", mount.lever_shank, mount.rot_bs_shank)
    if event is not None:
        k = event.t_move
        moved = traj.slice(k, n)
        acc_m, gyr_m = _clean_imu(moved, mount, "thigh", mount.lever_thigh + event.shift, mount.rot_bs_thigh)
        acc_t[k:] = acc_m @ event.rot_move.T
        gyr_t[k:] = gyr_m @ event.rot_move.T
    na_t, ng_t = _noise(rng, n, mount)
    na_s, ng_s = _noise(rng, n, mount)
    thigh = ImuStream(acc_t + na_t, gyr_t + ng_t, traj.rate, "thigh")
    shank = ImuStream(acc_s + na_s, gyr_s + ng_s, traj.rate, "shank")
    return thigh, shank


def synth_imu(traj: GaitTrajectory, mount: MountingConfig, rng: np.random.Generator) -> tuple[ImuStream, ImuStream]:
    """Thigh and shank accelerometer/gyroscope streams for a trajectory."""
    return _streams(traj, mount, rng, None)


def gen_movement(phi_mag: float, rng: np.random.Generator, t_move: int = 0) -> MovementEvent:
    """Random sensor movement of rotation magnitude ``phi_mag`` (radians).

    The Euler vector is ``phi_mag`` times a random unit vector and the shift
    is a random direction scaled by a length drawn from ``(0, 0.15)`` m.
    """
    if not 0.0 <= phi_mag <= np.pi:
        raise ValueError(f"phi_mag must lie in [0, pi], got {phi_mag}")
    phi = phi_mag * random_unit_vec(rng)
    shift = random_unit_vec(rng) * _open_uniform(rng, MAX_MOVE_SHIFT)
    return MovementEvent(t_move, float(phi_mag), phi, euler_xyz(phi), shift)


def apply_movement(
    traj: GaitTrajectory, mount: MountingConfig, event: MovementEvent, rng: np.random.Generator
) -> tuple[ImuStream, ImuStream]:
    """Streams with the thigh sensor moved from sample ``event.t_move`` on.

    Samples before ``t_move`` and the whole shank stream match
    :func:`synth_imu` bit for bit under the same generator state.
    """
    if event.target != "thigh":
        raise ValueError("only thigh sensor movements are modelled")
    if not 0 <= event.t_move < len(traj):
        raise ValueError(f"t_move={event.t_move} outside stream of {len(traj)} samples")
    return _streams(traj, mount, rng, event)


def axis_error(j_true: ArrayLike, j_est: ArrayLike, tol: float = 1e-6):
    """Difference and angle between a true and an estimated hinge axis.

    The estimate is sign-aligned with the truth first, since a hinge axis is
    only defined up to sign.
    """
    jt = as_vec3(j_true)
    je = as_vec3(j_est)
    for v in (jt, je):
        if abs(np.linalg.norm(v) - 1.0) > tol:
            raise ValueError(f"axis {v} is not a unit vector")
    if np.dot(jt, je) < 0:
        je = -je
    return jt - je, angle_between(jt, je)


# ---------------------------------------------------------------------------
# CSV files

TRAJ_COLUMNS = (
    ["t", "ax_hip", "ay_hip", "az_hip"]
    + [f"r{i}{j}_hip" for i in range(1, 4) for j in range(1, 4)]
    + ["wx_T", "wy_T", "wz_T", "wx_S", "wy_S", "wz_S"]
    + ["dwx_T", "dwy_T", "dwz_T", "dwx_S", "dwy_S", "dwz_S"]
    + [f"r{i}{j}_knee" for i in range(1, 4) for j in range(1, 4)]
    + ["flexion"]
)
STREAM_COLUMNS = ["t", "ax", "ay", "az", "gx", "gy", "gz"]


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_table(path, header: dict[str, str], columns, data: NDArray[np.float64]) -> None:
    lines = [f"# {k}={v}" for k, v in header.items()]
    lines.append(",".join(columns))
    lines.extend(",".join(_fmt(x) for x in row) for row in data)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_table(path, required):
    header: dict[str, str] = {}
    columns = None
    rows = []
    line_nos = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
                continue
            if columns is None:
                columns = [c.strip() for c in line.split(",")]
                continue
            try:
                values = [float(x) for x in line.split(",")]
            except ValueError as exc:
                raise TrajectoryFormatError(f"{path}:{line_no}: unparsable value ({exc})") from None
            if len(values) != len(columns):
                raise TrajectoryFormatError(
                    f"{path}:{line_no}: expected {len(columns)} values, got {len(values)}"
                )
            rows.append(values)
            line_nos.append(line_no)
    if columns is None:
        raise TrajectoryFormatError(f"{path}: missing header row")
    missing = [c for c in required if c not in columns]
    if missing:
        raise TrajectoryFormatError(f"{path}: missing column(s) {', '.join(missing)}")
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    bad = ~np.all(np.isfinite(data), axis=1)
    if np.any(bad):
        where = ", ".join(str(line_nos[i]) for i in np.flatnonzero(bad)[:10])
        raise TrajectoryFormatError(f"{path}: non-finite values on line(s) {where}")
    idx = [columns.index(c) for c in required]
    return header, data[:, idx], line_nos


def _parse_rate(header, path) -> float:
    try:
        rate = float(header["rate"])
    except (KeyError, ValueError):
        raise TrajectoryFormatError(f"{path}: missing or invalid '# rate=<Hz>' line") from None
    if not rate > 0:
        raise TrajectoryFormatError(f"{path}: rate must be positive")
    return rate


def _check_uniform(t, rate, line_nos, path) -> None:
    if len(t) < 2:
        return
    dt = np.diff(t)
    bad = np.flatnonzero((dt <= 0) | (dt > 1.5 / rate))
    if len(bad):
        raise TrajectoryFormatError(
            f"{path}:{line_nos[bad[0] + 1]}: non-uniform timestamps (step {dt[bad[0]]!r} s at rate {rate} Hz)"
        )


def save_trajectory(traj: GaitTrajectory, path) -> None:
    n = len(traj)
    data = np.column_stack(
        [
            traj.t,
            traj.acc_hip,
            traj.rot_thigh.reshape(n, 9),
            traj.gyr_thigh,
            traj.gyr_shank,
            traj.dgyr_thigh,
            traj.dgyr_shank,
            traj.rot_knee.reshape(n, 9),
            traj.flexion,
        ]
    )
    header = {
        "rate": _fmt(traj.rate),
        "thigh_length": _fmt(traj.thigh_length),
        "hinge_axis": ",".join(_fmt(x) for x in traj.hinge_axis),
        "gravity": ",".join(_fmt(x) for x in traj.gravity),
    }
    _write_table(path, header, TRAJ_COLUMNS, data)


def load_trajectory(path) -> GaitTrajectory:
    """Read and validate a trajectory CSV written by :func:`save_trajectory`."""
    header, d, line_nos = _read_table(path, TRAJ_COLUMNS)
    rate = _parse_rate(header, path)
    n = len(d)
    _check_uniform(d[:, 0], rate, line_nos, path)

    def vec(key, default):
        if key not in header:
            return default.copy()
        try:
            return as_vec3([float(x) for x in header[key].split(",")])
        except ValueError:
            raise TrajectoryFormatError(f"{path}: invalid '{key}' header") from None

    try:
        length = float(header.get("thigh_length", "0.42"))
    except ValueError:
        raise TrajectoryFormatError(f"{path}: invalid 'thigh_length' header") from None
    traj = GaitTrajectory(
        rate=rate,
        t=d[:, 0].copy(),
        acc_hip=d[:, 1:4].copy(),
        rot_thigh=d[:, 4:13].reshape(n, 3, 3).copy(),
        gyr_thigh=d[:, 13:16].copy(),
        gyr_shank=d[:, 16:19].copy(),
        dgyr_thigh=d[:, 19:22].copy(),
        dgyr_shank=d[:, 22:25].copy(),
        rot_knee=d[:, 25:34].reshape(n, 3, 3).copy(),
        flexion=d[:, 34].copy(),
        thigh_length=length,
        hinge_axis=vec("hinge_axis", HINGE_AXIS),
        gravity=vec("gravity", GRAVITY),
    )
    try:
        traj.validate()
    except ValueError as exc:
        raise TrajectoryFormatError(f"{path}: {exc}") from None
    return traj


def save_stream(stream: ImuStream, path, extra_header: dict[str, str] | None = None) -> None:
    n = len(stream)
    data = np.column_stack([np.arange(n) / stream.rate, stream.acc, stream.gyr])
    header = {"rate": _fmt(stream.rate), "segment": stream.segment}
    header.update(extra_header or {})
    _write_table(path, header, STREAM_COLUMNS, data)


def load_stream(path, segment: Segment | None = None) -> ImuStream:
    header, d, line_nos = _read_table(path, STREAM_COLUMNS)
    rate = _parse_rate(header, path)
    _check_uniform(d[:, 0], rate, line_nos, path)
    seg = segment or header.get("segment", "thigh")
    if seg not in ("thigh", "shank"):
        raise TrajectoryFormatError(f"{path}: unknown segment {seg!r}")
    return ImuStream(d[:, 1:4].copy(), d[:, 4:7].copy(), rate, seg)  # type: ignore[arg-type]
