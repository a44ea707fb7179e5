"""Knee hinge-axis identification from gyroscope windows and gyro-integrated angles.

For a hinge joint the angular rate components orthogonal to the axis have the
same magnitude on both segments::

    |w_T(t) x j_T| = |w_S(t) x j_S|

The axes are found by Gauss-Newton least squares on that residual, with each
axis parameterised by spherical angles and several fixed starting points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.signal import lfilter

from .kinsim import ImuStream

DEFAULT_WINDOW = 2000


class NotEnoughExcitation(RuntimeError):
    """The window does not contain enough rotation to identify the axes."""


class NoConvergence(RuntimeError):
    """No Gauss-Newton start met the convergence tolerance."""


@dataclass(frozen=True)
class AxisEstimate:
    j_thigh: NDArray[np.float64]
    j_shank: NDArray[np.float64]
    residual: float
    iterations: int
    converged: bool

    def flipped(self) -> "AxisEstimate":
        return AxisEstimate(-self.j_thigh, -self.j_shank, self.residual, self.iterations, self.converged)


@dataclass
class Window:
    """Aligned thigh/shank samples starting at absolute sample ``start``."""

    start: int
    acc_thigh: NDArray[np.float64]
    gyr_thigh: NDArray[np.float64]
    acc_shank: NDArray[np.float64]
    gyr_shank: NDArray[np.float64]

    def __post_init__(self) -> None:
        n = len(self.gyr_thigh)
        for arr in (self.acc_thigh, self.acc_shank, self.gyr_shank):
            if arr.shape != (n, 3):
                raise ValueError("window arrays must be aligned and of shape (N, 3)")

    @property
    def length(self) -> int:
        return len(self.gyr_thigh)

    @property
    def stop(self) -> int:
        return self.start + self.length

    @classmethod
    def from_streams(cls, thigh: ImuStream, shank: ImuStream, start: int = 0,
                     length: int | None = None, offset: int = 0) -> "Window":
        """View ``length`` samples of both streams from ``start``.

        ``offset`` is the absolute index of the first stream sample and only
        affects the reported ``start``.
        """
        if len(thigh) != len(shank):
            raise ValueError("thigh and shank streams differ in length")
        length = len(thigh) - start if length is None else length
        if start < 0 or length <= 0 or start + length > len(thigh):
            raise ValueError(f"window [{start}, {start + length}) outside stream of {len(thigh)} samples")
        sl = slice(start, start + length)
        return cls(offset + start, thigh.acc[sl], thigh.gyr[sl], shank.acc[sl], shank.gyr[sl])


@dataclass
class EstimatorOptions:
    n_starts: int = 8
    max_iter: int = 200
    tol: float = 1e-12
    max_halvings: int = 20
    excitation_floor: float = 1.0
    min_length: int = 200
    principal_start: bool = True
    starts: NDArray[np.float64] | None = field(default=None, repr=False)


def _sphere(theta, phi):
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    j = np.stack([st * cp, st * sp, ct], axis=-1)
    d_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
    d_phi = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=-1)
    return j, d_theta, d_phi


def _to_angles(j):
    j = j / np.linalg.norm(j, axis=-1, keepdims=True)
    return np.arccos(np.clip(j[..., 2], -1.0, 1.0)), np.arctan2(j[..., 1], j[..., 0])


def default_starts(n: int) -> NDArray[np.float64]:
    """``(n, 4)`` spherical-angle starts for the (thigh, shank) axis pair.

    Thigh and shank directions come from a Fibonacci lattice on the upper
    hemisphere; the shank lattice is traversed in a different order so the
    pairs do not all share one relative orientation.
    """
    k = np.arange(n)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - (k + 0.5) / n
    r = np.sqrt(1.0 - z**2)
    dirs = np.column_stack([r * np.cos(golden * k), r * np.sin(golden * k), z])
    perm = (3 * k + 1) % n if n % 3 else (k + n // 2) % n
    th_t, ph_t = _to_angles(dirs)
    th_s, ph_s = _to_angles(dirs[perm])
    return np.column_stack([th_t, ph_t, th_s, ph_s])


_NORM_EPS = 1e-12


def principal_start(wt: NDArray[np.float64], ws: NDArray[np.float64]) -> NDArray[np.float64]:
    """Start at each sensor's dominant rotation direction (top eigenvector of sum w w^T)."""
    jt = np.linalg.eigh(wt.T @ wt)[1][:, -1]
    js = np.linalg.eigh(ws.T @ ws)[1][:, -1]
    th_t, ph_t = _to_angles(jt)
    th_s, ph_s = _to_angles(js)
    return np.array([[th_t, ph_t, th_s, ph_s]])


def _norms(w, w2, j):
    # w: (N,3); j: (S,3) -> |w x j| for unit j as (S,N)
    dot = j @ w.T
    n = np.sqrt(np.maximum(w2[None, :] - dot**2, 0.0))
    return n, dot


def _residuals(params, wt, wt2, ws, ws2):
    jt, _, _ = _sphere(params[:, 0], params[:, 1])
    js, _, _ = _sphere(params[:, 2], params[:, 3])
    nt, _ = _norms(wt, wt2, jt)
    ns, _ = _norms(ws, ws2, js)
    return nt - ns


def _jacobian(params, wt, wt2, ws, ws2):
    jt, dtt, dtp = _sphere(params[:, 0], params[:, 1])
    js, dst, dsp = _sphere(params[:, 2], params[:, 3])
    nt, dot_t = _norms(wt, wt2, jt)
    ns, dot_s = _norms(ws, ws2, js)
    e = nt - ns
    gt = -dot_t / np.maximum(nt, _NORM_EPS)
    gs = dot_s / np.maximum(ns, _NORM_EPS)
    jac = np.stack(
        [gt * (dtt @ wt.T), gt * (dtp @ wt.T), gs * (dst @ ws.T), gs * (dsp @ ws.T)],
        axis=-1,
    )
    return e, jac


def hinge_cost(win: Window, j_thigh, j_shank) -> float:
    """Sum of squared hinge residuals for given unit axes."""
    nt = np.linalg.norm(np.cross(win.gyr_thigh, j_thigh), axis=1)
    ns = np.linalg.norm(np.cross(win.gyr_shank, j_shank), axis=1)
    return float(np.sum((nt - ns) ** 2))


def _gauss_newton(x0, wt, ws, opts: EstimatorOptions):
    wt2 = np.einsum("ij,ij->i", wt, wt)
    ws2 = np.einsum("ij,ij->i", ws, ws)
    x = x0.copy()
    s = len(x)
    cost = np.sum(_residuals(x, wt, wt2, ws, ws2) ** 2, axis=1)
    active = np.ones(s, dtype=bool)
    converged = np.zeros(s, dtype=bool)
    iters = np.zeros(s, dtype=int)
    ridge = 1e-12
    # sqrt round-off puts a floor under the cost near an exact hinge fit
    floor = 1e-14 * (float(wt2.sum()) + float(ws2.sum()))
    for _ in range(opts.max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        e, jac = _jacobian(x[idx], wt, wt2, ws, ws2)
        jac_t = np.swapaxes(jac, 1, 2)
        jtj = jac_t @ jac
        jte = (jac_t @ e[..., None])[..., 0]
        scale = np.trace(jtj, axis1=1, axis2=2)[:, None, None] * ridge + 1e-300
        step = -np.linalg.solve(jtj + scale * np.eye(4), jte[..., None])[..., 0]
        iters[idx] += 1

        pending = np.ones(len(idx), dtype=bool)
        t = np.ones(len(idx))
        new_cost = cost[idx].copy()
        new_x = x[idx].copy()
        for _h in range(opts.max_halvings + 1):
            pi = np.flatnonzero(pending)
            if len(pi) == 0:
                break
            trial = x[idx[pi]] + t[pi, None] * step[pi]
            c = np.sum(_residuals(trial, wt, wt2, ws, ws2) ** 2, axis=1)
            ok = c < cost[idx[pi]]
            new_cost[pi[ok]] = c[ok]
            new_x[pi[ok]] = trial[ok]
            pending[pi[ok]] = False
            t[pi[~ok]] *= 0.5

        old = cost[idx]
        x[idx] = new_x
        cost[idx] = new_cost
        # no decrease after all halvings: stationary point reached
        stalled = pending
        rel = np.abs(old - new_cost) <= opts.tol * np.maximum(old, 1e-300)
        done = stalled | rel | (new_cost <= floor)
        converged[idx[done]] = True
        active[idx[done]] = False
    return x, cost, converged, iters


def _sign_normalize(jt, js, wt, ws):
    nz = np.flatnonzero(np.abs(jt) > 1e-12)
    if len(nz) and jt[nz[0]] < 0:
        jt = -jt
    # thigh and shank rates about the axis move together during walking
    if np.dot(wt @ jt, ws @ js) < 0:
        js = -js
    return jt, js


def estimate_axes(win: Window, opts: EstimatorOptions | None = None) -> AxisEstimate:
    """Hinge axes of thigh and shank sensors from one window of gyro data.

    Raises
    ------
    ValueError
        If the window is shorter than ``opts.min_length``.
    NotEnoughExcitation
        If either sensor's sum of squared rates is below ``opts.excitation_floor``.
    NoConvergence
        If no start converges within ``opts.max_iter`` iterations.
    """
    opts = opts or EstimatorOptions()
    if win.length < opts.min_length:
        raise ValueError(f"window of {win.length} samples is shorter than {opts.min_length}")
    wt = np.asarray(win.gyr_thigh, dtype=float)
    ws = np.asarray(win.gyr_shank, dtype=float)
    energy = min(float(np.sum(wt**2)), float(np.sum(ws**2)))
    if energy < opts.excitation_floor:
        raise NotEnoughExcitation(
            f"angular rate energy {energy:.3g} rad^2/s^2 below floor {opts.excitation_floor}"
        )
    x0 = opts.starts if opts.starts is not None else default_starts(opts.n_starts)
    if opts.principal_start:
        x0 = np.vstack([x0, principal_start(wt, ws)])
    x, cost, converged, iters = _gauss_newton(np.asarray(x0, dtype=float), wt, ws, opts)
    if not converged.any():
        raise NoConvergence(f"no start converged within {opts.max_iter} iterations")
    best = int(np.argmin(cost))
    jt, _, _ = _sphere(x[best, 0], x[best, 1])
    js, _, _ = _sphere(x[best, 2], x[best, 3])
    jt, js = _sign_normalize(jt / np.linalg.norm(jt), js / np.linalg.norm(js), wt, ws)
    return AxisEstimate(jt, js, float(cost[best]), int(iters.sum()), bool(converged[best]))


def f2_residual(win: Window, est: AxisEstimate) -> float:
    """Sum over the window of ``(a_T . j_T)^2 - (a_S . j_S)^2``."""
    pt = win.acc_thigh @ est.j_thigh
    ps = win.acc_shank @ est.j_shank
    return float(np.sum(pt**2 - ps**2))


def highpass(x: NDArray[np.float64], rate: float, cutoff_hz: float) -> NDArray[np.float64]:
    """First-order high-pass filter (``y[n] = a (y[n-1] + x[n] - x[n-1])``)."""
    rc = 1.0 / (2.0 * np.pi * cutoff_hz)
    a = rc / (rc + 1.0 / rate)
    y = lfilter([a, -a], [1.0, -a], x - x[0])
    return y


def joint_angle(
    gyr_thigh: NDArray[np.float64],
    gyr_shank: NDArray[np.float64],
    est: AxisEstimate,
    rate: float,
    t0: int = 0,
    highpass_hz: float | None = None,
) -> NDArray[np.float64]:
    """Relative joint angle (rad) from sample ``t0`` on, starting at zero.

    Integrates ``w_T . j_T - w_S . j_S`` with the trapezoidal rule. A
    first-order high-pass (e.g. 0.05 Hz) can be applied to bound gyro drift.
    """
    rel = gyr_thigh[t0:] @ est.j_thigh - gyr_shank[t0:] @ est.j_shank
    if len(rel) == 0:
        return rel
    theta = np.concatenate([[0.0], np.cumsum(0.5 * (rel[1:] + rel[:-1]))]) / rate
    if highpass_hz is not None:
        theta = highpass(theta, rate, highpass_hz)
    return theta
