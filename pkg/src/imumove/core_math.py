"""Rotation-group and vector helpers shared across the package.

Rotations are stored as plain ``(3, 3)`` float arrays. ``R @ v`` expresses a
vector given in frame ``[f1]`` in frame ``[f2]`` when ``R`` is the matrix
whose columns are the axes of ``[f1]`` written in ``[f2]``.

Euler angles use the intrinsic X-then-Y-then-Z convention::

    R = Rx(phi1) @ Ry(phi2) @ Rz(phi3)
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

PARALLEL_LIMIT = 0.999
RENORM_EVERY = 100


def as_vec3(v: ArrayLike) -> NDArray[np.float64]:
    out = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite vector: {out}")
    return out


def normalize(v: ArrayLike, axis: int = -1) -> NDArray[np.float64]:
    """Scale vectors to unit length along ``axis``.

    Raises
    ------
    ValueError
        If any vector has zero norm.
    """
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero-norm vector")
    return v / n


def cross(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    return np.cross(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def angle_between(a: ArrayLike, b: ArrayLike) -> float:
    """Angle in ``[0, pi]`` between two non-zero vectors.

    Uses ``atan2(|a x b|, a . b)``, which stays accurate near 0 and pi where
    the arccos form loses precision.
    """
    a = as_vec3(a)
    b = as_vec3(b)
    if not np.any(a) or not np.any(b):
        raise ValueError("angle_between is undefined for zero-norm input")
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def random_unit_vec(rng: np.random.Generator, size: int | None = None) -> NDArray[np.float64]:
    """Isotropic unit vector(s) from normalized Gaussian draws."""
    shape = (3,) if size is None else (size, 3)
    while True:
        v = rng.standard_normal(shape)
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.all(n > 1e-12):
            return v / n


def rotation_from_axes(x: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
    """Build ``[x, y, z]`` from two non-parallel directions.

    ``z = x cross y`` and ``y = z cross x``, then all three are normalized, so
    the result is a proper rotation whose first column is along ``x``.
    """
    x = as_vec3(x)
    y = as_vec3(y)
    z = np.cross(x, y)
    y = np.cross(z, x)
    return np.column_stack([normalize(x), normalize(y), normalize(z)])


def random_rotation(rng: np.random.Generator) -> NDArray[np.float64]:
    """Random proper rotation from two random unit vectors.

    The draw is retried while the two vectors are nearly parallel
    (``|x . y| > 0.999``). The resulting distribution is not Haar-uniform,
    but its first column is isotropic so no direction is excluded.
    """
    while True:
        x = random_unit_vec(rng)
        y = random_unit_vec(rng)
        if abs(float(np.dot(x, y))) <= PARALLEL_LIMIT:
            return rotation_from_axes(x, y)


def rot_x(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> NDArray[np.float64]:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_xyz(phi: ArrayLike) -> NDArray[np.float64]:
    """Intrinsic XYZ rotation ``Rx(phi[0]) @ Ry(phi[1]) @ Rz(phi[2])``."""
    p = as_vec3(phi)
    return rot_x(p[0]) @ rot_y(p[1]) @ rot_z(p[2])


def axis_angle(axis: ArrayLike, angle: float) -> NDArray[np.float64]:
    """Rodrigues rotation by ``angle`` about ``axis`` (normalized here)."""
    u = normalize(as_vec3(axis))
    k = skew(u)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def elementary_rotations(axis: NDArray[np.float64], angles: NDArray[np.float64]) -> NDArray[np.float64]:
    """Stack of rotations ``(N, 3, 3)`` about one fixed unit axis."""
    k = skew(axis)
    kk = k @ k
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * k + (1.0 - c) * kk


def skew(v: ArrayLike) -> NDArray[np.float64]:
    x, y, z = as_vec3(v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(r: ArrayLike) -> NDArray[np.float64]:
    """Closest proper rotation to ``r`` in the Frobenius sense (SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def compose(rotations) -> NDArray[np.float64]:
    """Left-to-right product of a sequence of rotations.

    Long chains are re-orthonormalized every ``RENORM_EVERY`` products to stop
    round-off from accumulating.
    """
    out = np.eye(3)
    for i, r in enumerate(rotations, start=1):
        out = out @ r
        if i % RENORM_EVERY == 0:
            out = orthonormalize(out)
    return out


def is_rotation(r: ArrayLike, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    ortho = np.max(np.abs(r.T @ r - np.eye(3)))
    return bool(ortho < tol and abs(np.linalg.det(r) - 1.0) < tol)


def rotation_angle(r: ArrayLike) -> float:
    """Rotation angle in ``[0, pi]`` of a proper rotation matrix."""
    r = np.asarray(r, dtype=float)
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(c))
