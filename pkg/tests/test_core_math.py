import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imumove.core_math import (
    angle_between,
    axis_angle,
    compose,
    cross,
    euler_xyz,
    is_rotation,
    normalize,
    orthonormalize,
    random_rotation,
    random_unit_vec,
    rot_x,
    rot_y,
    rot_z,
    rotation_angle,
    rotation_from_axes,
)

angles = st.floats(-np.pi, np.pi, allow_nan=False)


def test_random_rotation_is_proper():
    rng = np.random.default_rng(0)
    for _ in range(200):
        r = random_rotation(rng)
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(r) - 1.0) < 1e-9


def test_rotation_from_canonical_axes_is_identity():
    r = rotation_from_axes((1, 0, 0), (0, 1, 0))
    np.testing.assert_array_equal(r, np.eye(3))


def test_rotation_from_axes_orthogonalizes_second_vector():
    r = rotation_from_axes((2, 0, 0), (1, 1, 0))
    np.testing.assert_allclose(r, np.eye(3), atol=1e-15)


def test_random_rotation_near_isotropic():
    # the mean of a rotated fixed vector vanishes when no direction is favoured
    rng = np.random.default_rng(1)
    v = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
    mean = np.mean([random_rotation(rng) @ v for _ in range(10_000)], axis=0)
    assert np.linalg.norm(mean) < 0.05


def test_random_rotation_retries_near_parallel_draws():
    class Scripted:
        """Feeds two parallel draws first, then a usable pair."""

        def __init__(self):
            self.draws = iter([(1, 0, 0), (1, 1e-4, 0), (0, 0, 1), (0, 1, 0)])

        def standard_normal(self, shape):
            return np.array(next(self.draws), dtype=float)

    r = random_rotation(Scripted())
    np.testing.assert_allclose(r[:, 0], [0, 0, 1])
    assert is_rotation(r)


def test_random_rotation_deterministic():
    a = [random_rotation(np.random.default_rng(42)) for _ in range(3)]
    b = [random_rotation(np.random.default_rng(42)) for _ in range(3)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_euler_zero_is_identity():
    np.testing.assert_array_equal(euler_xyz((0.0, 0.0, 0.0)), np.eye(3))


def test_euler_quarter_turn_about_x():
    np.testing.assert_allclose(euler_xyz((np.pi / 2, 0, 0)) @ [0, 1, 0], [0, 0, 1], atol=1e-15)


@pytest.mark.parametrize("phi", [(0.1, 0.2, 0.3), (-1.0, 0.4, 2.5), (np.pi, -np.pi / 2, 0.7)])
def test_euler_matches_elementary_product(phi):
    a, b, c = phi
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    np.testing.assert_allclose(euler_xyz(phi), rx @ ry @ rz, atol=1e-15)


@pytest.mark.parametrize("axis", [0, 1, 2])
@given(angle=angles)
def test_single_axis_euler_inverse(axis, angle):
    phi = np.zeros(3)
    phi[axis] = angle
    np.testing.assert_allclose(euler_xyz(phi) @ euler_xyz(-phi), np.eye(3), atol=1e-12)


def test_euler_composition_is_not_commutative():
    # reversing signs does not invert a multi-axis Euler rotation
    phi = np.array([0.4, -0.3, 0.9])
    assert not np.allclose(euler_xyz(phi) @ euler_xyz(-phi), np.eye(3), atol=1e-3)


@given(phi=st.tuples(angles, angles, angles), v=st.tuples(angles, angles, angles))
@settings(max_examples=50)
def test_rotations_preserve_unit_norm(phi, v):
    v = np.asarray(v)
    if np.linalg.norm(v) < 1e-3:
        v = np.array([1.0, 0.0, 0.0])
    u = normalize(v)
    assert abs(np.linalg.norm(euler_xyz(phi) @ u) - 1.0) < 1e-9


def test_cross_basis():
    np.testing.assert_array_equal(cross((1, 0, 0), (0, 1, 0)), [0, 0, 1])


@pytest.mark.parametrize("v", [(1, 0, 0), (0.2, -3.0, 1e-3), (1e-8, 1e-8, 0)])
def test_angle_between_self_and_opposite(v):
    assert angle_between(v, v) == pytest.approx(0.0, abs=1e-15)
    assert angle_between(v, -np.asarray(v)) == pytest.approx(np.pi)


def test_angle_between_planar():
    assert np.degrees(angle_between((1, 0, 0), (np.cos(0.3), np.sin(0.3), 0))) == pytest.approx(np.degrees(0.3))


def test_angle_between_rejects_zero():
    with pytest.raises(ValueError):
        angle_between((0, 0, 0), (1, 0, 0))


def test_random_unit_vec_norms():
    v = random_unit_vec(np.random.default_rng(3), size=10_000)
    assert np.max(np.abs(np.linalg.norm(v, axis=1) - 1.0)) < 1e-12


def test_normalize_rejects_zero():
    with pytest.raises(ValueError):
        normalize([0.0, 0.0, 0.0])


@pytest.mark.parametrize("fn", [rot_x, rot_y, rot_z])
def test_elementary_rotations_agree_with_rodrigues(fn):
    axis = np.eye(3)[[rot_x, rot_y, rot_z].index(fn)]
    np.testing.assert_allclose(fn(0.7), axis_angle(axis, 0.7), atol=1e-15)


def test_compose_long_chain_stays_orthonormal():
    step = euler_xyz((1e-3, 2e-3, -1.5e-3))
    r = compose([step] * 5000)
    assert is_rotation(r, tol=1e-12)


def test_orthonormalize_recovers_rotation():
    r = euler_xyz((0.3, 0.2, -0.1))
    noisy = r + 1e-6 * np.random.default_rng(0).standard_normal((3, 3))
    np.testing.assert_allclose(orthonormalize(noisy), r, atol=1e-5)
    assert is_rotation(orthonormalize(noisy))


@given(angle=st.floats(0.0, np.pi))
def test_rotation_angle_of_axis_angle(angle):
    assert rotation_angle(axis_angle((1, 2, 3), angle)) == pytest.approx(angle, abs=1e-7)
