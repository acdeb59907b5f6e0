import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from sketchsplat.errors import InvalidPrimitiveError
from sketchsplat.gaussians import (GaussianPrimitive, GaussianSet, build_covariance,
                                   evaluate_density, quaternion_to_matrix)

from conftest import quat_multiply, random_quaternion


def _covariance_oracle(scale, quat_wxyz):
    # independent route: scipy rotation (xyzw order) in float64
    w, x, y, z = (float(v) for v in quat_wxyz)
    rot = Rotation.from_quat([x, y, z, w]).as_matrix()
    return rot @ np.diag(np.asarray(scale, dtype=np.float64) ** 2) @ rot.T


def test_identity_rotation_unit_scale_gives_identity():
    cov = build_covariance(np.ones(3), np.array([1.0, 0, 0, 0]))
    assert np.allclose(cov, np.eye(3), atol=1e-6)


def test_axis_aligned_scale_gives_diagonal_squares():
    cov = build_covariance(np.array([2.0, 1.0, 1.0]), np.array([1.0, 0, 0, 0]))
    assert np.allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_covariance_matches_independent_matrix_oracle(seed):
    rng = np.random.default_rng(seed)
    scale = rng.uniform(0.1, 3.0, 3).astype(np.float32)
    quat = random_quaternion(rng)
    got = build_covariance(scale, quat)
    want = _covariance_oracle(scale, quat)
    assert np.abs(got - want).max() < 1e-6 * max(1.0, np.abs(want).max())


def test_covariance_rejects_bad_inputs():
    with pytest.raises(InvalidPrimitiveError):
        build_covariance(np.array([1.0, -0.1, 1.0]), np.array([1.0, 0, 0, 0]))
    with pytest.raises(InvalidPrimitiveError):
        build_covariance(np.ones(3), np.array([1e-4, 0, 0, 0]))


def test_density_is_one_at_the_mean():
    rng = np.random.default_rng(0)
    p = GaussianPrimitive(rng.normal(size=3), rng.uniform(0.2, 1, 3),
                          random_quaternion(rng), 0.7, rng.uniform(0, 1, 3))
    assert evaluate_density(p, p.position) == pytest.approx(1.0, abs=1e-6)


def test_density_unit_mahalanobis():
    p = GaussianPrimitive(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]),
                          1.0, np.zeros(3))
    got = evaluate_density(p, np.array([1.0, 0, 0]))
    assert got == pytest.approx(np.exp(-0.5), abs=1e-6)


@pytest.mark.parametrize("seed", range(15))
def test_density_matches_explicit_inverse_oracle(seed):
    rng = np.random.default_rng(seed + 50)
    p = GaussianPrimitive(rng.normal(size=3), rng.uniform(0.1, 2, 3),
                          random_quaternion(rng), 0.5, rng.uniform(0, 1, 3))
    point = (p.position + rng.normal(scale=0.8, size=3)).astype(np.float32)
    cov = _covariance_oracle(p.scale, p.rotation)
    d = (point - p.position).astype(np.float64)
    want = np.exp(-0.5 * d @ np.linalg.inv(cov) @ d)
    assert evaluate_density(p, point) == pytest.approx(want, abs=1e-6)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=40, deadline=None)
def test_covariance_symmetric_with_eigenvalue_floor(seed):
    rng = np.random.default_rng(seed)
    scale = rng.uniform(0.05, 2.5, 3).astype(np.float32)
    quat = random_quaternion(rng)
    cov = build_covariance(scale, quat)
    assert np.abs(cov - cov.T).max() <= 1e-6
    assert np.linalg.eigvalsh(cov.astype(np.float64)).min() >= scale.min() ** 2 - 1e-6


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=25, deadline=None)
def test_density_rotation_covariant(seed):
    rng = np.random.default_rng(seed)
    p = GaussianPrimitive(rng.normal(size=3), rng.uniform(0.2, 1.5, 3),
                          random_quaternion(rng), 0.5, rng.uniform(0, 1, 3))
    point = (p.position + rng.normal(scale=0.5, size=3)).astype(np.float32)
    q_rot = random_quaternion(rng)
    rot = quaternion_to_matrix(q_rot).astype(np.float64)
    rotated = GaussianPrimitive((rot @ p.position).astype(np.float32), p.scale,
                                quat_multiply(q_rot, p.rotation).astype(np.float32),
                                p.opacity, p.color)
    before = evaluate_density(p, point)
    after = evaluate_density(rotated, (rot @ point).astype(np.float32))
    assert after == pytest.approx(before, abs=1e-5)


def test_density_monotone_along_rays():
    rng = np.random.default_rng(9)
    p = GaussianPrimitive(rng.normal(size=3), rng.uniform(0.2, 1.5, 3),
                          random_quaternion(rng), 0.5, rng.uniform(0, 1, 3))
    for trial in range(10):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        values = [evaluate_density(p, (p.position + t * direction).astype(np.float32))
                  for t in np.linspace(0, 3, 12)]
        diffs = np.diff(values)
        assert np.all(diffs <= 1e-7)


def test_primitive_validation():
    with pytest.raises(InvalidPrimitiveError):
        GaussianPrimitive(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]),
                          1.2, np.zeros(3))
    with pytest.raises(InvalidPrimitiveError):
        GaussianPrimitive(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]),
                          0.5, np.array([0.2, -0.1, 0.3]))
    # norm inside the tolerance band is silently renormalized
    p = GaussianPrimitive(np.zeros(3), np.ones(3), np.array([1.05, 0, 0, 0]),
                          0.5, np.zeros(3))
    assert np.linalg.norm(p.rotation) == pytest.approx(1.0, abs=1e-6)


def test_set_texel_binding_validation():
    n = 4
    z = np.zeros((n, 3), np.float32)
    rot = np.tile(np.array([1, 0, 0, 0], np.float32), (n, 1))
    tex = np.full((n, 2), -1, np.int32)
    tex[0] = (3, 5)
    with pytest.raises(Exception):
        GaussianSet(z, np.ones((n, 3), np.float32), rot, np.full(n, 0.5, np.float32),
                    z + 0.5, uv_texel_index=tex, uv_resolution=0)
    s = GaussianSet(z, np.ones((n, 3), np.float32), rot, np.full(n, 0.5, np.float32),
                    z + 0.5, uv_texel_index=tex, uv_resolution=8)
    assert len(s) == n and s.uv_texel_index[0, 0] == 3
