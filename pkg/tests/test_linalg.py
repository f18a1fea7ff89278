import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msmi.errors import DimensionMismatch, NotPositiveDefinite, RankDeficient
from msmi.linalg import gram_error, haar_stiefel_sample, spd_inv_sqrt, stiefel_project, svd_top_k


def test_stiefel_project_scaled_identity_columns():
    m = np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    np.testing.assert_allclose(stiefel_project(m), [[1, 0], [0, 1], [0, 0]], atol=1e-15)


def test_stiefel_project_fixes_negative_diagonal():
    m = np.array([[-2.0, 0.0], [0.0, -3.0], [0.0, 0.0]])
    np.testing.assert_allclose(stiefel_project(m), [[-1, 0], [0, -1], [0, 0]], atol=1e-15)


def test_stiefel_project_idempotent_on_manifold():
    rng = np.random.default_rng(1)
    q = stiefel_project(rng.standard_normal((6, 3)))
    np.testing.assert_allclose(stiefel_project(q), q, atol=1e-12)


def test_stiefel_project_span_matches_projector_oracle():
    rng = np.random.default_rng(2)
    m = rng.standard_normal((5, 2))
    q = stiefel_project(m)
    assert gram_error(q) < 1e-10
    projector = m @ np.linalg.solve(m.T @ m, m.T)
    assert np.max(np.abs(q @ q.T - projector)) < 1e-8


def test_stiefel_project_rank_deficient():
    with pytest.raises(RankDeficient):
        stiefel_project(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]))
    with pytest.raises(RankDeficient):
        stiefel_project(np.zeros((3, 1)))


def test_stiefel_project_wide_matrix_rejected():
    with pytest.raises(DimensionMismatch):
        stiefel_project(np.ones((2, 3)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_gram_invariant_and_idempotence(m):
    if m.shape[1] > m.shape[0]:
        m = m.T
    try:
        q = stiefel_project(m)
    except RankDeficient:
        s = np.linalg.svd(m, compute_uv=False)
        assert s[0] == 0 or s[-1] <= 1e-12 * s[0]
        return
    assert gram_error(q) < 1e-10
    np.testing.assert_allclose(stiefel_project(q), q, atol=1e-12)


def test_haar_square_case_is_orthogonal():
    q = haar_stiefel_sample(4, 4, np.random.default_rng(0))
    assert gram_error(q) < 1e-12
    assert abs(abs(np.linalg.det(q)) - 1.0) < 1e-12


def test_haar_deterministic_given_seed():
    a = haar_stiefel_sample(2, 5, np.random.default_rng(42))
    b = haar_stiefel_sample(2, 5, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_haar_second_moment():
    rng = np.random.default_rng(3)
    acc = np.zeros((3, 3))
    for _ in range(10_000):
        a = haar_stiefel_sample(1, 3, rng)
        acc += a @ a.T
    assert np.max(np.abs(acc / 10_000 - np.eye(3) / 3)) < 0.02


def test_haar_rotation_invariance():
    rng = np.random.default_rng(4)
    rot = stiefel_project(rng.standard_normal((4, 4)))
    plain = np.zeros((4, 4))
    rotated = np.zeros((4, 4))
    for _ in range(10_000):
        a = haar_stiefel_sample(2, 4, rng)
        plain += a @ a.T
        rotated += (rot @ a) @ (rot @ a).T
    assert np.max(np.abs(plain - rotated)) / 10_000 < 0.03


def test_haar_dimension_check():
    with pytest.raises(DimensionMismatch):
        haar_stiefel_sample(3, 2, np.random.default_rng(0))


def test_spd_inv_sqrt_examples():
    np.testing.assert_allclose(spd_inv_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(spd_inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), atol=1e-15)


def test_spd_inv_sqrt_multiply_back_and_commutes():
    rng = np.random.default_rng(5)
    g = rng.standard_normal((4, 4))
    s = g @ g.T + 0.1 * np.eye(4)
    r = spd_inv_sqrt(s)
    assert np.max(np.abs(r @ s @ r - np.eye(4))) < 1e-8
    assert np.max(np.abs(r @ s - s @ r)) < 1e-8


def test_spd_inv_sqrt_ridge():
    s = np.diag([1.0, 0.0])
    r = spd_inv_sqrt(s, ridge=1.0)
    np.testing.assert_allclose(r, np.diag([1 / np.sqrt(2), 1.0]), atol=1e-15)


def test_spd_inv_sqrt_not_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        spd_inv_sqrt(np.diag([1.0, 0.0]))
    with pytest.raises(NotPositiveDefinite):
        spd_inv_sqrt(np.diag([1.0, -2.0]), ridge=1.0)


def test_svd_top_k_diagonal_padded():
    m = np.zeros((4, 3))
    m[0, 0], m[1, 1], m[2, 2] = 3.0, 1.0, 2.0
    sigma, left, right = svd_top_k(m, 2)
    np.testing.assert_allclose(sigma, [3.0, 2.0], atol=1e-14)
    assert gram_error(left) < 1e-12 and gram_error(right) < 1e-12


def test_svd_top_k_rank_one():
    u = np.array([2.0, 0.0, 0.0])
    v = np.array([0.0, 1.0])
    sigma, _, _ = svd_top_k(np.outer(u, v), 1)
    assert sigma[0] == pytest.approx(2.0, abs=1e-14)


def test_svd_top_k_matches_gram_eigenvalues():
    rng = np.random.default_rng(6)
    m = rng.standard_normal((6, 4))
    sigma, left, right = svd_top_k(m, 4)
    gram = np.sort(np.linalg.eigvalsh(m.T @ m))[::-1]
    np.testing.assert_allclose(sigma, np.sqrt(gram), atol=1e-8)
    assert np.all(np.diff(sigma) <= 0)
    for i in range(4):
        assert np.max(np.abs(m @ right[:, i] - sigma[i] * left[:, i])) < 1e-8


def test_svd_top_k_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        svd_top_k(np.ones((3, 2)), 3)
