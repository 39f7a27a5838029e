import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rnnchaos.errors import DegenerateBasis, NoConvergence, SingularSystem
from rnnchaos.numerics import (derive_seed, gram_schmidt_step, make_rng, orthonormalize,
                               random_orthonormal, ridge_solve, spectral_radius)

# dominant |eigenvalue| of make_rng(12345).random((50, 50)), from a dense
# eigendecomposition (numpy.linalg.eigvals), frozen
EIG_ORACLE_50 = 24.907488879708374


def test_gs_identity():
    Q, norms = gram_schmidt_step(np.eye(3), np.eye(3))
    np.testing.assert_array_equal(Q, np.eye(3))
    np.testing.assert_array_equal(norms, [1.0, 1.0, 1.0])


def test_gs_diagonal_map():
    Q, norms = gram_schmidt_step(np.diag([2.0, 0.5]), np.eye(2))
    np.testing.assert_allclose(norms, [2.0, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(Q, np.eye(2), atol=1e-15)


def test_gs_against_householder_qr(rng):
    J = rng.standard_normal((4, 4))
    E = random_orthonormal(4, 4, rng)
    Q, norms = gram_schmidt_step(J, E)
    np.testing.assert_allclose(Q.T @ Q, np.eye(4), atol=1e-10)
    # LAPACK QR (Householder) of the pushed frame: same columns up to sign,
    # |R_ii| equal to the Gram-Schmidt lengths
    Qh, R = np.linalg.qr(J @ E)
    signs = np.sign(np.diag(R))
    np.testing.assert_allclose(Q, Qh * signs, atol=1e-10)
    np.testing.assert_allclose(norms, np.abs(np.diag(R)), rtol=1e-10)


def test_gs_partial_frame_spans(rng):
    J = rng.standard_normal((6, 6))
    E = random_orthonormal(6, 3, rng)
    Q, _ = gram_schmidt_step(J, E)
    assert Q.shape == (6, 3)
    for k in range(1, 4):
        P = Q[:, :k] @ Q[:, :k].T
        JE = J @ E[:, :k]
        np.testing.assert_allclose(P @ JE, JE, atol=1e-10)


def test_gs_collapse_raises():
    J = np.array([[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(DegenerateBasis) as info:
        gram_schmidt_step(J, np.eye(2))
    assert info.value.index == 1


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-10, 10)), st.integers(0, 2**32 - 1))
def test_gs_orthonormal_property(J, seed):
    E = random_orthonormal(5, 5, make_rng(seed))
    try:
        Q, _ = gram_schmidt_step(J, E)
    except DegenerateBasis:
        return
    if np.linalg.cond(J) > 1e8:
        return
    np.testing.assert_allclose(Q.T @ Q, np.eye(5), atol=1e-10)


@pytest.mark.parametrize("d", [2, 3, 5, 8])
def test_gs_norm_product_is_abs_det(d, rng):
    for _ in range(5):
        J = rng.standard_normal((d, d))
        E = random_orthonormal(d, d, rng)
        _, norms = gram_schmidt_step(J, E)
        sign, logdet = np.linalg.slogdet(J)     # LU-based
        np.testing.assert_allclose(np.sum(np.log(norms)), logdet, rtol=1e-8)


def test_ridge_identity_exact():
    np.testing.assert_array_equal(ridge_solve(np.eye(3), np.eye(3), 0.0), np.eye(3))


def test_ridge_unit_epsilon():
    np.testing.assert_allclose(ridge_solve(np.eye(2), np.eye(2), 1.0), 0.5 * np.eye(2),
                               atol=1e-15)


def test_ridge_normal_equations(rng):
    H = rng.standard_normal((5, 40))
    U = rng.standard_normal((3, 40))
    eps = 1e-6
    W = ridge_solve(H, U, eps)
    resid = W @ (H @ H.T + eps * np.eye(5)) - U @ H.T
    assert np.max(np.abs(resid)) < 1e-8


def test_ridge_square_inverse(rng):
    H = rng.standard_normal((6, 6)) + 4 * np.eye(6)
    U = rng.standard_normal((2, 6))
    np.testing.assert_allclose(ridge_solve(H, U, 0.0), U @ np.linalg.inv(H), atol=1e-10)


def test_ridge_continuity_in_epsilon(rng):
    H = rng.standard_normal((4, 30))
    U = rng.standard_normal((2, 30))
    W0 = ridge_solve(H, U, 0.0)
    gaps = [np.linalg.norm(ridge_solve(H, U, e) - W0) for e in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-8


def test_ridge_shrinkage_monotone(rng):
    H = rng.standard_normal((8, 50))
    U = rng.standard_normal((3, 50))
    norms = [np.linalg.norm(ridge_solve(H, U, e)) for e in (1e-3, 1.0, 1e3)]
    assert norms[0] > norms[1] > norms[2]


def test_ridge_singular_raises():
    H = np.zeros((3, 5))
    H[0] = 1.0
    with pytest.raises(SingularSystem):
        ridge_solve(H, np.ones((1, 5)), 0.0)


def test_spectral_radius_examples():
    assert spectral_radius(np.diag([3.0, 1.0])) == pytest.approx(3.0, rel=1e-12)
    assert spectral_radius(np.ones((2, 2))) == pytest.approx(2.0, rel=1e-12)


def test_spectral_radius_dense_oracle():
    A = make_rng(12345).random((50, 50))
    assert spectral_radius(A) == pytest.approx(EIG_ORACLE_50, rel=1e-6)


def test_spectral_radius_no_convergence():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]]) @ np.diag([1.0, 0.5])
    with pytest.raises(NoConvergence):
        spectral_radius(rot, max_iter=50)


def test_rng_reproducible():
    a = make_rng(7).random(100)
    b = make_rng(7).random(100)
    assert a.tobytes() == b.tobytes()
    assert make_rng(8).random(100).tobytes() != a.tobytes()


def test_derive_seed_stable_and_distinct():
    assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2)
    seeds = {derive_seed(3, i) for i in range(100)}
    assert len(seeds) == 100
    assert derive_seed(3, 1) != derive_seed(4, 1)


def test_orthonormalize_returns_lengths(rng):
    A = rng.standard_normal((7, 3))
    Q, norms = orthonormalize(A)
    assert norms[0] == pytest.approx(np.linalg.norm(A[:, 0]))
    np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-12)
