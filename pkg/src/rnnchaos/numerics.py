"""Dense linear-algebra kernel: Gram-Schmidt re-orthonormalization, ridge
solves, power-iteration spectral radius and seeded random streams.

Matrices are plain float64 numpy arrays. Vector sets (orthonormal frames) are
stored as ``d x m`` arrays whose *columns* are the vectors.
"""
from __future__ import annotations

import numba
import numpy as np
import scipy.linalg

from .errors import DegenerateBasis, NoConvergence, SingularSystem

#: Norm below which a Gram-Schmidt direction is treated as collapsed.
COLLAPSE_NORM = 1e-300


@numba.njit(cache=True)
def _cgs2_rows(V, norms):
    """Orthonormalize the rows of ``V`` in place (classical GS, two passes).

    Writes each pre-normalization length into ``norms`` and returns -1, or
    the index of the first collapsed row.
    """
    m, d = V.shape
    coef = np.empty(m)
    for i in range(m):
        for _ in range(2):
            for j in range(i):
                s = 0.0
                for a in range(d):
                    s += V[j, a] * V[i, a]
                coef[j] = s
            for j in range(i):
                c = coef[j]
                for a in range(d):
                    V[i, a] -= c * V[j, a]
        s = 0.0
        for a in range(d):
            s += V[i, a] * V[i, a]
        nrm = np.sqrt(s)
        norms[i] = nrm
        if not nrm >= COLLAPSE_NORM:
            return i
        for a in range(d):
            V[i, a] /= nrm
    return -1


def orthonormalize(A):
    """Gram-Schmidt the columns of ``A``; returns ``(Q, norms)``."""
    V = np.ascontiguousarray(np.asarray(A, dtype=np.float64).T).copy()
    norms = np.empty(V.shape[0])
    bad = _cgs2_rows(V, norms)
    if bad >= 0:
        raise DegenerateBasis(bad, norms[bad])
    return V.T.copy(), norms


def gram_schmidt_step(J, E):
    """Push the frame ``E`` through ``J`` and re-orthonormalize.

    Column ``i`` of the returned ``Q`` is the normalized i-th Gram-Schmidt
    vector of ``J @ E[:, 0], ..., J @ E[:, i]``; ``norms[i]`` is its length
    before normalization. ``E`` may hold fewer than ``d`` columns.

    Raises:
        DegenerateBasis: if some direction collapses below ``COLLAPSE_NORM``.
    """
    J = np.asarray(J, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if E.ndim == 1:
        E = E[:, None]
    return orthonormalize(J @ E)


def ridge_solve(H, U, epsilon):
    """Ridge readout ``U H^T (H H^T + epsilon I)^{-1}``.

    ``H`` is ``d x T`` (hidden states as columns), ``U`` is ``k x T``. The
    system is solved through a Cholesky factorization of the symmetric
    ``d x d`` Gram matrix, never an explicit inverse.
    """
    H = np.asarray(H, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if H.ndim != 2 or U.ndim != 2 or H.shape[1] != U.shape[1]:
        raise ValueError(f"shape mismatch: H {H.shape}, U {U.shape}")
    if H.shape[1] < 1:
        raise ValueError("need at least one sample column")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    gram = H @ H.T
    gram[np.diag_indices_from(gram)] += epsilon
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(f"Gram matrix not positive definite: {exc}") from exc
    W_out = scipy.linalg.cho_solve(factor, H @ U.T).T
    if not np.all(np.isfinite(W_out)):
        raise SingularSystem("ridge solution is not finite")
    return W_out


def spectral_radius(W, tol=1e-12, max_iter=100_000):
    """Dominant eigenvalue modulus by power iteration from the all-ones vector.

    Intended for entrywise non-negative matrices, where Perron-Frobenius makes
    the dominant eigenvalue real and simple.
    """
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam_prev = np.inf
    for _ in range(max_iter):
        w = W @ v
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
        if abs(lam - lam_prev) <= tol * lam:
            return lam
        lam_prev = lam
    raise NoConvergence(f"power iteration did not settle in {max_iter} iterations")


# -- random streams -----------------------------------------------------------

def make_rng(seed):
    """Deterministic generator (PCG64) for a 64-bit integer seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(base, *path):
    """Stable child seed for a sub-task identified by integer ``path``."""
    ss = np.random.SeedSequence(entropy=int(base), spawn_key=tuple(int(p) for p in path))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def random_orthonormal(d, m, rng):
    """``d x m`` frame with orthonormal columns drawn from ``rng``."""
    Q, R = np.linalg.qr(rng.standard_normal((d, m)))
    return Q * np.sign(np.diag(R))
