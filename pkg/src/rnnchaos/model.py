"""Recurrent machine: parameters, spectral initialization, step functions and
exact state Jacobians for single- and multi-layer networks.

Hidden states are row vectors: a single state has shape ``(d,)`` and a batch
``(B, d)``; every step function accepts either.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import NumericalBlowup
from .numerics import spectral_radius

#: leak rate used when none is given
DEFAULT_ALPHA = 0.3


@dataclass(frozen=True)
class RnnParams:
    W: np.ndarray
    W_in: np.ndarray
    W_out: np.ndarray
    b: np.ndarray
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        d, k = self.W_in.shape
        if self.W.shape != (d, d) or self.W_out.shape != (k, d) or self.b.shape != (d,):
            raise ValueError(
                f"inconsistent shapes: W {self.W.shape}, W_in {self.W_in.shape}, "
                f"W_out {self.W_out.shape}, b {self.b.shape}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def d(self):
        return self.W.shape[0]

    @property
    def k(self):
        return self.W_in.shape[1]

    def with_readout(self, W_out):
        return replace(self, W_out=np.asarray(W_out, dtype=np.float64))

    def arrays(self):
        return {"W": self.W, "W_in": self.W_in, "W_out": self.W_out, "b": self.b}

    def closed_loop_matrix(self):
        """``W + W_in W_out``, the recurrent matrix of the autonomous machine."""
        return self.W + self.W_in @ self.W_out


def spectral_init(d, k, rho0, alpha, rng, input_scale=1.0, output_scale=1.0, bias_scale=0.0):
    """Random machine whose recurrent matrix has spectral radius ``rho0``.

    ``W`` is drawn entrywise from U[0, 1] and rescaled by its power-iteration
    spectral radius. ``W_in`` and ``W_out`` get U[-0.5, 0.5] entries divided
    by the square root of their fan-in (times the optional scale factors);
    ``b`` starts at zero.
    """
    if not rho0 > 0:
        raise ValueError("rho0 must be positive")
    W_hat = rng.random((d, d))
    W = (rho0 / spectral_radius(W_hat)) * W_hat
    W_in = input_scale * (rng.random((d, k)) - 0.5) / np.sqrt(k)
    W_out = output_scale * (rng.random((k, d)) - 0.5) / np.sqrt(d)
    b = bias_scale * (rng.random(d) - 0.5) if bias_scale else np.zeros(d)
    return RnnParams(W=W, W_in=W_in, W_out=W_out, b=b, alpha=float(alpha))


def driven_step(p, h, u):
    """``h' = (1-a) h + a tanh(W h + W_in u + b)``; returns ``(h', W_out h')``."""
    h_next = (1.0 - p.alpha) * h + p.alpha * np.tanh(h @ p.W.T + u @ p.W_in.T + p.b)
    return h_next, h_next @ p.W_out.T


def autonomous_step(p, h):
    """Driven step whose input is the machine's own readout ``W_out h``."""
    return driven_step(p, h, h @ p.W_out.T)


def _check_finite(h, where):
    if not np.all(np.isfinite(h)):
        raise NumericalBlowup(f"non-finite hidden state during {where}")


def warmup(p, u_seq, h0=None):
    """Drive the machine through ``u_seq`` (shape ``(T, k)`` or ``(B, T, k)``)."""
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if u_seq.shape[-2] < 1:
        raise ValueError("warm-up sequence is empty")
    if h0 is None:
        h0 = np.zeros(u_seq.shape[:-2] + (p.d,))
    h = h0
    for t in range(u_seq.shape[-2]):
        h, _ = driven_step(p, h, u_seq[..., t, :])
    _check_finite(h, "warm-up")
    return h


def generate_autonomous(p, h, n):
    """Run ``n`` autonomous steps; returns ``(outputs (n, k), final h)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    outs = np.empty(np.shape(h)[:-1] + (n, p.k))
    for t in range(n):
        h, u = autonomous_step(p, h)
        outs[..., t, :] = u
    _check_finite(h, "autonomous generation")
    return outs, h


def forecast(p, u_warm, n, h0=None):
    """Warm up on ``u_warm`` and predict the next ``n`` signal values.

    The first prediction is the readout of the warmed-up state; the rest are
    produced autonomously. This is the test protocol used for trained
    machines and the rollout the sequence loss is defined on.
    """
    h = warmup(p, u_warm, h0)
    first = h @ p.W_out.T
    if n == 1:
        return first[..., None, :], h
    rest, h_end = generate_autonomous(p, h, n - 1)
    return np.concatenate([first[..., None, :], rest], axis=-2), h_end


def autonomous_step_with_activation(p, h):
    """``autonomous_step`` that also returns the tanh activation ``g``."""
    g = np.tanh(h @ p.W.T + (h @ p.W_out.T) @ p.W_in.T + p.b)
    return (1.0 - p.alpha) * h + p.alpha * g, g


def rnn_jacobian(p, g):
    """State Jacobian of the autonomous step.

    ``J = (1-a) I + a D (W + W_in W_out)`` with ``D = diag(1 - g^2)``, where
    ``g`` is the post-activation (tanh) value of the step. At ``alpha == 1``
    this is the post-update hidden state itself.
    """
    D = 1.0 - np.asarray(g) ** 2
    return (1.0 - p.alpha) * np.eye(p.d) + p.alpha * D[:, None] * p.closed_loop_matrix()


# -- multi-layer networks -------------------------------------------------------

Activation = Literal["tanh", "sigmoid"]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class LayeredRnnParams:
    """Equal-width ``L``-layer network; layer 1 reads ``W_out h^(L)``."""

    W: tuple
    W_in: tuple
    B: tuple
    W_out: np.ndarray
    activation: Activation = "tanh"

    def __post_init__(self):
        L = len(self.W)
        if L < 1 or len(self.W_in) != L or len(self.B) != L:
            raise ValueError("W, W_in and B need one entry per layer")
        N = self.W[0].shape[0]
        k = self.W_out.shape[0]
        if self.W_out.shape != (k, N) or self.W_in[0].shape != (N, k):
            raise ValueError("W_out must be (k, N) and W_in[0] (N, k)")
        for l in range(L):
            if self.W[l].shape != (N, N) or self.B[l].shape != (N,):
                raise ValueError(f"layer {l + 1}: W must be (N, N) and B (N,)")
            if l > 0 and self.W_in[l].shape != (N, N):
                raise ValueError(f"layer {l + 1}: W_in must be (N, N)")
        if self.activation not in ("tanh", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def L(self):
        return len(self.W)

    @property
    def N(self):
        return self.W[0].shape[0]

    @property
    def k(self):
        return self.W_out.shape[0]

    def q(self, x):
        return np.tanh(x) if self.activation == "tanh" else _sigmoid(x)

    def q_slope(self, y):
        """Activation derivative written in terms of its output ``y``."""
        return 1.0 - y ** 2 if self.activation == "tanh" else y * (1.0 - y)


def random_layered(L, N, k, rng, activation="tanh", scale=1.0):
    """Random layered network for tests and experiments."""
    def u(*shape, fan):
        return scale * (rng.random(shape) - 0.5) * 2.0 / np.sqrt(fan)
    return LayeredRnnParams(
        W=tuple(u(N, N, fan=N) for _ in range(L)),
        W_in=tuple(u(N, k, fan=k) if l == 0 else u(N, N, fan=N) for l in range(L)),
        B=tuple(u(N, fan=N) for _ in range(L)),
        W_out=u(k, N, fan=N),
        activation=activation,
    )


def layered_step(p, hs):
    """Advance the stacked state ``hs`` (shape ``(L, N)``) one step.

    Layers update in order within the step: layer 1 reads the readout of the
    top layer's time-t state, and layer ``l > 1`` reads layer ``l-1``'s
    freshly updated state. Returns ``(hs', W_out h'^(L))``.
    """
    hs = np.asarray(hs, dtype=np.float64)
    out = np.empty_like(hs)
    below = p.W_out @ hs[-1]
    for l in range(p.L):
        out[l] = p.q(p.W[l] @ hs[l] + p.W_in[l] @ below + p.B[l])
        below = out[l]
    return out, p.W_out @ out[-1]


def layered_jacobian(p, hs_next):
    """``LN x LN`` Jacobian of :func:`layered_step` assembled block by block.

    With ``H^(l) = diag(Q'(h'^(l)))`` and the descending chain product
    ``M^(l,m) = H^(l) W_in^(l) ... H^(m+1) W_in^(m+1)``:

    * block (l, l), l < L:   ``H^(l) W^(l)``
    * block (l, m), m < l:   ``M^(l,m) H^(m) W^(m)``
    * block (l, L), l < L:   ``M^(l,0) W_out``
    * block (L, L):          ``H^(L) W^(L) + M^(L,0) W_out``

    Blocks above the diagonal, outside the last column, are zero.
    """
    hs_next = np.asarray(hs_next, dtype=np.float64)
    L, N = p.L, p.N
    Hd = [p.q_slope(hs_next[l]) for l in range(L)]          # diagonals of H^(l)
    HW = [Hd[l][:, None] * p.W[l] for l in range(L)]
    HWin = [Hd[l][:, None] * p.W_in[l] for l in range(L)]

    R = np.zeros((L * N, L * N))

    def block(l, m):
        return R[l * N:(l + 1) * N, m * N:(m + 1) * N]

    # M[l] holds M^(l, m) while m walks down from l-1; built incrementally.
    for l in range(L):
        block(l, l)[:] = HW[l]
        M = np.eye(N)
        for m in range(l - 1, -1, -1):
            M = M @ HWin[m + 1]
            block(l, m)[:] += M @ HW[m]
        M0 = M @ HWin[0]
        block(l, L - 1)[:] += M0 @ p.W_out
    return R
