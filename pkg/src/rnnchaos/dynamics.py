"""ODE systems, RK4 integration, sampled trajectories and ODE Lyapunov spectra.

Drift and Jacobian callables take ``(state, params)`` where ``params`` is a
float64 array in the order of ``OdeSystem.param_names``. If both are numba
``njit`` functions the integration loops run compiled; plain Python callables
work too, only slower.
"""
from __future__ import annotations

import math
import types
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numba
import numpy as np
from numba.core.registry import CPUDispatcher

from .errors import DegenerateBasis, DegenerateRange, NumericalBlowup
from .numerics import _cgs2_rows, make_rng
from .spectrum import LyapunovReport


@dataclass(frozen=True)
class OdeSystem:
    name: str
    dim: int
    param_names: tuple
    param_values: np.ndarray
    drift_fn: Callable
    jac_fn: Callable
    #: (lo, hi) box that random initial states are drawn from
    box: Optional[tuple] = None

    @property
    def params(self):
        return dict(zip(self.param_names, (float(v) for v in self.param_values)))

    def drift(self, x):
        return self.drift_fn(np.asarray(x, dtype=np.float64), self.param_values)

    def jacobian(self, x):
        return self.jac_fn(np.asarray(x, dtype=np.float64), self.param_values)

    @property
    def compiled(self):
        return isinstance(self.drift_fn, CPUDispatcher) and isinstance(self.jac_fn, CPUDispatcher)


# -- built-in systems ---------------------------------------------------------

@numba.njit(cache=True)
def _lorenz_drift(x, p):
    sigma, rho, beta = p[0], p[1], p[2]
    out = np.empty(3)
    out[0] = sigma * (x[1] - x[0])
    out[1] = x[0] * (rho - x[2]) - x[1]
    out[2] = x[0] * x[1] - beta * x[2]
    return out


@numba.njit(cache=True)
def _lorenz_jac(x, p):
    sigma, rho, beta = p[0], p[1], p[2]
    J = np.empty((3, 3))
    J[0, 0] = -sigma
    J[0, 1] = sigma
    J[0, 2] = 0.0
    J[1, 0] = rho - x[2]
    J[1, 1] = -1.0
    J[1, 2] = -x[0]
    J[2, 0] = x[1]
    J[2, 1] = x[0]
    J[2, 2] = -beta
    return J


def lorenz(sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    """The Lorenz-63 system; defaults are the classic chaotic parameters."""
    return OdeSystem(
        name="lorenz", dim=3, param_names=("sigma", "rho", "beta"),
        param_values=np.array([sigma, rho, beta], dtype=np.float64),
        drift_fn=_lorenz_drift, jac_fn=_lorenz_jac,
        box=(np.array([-20.0, -27.0, 1.0]), np.array([20.0, 27.0, 50.0])),
    )


@numba.njit(cache=True)
def _rossler4_drift(x, p):
    a, b, c, d = p[0], p[1], p[2], p[3]
    out = np.empty(4)
    out[0] = -x[1] - x[2]
    out[1] = x[0] + a * x[1] + x[3]
    out[2] = b + x[0] * x[2]
    out[3] = -c * x[2] + d * x[3]
    return out


@numba.njit(cache=True)
def _rossler4_jac(x, p):
    a, c, d = p[0], p[2], p[3]
    J = np.zeros((4, 4))
    J[0, 1] = -1.0
    J[0, 2] = -1.0
    J[1, 0] = 1.0
    J[1, 1] = a
    J[1, 3] = 1.0
    J[2, 0] = x[2]
    J[2, 2] = x[0]
    J[3, 2] = -c
    J[3, 3] = d
    return J


def rossler4(a=0.25, b=3.0, c=0.5, d=0.05):
    """Hyperchaotic 4-D Rossler system in its usual literature form.

    Shipped as an optional plugin; it is not used by any reference run. The
    initial-state box is a small neighbourhood of the customary starting
    point (-10, -6, 0, 10) because the flow escapes from many other regions.
    """
    return OdeSystem(
        name="rossler4", dim=4, param_names=("a", "b", "c", "d"),
        param_values=np.array([a, b, c, d], dtype=np.float64),
        drift_fn=_rossler4_drift, jac_fn=_rossler4_jac,
        box=(np.array([-10.5, -6.5, 0.0, 9.5]), np.array([-9.5, -5.5, 0.2, 10.5])),
    )


SYSTEMS = {"lorenz": lorenz, "rossler4": rossler4}


def register_system(name, factory):
    """Make a user-defined ``OdeSystem`` factory available by name."""
    SYSTEMS[name] = factory


def make_system(name, params=None):
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; known: {sorted(SYSTEMS)}") from None
    return factory(**(params or {}))


# -- integration kernels (plain source, optionally jitted) ----------------------

def _rk4(f, x, p, dt):
    k1 = f(x, p)
    k2 = f(x + 0.5 * dt * k1, p)
    k3 = f(x + 0.5 * dt * k2, p)
    k4 = f(x + dt * k3, p)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_loop(f, x, p, dt, skip, n_steps, stride):
    """Returns (states, status); status -1 ok, else the failing step index."""
    count = n_steps // stride + 1
    out = np.empty((count, x.shape[0]))
    for s in range(skip):
        x = _rk4(f, x, p, dt)
        if not np.all(np.isfinite(x)):
            return out[:0], s
    out[0] = x
    j = 1
    for s in range(1, count * stride - stride + 1):
        x = _rk4(f, x, p, dt)
        if not np.all(np.isfinite(x)):
            return out[:j], skip + s
        if s % stride == 0:
            out[j] = x
            j += 1
    return out, -1


def _matmul(A, B):
    n, r = A.shape
    m = B.shape[1]
    C = np.zeros((n, m))
    for i in range(n):
        for a in range(r):
            aia = A[i, a]
            if aia != 0.0:
                for j in range(m):
                    C[i, j] += aia * B[a, j]
    return C


def _tangent_loop(f, jac, x, p, E, dt, n_total, transient, crude):
    """Co-propagate a state and an orthonormal frame ``E`` (d x m).

    Returns (x, E, log_sums, status, bad_index); status is -1 on success,
    0 for collapse of frame column ``bad_index``, 1 for a non-finite state.
    """
    m = E.shape[1]
    logs = np.zeros(m)
    norms = np.empty(m)
    for step in range(n_total):
        if crude:
            E = E + dt * _matmul(jac(x, p), E)
            x = _rk4(f, x, p, dt)
        else:
            k1 = f(x, p)
            x2 = x + 0.5 * dt * k1
            k2 = f(x2, p)
            x3 = x + 0.5 * dt * k2
            k3 = f(x3, p)
            x4 = x + dt * k3
            k4 = f(x4, p)
            K1 = _matmul(jac(x, p), E)
            K2 = _matmul(jac(x2, p), E + 0.5 * dt * K1)
            K3 = _matmul(jac(x3, p), E + 0.5 * dt * K2)
            K4 = _matmul(jac(x4, p), E + dt * K3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            E = E + (dt / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        if not np.all(np.isfinite(x)):
            return x, E, logs, 1, step
        V = np.ascontiguousarray(E.T)
        bad = _cgs2_rows(V, norms)
        if bad >= 0:
            return x, E, logs, 0, bad
        E = np.ascontiguousarray(V.T)
        if step >= transient:
            for i in range(m):
                logs[i] += math.log(norms[i])
    return x, E, logs, -1, -1


def _jit_copy(fn, **overrides):
    # same source, compiled against jitted helpers
    env = dict(fn.__globals__)
    env.update(overrides)
    return numba.njit(types.FunctionType(fn.__code__, env, fn.__name__))


_matmul = numba.njit(cache=True)(_matmul)
_rk4_jit = numba.njit(_rk4)
_integrate_loop_jit = _jit_copy(_integrate_loop, _rk4=_rk4_jit)
_tangent_loop_jit = _jit_copy(_tangent_loop, _rk4=_rk4_jit)


def _kernels(system):
    if system.compiled:
        return _integrate_loop_jit, _tangent_loop_jit
    return _integrate_loop, _tangent_loop


# -- public operations ----------------------------------------------------------

def rk4_step(system, state, dt):
    """One classical fourth-order Runge-Kutta step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=np.float64)
    out = _rk4(lambda y, _p: system.drift(y), x, None, dt)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowup(f"{system.name}: RK4 step produced non-finite state")
    return out


@dataclass
class Rescale:
    """Per-dimension affine map ``u = (x - offset) / scale``."""

    scale: np.ndarray
    offset: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    def invert(self, u):
        return np.asarray(u, dtype=np.float64) * self.scale + self.offset


@dataclass
class Trajectory:
    dt: float
    states: np.ndarray
    rescale: Optional[Rescale] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2:
            raise ValueError("states must be a (count, dim) array")

    @property
    def dim(self):
        return self.states.shape[1]

    def __len__(self):
        return self.states.shape[0]

    def original_units(self):
        return self.states if self.rescale is None else self.rescale.invert(self.states)


@dataclass
class SimConfig:
    dt_integrate: float = 1e-3
    #: integration steps recorded after the transient skip
    n_steps: int = 200_000
    skip: int = 1000
    subsample_stride: int = 20
    initial_state: Optional[list] = None
    seed: int = 0

    def __post_init__(self):
        if not self.dt_integrate > 0:
            raise ValueError("dt_integrate must be positive")
        if self.subsample_stride < 1:
            raise ValueError("subsample_stride must be >= 1")
        if self.skip < 0 or self.n_steps < 0:
            raise ValueError("skip and n_steps must be non-negative")


def random_initial_state(system, rng):
    """Uniform draw from the system's initial-state box."""
    if system.box is None:
        raise ValueError(f"{system.name} has no initial-state box; pass initial_state")
    lo, hi = system.box
    return lo + (hi - lo) * rng.random(system.dim)


def _relax(system, x, dt, steps):
    integrate, _ = _kernels(system)
    states, status = integrate(system.drift_fn, np.asarray(x, dtype=np.float64),
                               system.param_values, dt, steps, 0, 1)
    if status >= 0:
        raise NumericalBlowup(f"{system.name}: blow-up at integration step {status}")
    return states[-1]


def simulate(system, config):
    """Integrate, drop ``skip`` steps, keep every ``subsample_stride``-th state.

    The first stored state is the one reached after the skipped transient.
    """
    if config.initial_state is None:
        x0 = random_initial_state(system, make_rng(config.seed))
    else:
        x0 = np.asarray(config.initial_state, dtype=np.float64)
        if x0.shape != (system.dim,):
            raise ValueError(f"initial_state must have {system.dim} entries")
    integrate, _ = _kernels(system)
    states, status = integrate(system.drift_fn, x0, system.param_values,
                               float(config.dt_integrate), int(config.skip),
                               int(config.n_steps), int(config.subsample_stride))
    if status >= 0:
        raise NumericalBlowup(f"{system.name}: blow-up at integration step {status}")
    return Trajectory(dt=config.dt_integrate * config.subsample_stride, states=states)


def rescale_to_unit_cube(traj):
    """Affinely map each coordinate so its min goes to -1 and its max to +1."""
    if len(traj) < 2:
        raise DegenerateRange("need at least two states to rescale")
    x = traj.original_units()
    lo, hi = x.min(axis=0), x.max(axis=0)
    if np.any(hi == lo):
        raise DegenerateRange(f"zero range in dimension(s) {np.flatnonzero(hi == lo).tolist()}")
    rs = Rescale(scale=(hi - lo) / 2.0, offset=(hi + lo) / 2.0)
    u = np.clip(rs.apply(x), -1.0, 1.0)
    return replace(traj, states=u, rescale=rs)


def ode_lyapunov_spectrum(system, x0, dt, n_steps, transient=0, propagator="rk4",
                          frame=None):
    """Exponents of the flow from log-stretches of a re-orthonormalized frame.

    The frame is advanced by the linearized RK4 step (``propagator="rk4"``)
    or by the first-order map ``I + J dt`` (``propagator="euler"``) and
    re-orthonormalized every step. ``transient`` steps are run first and not
    averaged; exponents are per unit time over the ``n_steps`` that follow.
    """
    if propagator not in ("rk4", "euler"):
        raise ValueError("propagator must be 'rk4' or 'euler'")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    E = np.eye(system.dim) if frame is None else np.array(frame, dtype=np.float64)
    _, tangent = _kernels(system)
    x, E, logs, status, bad = tangent(
        system.drift_fn, system.jac_fn, np.asarray(x0, dtype=np.float64).copy(),
        system.param_values, np.ascontiguousarray(E), float(dt),
        int(transient + n_steps), int(transient), propagator == "euler")
    if status == 1:
        raise NumericalBlowup(f"{system.name}: state blew up at step {bad}")
    if status == 0:
        raise DegenerateBasis(bad, 0.0)
    return LyapunovReport.from_exponents(
        logs / n_steps, dt=dt, n_steps=n_steps,
        meta={"system": system.name, "propagator": propagator,
              "final_state": x.tolist()})
