"""Lyapunov reports, Kaplan-Yorke dimension and attractor classification."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySpectrum

DEFAULT_TOL_ZERO = 0.02


class AttractorClass(str, enum.Enum):
    FIXED_POINT = "FixedPoint"
    LIMIT_CYCLE = "LimitCycle"
    STRANGE = "Strange"
    DIVERGENT = "Divergent"


def _ky(spectrum):
    lam = np.asarray(spectrum, dtype=np.float64)
    if lam.size == 0:
        raise EmptySpectrum("Kaplan-Yorke dimension of an empty spectrum")
    if np.any(np.isnan(lam)) or np.any(lam == np.inf):
        raise ValueError("spectrum entries must be finite or -inf")
    if np.any(np.diff(lam) > 0):
        raise ValueError("spectrum must be sorted non-increasing")
    partial = 0.0
    k = 0
    for i, x in enumerate(lam):
        if partial + x > 0:
            partial += x
            k = i + 1
        else:
            break
    if k == 0:
        return 0.0, 0, False
    if k == lam.size:
        return float(k), k, True
    return k + partial / abs(lam[k]), k, False


def kaplan_yorke(spectrum: Sequence[float]) -> float:
    """Lyapunov dimension ``k + sum(lam[:k]) / |lam[k]|``.

    ``k`` is the largest prefix length with a positive sum. Returns 0 when
    the leading exponent is non-positive and ``len(spectrum)`` when no prefix
    sum ever turns non-positive (see :func:`ky_saturated`).
    """
    return _ky(spectrum)[0]


def ky_saturated(spectrum: Sequence[float]) -> bool:
    """True when every prefix sum is positive, so the dimension is a floor."""
    return _ky(spectrum)[2]


def classify_attractor(spectrum, diverged=False, tol_zero=DEFAULT_TOL_ZERO):
    """Asymptotic class from the leading exponents (per unit time)."""
    if diverged:
        return AttractorClass.DIVERGENT
    lam = np.asarray(spectrum, dtype=np.float64)
    if lam.size == 0:
        raise EmptySpectrum("cannot classify an empty spectrum")
    l1 = lam[0]
    if l1 < -tol_zero:
        return AttractorClass.FIXED_POINT
    if l1 <= tol_zero:
        # a second neutral exponent (torus) is also reported as a cycle
        return AttractorClass.LIMIT_CYCLE
    return AttractorClass.STRANGE


@dataclass
class LyapunovReport:
    """Sorted exponent spectrum plus derived dimension and class.

    ``spectrum`` is per unit time when ``dt`` is set, per step otherwise;
    ``spectrum_per_step`` always holds the per-step values.
    """

    spectrum_per_step: np.ndarray
    dt: Optional[float]
    n_steps: int
    dl_dimension: float
    attractor_class: AttractorClass
    saturated: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def spectrum(self):
        if self.dt is None:
            return self.spectrum_per_step
        return self.spectrum_per_step / self.dt

    @classmethod
    def from_exponents(cls, per_step, dt=None, n_steps=0, diverged=False,
                       tol_zero=DEFAULT_TOL_ZERO, meta=None):
        per_step = np.sort(np.asarray(per_step, dtype=np.float64))[::-1].copy()
        if diverged:
            return cls(per_step, dt, n_steps, math.nan, AttractorClass.DIVERGENT,
                       meta=dict(meta or {}))
        dim, _, sat = _ky(per_step)
        timed = per_step if dt is None else per_step / dt
        cls_ = classify_attractor(timed, tol_zero=tol_zero)
        return cls(per_step, dt, n_steps, dim, cls_, saturated=sat, meta=dict(meta or {}))

    def to_dict(self):
        def enc(x):
            return None if not np.isfinite(x) else float(x)

        out = {
            "spectrum": [enc(x) for x in self.spectrum],
            "spectrum_per_step": [enc(x) for x in self.spectrum_per_step],
            "dt": self.dt,
            "n_steps": int(self.n_steps),
            "dl_dimension": enc(self.dl_dimension),
            "class": self.attractor_class.value,
            "saturated": bool(self.saturated),
        }
        out.update(self.meta)
        return out

    @classmethod
    def from_dict(cls, data):
        per_step = np.array([-np.inf if x is None else x for x in data["spectrum_per_step"]])
        dim = data["dl_dimension"]
        known = {"spectrum", "spectrum_per_step", "dt", "n_steps", "dl_dimension",
                 "class", "saturated"}
        return cls(per_step, data["dt"], data["n_steps"],
                   math.nan if dim is None else dim,
                   AttractorClass(data["class"]), data.get("saturated", False),
                   meta={k: v for k, v in data.items() if k not in known})
