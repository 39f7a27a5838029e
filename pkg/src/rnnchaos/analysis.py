"""Measurements on trained machines: Lyapunov spectra of the autonomous
dynamics, forecast error curves and multi-machine ensemble statistics."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegenerateBasis, LengthMismatch, NumericalBlowup, RnnChaosError
from .model import autonomous_step_with_activation, warmup
from .numerics import derive_seed, make_rng, orthonormalize, random_orthonormal
from .spectrum import DEFAULT_TOL_ZERO, AttractorClass, LyapunovReport, kaplan_yorke
from .training import FitConfig, TrainConfig, make_dataset, rc_fit, train

log = logging.getLogger(__name__)

#: above this hidden size only the leading exponents are tracked by default
FULL_SPECTRUM_MAX_D = 64
DEFAULT_TOP_M = 16
HIST_EDGES = np.round(np.arange(0.0, 6.0 + 1e-9, 0.1), 10)


def rnn_lyapunov_spectrum(p, h0, n_steps=1500, transient=0, dt=None, n_exponents=None,
                          rng=None, tol_zero=DEFAULT_TOL_ZERO):
    """Leading Lyapunov exponents of the machine's autonomous dynamics.

    The tangent frame is pushed through the exact step Jacobian and
    re-orthonormalized every step for ``n_steps`` steps. The first
    ``transient`` of them only align the frame; the exponents average the
    remaining ``n_steps - transient``. Exponents are per step, and per unit
    time when ``dt`` is given.

    By default all ``d`` exponents are computed when ``d <= 64`` and the top
    16 otherwise. The initial frame is the leading identity columns, or a
    random orthonormal frame when ``rng`` is supplied.
    """
    if not 0 <= transient < n_steps:
        raise ValueError("need 0 <= transient < n_steps")
    d = p.d
    m = n_exponents or (d if d <= FULL_SPECTRUM_MAX_D else min(DEFAULT_TOP_M, d))
    E = np.eye(d)[:, :m] if rng is None else random_orthonormal(d, m, rng)
    M = p.closed_loop_matrix()
    a = p.alpha
    h = np.asarray(h0, dtype=np.float64).copy()
    logs = np.zeros(m)
    meta = {"n_exponents": m, "transient": transient}
    n_avg = n_steps - transient
    for t in range(n_steps):
        h, g = autonomous_step_with_activation(p, h)
        JE = (1.0 - a) * E + a * (1.0 - g * g)[:, None] * (M @ E)
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(JE))):
            return LyapunovReport.from_exponents(np.full(m, np.nan), dt, n_avg,
                                                 diverged=True, meta=meta)
        try:
            E, norms = orthonormalize(JE)
        except DegenerateBasis as exc:
            done = max(t - transient + 1, 1)
            per_step = logs / done
            per_step[exc.index:] = -np.inf
            meta["collapsed_at_step"] = t
            return LyapunovReport.from_exponents(per_step, dt, n_avg, tol_zero=tol_zero,
                                                 meta=meta)
        if t >= transient:
            logs += np.log(norms)
    meta["final_state_norm"] = float(np.linalg.norm(h))
    return LyapunovReport.from_exponents(logs / n_avg, dt, n_avg, tol_zero=tol_zero,
                                         meta=meta)


@dataclass
class ErrorCurve:
    rmse: np.ndarray
    horizon: int
    threshold: float


def prediction_error_curve(truth, predicted, threshold=0.2):
    """Per-step RMSE across components and the first step exceeding ``threshold``."""
    truth = np.asarray(truth, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if truth.shape != predicted.shape:
        raise LengthMismatch(f"truth {truth.shape} vs prediction {predicted.shape}")
    if truth.ndim == 1:
        truth, predicted = truth[:, None], predicted[:, None]
    rmse = np.sqrt(np.mean((truth - predicted) ** 2, axis=1))
    over = np.flatnonzero(~(rmse <= threshold))
    horizon = int(over[0]) if over.size else len(rmse)
    return ErrorCurve(rmse, horizon, threshold)


# -- ensembles ------------------------------------------------------------------------

def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EnsembleReport:
    mode: str
    n_machines: int
    runs_per_machine: int
    base_seed: int
    reports: list = field(default_factory=list)
    aborted: list = field(default_factory=list)
    machines: list = field(default_factory=list)
    bin_edges: np.ndarray = field(default_factory=lambda: HIST_EDGES.copy())
    counts: np.ndarray = field(default_factory=lambda: np.zeros(len(HIST_EDGES) - 1, int))
    class_tallies: dict = field(default_factory=dict)
    config_hash: str = ""

    def dimensions(self):
        return np.array([r.dl_dimension for r in self.reports if np.isfinite(r.dl_dimension)])

    def to_dict(self):
        return {
            "mode": self.mode,
            "n_machines": self.n_machines,
            "runs_per_machine": self.runs_per_machine,
            "base_seed": self.base_seed,
            "config_hash": self.config_hash,
            "class_tallies": dict(self.class_tallies),
            "histogram": {"bin_edges": self.bin_edges.tolist(), "counts": self.counts.tolist()},
            "aborted": list(self.aborted),
            "machines": list(self.machines),
            "reports": [r.to_dict() for r in self.reports],
        }

    def histogram_rows(self):
        """``(bin_left, count)`` pairs."""
        return list(zip(self.bin_edges[:-1].tolist(), self.counts.tolist()))


def histogram(dims, edges=HIST_EDGES):
    """Counts over fixed bins; values beyond the last edge land in the last bin."""
    dims = np.asarray(dims, dtype=np.float64)
    dims = np.clip(dims[np.isfinite(dims)], edges[0], np.nextafter(edges[-1], 0.0))
    counts, _ = np.histogram(dims, bins=edges)
    return counts


def _member(job):
    """Build one machine and run its Lyapunov analyses (worker entry point)."""
    (index, mode, base_cfg, base_seed, traj, dataset, runs, n_steps, transient,
     warmup_len, chash) = job
    seed = derive_seed(base_seed, index)
    cfg = replace(base_cfg, seed=seed)
    info = {"machine": index, "seed": seed}
    rng = make_rng(derive_seed(base_seed, index, 1 << 20))
    try:
        if mode == "train":
            p, rep = train(dataset, cfg)
            info.update(best_epoch=rep.best_epoch, final_val_loss=rep.val_loss[rep.best_epoch])
        else:
            span = cfg.warmup_len + cfg.fit_len + 1
            start = int(rng.integers(0, len(traj) - span + 1))
            p = rc_fit(traj.states[start:start + span], cfg)
            info.update(fit_offset=start)
    except RnnChaosError as exc:
        info["error"] = str(exc)
        return info, [], [{"machine": index, "run": r, "reason": f"machine: {exc}"}
                          for r in range(runs)]
    reports, aborted = [], []
    for r in range(runs):
        run_rng = make_rng(derive_seed(base_seed, index, r))
        start = int(run_rng.integers(0, len(traj) - warmup_len + 1))
        h0 = run_rng.uniform(-0.1, 0.1, p.d)
        meta = {"machine": index, "run": r, "seed": seed, "warmup_offset": start,
                "config_hash": chash}
        try:
            h = warmup(p, traj.states[start:start + warmup_len], h0)
            rep = rnn_lyapunov_spectrum(p, h, n_steps, transient, dt=traj.dt, rng=run_rng)
        except NumericalBlowup as exc:
            aborted.append({**meta, "reason": str(exc)})
            continue
        rep.meta.update(meta)
        if not np.isfinite(rep.dl_dimension):
            aborted.append({**meta, "reason": rep.attractor_class.value})
        reports.append(rep)
    return info, reports, aborted


def ensemble(traj, n_machines, runs_per_machine, mode, base_config, base_seed,
             dataset=None, n_steps=1600, transient=100, warmup_len=100, n_sequences=2000,
             target_len=120, jobs=1):
    """Dimension statistics over independently built machines.

    ``mode="train"`` trains each machine by BPTT on ``dataset`` (built from
    ``traj`` when omitted); ``mode="fit"`` ridge-fits each on a random window
    of ``traj``. Every machine gets ``runs_per_machine`` Lyapunov runs, each
    warmed up from a small random state on a random truth window. Runs that
    yield no dimension are listed in ``aborted``.
    """
    if n_machines < 1 or runs_per_machine < 1:
        raise ValueError("need at least one machine and one run per machine")
    if mode not in ("train", "fit"):
        raise ValueError("mode must be 'train' or 'fit'")
    want = TrainConfig if mode == "train" else FitConfig
    if not isinstance(base_config, want):
        raise TypeError(f"mode {mode!r} needs a {want.__name__}")
    if mode == "train" and dataset is None:
        dataset = make_dataset(traj, n_sequences, base_config.warmup_len, target_len,
                               make_rng(derive_seed(base_seed, 1 << 30)))
    chash = config_hash({"mode": mode, "config": asdict(base_config), "n_steps": n_steps,
                         "transient": transient, "warmup_len": warmup_len})
    jobs_args = [(i, mode, base_config, base_seed, traj, dataset, runs_per_machine,
                  n_steps, transient, warmup_len, chash) for i in range(n_machines)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_member, jobs_args))
    else:
        results = [_member(a) for a in jobs_args]

    out = EnsembleReport(mode, n_machines, runs_per_machine, base_seed, config_hash=chash)
    for info, reports, aborted in results:
        out.machines.append(info)
        out.reports.extend(reports)
        out.aborted.extend(aborted)
    out.counts = histogram(out.dimensions())
    tallies = {c.value: 0 for c in AttractorClass}
    for r in out.reports:
        tallies[r.attractor_class.value] += 1
    out.class_tallies = tallies
    return out


__all__ = [
    "rnn_lyapunov_spectrum", "prediction_error_curve", "ErrorCurve", "ensemble",
    "EnsembleReport", "histogram", "kaplan_yorke", "HIST_EDGES",
]
