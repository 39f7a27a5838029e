"""Dataset construction, sequence losses, BPTT, RMSprop training and the
reservoir-computing ridge fit.

A dataset item is a pair ``(warm, target)`` of arrays shaped ``(T_w, k)`` and
``(T, k)``; batches stack items along a leading axis. The rollout that both
losses are defined on is: drive the machine with ``warm`` from a zero state,
predict ``target[0]`` as the readout of the warmed state, then keep stepping,
feeding either the previous prediction (``seq2seq``) or the previous true
value (``one_step``).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional

import numpy as np

from .dynamics import Rescale, Trajectory
from .errors import ConfigError, NumericalBlowup, TrajectoryTooShort
from .model import RnnParams, driven_step, spectral_init
from .numerics import derive_seed, make_rng, ridge_solve

log = logging.getLogger(__name__)

LossMode = Literal["seq2seq", "one_step"]
PARAM_NAMES = ("W", "W_in", "W_out", "b")


# -- data -------------------------------------------------------------------------

@dataclass
class Dataset:
    warmup: np.ndarray          # (N, T_w, k)
    target: np.ndarray          # (N, T, k)
    dt: float
    offsets: np.ndarray         # start index of each window in its source
    rescale: Optional[Rescale] = None

    def __len__(self):
        return self.warmup.shape[0]

    def __getitem__(self, i):
        return self.warmup[i], self.target[i]

    @property
    def k(self):
        return self.warmup.shape[2]

    @property
    def warmup_len(self):
        return self.warmup.shape[1]

    @property
    def target_len(self):
        return self.target.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.warmup[idx], self.target[idx], self.dt, self.offsets[idx],
                       self.rescale)


def windows_from_offsets(traj, offsets, warmup_len, target_len):
    offsets = np.asarray(offsets, dtype=np.int64)
    span = warmup_len + target_len
    if offsets.size and (offsets.min() < 0 or offsets.max() + span > len(traj)):
        raise TrajectoryTooShort(
            f"window of {span} samples at offset {offsets.max()} exceeds "
            f"trajectory length {len(traj)}")
    idx = offsets[:, None] + np.arange(span)[None, :]
    win = traj.states[idx]
    return Dataset(win[:, :warmup_len].copy(), win[:, warmup_len:].copy(), traj.dt,
                   offsets, traj.rescale)


def make_dataset(traj, n_seq, warmup_len, target_len, rng, offsets=None):
    """Cut ``n_seq`` windows (uniform random starts, with replacement)."""
    if warmup_len < 1 or target_len < 1:
        raise ValueError("warmup_len and target_len must be >= 1")
    span = warmup_len + target_len
    if len(traj) < span:
        raise TrajectoryTooShort(f"need {span} samples, trajectory has {len(traj)}")
    if offsets is None:
        offsets = rng.integers(0, len(traj) - span + 1, size=n_seq)
    return windows_from_offsets(traj, offsets, warmup_len, target_len)


# -- losses and gradients ---------------------------------------------------------

def _as_batch(warm, target):
    warm = np.asarray(warm, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    single = warm.ndim == 2
    if single:
        warm, target = warm[None], target[None]
    if warm.shape[0] != target.shape[0] or warm.shape[2] != target.shape[2]:
        raise ValueError(f"warm-up {warm.shape} and target {target.shape} do not match")
    if warm.shape[1] < 1 or target.shape[1] < 1:
        raise ValueError("warm-up and target segments must be non-empty")
    return warm, target, single


def _forward(p, warm, target, mode, keep=False):
    B, Tw, _ = warm.shape
    T = target.shape[1]
    S = Tw + T - 1
    h = np.zeros((B, p.d))
    preds = np.empty(target.shape)
    if keep:
        hs = np.empty((S + 1, B, p.d))
        gs = np.empty((S, B, p.d))
        xs = np.empty((S, B, warm.shape[2]))
        hs[0] = h
    for s in range(1, S + 1):
        if s <= Tw:
            x = warm[:, s - 1]
        elif mode == "seq2seq":
            x = preds[:, s - Tw - 1]
        else:
            x = target[:, s - Tw - 1]
        g = np.tanh(h @ p.W.T + x @ p.W_in.T + p.b)
        h = (1.0 - p.alpha) * h + p.alpha * g
        if s >= Tw:
            preds[:, s - Tw] = h @ p.W_out.T
        if keep:
            hs[s], gs[s - 1], xs[s - 1] = h, g, x
    if not np.all(np.isfinite(preds)):
        raise NumericalBlowup("non-finite prediction in rollout")
    if keep:
        return preds, (hs, gs, xs)
    return preds


def rollout(p, warm, target, mode="seq2seq"):
    """Predictions aligned with ``target`` under the given feeding mode."""
    warm, target, single = _as_batch(warm, target)
    preds = _forward(p, warm, target, mode)
    return preds[0] if single else preds


def sequence_losses(p, warm, target, mode="seq2seq"):
    """Per-item mean squared error over time and signal components."""
    warm, target, _ = _as_batch(warm, target)
    preds = _forward(p, warm, target, mode)
    return np.mean((target - preds) ** 2, axis=(1, 2))


def seq2seq_loss(p, warm, target):
    """Autoregressive loss: mean over ``k`` and ``T`` of squared deviations."""
    return float(np.mean(sequence_losses(p, warm, target, "seq2seq")))


def one_step_loss(p, warm, target):
    """Teacher-forced loss: every step consumes the true previous value."""
    return float(np.mean(sequence_losses(p, warm, target, "one_step")))


def bptt_gradients(p, warm, target, mode="seq2seq"):
    """Exact gradients of the mean batch loss by backpropagation through time.

    The backward pass covers the whole unrolled computation: the warm-up
    (which carries no loss terms but shapes the state) and, in ``seq2seq``
    mode, the feedback of every prediction into the next step's input.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``RnnParams.arrays()``.
    """
    warm, target, _ = _as_batch(warm, target)
    B, Tw, k = warm.shape
    T = target.shape[1]
    S = Tw + T - 1
    preds, (hs, gs, xs) = _forward(p, warm, target, mode, keep=True)
    resid = preds - target
    loss = float(np.sum(resid ** 2) / (B * T * k))
    e = (2.0 / (B * T * k)) * resid

    a = p.alpha
    dW = np.zeros_like(p.W)
    dW_in = np.zeros_like(p.W_in)
    dW_out = np.zeros_like(p.W_out)
    db = np.zeros_like(p.b)
    carry = np.zeros((B, p.d))
    da_next = None
    for s in range(S, 0, -1):
        dh = carry
        if s >= Tw:
            j = s - Tw
            dpred = e[:, j]
            if mode == "seq2seq" and j < T - 1:
                dpred = dpred + da_next @ p.W_in
            dW_out += dpred.T @ hs[s]
            dh = dh + dpred @ p.W_out
        g = gs[s - 1]
        da = dh * (a * (1.0 - g * g))
        dW += da.T @ hs[s - 1]
        dW_in += da.T @ xs[s - 1]
        db += da.sum(axis=0)
        carry = (1.0 - a) * dh + da @ p.W
        da_next = da
    return loss, {"W": dW, "W_in": dW_in, "W_out": dW_out, "b": db}


# -- optimizer ----------------------------------------------------------------------

class RMSprop:
    """``v <- g v + (1-g) grad^2``;  ``theta <- theta - lr grad / (sqrt(v) + eps)``."""

    def __init__(self, lr=1e-3, decay=0.9, eps=1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.v = {}

    def step(self, params, grads):
        out = {}
        for name, g in grads.items():
            v = self.v.get(name)
            if v is None:
                v = np.zeros_like(g)
            v = self.decay * v + (1.0 - self.decay) * g * g
            self.v[name] = v
            out[name] = params[name] - self.lr * g / (np.sqrt(v) + self.eps)
        return out


def rmsprop_step(state, params, grads, lr, decay=0.9, eps=1e-8):
    """Functional RMSprop update; ``state`` maps names to running ``v``."""
    opt = RMSprop(lr, decay, eps)
    opt.v = dict(state)
    new = opt.step(params, grads)
    return new, opt.v


# -- deep-learning training -----------------------------------------------------------

@dataclass
class TrainConfig:
    d: int = 200
    alpha: float = 0.3
    rho0: float = 1.2
    lr: float = 1e-3
    batch_size: int = 200
    max_epochs: int = 100
    warmup_len: int = 100
    loss_mode: str = "seq2seq"
    early_stop_patience: int = 5
    val_len: int = 400
    val_fraction: float = 0.05
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    input_scale: float = 1.0
    output_scale: float = 1.0
    bias_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.loss_mode not in ("seq2seq", "one_step"):
            raise ConfigError(f"loss_mode must be seq2seq or one_step, got {self.loss_mode!r}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.warmup_len < 1:
            raise ConfigError("batch_size >= 1, max_epochs >= 0, warmup_len >= 1 required")
        if self.early_stop_patience < 1 or self.val_len < 1:
            raise ConfigError("early_stop_patience and val_len must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if not (self.rho0 > 0 and self.lr > 0):
            raise ConfigError("rho0 and lr must be positive")

    def check_dataset(self, n_train):
        if self.batch_size > n_train:
            raise ConfigError(f"batch_size {self.batch_size} exceeds {n_train} training sequences")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    early_stopped: bool = False
    aborted: Optional[str] = None
    wall_seconds: float = 0.0

    def to_dict(self):
        return asdict(self)


class TrainingAborted(NumericalBlowup):
    """Training hit a numerical failure; carries the best parameters so far."""

    def __init__(self, message, params, report):
        super().__init__(message)
        self.params = params
        self.report = report


def _batched_loss(p, data, mode, batch, target_len=None):
    total = 0.0
    for i in range(0, len(data), batch):
        warm = data.warmup[i:i + batch]
        target = data.target[i:i + batch, :target_len]
        total += float(np.sum(sequence_losses(p, warm, target, mode)))
    return total / len(data)


def split_validation(dataset, cfg):
    n = len(dataset)
    if cfg.val_fraction == 0.0:
        return dataset, None
    n_val = max(1, int(round(cfg.val_fraction * n)))
    perm = make_rng(derive_seed(cfg.seed, 1)).permutation(n)
    return dataset.subset(np.sort(perm[n_val:])), dataset.subset(np.sort(perm[:n_val]))


def train(dataset, cfg, validation=None, on_epoch=None):
    """RMSprop on shuffled mini-batches with early stopping on validation loss.

    Without an explicit ``validation`` set a deterministic ``val_fraction``
    of ``dataset`` is held out. Validation loss is the sequence loss over the
    first ``val_len`` target steps. Entry 0 of the loss history is the
    initialization; entry ``e`` the mean mini-batch loss of epoch ``e``.
    Returns the parameters with the best validation loss.
    """
    t0 = time.perf_counter()
    train_set, val_set = (dataset, validation) if validation is not None \
        else split_validation(dataset, cfg)
    cfg.check_dataset(len(train_set))
    if train_set.warmup_len != cfg.warmup_len:
        log.warning("dataset warm-up length %d differs from config %d",
                    train_set.warmup_len, cfg.warmup_len)

    p = spectral_init(cfg.d, dataset.k, cfg.rho0, cfg.alpha, make_rng(derive_seed(cfg.seed, 0)),
                      cfg.input_scale, cfg.output_scale, cfg.bias_scale)
    shuffle_rng = make_rng(derive_seed(cfg.seed, 2))
    opt = RMSprop(cfg.lr, cfg.rms_decay, cfg.rms_eps)
    report = TrainReport()

    def val_loss(params):
        if val_set is None:
            return math.nan
        return _batched_loss(params, val_set, "seq2seq", cfg.batch_size, cfg.val_len)

    report.train_loss.append(_batched_loss(p, train_set, cfg.loss_mode, cfg.batch_size))
    report.val_loss.append(val_loss(p))
    best, best_val, stale = p, report.val_loss[0], 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            try:
                loss, grads = bptt_gradients(p, train_set.warmup[idx], train_set.target[idx],
                                             cfg.loss_mode)
            except NumericalBlowup as exc:
                report.aborted = str(exc)
                report.stopped_epoch = epoch
                report.wall_seconds = time.perf_counter() - t0
                raise TrainingAborted(str(exc), best, report) from exc
            losses.append(loss)
            p = RnnParams(**opt.step(p.arrays(), grads), alpha=p.alpha)
        report.train_loss.append(float(np.mean(losses)))
        v = val_loss(p)
        report.val_loss.append(v)
        report.stopped_epoch = epoch
        if on_epoch is not None:
            on_epoch(epoch, report)
        log.info("epoch %d train %.6g val %.6g", epoch, report.train_loss[-1], v)
        if val_set is None or v < best_val:
            best, best_val, stale = p, v, 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                report.early_stopped = True
                break
    report.wall_seconds = time.perf_counter() - t0
    return best, report


# -- reservoir-computing fit ----------------------------------------------------------

@dataclass
class FitConfig:
    d: int = 200
    alpha: float = 0.3
    rho0: float = 1.2
    epsilon: float = 1e-6
    fit_len: int = 4000
    warmup_len: int = 100
    input_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.fit_len < 1 or self.warmup_len < 0:
            raise ConfigError("d >= 1, fit_len >= 1, warmup_len >= 0 required")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.epsilon < 0 or not self.rho0 > 0:
            raise ConfigError("epsilon >= 0 and rho0 > 0 required")
        if self.fit_len <= self.d:
            log.warning("fit_len %d <= d %d: the ridge problem is under-determined",
                        self.fit_len, self.d)


def _signal(window):
    u = window.states if isinstance(window, Trajectory) else window
    return np.asarray(u, dtype=np.float64)


def drive_states(p, u):
    """Hidden states ``h_1 .. h_n`` of a machine driven from zero by ``u_0 .. u_{n-1}``."""
    H = np.empty((len(u), p.d))
    h = np.zeros(p.d)
    for t in range(len(u)):
        h, _ = driven_step(p, h, u[t])
        H[t] = h
    return H


def rc_fit(window, cfg, params=None):
    """Fit only the readout by ridge regression on driven hidden states.

    Column ``t`` of the design matrix is the state after consuming ``u_t``;
    its target is ``u_{t+1}``. The first ``warmup_len`` columns are dropped.
    ``W``, ``W_in`` and ``b`` come from ``spectral_init`` (or ``params``) and
    are returned untouched.
    """
    u = _signal(window)
    need = cfg.warmup_len + cfg.fit_len + 1
    if len(u) < need:
        raise TrajectoryTooShort(f"rc_fit needs {need} samples, got {len(u)}")
    if params is None:
        params = spectral_init(cfg.d, u.shape[1], cfg.rho0, cfg.alpha, make_rng(cfg.seed),
                               cfg.input_scale)
    H = drive_states(params, u[:need - 1])
    H = H[cfg.warmup_len:]
    U = u[cfg.warmup_len + 1:need]
    return params.with_readout(ridge_solve(H.T, U.T, cfg.epsilon))


def one_step_errors(p, window, warmup_len):
    """Driven one-step prediction errors ``W_out h_{t+1} - u_{t+1}`` after warm-up."""
    u = _signal(window)
    H = drive_states(p, u[:-1])
    pred = H @ p.W_out.T
    return (pred - u[1:])[warmup_len:]
