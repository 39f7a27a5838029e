"""On-disk formats: trajectories (TRAJ1), machines (RNNP1, RNNL1), dataset
caches (DSET1), JSON sidecars and CSV tables.

Binary formats are little-endian throughout and begin with a five-byte
magic tag. Every writer goes through a temporary file and ``os.replace`` so
readers never observe a partial file.
"""
from __future__ import annotations

import io as _io
import json
import os
import struct
import tempfile

import numpy as np

from .dynamics import Rescale, Trajectory
from .errors import FormatError
from .model import LayeredRnnParams, RnnParams
from .training import Dataset

TRAJ_MAGIC = b"TRAJ1"
PARAM_MAGIC = b"RNNP1"
LAYERED_MAGIC = b"RNNL1"
DATASET_MAGIC = b"DSET1"
_ACTIVATIONS = ("tanh", "sigmoid")
_F8 = np.dtype("<f8")


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data, what):
        self.buf = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what} file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, *shape):
        n = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * n), dtype=_F8).astype(np.float64).reshape(shape)

    def magic(self, tag):
        got = bytes(self.take(len(tag)))
        if got != tag:
            raise FormatError(f"bad magic {got!r}, expected {tag!r}")

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes in {self.what} file")


def _f8(a):
    return np.ascontiguousarray(a, dtype=_F8).tobytes()


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# -- trajectories --------------------------------------------------------------------

def trajectory_bytes(traj: Trajectory) -> bytes:
    states = np.asarray(traj.states, dtype=np.float64)
    count, dim = states.shape
    parts = [TRAJ_MAGIC, struct.pack("<IQdB", dim, count, traj.dt, traj.rescale is not None)]
    if traj.rescale is not None:
        parts += [_f8(np.broadcast_to(traj.rescale.scale, dim)),
                  _f8(np.broadcast_to(traj.rescale.offset, dim))]
    parts.append(_f8(states))
    return b"".join(parts)


def _parse_trajectory(r):
    r.magic(TRAJ_MAGIC)
    dim, count, dt, flag = r.unpack("<IQdB")
    rescale = None
    if flag not in (0, 1):
        raise FormatError(f"rescale flag must be 0 or 1, got {flag}")
    if flag:
        rescale = Rescale(r.floats(dim), r.floats(dim))
    states = r.floats(count, dim)
    return Trajectory(dt, states, rescale)


def trajectory_from_bytes(data) -> Trajectory:
    r = _Reader(data, "trajectory")
    traj = _parse_trajectory(r)
    r.done()
    return traj


def save_trajectory(path, traj):
    atomic_write(path, trajectory_bytes(traj))


def load_trajectory(path):
    return trajectory_from_bytes(_read_bytes(path))


# -- machines ------------------------------------------------------------------------

def params_bytes(p: RnnParams) -> bytes:
    head = PARAM_MAGIC + struct.pack("<IId", p.d, p.k, p.alpha)
    return head + b"".join(_f8(a) for a in (p.W, p.W_in, p.W_out, p.b))


def params_from_bytes(data) -> RnnParams:
    r = _Reader(data, "parameter")
    r.magic(PARAM_MAGIC)
    d, k, alpha = r.unpack("<IId")
    W, W_in, W_out, b = r.floats(d, d), r.floats(d, k), r.floats(k, d), r.floats(d)
    r.done()
    try:
        return RnnParams(W, W_in, W_out, b, alpha)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def layered_bytes(p: LayeredRnnParams) -> bytes:
    parts = [LAYERED_MAGIC,
             struct.pack("<IIIB", p.L, p.N, p.k, _ACTIVATIONS.index(p.activation))]
    for l in range(p.L):
        parts += [_f8(p.W[l]), _f8(p.W_in[l]), _f8(p.B[l])]
    parts.append(_f8(p.W_out))
    return b"".join(parts)


def layered_from_bytes(data) -> LayeredRnnParams:
    r = _Reader(data, "layered parameter")
    r.magic(LAYERED_MAGIC)
    L, N, k, tag = r.unpack("<IIIB")
    if tag >= len(_ACTIVATIONS):
        raise FormatError(f"unknown activation tag {tag}")
    W, W_in, B = [], [], []
    for l in range(L):
        W.append(r.floats(N, N))
        W_in.append(r.floats(N, k) if l == 0 else r.floats(N, N))
        B.append(r.floats(N))
    W_out = r.floats(k, N)
    r.done()
    return LayeredRnnParams(tuple(W), tuple(W_in), tuple(B), W_out, _ACTIVATIONS[tag])


def save_params(path, p):
    blob = layered_bytes(p) if isinstance(p, LayeredRnnParams) else params_bytes(p)
    atomic_write(path, blob)


def load_params(path):
    data = _read_bytes(path)
    if data[:5] == LAYERED_MAGIC:
        return layered_from_bytes(data)
    return params_from_bytes(data)


# -- datasets ------------------------------------------------------------------------

def dataset_bytes(ds: Dataset) -> bytes:
    """Index header (window count, segment lengths, offsets) plus a TRAJ1 body
    holding the windows back to back."""
    n, tw, k = ds.warmup.shape
    windows = np.concatenate([ds.warmup, ds.target], axis=1).reshape(-1, k)
    head = DATASET_MAGIC + struct.pack("<QII", n, tw, ds.target_len)
    offsets = np.ascontiguousarray(ds.offsets, dtype="<u8").tobytes()
    return head + offsets + trajectory_bytes(Trajectory(ds.dt, windows, ds.rescale))


def dataset_from_bytes(data) -> Dataset:
    r = _Reader(data, "dataset")
    r.magic(DATASET_MAGIC)
    n, tw, t = r.unpack("<QII")
    offsets = np.frombuffer(r.take(8 * n), dtype="<u8").astype(np.int64)
    traj = _parse_trajectory(r)
    r.done()
    if len(traj) != n * (tw + t):
        raise FormatError(f"dataset body holds {len(traj)} rows, header implies {n * (tw + t)}")
    win = traj.states.reshape(n, tw + t, traj.dim)
    return Dataset(win[:, :tw].copy(), win[:, tw:].copy(), traj.dt, offsets, traj.rescale)


def save_dataset(path, ds):
    atomic_write(path, dataset_bytes(ds))


def load_dataset(path):
    return dataset_from_bytes(_read_bytes(path))


# -- text outputs --------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def json_text(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats written as null."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def save_json(path, obj):
    atomic_write(path, json_text(obj).encode())


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else
                           str(int(v)) if isinstance(v, (int, np.integer)) else
                           "%.17g" % v for v in row) + "\n")
    return buf.getvalue()


def save_csv(path, header, rows):
    atomic_write(path, csv_text(header, rows).encode())
