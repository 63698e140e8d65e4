"""Factorized datasets: synthetic pulse-train waveforms and dSprites.

The waveform set stands in for the Beamsynthesis simulation data, which is
not public. It keeps the factor structure (continuous duty cycle crossed with
a categorical frequency, 360 series of length 1000) with rectangular pulse
trains as the morphology.
"""
from __future__ import annotations

import ast
import csv
import io
import logging
import os
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

WAVEFORM_LENGTH = 1000
WAVEFORM_PERIODS = tuple(range(40, 151, 10))            # 12 frequencies
WAVEFORM_DUTIES = tuple(np.linspace(0.05, 0.95, 32)[1:-1])  # 30 duty cycles, strictly inside

DSPRITES_N = 737280
DSPRITES_FACTOR_NAMES = ("shape", "scale", "orientation", "posX", "posY")
STD_FLOOR = 1e-6

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


class NpyFormatError(ValueError):
    """Malformed serialized-array member."""

    def __init__(self, msg: str, offset: int):
        self.offset = offset
        super().__init__(f"{msg} (at byte offset {offset})")


class SchemaError(ValueError):
    """Archive members do not have the expected names, dtypes or shapes."""


@dataclass
class FactorDataset:
    """Inputs paired with ground-truth generative factors.

    ``factors`` is N x K. Categorical factors hold integer codes in
    ``[0, cardinality)``; continuous ones hold their real values.
    """
    inputs: np.ndarray
    factors: np.ndarray
    kinds: list[str]
    names: list[str]
    cardinalities: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.kinds) != self.factors.shape[1]:
            raise ValueError("kinds must have one entry per factor column")
        if self.inputs.shape[0] != self.factors.shape[0]:
            raise ValueError("inputs and factors disagree on item count")
        self._values = [np.unique(self.factors[:, k]) for k in range(self.n_factors)]
        self._by_value: dict[tuple[int, float], np.ndarray] = {}

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_factors(self) -> int:
        return self.factors.shape[1]

    @property
    def n_features(self) -> int:
        return int(np.prod(self.inputs.shape[1:]))

    def factor_values(self, k: int) -> np.ndarray:
        return self._values[k]

    def _matching(self, k: int, value: float) -> np.ndarray:
        key = (k, float(value))
        if key not in self._by_value:
            self._by_value[key] = np.flatnonzero(self.factors[:, k] == value)
        return self._by_value[key]

    def sample_fixed_factor(self, factor_index: int, batch: int, rng: np.random.Generator):
        """Indices of a batch whose ``factor_index`` column is constant.

        The fixed value is drawn uniformly from the realizable values; items
        are drawn without replacement unless the batch exceeds the matches.
        """
        if not 0 <= factor_index < self.n_factors:
            raise IndexError(f"factor index {factor_index} out of range [0, {self.n_factors})")
        value = rng.choice(self._values[factor_index])
        pool = self._matching(factor_index, value)
        return rng.choice(pool, size=batch, replace=batch > pool.size)

    def batches(self, batch_size: int, rng: np.random.Generator):
        """Endless stream of random index batches (reshuffled every epoch)."""
        n = len(self)
        while True:
            perm = rng.permutation(n)
            for start in range(0, n - batch_size + 1, batch_size):
                yield perm[start:start + batch_size]
            if n < batch_size:
                yield rng.choice(n, size=batch_size, replace=True)

    def subset(self, idx: np.ndarray) -> "FactorDataset":
        return FactorDataset(self.inputs[idx], self.factors[idx], list(self.kinds),
                             list(self.names), dict(self.cardinalities))


# ---------------------------------------------------------------------------
# waveforms

def pulse_train(duty: float, period: int, length: int = WAVEFORM_LENGTH) -> np.ndarray:
    """1 during the first ``duty`` fraction of every period, 0 otherwise."""
    t = np.arange(length)
    return ((t % period) < duty * period).astype(np.float32)


def generate_waveforms(rng: np.random.Generator | None = None) -> FactorDataset:
    """The 30 x 12 grid of pulse trains (deterministic; ``rng`` is accepted but unused)."""
    rows, factors = [], []
    for d in WAVEFORM_DUTIES:
        for fi, period in enumerate(WAVEFORM_PERIODS):
            rows.append(pulse_train(d, period))
            factors.append((d, fi))
    return FactorDataset(
        inputs=np.stack(rows),
        factors=np.asarray(factors, dtype=np.float64),
        kinds=[CONTINUOUS, CATEGORICAL],
        names=["duty_cycle", "frequency"],
        cardinalities={1: len(WAVEFORM_PERIODS)},
    )


def export_waveforms_csv(ds: FactorDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{t}" for t in range(ds.inputs.shape[1])] + ds.names)
        for x, f in zip(ds.inputs, ds.factors):
            w.writerow([f"{v:g}" for v in x] + [repr(float(f[0])), int(f[1])])


# ---------------------------------------------------------------------------
# serialized-array (npy) members and the dSprites archive

NPY_MAGIC = b"\x93NUMPY"


@dataclass(frozen=True)
class NpyHeader:
    version: tuple[int, int]
    descr: str
    fortran_order: bool
    shape: tuple[int, ...]
    raw: bytes  # the header bytes exactly as read, magic included

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.descr)

    @property
    def data_offset(self) -> int:
        return len(self.raw)

    def serialize(self) -> bytes:
        """Re-encode the header fields (version 1.0 layout, 64-byte aligned)."""
        body = "{'descr': %r, 'fortran_order': %r, 'shape': %r, }" % (
            self.descr, self.fortran_order, self.shape)
        total = len(NPY_MAGIC) + 2 + 2 + len(body) + 1
        body += " " * ((-total) % 64) + "\n"
        return NPY_MAGIC + bytes(self.version) + struct.pack("<H", len(body)) + body.encode("latin1")


def read_npy_header(fh) -> NpyHeader:
    magic = fh.read(6)
    if magic != NPY_MAGIC:
        raise NpyFormatError(f"bad magic {magic!r}", 0)
    version = tuple(fh.read(2))
    if version != (1, 0):
        raise NpyFormatError(f"unsupported version {version}", 6)
    (hlen,) = struct.unpack("<H", fh.read(2))
    text = fh.read(hlen)
    if len(text) != hlen:
        raise NpyFormatError("truncated header", 10)
    try:
        meta = ast.literal_eval(text.decode("latin1"))
        descr, fortran, shape = meta["descr"], meta["fortran_order"], tuple(meta["shape"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise NpyFormatError(f"unparseable header dict: {exc}", 10) from None
    if not np.dtype(descr).isnative and np.dtype(descr).byteorder not in "<|=":
        raise NpyFormatError(f"expected little-endian data, got {descr}", 10)
    return NpyHeader(version, descr, bool(fortran), shape,
                     magic + bytes(version) + struct.pack("<H", hlen) + text)


def _read_rows(fh, header: NpyHeader, rows: np.ndarray | None, chunk_rows: int = 4096) -> np.ndarray:
    """Read the C-ordered array body, keeping only ``rows`` (sorted) if given."""
    dt = header.dtype.newbyteorder("<") if header.dtype.byteorder == ">" else header.dtype
    n = header.shape[0]
    row_shape = header.shape[1:]
    row_bytes = int(np.prod(row_shape, dtype=np.int64)) * dt.itemsize
    if rows is None:
        buf = fh.read(n * row_bytes)
        if len(buf) != n * row_bytes:
            raise SchemaError(f"array body truncated: {len(buf)} of {n * row_bytes} bytes")
        return np.frombuffer(buf, dtype=dt).reshape(header.shape)
    out = np.empty((rows.size,) + row_shape, dtype=dt)
    pos = 0
    for start in range(0, n, chunk_rows):
        stop = min(start + chunk_rows, n)
        buf = fh.read((stop - start) * row_bytes)
        lo, hi = np.searchsorted(rows, [start, stop])
        if hi > lo:
            block = np.frombuffer(buf, dtype=dt).reshape((stop - start,) + row_shape)
            out[pos:pos + hi - lo] = block[rows[lo:hi] - start]
            pos += hi - lo
    return out


@dataclass
class DspritesSet:
    images: np.ndarray   # (N, 64, 64) uint8 in {0, 1}
    factors: np.ndarray  # (N, 5): shape class, scale, orientation, posX, posY
    classes: np.ndarray  # (N, 5) integer class codes of the same factors
    headers: dict[str, NpyHeader] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.images.shape[0]

    def to_factor_dataset(self) -> FactorDataset:
        factors = self.factors.astype(np.float64).copy()
        factors[:, 0] = self.classes[:, 0]
        return FactorDataset(
            inputs=self.images.reshape(len(self), -1).astype(np.float32),
            factors=factors,
            kinds=[CATEGORICAL] + [CONTINUOUS] * 4,
            names=list(DSPRITES_FACTOR_NAMES),
            cardinalities={0: 3},
        )


_DSPRITES_SCHEMA = {
    "imgs": (np.uint8, 3),
    "latents_values": (np.float64, 2),
    "latents_classes": (np.int64, 2),
}


def load_dsprites(path, subsample: int | None = None, seed: int | None = None) -> DspritesSet:
    """Read the dSprites archive, optionally keeping a seeded random subset of rows."""
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        members = {Path(n).stem: n for n in zf.namelist()}
        missing = [k for k in _DSPRITES_SCHEMA if k not in members]
        if missing:
            raise SchemaError(f"{path}: missing members {missing}")
        headers = {}
        for key, (dtype, ndim) in _DSPRITES_SCHEMA.items():
            with zf.open(members[key]) as fh:
                h = read_npy_header(fh)
            if h.dtype.kind != np.dtype(dtype).kind or h.dtype.itemsize != np.dtype(dtype).itemsize \
                    or len(h.shape) != ndim or h.fortran_order:
                raise SchemaError(f"{key}: unexpected layout {h.descr} {h.shape}")
            headers[key] = h
        n = headers["imgs"].shape[0]
        if headers["imgs"].shape[1:] != (64, 64):
            raise SchemaError(f"imgs: expected (N, 64, 64), got {headers['imgs'].shape}")
        for key in ("latents_values", "latents_classes"):
            if headers[key].shape != (n, 6):
                raise SchemaError(f"{key}: expected ({n}, 6), got {headers[key].shape}")
        if n > DSPRITES_N:
            raise SchemaError(f"imgs: {n} items exceeds {DSPRITES_N}")
        rows = None
        if subsample is not None and subsample < n:
            rows = np.sort(np.random.default_rng(seed).choice(n, size=subsample, replace=False))
        arrays = {}
        for key in _DSPRITES_SCHEMA:
            with zf.open(members[key]) as fh:
                read_npy_header(fh)
                arrays[key] = _read_rows(fh, headers[key], rows)
    # column 0 (colour) is constant
    return DspritesSet(
        images=np.ascontiguousarray(arrays["imgs"]),
        factors=np.ascontiguousarray(arrays["latents_values"][:, 1:]),
        classes=np.ascontiguousarray(arrays["latents_classes"][:, 1:]),
        headers=headers,
    )


def dsprites_path(data_dir=None) -> Path:
    root = Path(data_dir or os.environ.get("GCAE_DATA_DIR", "data"))
    return root / "dsprites_ndarray_co1sh3sc6or40x32y32_64x64.npz"


def write_dsprites_like(path, imgs: np.ndarray, latents_values: np.ndarray,
                        latents_classes: np.ndarray, compress: bool = True) -> None:
    """Write arrays in the dSprites archive layout (used to build fixtures)."""
    buf = io.BytesIO()
    saver = np.savez_compressed if compress else np.savez
    saver(buf, imgs=imgs.astype(np.uint8), latents_values=latents_values.astype(np.float64),
          latents_classes=latents_classes.astype(np.int64))
    Path(path).write_bytes(buf.getvalue())


# ---------------------------------------------------------------------------
# normalization

@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def normalize(data: np.ndarray, stats: NormStats | None = None) -> tuple[np.ndarray, NormStats]:
    """Per-feature ``(x - mean) / std``; std is floored at 1e-6 so constant features map to 0."""
    flat = data.reshape(data.shape[0], -1).astype(np.float64)
    if stats is None:
        stats = NormStats(mean=flat.mean(axis=0), std=np.maximum(flat.std(axis=0), STD_FLOOR))
    out = (flat - stats.mean) / stats.std
    return out.astype(np.float32).reshape(data.shape), stats


def normalized(ds: FactorDataset, stats: NormStats | None = None) -> tuple[FactorDataset, NormStats]:
    x, stats = normalize(ds.inputs, stats)
    return FactorDataset(x, ds.factors, list(ds.kinds), list(ds.names), dict(ds.cardinalities)), stats
