"""Checkpoint container for a training run.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"GCAECKPT"
    8       4     format version (uint32), currently 1
    12      8     header length H in bytes (uint64)
    20      H     UTF-8 JSON header
    20+H    ...   tensor blob

The JSON header holds ``config`` (the experiment config echo), ``iteration``,
``rng`` (bit-generator states of every stream), ``optimizers`` (scalar Adam
state per optimizer) and ``tensors``: a list of ``{name, dtype, shape,
offset, nbytes}`` entries locating each little-endian buffer inside the blob.
Tensor names are ``encoder.{i}``, ``decoder.{i}``, ``bank.{i}`` for
parameters and ``<opt>.m.{i}`` / ``<opt>.v.{i}`` for Adam moments.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GCAECKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _collect(trainer) -> dict[str, np.ndarray]:
    arrays = {}
    for prefix, net in (("encoder", trainer.model.encoder), ("decoder", trainer.model.decoder),
                        ("bank", trainer.bank.net)):
        for i, p in enumerate(net.params):
            arrays[f"{prefix}.{i}"] = p.data
    for prefix, opt in (("ae_opt", trainer.ae_opt), ("disc_opt", trainer.bank.opt)):
        for i, (m, v) in enumerate(zip(opt.state.first_moment, opt.state.second_moment)):
            arrays[f"{prefix}.m.{i}"] = m
            arrays[f"{prefix}.v.{i}"] = v
    return arrays


def save_checkpoint(path, trainer, config: dict) -> None:
    arrays = _collect(trainer)
    manifest, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        manifest.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": config,
        "iteration": trainer.iteration,
        "rng": trainer.streams.state(),
        "optimizers": {
            name: {k: getattr(opt.state, k) for k in ("lr", "beta1", "beta2", "epsilon", "step_count")}
            for name, opt in (("ae_opt", trainer.ae_opt), ("disc_opt", trainer.bank.opt))
        },
        "tensors": manifest,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", data, 12)
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    blob = memoryview(data)[20 + hlen:]
    arrays = {}
    for t in header["tensors"]:
        buf = blob[t["offset"]:t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(buf, dtype=np.dtype(t["dtype"])).reshape(t["shape"]).copy()
    return header, arrays


def restore(trainer, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Load parameters, optimizer state and RNG streams into a freshly built trainer."""
    expected = _collect(trainer)
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {missing[:5]}")
    for name, target in expected.items():
        src = arrays[name]
        if src.shape != target.shape:
            raise CheckpointError(f"{name}: shape {src.shape} does not match model {target.shape}")
        target[...] = src
    for name, opt in (("ae_opt", trainer.ae_opt), ("disc_opt", trainer.bank.opt)):
        for k, v in header["optimizers"][name].items():
            setattr(opt.state, k, v)
    trainer.streams.set_state(header["rng"])
    trainer.iteration = header["iteration"]
