"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes  b"SPFCKPT1"
    count    u32      number of sections
    section  repeated:
        name_len u16, name (utf-8)
        dtype    u8   0 = float32, 1 = int64, 2 = uint8 (raw bytes / utf-8 JSON)
        ndim     u8
        shape    ndim x u64
        payload  prod(shape) items, little-endian, row-major

Sections written by :func:`save_checkpoint`:

* ``meta`` (uint8, JSON): iteration, config hash, sh degree, time range, decoder layer shapes.
* ``grid.header`` (float32, 11 values): K, F, T, N0, b, box_min(3), box_max(3).
* ``grid.tables`` (float32, K x T x F): level tables in order k = 0..K-1.
* ``static.<param>`` / ``dynamic.<param>`` (float32): Gaussian parameters.
* ``decoder.<name>`` (float32): trunk and head weights, row-major.
* ``optim.<group>.m`` / ``optim.<group>.v`` (float32) and ``optim.<group>.step`` (int64).

Everything numeric is stored as float32; a :class:`Checkpoint` therefore holds
float32 arrays so that save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decoder import HEADS, DeformationDecoder
from .errors import CheckpointError
from .hashgrid import HashGrid4D
from .scene import GaussianSet

MAGIC = b"SPFCKPT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<i8"): 1, np.dtype("u1"): 2}


@dataclass
class Checkpoint:
    static: GaussianSet
    dynamic: GaussianSet
    grid: HashGrid4D
    decoder: DeformationDecoder
    optimizer: dict = field(default_factory=dict)  # group -> (m, v, step)
    iteration: int = 0
    config_hash: str = ""
    time_range: tuple = (0.0, 1.0)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return to_bytes(self) == to_bytes(other)


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4")


def _sections(ck: Checkpoint):
    secs = []
    dec = ck.decoder.named_params()
    meta = {
        "iteration": int(ck.iteration),
        "config_hash": ck.config_hash,
        "time_range": [float(x) for x in ck.time_range],
        "sh_degree": ck.static.sh_degree,
        "static_dynamic": ck.static.dyn_logit is not None,
        "decoder_layers": {k: list(v.shape) for k, v in dec.items()},
        "decoder_stop_mu_grad": bool(ck.decoder.stop_mu_grad),
        "optim_groups": sorted(ck.optimizer),
    }
    secs.append(("meta", np.frombuffer(json.dumps(meta, sort_keys=True).encode(), "u1")))
    g = ck.grid
    header = [g.levels, g.features, g.table_size, g.base_resolution, g.growth_factor,
              *g.box_min, *g.box_max]
    secs.append(("grid.header", _f32(header)))
    secs.append(("grid.tables", _f32(g.tables)))
    for prefix, gs in (("static", ck.static), ("dynamic", ck.dynamic)):
        for name, arr in gs.params().items():
            secs.append((f"{prefix}.{name}", _f32(arr)))
    for name, arr in dec.items():
        secs.append((f"decoder.{name}", _f32(arr)))
    for group in sorted(ck.optimizer):
        m, v, step = ck.optimizer[group]
        secs.append((f"optim.{group}.m", _f32(m)))
        secs.append((f"optim.{group}.v", _f32(v)))
        secs.append((f"optim.{group}.step", np.array([step], "<i8")))
    return secs


def to_bytes(ck: Checkpoint) -> bytes:
    secs = _sections(ck)
    out = [MAGIC, struct.pack("<I", len(secs))]
    for name, arr in secs:
        nb = name.encode()
        arr = np.ascontiguousarray(arr)
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<BB", _CODES[np.dtype(arr.dtype.str.replace("=", "<"))],
                               arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(path, ck: Checkpoint):
    """Write atomically (temporary file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    os.replace(tmp, path)


def _read_sections(data: bytes):
    if not data.startswith(MAGIC):
        raise CheckpointError("bad magic; not a splatfuse checkpoint")
    pos = len(MAGIC)
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        secs = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(data):
                raise CheckpointError(f"section {name!r} truncated")
            secs[name] = np.frombuffer(data, dt, count=nbytes // dt.itemsize,
                                       offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    return secs


def from_bytes(data: bytes) -> Checkpoint:
    secs = _read_sections(data)
    meta = json.loads(secs["meta"].tobytes().decode())
    h = secs["grid.header"]
    K, F, T, N0 = (int(x) for x in h[:4])
    grid = HashGrid4D(K, F, T, N0, float(h[4]), h[5:8].astype(np.float64),
                      h[8:11].astype(np.float64), secs["grid.tables"])

    def gset(prefix):
        kw = {}
        for name in GaussianSet.PARAMS:
            key = f"{prefix}.{name}"
            if key in secs:
                kw[name] = secs[key]
        return GaussianSet(**kw)

    n_trunk = sum(1 for k in meta["decoder_layers"] if k.startswith("trunk") and k.endswith(".w"))
    decoder = DeformationDecoder(
        [secs[f"decoder.trunk{i}.w"] for i in range(n_trunk)],
        [secs[f"decoder.trunk{i}.b"] for i in range(n_trunk)],
        {k: secs[f"decoder.head.{k}.w"] for k in HEADS},
        {k: secs[f"decoder.head.{k}.b"] for k in HEADS},
        meta.get("decoder_stop_mu_grad", False),
    )
    optimizer = {}
    for group in meta["optim_groups"]:
        optimizer[group] = (secs[f"optim.{group}.m"], secs[f"optim.{group}.v"],
                            int(secs[f"optim.{group}.step"][0]))
    return Checkpoint(gset("static"), gset("dynamic"), grid, decoder, optimizer,
                      meta["iteration"], meta["config_hash"], tuple(meta["time_range"]))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    return from_bytes(path.read_bytes())
