"""Binary checkpoint format for trained filters.

Layout (all integers little-endian):

    magic   4 bytes  "QFCK"
    version u32      currently 1
    model   str      builder name (dcad / vrcnn / liu / tucodec)
    mode    str      vanilla / qp-adaptive / qp-map
    args    str      comma-separated builder overrides, e.g. "width=36"
    seed    i64      training seed
    iters   u32      training iterations
    n_qps   u32, then i32 per QP the run trained on
    blocks  u32, then per block: str "layer/field", u32 ndim, u32 dims...,
            float32 payload

where str is u32 length + UTF-8 bytes.  Arrays are stored in IEEE-754 single
precision, so saving float32 parameters round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .models import ModelSpec, build_model

MAGIC = b"QFCK"
VERSION = 1


@dataclass
class CheckpointMeta:
    model: str
    mode: str
    args: dict
    seed: int
    iterations: int
    qps: tuple


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self.take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _args_to_str(args: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in sorted(args.items()))


def _args_from_str(s: str) -> dict:
    if not s:
        return {}
    return {k: int(v) for k, v in (kv.split("=") for kv in s.split(","))}


def save_checkpoint(path, spec: ModelSpec, params: dict, *, seed: int,
                    iterations: int, qps) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION),
             _pack_str(spec.name), _pack_str(spec.mode),
             _pack_str(_args_to_str(spec.builder_args_dict())),
             struct.pack("<q", int(seed)), struct.pack("<I", int(iterations)),
             struct.pack("<I", len(tuple(qps)))]
    parts += [struct.pack("<i", int(q)) for q in qps]
    blocks = [(f"{lname}/{pname}", arr) for lname, entry in params.items()
              for pname, arr in entry.items()]
    parts.append(struct.pack("<I", len(blocks)))
    for name, arr in blocks:
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", arr32.ndim))
        parts += [struct.pack("<I", d) for d in arr32.shape]
        parts.append(arr32.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path, mode: str = None):
    """Read a checkpoint back as (spec, params, meta).

    `mode` may upgrade a vanilla checkpoint to qp-adaptive: the weights are
    reused and the modulation parameters start at zero, so the upgraded model
    reproduces the vanilla outputs until training moves the thetas.
    """
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version = rd.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = CheckpointMeta(
        model=rd.string(), mode=rd.string(), args=_args_from_str(rd.string()),
        seed=rd.i64(), iterations=rd.u32(),
        qps=tuple(rd.i32() for _ in range(rd.u32())),
    )
    params = {}
    for _ in range(rd.u32()):
        name = rd.string()
        ndim = rd.u32()
        shape = tuple(rd.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(shape).copy()
        lname, pname = name.rsplit("/", 1)
        params.setdefault(lname, {})[pname] = arr
    if rd.pos != len(rd.data):
        raise ValueError(f"{path}: {len(rd.data) - rd.pos} trailing bytes")

    target_mode = meta.mode if mode is None else mode
    if target_mode != meta.mode:
        if not (meta.mode == "vanilla" and target_mode == "qp-adaptive"):
            raise ValueError(
                f"{path}: cannot load a {meta.mode} checkpoint as {target_mode}")
    spec = build_model(meta.model, mode=target_mode, **meta.args)
    if target_mode == "qp-adaptive" and meta.mode == "vanilla":
        for lname, entry in params.items():
            entry["theta"] = np.zeros(entry["w"].shape[0], dtype=np.float32)
    _validate_against_spec(spec, params, path)
    return spec, params, meta


def _validate_against_spec(spec: ModelSpec, params: dict, path) -> None:
    from .models import conv_layers

    convs = {c.name: c for c in conv_layers(spec.layers)}
    if set(convs) != set(params):
        raise ValueError(f"{path}: layer names {sorted(params)} do not match "
                         f"model {spec.name} ({sorted(convs)})")
    for name, c in convs.items():
        entry = params[name]
        wshape = (c.out_channels, 1, c.kh, c.kw) if c.depthwise \
            else (c.out_channels, c.in_channels, c.kh, c.kw)
        if entry["w"].shape != wshape:
            raise ValueError(f"{path}: {name}/w has shape {entry['w'].shape}, "
                             f"expected {wshape}")
        if c.bias != ("b" in entry):
            raise ValueError(f"{path}: {name} bias presence mismatch")
        if (spec.mode == "qp-adaptive") != ("theta" in entry):
            raise ValueError(f"{path}: {name} modulation presence mismatch")
