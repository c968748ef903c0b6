"""Binary network checkpoints.

Layout, all integers little-endian:

    header   b"BIOG" | u16 version | u8 head (0 linear, 1 ridge) | u8 input ndim | u32 dims...
    layers   u16 count, then per layer:
             u8 kind (0 conv, 1 pool, 2 dense) | u32 fan_out | u16 kernel | u16 stride
             | u16 padding | u8 activation | u8 flags (bit 0 params, bit 1 mask)
    tensors  for each layer with params: weights, bias, then mask if flagged
    readout  u8 present; if present f64 lambda then the weight tensor

A tensor is u8 dtype (0 float64, 1 float32) | u8 ndim | u32 dims... | raw
little-endian data in C order.
"""

import logging
import struct
from io import BytesIO
from pathlib import Path
from typing import BinaryIO

import numpy as np

from biobench.errors import CheckpointError
from biobench.network import LayerParams, LayerSpec, Network
from biobench.rules.ridge import RidgeClassifier

logger = logging.getLogger(__name__)

MAGIC = b"BIOG"
VERSION = 1

HEADER = struct.Struct("<4sHBB")
LAYER = struct.Struct("<BIHHHBB")
TENSOR = struct.Struct("<BB")

KINDS = ("conv", "pool", "dense")
HEADS = ("linear", "ridge")
ACTIVATIONS = ("identity", "relu", "tanh", "triangle")
DTYPES = (np.dtype("<f8"), np.dtype("<f4"))

FLAG_PARAMS = 1
FLAG_MASK = 2


def _write_dims(f: BinaryIO, dims: tuple[int, ...]) -> None:
    f.write(struct.pack(f"<{len(dims)}I", *dims))


def _write_tensor(f: BinaryIO, x: np.ndarray) -> None:
    dtype = np.dtype(x.dtype).newbyteorder("<")
    if dtype not in DTYPES:
        raise CheckpointError(f"cannot store tensors of dtype {x.dtype}")
    f.write(TENSOR.pack(DTYPES.index(dtype), x.ndim))
    _write_dims(f, x.shape)
    f.write(np.ascontiguousarray(x, dtype=dtype).tobytes())


def dump_network(net: Network) -> bytes:
    f = BytesIO()
    f.write(HEADER.pack(MAGIC, VERSION, HEADS.index(net.head), len(net.input_shape)))
    _write_dims(f, net.input_shape)
    f.write(struct.pack("<H", len(net.specs)))
    for spec, p in zip(net.specs, net.params):
        flags = 0
        if p is not None:
            flags |= FLAG_PARAMS
            if p.mask is not None:
                flags |= FLAG_MASK
        f.write(
            LAYER.pack(
                KINDS.index(spec.kind),
                spec.fan_out,
                spec.kernel,
                spec.stride,
                spec.padding,
                ACTIVATIONS.index(spec.activation),
                flags,
            )
        )
    for p in net.params:
        if p is None:
            continue
        _write_tensor(f, p.weights)
        _write_tensor(f, p.bias)
        if p.mask is not None:
            _write_tensor(f, p.mask)
    if net.readout is None:
        f.write(b"\x00")
    else:
        f.write(struct.pack("<Bd", 1, net.readout.lam))
        _write_tensor(f, net.readout.weights)
    return f.getvalue()


def save_network(net: Network, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_network(net))
    logger.info("saved checkpoint %s", path)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"{self.source}: truncated at byte {self.pos}, needed {n} more of {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct | str) -> tuple:
        s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def dims(self, ndim: int) -> tuple[int, ...]:
        return self.unpack(f"<{ndim}I") if ndim else ()

    def tensor(self) -> np.ndarray:
        code, ndim = self.unpack(TENSOR)
        if code >= len(DTYPES):
            raise CheckpointError(f"{self.source}: unknown dtype code {code}")
        dtype = DTYPES[code]
        shape = self.dims(ndim)
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def _code(table: tuple, code: int, what: str, source: str):
    if code >= len(table):
        raise CheckpointError(f"{source}: unknown {what} code {code}")
    return table[code]


def parse_network(data: bytes, source: str = "<bytes>") -> Network:
    r = _Reader(data, source)
    magic, version, head, ndim = r.unpack(HEADER)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    input_shape = r.dims(ndim)
    (count,) = r.unpack("<H")
    specs, flags = [], []
    for _ in range(count):
        kind, fan_out, kernel, stride, padding, act, flag = r.unpack(LAYER)
        specs.append(
            LayerSpec(
                kind=_code(KINDS, kind, "layer kind", source),
                fan_out=fan_out,
                kernel=kernel,
                stride=stride,
                padding=padding,
                activation=_code(ACTIVATIONS, act, "activation", source),
            )
        )
        flags.append(flag)
    params: list[LayerParams | None] = []
    for flag in flags:
        if not flag & FLAG_PARAMS:
            params.append(None)
            continue
        weights, bias = r.tensor(), r.tensor()
        mask = r.tensor() if flag & FLAG_MASK else None
        params.append(LayerParams(weights=weights, bias=bias, mask=mask))
    (present,) = r.unpack("<B")
    readout = None
    if present:
        (lam,) = r.unpack("<d")
        readout = RidgeClassifier(weights=r.tensor(), lam=lam)
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes")
    return Network(
        specs=specs,
        params=params,
        head=_code(HEADS, head, "head", source),
        input_shape=tuple(input_shape),
        readout=readout,
    )


def load_network(path: Path | str) -> Network:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: no such checkpoint")
    return parse_network(path.read_bytes(), str(path))
