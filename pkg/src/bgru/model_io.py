"""Binary model files.

Layout (all integers and floats little-endian):

    magic   b"BGRU"
    u32     format version (1)
    u8      mode: 0 = real, 1 = tanh-compressed round-1, 2 = packed binary
    u32     L, number of GRU layers
    L x (u32 in_dim, u32 units)
    u32     F, output bins
    16 f64  quantizer levels
    15 f64  quantizer thresholds
    payload per mode, matrices in the fixed order
            (Wr, Ur, Wz, Uz, Wh, Uh) per layer, then Wo:
      mode 0/1: each matrix as row-major f64
      mode 2:   per matrix: f64 mu, then the sign plane and the nonzero
                plane as 64-bit words (rows padded to the word boundary)

Declared sizes must match the payload exactly and mode-2 planes must be in
canonical form (zero padding bits, zero sign bits off-support); violations
raise FormatError.  Writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .bitkernel import (
    PackedGruLayer,
    PackedNetwork,
    PackedOutputLayer,
    PackedTernaryMatrix,
    _num_words,
)
from .errors import BgruError, DomainError, FormatError
from .gru import GRU_MATRIX_NAMES, GruLayer, Network, OutputLayer
from .quantizer import QAD_LEVELS, QadCodebook

MAGIC = b"BGRU"
FORMAT_VERSION = 1
MODE_REAL = 0
MODE_COMPRESSED = 1
MODE_PACKED = 2


@dataclass
class ModelFile:
    mode: int
    codebook: QadCodebook
    net: Optional[Network] = None
    packed: Optional[PackedNetwork] = None

    @property
    def input_dim(self) -> int:
        return (self.net or self.packed).input_dim

    @property
    def out_dim(self) -> int:
        return (self.net or self.packed).out_dim


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def _f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _u64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<u8").tobytes()


def save_model(path, model: ModelFile) -> None:
    if model.mode in (MODE_REAL, MODE_COMPRESSED):
        if model.net is None:
            raise DomainError("float-mode model file needs a Network")
        dims = [(l.input_dim, l.units) for l in model.net.layers]
        out_dim = model.net.out_dim
    elif model.mode == MODE_PACKED:
        if model.packed is None:
            raise DomainError("packed-mode model file needs a PackedNetwork")
        dims = [(l.input_dim, l.units) for l in model.packed.layers]
        out_dim = model.packed.out_dim
    else:
        raise DomainError(f"unknown model mode {model.mode}")

    cb = model.codebook
    if cb.num_levels != QAD_LEVELS:
        raise DomainError(f"model files carry {QAD_LEVELS}-level codebooks")

    parts = [MAGIC, struct.pack("<IB", FORMAT_VERSION, model.mode),
             struct.pack("<I", len(dims))]
    for in_dim, units in dims:
        parts.append(struct.pack("<II", in_dim, units))
    parts.append(struct.pack("<I", out_dim))
    parts.append(_f64_bytes(cb.levels))
    parts.append(_f64_bytes(cb.thresholds))

    if model.mode == MODE_PACKED:
        for pm in _packed_matrices(model.packed):
            parts.append(struct.pack("<d", pm.mu))
            parts.append(_u64_bytes(pm.sign_plane))
            parts.append(_u64_bytes(pm.nonzero_plane))
    else:
        for m in _float_matrices(model.net):
            parts.append(_f64_bytes(m))
    write_bytes_atomic(path, b"".join(parts))


def _float_matrices(net: Network):
    for layer in net.layers:
        for name in GRU_MATRIX_NAMES:
            yield getattr(layer, name)
    yield net.out.Wo


def _packed_matrices(pnet: PackedNetwork):
    for layer in pnet.layers:
        for name in GRU_MATRIX_NAMES:
            yield getattr(layer, name)
    yield pnet.out.Wo


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"truncated model file: {self.path}")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def u64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<u8").astype(np.uint64)

    def done(self) -> None:
        if self.off != len(self.data):
            raise FormatError(
                f"model payload size mismatch: {len(self.data) - self.off} trailing "
                f"bytes in {self.path}"
            )


def load_model(path) -> ModelFile:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"bad magic: not a model file: {path}")
    (version, mode) = r.unpack("<IB")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}: {path}")
    if mode not in (MODE_REAL, MODE_COMPRESSED, MODE_PACKED):
        raise FormatError(f"unknown model mode byte {mode}: {path}")
    (num_layers,) = r.unpack("<I")
    dims = [r.unpack("<II") for _ in range(num_layers)]
    (out_dim,) = r.unpack("<I")
    levels = r.f64(QAD_LEVELS)
    thresholds = r.f64(QAD_LEVELS - 1)
    try:
        cb = QadCodebook(levels, thresholds)
    except BgruError as e:
        raise FormatError(f"invalid codebook in model file {path}: {e}") from e

    matrix_shapes = []
    for in_dim, units in dims:
        for name in GRU_MATRIX_NAMES:
            cols = in_dim if name.startswith("W") else units
            matrix_shapes.append((units, cols))
    top_units = dims[-1][1] if dims else 0
    matrix_shapes.append((out_dim, top_units))

    if mode == MODE_PACKED:
        matrices = []
        for rows, cols in matrix_shapes:
            (mu,) = r.unpack("<d")
            w = _num_words(cols)
            sign = r.u64(rows * w).reshape(rows, w)
            nonzero = r.u64(rows * w).reshape(rows, w)
            try:
                matrices.append(
                    PackedTernaryMatrix(rows=rows, cols=cols, sign_plane=sign,
                                        nonzero_plane=nonzero, mu=mu)
                )
            except BgruError as e:
                raise FormatError(
                    f"non-canonical packed matrix in {path}: {e}"
                ) from e
        r.done()
        layers = []
        for i in range(num_layers):
            block = matrices[6 * i : 6 * (i + 1)]
            layers.append(PackedGruLayer(**dict(zip(GRU_MATRIX_NAMES, block))))
        packed = PackedNetwork(layers=tuple(layers), out=PackedOutputLayer(Wo=matrices[-1]))
        return ModelFile(mode=mode, codebook=cb, packed=packed)

    matrices = []
    for rows, cols in matrix_shapes:
        matrices.append(r.f64(rows * cols).reshape(rows, cols))
    r.done()
    layers = []
    for i in range(num_layers):
        block = matrices[6 * i : 6 * (i + 1)]
        layers.append(GruLayer(**dict(zip(GRU_MATRIX_NAMES, block))))
    try:
        net = Network(layers=layers, out=OutputLayer(Wo=matrices[-1]))
    except BgruError as e:
        raise FormatError(f"inconsistent dimensions in model file {path}: {e}") from e
    return ModelFile(mode=mode, codebook=cb, net=net)


def float_payload_bytes(dims, out_dim: int) -> int:
    """Payload size of a mode-0/1 file via the layout formula."""
    total = 0
    for in_dim, units in dims:
        total += 3 * units * in_dim + 3 * units * units
    total += out_dim * (dims[-1][1] if dims else 0)
    return 8 * total


def packed_payload_bytes(dims, out_dim: int) -> int:
    """Payload size of a mode-2 file via the layout formula (mu + 2 planes)."""
    total = 0

    def matrix_bytes(rows, cols):
        return 8 + 2 * rows * _num_words(cols) * 8

    for in_dim, units in dims:
        total += 3 * matrix_bytes(units, in_dim) + 3 * matrix_bytes(units, units)
    total += matrix_bytes(out_dim, dims[-1][1] if dims else 0)
    return total
