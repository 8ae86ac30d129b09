"""Fully binarized inference: ternary weights packed as bitplanes, XNOR +
popcount dot products, hard thresholds, and bitwise gate multiplexing.

Layout: values pack into 64-bit words, bit k of word j holding element
64*j + k (LSB-first within a word); bits past the logical length are zero.
A ternary matrix stores two planes per row -- sign (+1 -> 1, -1 -> 0) and
nonzero (retained by the sparsity mask) -- plus one real scale mu.  Sign
bits at zeroed positions are forced to 0, making the encoding canonical.

For a bipolar vector x and a ternary row w the dot product is recovered
exactly from counters: with a = popcount(NOT(x XOR sign) AND nonzero) and
n1 = popcount(nonzero), dot = mu * (2a - n1), since agreements minus
disagreements over the nonzero positions equals 2a - n1.  Gate and hidden
pre-activations combine the input-side and recurrent-side counters as
mu_W * mW + mu_U * mU in double precision, mirroring the float emulation's
expression order so both paths produce identical bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .numerics import Mat
from .gru import sign_unit

WORD_BITS = 64


def _num_words(n: int) -> int:
    return (n + WORD_BITS - 1) // WORD_BITS


def pack_bits(flags: np.ndarray) -> np.ndarray:
    """Pack a boolean array along its last axis into little-bit-order uint64."""
    flags = np.asarray(flags, dtype=bool)
    n = flags.shape[-1]
    pad = _num_words(n) * WORD_BITS - n
    if pad:
        flags = np.concatenate(
            [flags, np.zeros(flags.shape[:-1] + (pad,), dtype=bool)], axis=-1
        )
    packed = np.packbits(flags, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").reshape(
        flags.shape[:-1] + (_num_words(n),)
    )


def unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    u8 = np.ascontiguousarray(words).view(np.uint8)
    bits = np.unpackbits(u8, axis=-1, bitorder="little")
    return bits[..., :n].astype(bool)


def _popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words).astype(np.int64)


def _check_padding(words: np.ndarray, n: int) -> None:
    used = n % WORD_BITS
    if used == 0 or words.size == 0:
        return
    tail_mask = np.uint64((1 << used) - 1)
    if np.any(words[..., -1] & ~tail_mask):
        raise DomainError("padding bits past the logical length must be zero")


@dataclass(frozen=True)
class PackedBipolarVector:
    """{-1,+1} vector, +1 packed as bit 1."""

    length: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint64)
        object.__setattr__(self, "bits", bits)
        if bits.shape != (_num_words(self.length),):
            raise ShapeError(f"expected {_num_words(self.length)} words, got {bits.shape}")
        _check_padding(bits, self.length)

    @classmethod
    def from_floats(cls, vec) -> "PackedBipolarVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1:
            raise ShapeError(f"expected a vector, got shape {vec.shape}")
        if not np.all(np.abs(vec) == 1.0):
            raise DomainError("bipolar vector entries must be -1 or +1")
        return cls(length=vec.size, bits=pack_bits(vec > 0))

    def to_floats(self) -> np.ndarray:
        return np.where(unpack_bits(self.bits, self.length), 1.0, -1.0)


@dataclass(frozen=True)
class PackedGateVector:
    """{0,1} gate vector, 1 packed as bit 1."""

    length: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint64)
        object.__setattr__(self, "bits", bits)
        if bits.shape != (_num_words(self.length),):
            raise ShapeError(f"expected {_num_words(self.length)} words, got {bits.shape}")
        _check_padding(bits, self.length)

    @classmethod
    def from_floats(cls, vec) -> "PackedGateVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1:
            raise ShapeError(f"expected a vector, got shape {vec.shape}")
        if not np.all((vec == 0.0) | (vec == 1.0)):
            raise DomainError("gate vector entries must be 0 or 1")
        return cls(length=vec.size, bits=pack_bits(vec == 1.0))

    def to_floats(self) -> np.ndarray:
        return unpack_bits(self.bits, self.length).astype(np.float64)


@dataclass(frozen=True)
class PackedTernaryMatrix:
    rows: int
    cols: int
    sign_plane: np.ndarray
    nonzero_plane: np.ndarray
    mu: float

    def __post_init__(self):
        w = _num_words(self.cols)
        sign = np.ascontiguousarray(self.sign_plane, dtype=np.uint64)
        nonzero = np.ascontiguousarray(self.nonzero_plane, dtype=np.uint64)
        object.__setattr__(self, "sign_plane", sign)
        object.__setattr__(self, "nonzero_plane", nonzero)
        if sign.shape != (self.rows, w) or nonzero.shape != (self.rows, w):
            raise ShapeError(
                f"expected plane shape {(self.rows, w)}, got {sign.shape}/{nonzero.shape}"
            )
        _check_padding(sign, self.cols)
        _check_padding(nonzero, self.cols)
        if np.any(sign & ~nonzero):
            raise DomainError("sign bits must be zero where nonzero=0 (canonical form)")
        if self.mu < 0:
            raise DomainError(f"scale mu must be non-negative, got {self.mu}")
        if self.mu == 0 and np.any(nonzero):
            raise DomainError("mu must be positive when any weight is retained")

    @property
    def words_per_row(self) -> int:
        return _num_words(self.cols)

    def storage_words(self) -> int:
        """Words in both planes: rows * ceil(cols/64) * 2."""
        return 2 * self.rows * self.words_per_row

    def to_dense(self) -> Mat:
        sign = unpack_bits(self.sign_plane, self.cols)
        nonzero = unpack_bits(self.nonzero_plane, self.cols)
        return np.where(sign, 1.0, -1.0) * nonzero * self.mu


def pack_ternary(W: Mat, B: Mat) -> PackedTernaryMatrix:
    """Pack sign(W) restricted to the sparsity mask's support, with its scale.

    B must hold one common value mu on its support and 0 elsewhere; the sign
    plane uses sgn(0) = +1 and is zeroed off-support.
    """
    W = np.asarray(W, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if W.ndim != 2 or W.shape != B.shape:
        raise ShapeError(f"weight/mask shapes differ: {W.shape} vs {B.shape}")
    nonzero = B != 0
    values = B[nonzero]
    if values.size:
        mu = float(values[0])
        if mu <= 0 or not np.all(values == mu):
            raise DomainError("mask entries must all equal one positive scale mu")
    else:
        mu = 0.0
    sign = (sign_unit(W) > 0) & nonzero
    return PackedTernaryMatrix(
        rows=W.shape[0],
        cols=W.shape[1],
        sign_plane=pack_bits(sign),
        nonzero_plane=pack_bits(nonzero),
        mu=mu,
    )


def ternary_counts(w: PackedTernaryMatrix, x: PackedBipolarVector) -> np.ndarray:
    """Per-row integer 2a - n1 = (agreements - disagreements) with x."""
    if x.length != w.cols:
        raise ShapeError(f"vector length {x.length} != matrix cols {w.cols}")
    agree = ~(w.sign_plane ^ x.bits[None, :]) & w.nonzero_plane
    a = _popcount(agree).sum(axis=1)
    n1 = _popcount(w.nonzero_plane).sum(axis=1)
    return 2 * a - n1


def masked_ternary_counts(
    w: PackedTernaryMatrix, x: PackedBipolarVector, gate: PackedGateVector
) -> np.ndarray:
    """Counts with columns where gate=0 dropped (equals the dot with gate*x)."""
    if x.length != w.cols or gate.length != w.cols:
        raise ShapeError(
            f"lengths {x.length}/{gate.length} do not match matrix cols {w.cols}"
        )
    nz = w.nonzero_plane & gate.bits[None, :]
    agree = ~(w.sign_plane ^ x.bits[None, :]) & nz
    a = _popcount(agree).sum(axis=1)
    n1 = _popcount(nz).sum(axis=1)
    return 2 * a - n1


def xnor_dot(x: PackedBipolarVector, w: PackedTernaryMatrix, row: int = 0) -> float:
    """mu * (2a - n1) for one matrix row; exactly the float ternary dot."""
    return float(w.mu * np.float64(ternary_counts(w, x)[row]))


def masked_xnor_dot(
    x: PackedBipolarVector,
    gate: PackedGateVector,
    w: PackedTernaryMatrix,
    row: int = 0,
) -> float:
    return float(w.mu * np.float64(masked_ternary_counts(w, x, gate)[row]))


def bit_mux(
    z: PackedGateVector, a: PackedBipolarVector, b: PackedBipolarVector
) -> PackedBipolarVector:
    """Bitwise select: a where z=1, b where z=0 (the binary state update)."""
    if not (z.length == a.length == b.length):
        raise ShapeError(
            f"length mismatch: z {z.length}, a {a.length}, b {b.length}"
        )
    bits = (z.bits & a.bits) | (~z.bits & b.bits)
    return PackedBipolarVector(length=a.length, bits=bits)


@dataclass(frozen=True)
class PackedGruLayer:
    Wr: PackedTernaryMatrix
    Ur: PackedTernaryMatrix
    Wz: PackedTernaryMatrix
    Uz: PackedTernaryMatrix
    Wh: PackedTernaryMatrix
    Uh: PackedTernaryMatrix

    @property
    def units(self) -> int:
        return self.Wr.rows

    @property
    def input_dim(self) -> int:
        return self.Wr.cols


@dataclass(frozen=True)
class PackedOutputLayer:
    Wo: PackedTernaryMatrix


@dataclass(frozen=True)
class PackedNetwork:
    layers: tuple
    out: PackedOutputLayer

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def out_dim(self) -> int:
        return self.out.Wo.rows

    def initial_state(self) -> list:
        """All-(+1) hidden states (the hard sign of a zero state)."""
        return [
            PackedBipolarVector.from_floats(np.ones(layer.units))
            for layer in self.layers
        ]


def _pre(pw: PackedTernaryMatrix, xv, pu: PackedTernaryMatrix, uv) -> np.ndarray:
    return pw.mu * xv + pu.mu * uv


def layer_infer_step(
    layer: PackedGruLayer,
    x: PackedBipolarVector,
    h_prev: PackedBipolarVector,
) -> PackedBipolarVector:
    """One fully bitwise GRU cell step; thresholds use sgn(0) = +1."""
    mr_x = ternary_counts(layer.Wr, x).astype(np.float64)
    mr_h = ternary_counts(layer.Ur, h_prev).astype(np.float64)
    r = PackedGateVector(
        length=layer.units, bits=pack_bits(_pre(layer.Wr, mr_x, layer.Ur, mr_h) >= 0)
    )
    mz_x = ternary_counts(layer.Wz, x).astype(np.float64)
    mz_h = ternary_counts(layer.Uz, h_prev).astype(np.float64)
    z = PackedGateVector(
        length=layer.units, bits=pack_bits(_pre(layer.Wz, mz_x, layer.Uz, mz_h) >= 0)
    )
    mh_x = ternary_counts(layer.Wh, x).astype(np.float64)
    mh_h = masked_ternary_counts(layer.Uh, h_prev, r).astype(np.float64)
    h_tilde = PackedBipolarVector(
        length=layer.units, bits=pack_bits(_pre(layer.Wh, mh_x, layer.Uh, mh_h) >= 0)
    )
    return bit_mux(z, h_prev, h_tilde)


def output_ibm(out: PackedOutputLayer, h: PackedBipolarVector) -> PackedGateVector:
    """IBM bits from the packed output layer: logits thresholded at 0."""
    counts = ternary_counts(out.Wo, h).astype(np.float64)
    logits = out.Wo.mu * counts
    return PackedGateVector(length=out.Wo.rows, bits=pack_bits(logits >= 0))


def bgru_infer_step(
    layer: PackedGruLayer,
    out: PackedOutputLayer,
    x: PackedBipolarVector,
    h_prev: PackedBipolarVector,
) -> tuple[PackedBipolarVector, PackedGateVector]:
    """Single-layer bitwise step plus output stage: (new state, IBM frame)."""
    h = layer_infer_step(layer, x, h_prev)
    return h, output_ibm(out, h)


def network_infer_step(
    net: PackedNetwork, x: PackedBipolarVector, h_prev: list
) -> tuple[list, PackedGateVector]:
    """One step through all layers; returns new states and the IBM frame."""
    states = []
    cur = x
    for layer, h in zip(net.layers, h_prev):
        h_new = layer_infer_step(layer, cur, h)
        states.append(h_new)
        cur = h_new
    return states, output_ibm(net.out, cur)


def run_sequence(net: PackedNetwork, frames: np.ndarray) -> np.ndarray:
    """Run bipolar feature frames (n, D) through the packed network.

    Returns the predicted {0,1} masks, shape (n, out_dim).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != net.input_dim:
        raise ShapeError(
            f"expected (n, {net.input_dim}) feature frames, got {frames.shape}"
        )
    h = net.initial_state()
    masks = np.empty((frames.shape[0], net.out_dim))
    for t in range(frames.shape[0]):
        x = PackedBipolarVector.from_floats(frames[t])
        h, ibm = network_infer_step(net, x, h)
        masks[t] = ibm.to_floats()
    return masks


def pack_network(net, masks) -> PackedNetwork:
    """Pack a float network with its finalized sparsity masks (C must be 1)."""
    from .gru import GRU_MATRIX_NAMES

    mats = net.matrices()
    layers = []
    for i in range(len(net.layers)):
        packed = {
            n: pack_ternary(mats[f"l{i}.{n}"], masks.masks[f"l{i}.{n}"].B)
            for n in GRU_MATRIX_NAMES
        }
        layers.append(PackedGruLayer(**packed))
    out = PackedOutputLayer(
        Wo=pack_ternary(mats["out.Wo"], masks.masks["out.Wo"].B)
    )
    return PackedNetwork(layers=tuple(layers), out=out)
