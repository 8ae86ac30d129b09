"""Dense float64 linear algebra, seeded RNG streams, and a finite-difference
gradient oracle.

Training math runs in double precision throughout; the packed inference
engine (`bitkernel`) works on integers only.  All matrices are C-contiguous
row-major float64 ndarrays.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

from .errors import DomainError, NumericError, ShapeError

# Mat is a plain 2-D float64 ndarray; helpers below enforce the contract.
Mat = np.ndarray

_MASK64 = 0xFFFFFFFFFFFFFFFF


def ensure_finite(a: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite entries in {what}")
    return a


def as_mat(values, rows: int | None = None, cols: int | None = None) -> Mat:
    """Coerce to a C-contiguous float64 matrix, validating shape and finiteness."""
    a = np.ascontiguousarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if rows is not None and a.shape != (rows, cols):
        raise ShapeError(f"expected shape {(rows, cols)}, got {a.shape}")
    ensure_finite(a, "matrix")
    return a


def matmul(a: Mat, b: Mat) -> Mat:
    """Matrix product with explicit conformance checking."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return ensure_finite(out, "matmul result")


class SeededRng:
    """Deterministic PCG64 generator splittable into independent named streams.

    Identical seeds yield bit-identical sample streams.  ``stream(name)``
    derives a child generator from (seed, parent path, sha256(name)) so
    weights, masks, and dropout can draw from unrelated streams no matter in
    which order the call sites run.
    """

    def __init__(self, seed: int, _entropy: tuple[int, ...] | None = None):
        self.seed = int(seed)
        if _entropy is None:
            _entropy = (self.seed & _MASK64,)
        self._entropy = _entropy
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(list(_entropy)))
        )

    def stream(self, name: str) -> "SeededRng":
        digest = hashlib.sha256(name.encode("utf-8")).digest()
        words = tuple(
            int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)
        )
        return SeededRng(self.seed, self._entropy + words)

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * scale

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def bernoulli_matrix(rng: SeededRng, rows: int, cols: int, p: float) -> Mat:
    """Matrix of independent {0,1} draws, each 1 with probability p."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"Bernoulli probability must be in [0,1], got {p}")
    return (rng.gen.random((rows, cols)) < p).astype(np.float64)


def finite_diff_grad(f: Callable[[Mat], float], x: Mat, eps: float = 1e-5) -> Mat:
    """Central-difference gradient of a scalar function, element by element.

    The oracle against which all analytic gradients are checked; it never
    shares code with the backpropagation path.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += eps
        fp = float(f(xp))
        xm = x.copy()
        xm[idx] -= eps
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite objective value at index {idx}")
        grad[idx] = (fp - fm) / (2.0 * eps)
    return grad
