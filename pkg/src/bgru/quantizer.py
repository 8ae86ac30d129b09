"""Lloyd-Max scalar quantization of magnitude spectra into bipolar bit
features, and ideal binary mask computation.

The pipeline quantizes each spectral magnitude to one of 16 levels (4 bits)
and disperses the level index into 4 bipolar {-1,+1} bitplanes, stacked into
the network's input features.  Magnitudes are compressed with log(1+m)
before quantization: raw spectral magnitudes are heavy-tailed and collapse
most Lloyd-Max levels onto near-zero mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .numerics import ensure_finite

QAD_BITS = 4
QAD_LEVELS = 1 << QAD_BITS


@dataclass(frozen=True)
class QadCodebook:
    """Scalar quantizer: ascending reconstruction levels and decision thresholds.

    thresholds[i] separates levels[i] from levels[i+1]; values at a threshold
    quantize upward.
    """

    levels: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        levels = np.ascontiguousarray(self.levels, dtype=np.float64)
        thresholds = np.ascontiguousarray(self.thresholds, dtype=np.float64)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "thresholds", thresholds)
        if levels.ndim != 1 or levels.size < 2:
            raise DomainError("codebook needs at least 2 levels")
        if thresholds.shape != (levels.size - 1,):
            raise ShapeError(
                f"expected {levels.size - 1} thresholds, got {thresholds.size}"
            )
        ensure_finite(levels, "codebook levels")
        ensure_finite(thresholds, "codebook thresholds")
        if np.any(np.diff(levels) < 0):
            raise DomainError("codebook levels must be non-decreasing")
        if np.any(thresholds < levels[:-1]) or np.any(thresholds > levels[1:]):
            raise DomainError("thresholds must lie between adjacent levels")

    @property
    def num_levels(self) -> int:
        return int(self.levels.size)

    def encode_indices(self, values: np.ndarray) -> np.ndarray:
        """Map values to level indices by threshold search (clamps at the ends)."""
        return np.digitize(np.asarray(values, dtype=np.float64), self.thresholds)

    def decode(self, indices: np.ndarray) -> np.ndarray:
        return self.levels[np.asarray(indices, dtype=np.intp)]


@dataclass
class LloydDiagnostics:
    iterations: int
    mse_history: list = field(default_factory=list)
    degenerate: bool = False

    @property
    def final_mse(self) -> float:
        return self.mse_history[-1]


def _midpoints(levels: np.ndarray) -> np.ndarray:
    return 0.5 * (levels[:-1] + levels[1:])


def fit_lloyd_max(
    samples,
    num_levels: int = QAD_LEVELS,
    max_iters: int = 200,
    tol: float = 1e-10,
) -> tuple[QadCodebook, LloydDiagnostics]:
    """Fit a scalar quantizer by alternating centroid and boundary updates.

    Levels move to the mean of their assigned samples; thresholds move to
    midpoints of adjacent levels.  Iteration stops when the MSE improvement
    drops below ``tol`` or after ``max_iters``.  The per-iteration MSE is
    non-increasing by construction and is returned in the diagnostics,
    together with a flag for degenerate fits (fewer distinct samples than
    levels, which duplicates levels).
    """
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size == 0:
        raise DomainError("cannot fit a codebook on an empty sample set")
    if num_levels < 2:
        raise DomainError(f"need at least 2 levels, got {num_levels}")
    ensure_finite(s, "codebook training samples")

    if s.min() == s.max():
        levels = np.full(num_levels, s.min())
        cb = QadCodebook(levels, _midpoints(levels))
        return cb, LloydDiagnostics(iterations=0, mse_history=[0.0], degenerate=True)

    levels = np.linspace(s.min(), s.max(), num_levels)
    history = [_assignment_mse(s, levels)]
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        idx = np.digitize(s, _midpoints(levels))
        counts = np.bincount(idx, minlength=num_levels)
        sums = np.bincount(idx, weights=s, minlength=num_levels)
        # empty cells keep their previous level; centroids of ordered cells
        # stay ordered, the sort only irons out float-level ties
        levels = np.sort(np.where(counts > 0, sums / np.maximum(counts, 1), levels))
        mse = _assignment_mse(s, levels)
        history.append(mse)
        if history[-2] - mse < tol:
            break

    degenerate = np.unique(s).size < num_levels
    cb = QadCodebook(levels, _midpoints(levels))
    return cb, LloydDiagnostics(iterations=iterations, mse_history=history, degenerate=degenerate)


def _assignment_mse(s: np.ndarray, levels: np.ndarray) -> float:
    recon = levels[np.digitize(s, _midpoints(levels))]
    return float(np.mean((s - recon) ** 2))


def log_compress(magnitudes: np.ndarray) -> np.ndarray:
    """log(1+m) compression applied to magnitudes before quantization."""
    return np.log1p(np.maximum(np.asarray(magnitudes, dtype=np.float64), 0.0))


def fit_codebook_for_magnitudes(
    magnitudes, max_iters: int = 200, tol: float = 1e-10
) -> tuple[QadCodebook, LloydDiagnostics]:
    """Fit the 16-level codebook on log-compressed magnitudes pooled over bins."""
    return fit_lloyd_max(log_compress(magnitudes), QAD_LEVELS, max_iters, tol)


@dataclass(frozen=True)
class QadFrame:
    """4 bipolar bitplanes of one spectral frame; planes[k][f] in {-1,+1}."""

    planes: np.ndarray

    def __post_init__(self):
        planes = np.ascontiguousarray(self.planes, dtype=np.float64)
        object.__setattr__(self, "planes", planes)
        if planes.ndim != 2 or planes.shape[0] != QAD_BITS:
            raise ShapeError(f"expected {QAD_BITS} bitplanes, got shape {planes.shape}")
        if not np.all(np.abs(planes) == 1.0):
            raise DomainError("bitplane entries must be -1 or +1")

    @property
    def num_bins(self) -> int:
        return int(self.planes.shape[1])

    def features(self) -> np.ndarray:
        """Flatten plane-major into the network input vector of length 4*F."""
        return self.planes.reshape(-1)


def bitplanes_from_indices(indices: np.ndarray) -> np.ndarray:
    """Disperse 4-bit level indices into 4 bipolar planes, MSB first.

    Index 5 (binary 0101) becomes planes (-1, +1, -1, +1).
    """
    idx = np.asarray(indices, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= QAD_LEVELS):
        raise DomainError("level indices must be in [0, 15]")
    shifts = np.arange(QAD_BITS - 1, -1, -1)
    bits = (idx[None, :] >> shifts[:, None]) & 1
    return bits.astype(np.float64) * 2.0 - 1.0


def indices_from_bitplanes(planes: np.ndarray) -> np.ndarray:
    bits = (np.asarray(planes) > 0).astype(np.int64)
    shifts = np.arange(QAD_BITS - 1, -1, -1)
    return (bits << shifts[:, None]).sum(axis=0)


def qad_encode(magnitudes: np.ndarray, cb: QadCodebook) -> QadFrame:
    """Quantize one frame of magnitudes and disperse indices into bitplanes.

    Values outside the training range clamp to the extreme levels; negative
    inputs are treated as zero magnitude.
    """
    if cb.num_levels != QAD_LEVELS:
        raise DomainError(
            f"QaD dispersion needs a {QAD_LEVELS}-level codebook, got {cb.num_levels}"
        )
    idx = cb.encode_indices(log_compress(magnitudes))
    return QadFrame(bitplanes_from_indices(idx))


def compute_ibm(speech_mag: np.ndarray, noise_mag: np.ndarray) -> np.ndarray:
    """Ideal binary mask: 1 where speech magnitude >= noise magnitude.

    Ties go to speech so the rule is deterministic.
    """
    s = np.asarray(speech_mag, dtype=np.float64)
    n = np.asarray(noise_mag, dtype=np.float64)
    if s.shape != n.shape:
        raise ShapeError(f"magnitude shapes differ: {s.shape} vs {n.shape}")
    return (s >= n).astype(np.float64)
