"""Signal pipeline: STFT analysis/synthesis, 0 dB mixing, mask application,
SDR scoring, and 16-bit PCM WAV files.

Framing is fixed and padding-free: a periodic Hann window of 1024 samples
with hop 256, one-sided spectra of 513 bins, frame count
floor((len - 1024) / 256) + 1.  At quarter-window hop the squared Hann
window satisfies the constant-overlap-add condition, so weighted
overlap-add reconstruction is exact (to rounding) on the interior.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .numerics import ensure_finite

WINDOW_SIZE = 1024
HOP_SIZE = 256
NUM_BINS = WINDOW_SIZE // 2 + 1
DEFAULT_SAMPLE_RATE = 16000
SDR_CAP_DB = 100.0


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise DomainError(f"sample rate must be positive, got {self.sample_rate}")
        ensure_finite(self.samples, "waveform samples")

    def __len__(self) -> int:
        return int(self.samples.size)

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if len(self) else 0.0


@dataclass
class Spectrogram:
    """One-sided complex STFT frames, shape (num_frames, 513)."""

    frames: np.ndarray
    window_size: int = WINDOW_SIZE
    hop: int = HOP_SIZE
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.complex128)
        expected = self.window_size // 2 + 1
        if self.frames.ndim != 2 or self.frames.shape[1] != expected:
            raise ShapeError(
                f"expected (frames, {expected}) spectrogram, got {self.frames.shape}"
            )

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def num_bins(self) -> int:
        return int(self.frames.shape[1])

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.frames)


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def num_frames_for(length: int, window_size: int = WINDOW_SIZE, hop: int = HOP_SIZE) -> int:
    return (length - window_size) // hop + 1


def stft(w: Waveform, window_size: int = WINDOW_SIZE, hop: int = HOP_SIZE) -> Spectrogram:
    """Short-time Fourier transform with a periodic Hann window, no padding."""
    x = w.samples
    if x.size < window_size:
        raise DomainError(
            f"waveform too short for STFT: {x.size} < window {window_size}"
        )
    n = num_frames_for(x.size, window_size, hop)
    win = hann_periodic(window_size)
    idx = np.arange(window_size)[None, :] + hop * np.arange(n)[:, None]
    frames = np.fft.rfft(x[idx] * win, axis=1)
    return Spectrogram(frames, window_size=window_size, hop=hop,
                       sample_rate=w.sample_rate)


def istft(s: Spectrogram) -> Waveform:
    """Weighted overlap-add synthesis with Hann analysis/synthesis windows.

    Output length is (num_frames - 1) * hop + window_size; samples with
    negligible accumulated window energy (the trivial edge case) are zero.
    """
    win = hann_periodic(s.window_size)
    length = (s.num_frames - 1) * s.hop + s.window_size
    acc = np.zeros(length)
    wsum = np.zeros(length)
    frames_t = np.fft.irfft(s.frames, n=s.window_size, axis=1)
    for i in range(s.num_frames):
        lo = i * s.hop
        acc[lo : lo + s.window_size] += frames_t[i] * win
        wsum[lo : lo + s.window_size] += win * win
    nz = wsum > 1e-12
    out = np.zeros(length)
    out[nz] = acc[nz] / wsum[nz]
    return Waveform(out, sample_rate=s.sample_rate)


def mix_at_0db(speech: Waveform, noise: Waveform) -> Waveform:
    """speech + noise rescaled so the noise segment's RMS equals the speech RMS.

    Noise shorter than the speech is tiled cyclically; longer noise is
    truncated.  Zero-energy speech or noise is rejected.
    """
    if speech.sample_rate != noise.sample_rate:
        raise DomainError(
            f"sample rates differ: speech {speech.sample_rate} Hz, "
            f"noise {noise.sample_rate} Hz"
        )
    n = len(speech)
    if len(noise) < n:
        reps = -(-n // len(noise)) if len(noise) else 0
        if reps == 0:
            raise DomainError("noise signal is empty")
        seg = np.tile(noise.samples, reps)[:n]
    else:
        seg = noise.samples[:n]
    s_rms = speech.rms()
    n_rms = float(np.sqrt(np.mean(seg**2)))
    if s_rms == 0.0:
        raise DomainError("silent speech signal (zero RMS)")
    if n_rms == 0.0:
        raise DomainError("silent noise signal (zero RMS)")
    return Waveform(speech.samples + seg * (s_rms / n_rms), speech.sample_rate)


def apply_mask(mix: Spectrogram, ibm: np.ndarray) -> Spectrogram:
    """Per-bin multiply of the complex spectrogram by a {0,1} mask."""
    ibm = np.asarray(ibm, dtype=np.float64)
    if ibm.shape != mix.frames.shape:
        raise ShapeError(
            f"mask shape {ibm.shape} does not match spectrogram {mix.frames.shape}"
        )
    return Spectrogram(mix.frames * ibm, window_size=mix.window_size,
                       hop=mix.hop, sample_rate=mix.sample_rate)


def sdr(reference: Waveform | np.ndarray, estimate: Waveform | np.ndarray) -> float:
    """Simplified signal-to-distortion ratio in dB, capped at +100.

    10*log10(|s|^2 / |s - s_hat|^2) against the exact reference; this is not
    the full BSS-eval projection decomposition but preserves its ordering
    for this pipeline.
    """
    ref = reference.samples if isinstance(reference, Waveform) else np.asarray(reference, dtype=np.float64)
    est = estimate.samples if isinstance(estimate, Waveform) else np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise ShapeError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_energy = float(np.sum(ref**2))
    if ref_energy == 0.0:
        raise DomainError("zero-energy reference")
    err_energy = float(np.sum((ref - est) ** 2))
    if err_energy == 0.0:
        return SDR_CAP_DB
    return min(10.0 * np.log10(ref_energy / err_energy), SDR_CAP_DB)


# ---------------------------------------------------------------------------
# WAV files: mono 16-bit signed little-endian PCM


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            n = f.getnframes()
            raw = f.readframes(n)
    except (wave.Error, EOFError) as e:
        raise FormatError(f"not a readable WAV file: {path}: {e}") from e
    if channels != 1:
        raise DomainError(f"expected mono audio, got {channels} channels: {path}")
    if width != 2:
        raise DomainError(f"expected 16-bit PCM, got {8 * width}-bit: {path}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples, sample_rate=rate)


def write_wav(path, w: Waveform) -> None:
    scaled = np.clip(np.rint(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(scaled.tobytes())
