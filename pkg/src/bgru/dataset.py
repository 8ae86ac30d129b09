"""Desk-scale data provision: synthetic speech/noise generators and a
directory-based loader, producing frame-aligned (features, IBM) pairs.

The synthetic speech surrogate is a harmonic tone complex with a slowly
drifting fundamental (80-300 Hz) under a syllabic amplitude envelope; noise
comes in four kinds (white, pink, pulsed, chirp).  Every clean utterance is
mixed with every noise kind at 0 dB.  Directory mode reads user-supplied
mono WAV corpora with plain-text split manifests; train and test lists must
be disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, Spectrogram, Waveform, mix_at_0db, read_wav, stft
from .errors import ConfigError, DomainError
from .numerics import SeededRng
from .quantizer import QadCodebook, compute_ibm, fit_codebook_for_magnitudes, qad_encode

NOISE_KINDS = ("white", "pink", "pulsed", "chirp")


@dataclass
class CorpusSpec:
    mode: str = "synthetic"
    train_utterances: int = 5
    test_utterances: int = 2
    noise_kinds: tuple = NOISE_KINDS
    duration_s: float = 1.5
    sample_rate: int = DEFAULT_SAMPLE_RATE
    seed: int = 1234
    speech_dir: str = ""
    noise_dir: str = ""
    train_list: str = ""
    test_list: str = ""

    def validate(self) -> "CorpusSpec":
        if self.mode not in ("synthetic", "directory"):
            raise ConfigError(f"unknown corpus mode {self.mode!r}")
        if self.mode == "synthetic":
            if self.train_utterances < 1:
                raise ConfigError("need at least one training utterance")
            if self.duration_s <= 0:
                raise ConfigError("duration_s must be positive")
            unknown = [k for k in self.noise_kinds if k not in NOISE_KINDS]
            if unknown:
                raise ConfigError(
                    f"unknown noise kinds {unknown}; available: {NOISE_KINDS}"
                )
            if not self.noise_kinds:
                raise ConfigError("need at least one noise kind")
        else:
            for name in ("speech_dir", "noise_dir", "train_list", "test_list"):
                if not getattr(self, name):
                    raise ConfigError(f"directory mode needs {name}")
        return self


@dataclass
class UtterancePair:
    """One clean/noise/mixture triple with its network features and targets.

    ``noise`` holds the 0 dB-rescaled segment actually mixed in, so
    clean + noise == mixture sample for sample.
    """

    clean: Waveform
    noise: Waveform
    mixture: Waveform
    mix_spec: Spectrogram
    features: np.ndarray
    targets: np.ndarray
    clean_id: str
    noise_id: str

    def __post_init__(self):
        if self.features.shape[0] != self.targets.shape[0]:
            raise DomainError(
                f"feature/target frame counts differ: "
                f"{self.features.shape[0]} vs {self.targets.shape[0]}"
            )

    @property
    def name(self) -> str:
        return f"{self.clean_id}+{self.noise_id}"


# ---------------------------------------------------------------------------
# synthetic generators


def synth_utterance(rng: SeededRng, duration_s: float,
                    sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Harmonic tone complex with a drifting fundamental, RMS-normalized.

    The fundamental wanders sinusoidally inside 80-300 Hz and all partials
    stay below 4 kHz, so the spectrum concentrates in the speech band.
    """
    if duration_s <= 0:
        raise DomainError(f"duration must be positive, got {duration_s}")
    g = rng.gen
    n = round(duration_s * sample_rate)
    t = np.arange(n) / sample_rate
    base = g.uniform(110.0, 250.0)
    drift_amp = g.uniform(10.0, 30.0)
    drift_rate = g.uniform(0.3, 1.2)
    f0 = base + drift_amp * np.sin(2.0 * np.pi * drift_rate * t + g.uniform(0, 2 * np.pi))
    f0 = np.clip(f0, 80.0, 300.0)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    max_harmonic = int(3900.0 // float(f0.max()))
    x = np.zeros(n)
    for k in range(1, max_harmonic + 1):
        amp = (1.0 / k) * g.uniform(0.6, 1.2)
        x += amp * np.sin(k * phase + g.uniform(0, 2 * np.pi))
    syllable_rate = g.uniform(1.5, 4.0)
    envelope = 0.55 - 0.45 * np.cos(2.0 * np.pi * syllable_rate * t + g.uniform(0, 2 * np.pi))
    x *= envelope
    x *= 0.1 / np.sqrt(np.mean(x**2))
    return Waveform(x, sample_rate)


def synth_noise(rng: SeededRng, kind: str, duration_s: float,
                sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Deterministic surrogate noise of the given kind, RMS-normalized."""
    if kind not in NOISE_KINDS:
        raise ConfigError(f"unknown noise kind {kind!r}; available: {NOISE_KINDS}")
    if duration_s <= 0:
        raise DomainError(f"duration must be positive, got {duration_s}")
    g = rng.gen
    n = round(duration_s * sample_rate)
    t = np.arange(n) / sample_rate
    if kind == "white":
        x = g.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(g.standard_normal(n))
        k = np.arange(spec.size, dtype=np.float64)
        spec /= np.sqrt(np.maximum(k, 1.0))
        x = np.fft.irfft(spec, n=n)
    elif kind == "pulsed":
        carrier = g.standard_normal(n)
        pulse_rate = g.uniform(3.0, 5.0)
        gate = (np.sin(2.0 * np.pi * pulse_rate * t + g.uniform(0, 2 * np.pi)) >= 0)
        x = carrier * (gate + 0.02)
    else:  # chirp
        sweep_s = g.uniform(0.3, 0.5)
        f_lo, f_hi = 300.0, 6000.0
        tau = np.mod(t, sweep_s)
        inst = f_lo + (f_hi - f_lo) * tau / sweep_s
        x = np.sin(2.0 * np.pi * np.cumsum(inst) / sample_rate)
    x = x / np.sqrt(np.mean(x**2))
    return Waveform(0.1 * x, sample_rate)


# ---------------------------------------------------------------------------
# pair construction


def _synthetic_sources(spec: CorpusSpec, split: str):
    """Yield (clean_id, noise_id, clean, noise) for the requested split."""
    root = SeededRng(spec.seed)
    count = spec.train_utterances if split == "train" else spec.test_utterances
    for i in range(count):
        clean_id = f"{split}{i:03d}"
        clean = synth_utterance(
            root.stream(f"{split}:utt:{i}"), spec.duration_s, spec.sample_rate
        )
        for kind in spec.noise_kinds:
            noise = synth_noise(
                root.stream(f"{split}:noise:{i}:{kind}"),
                kind,
                spec.duration_s,
                spec.sample_rate,
            )
            yield clean_id, kind, clean, noise


def _read_manifest(path: str) -> list[str]:
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.append(line)
    if not entries:
        raise ConfigError(f"empty manifest: {path}")
    return entries


def _directory_sources(spec: CorpusSpec, split: str):
    train_files = _read_manifest(spec.train_list)
    test_files = _read_manifest(spec.test_list)
    overlap = sorted(set(train_files) & set(test_files))
    if overlap:
        raise ConfigError(f"train/test manifests overlap: {overlap}")
    files = train_files if split == "train" else test_files
    noise_files = sorted(p.name for p in Path(spec.noise_dir).glob("*.wav"))
    if not noise_files:
        raise ConfigError(f"no noise WAV files in {spec.noise_dir}")
    for fname in files:
        clean = read_wav(Path(spec.speech_dir) / fname)
        for nname in noise_files:
            noise = read_wav(Path(spec.noise_dir) / nname)
            yield Path(fname).stem, Path(nname).stem, clean, noise


def _sources(spec: CorpusSpec, split: str):
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    spec.validate()
    if spec.mode == "synthetic":
        return _synthetic_sources(spec, split)
    return _directory_sources(spec, split)


def collect_train_magnitudes(spec: CorpusSpec) -> np.ndarray:
    """Pooled mixture magnitudes of the training split, for the codebook fit.

    Only the training split ever feeds the quantizer; fitting on test data
    is structurally impossible through this API.
    """
    mags = []
    for _, _, clean, noise in _sources(spec, "train"):
        mixture = mix_at_0db(clean, noise)
        mags.append(stft(mixture).magnitudes().ravel())
    return np.concatenate(mags)


def fit_corpus_codebook(spec: CorpusSpec) -> QadCodebook:
    cb, _ = fit_codebook_for_magnitudes(collect_train_magnitudes(spec))
    return cb


def build_pairs(spec: CorpusSpec, cb: QadCodebook, split: str = "train") -> list[UtterancePair]:
    """Assemble frame-aligned utterance pairs for one split.

    Features are the QaD bitplanes of the mixture spectrum; targets the IBM
    from the clean/noise spectra under the exact same framing.
    """
    pairs = []
    for clean_id, noise_id, clean, noise in _sources(spec, split):
        pairs.append(make_pair(clean, noise, cb, clean_id, noise_id))
    if not pairs:
        raise ConfigError(f"no utterances in the {split} split")
    return pairs


def make_pair(clean: Waveform, noise: Waveform, cb: QadCodebook,
              clean_id: str, noise_id: str) -> UtterancePair:
    mixture = mix_at_0db(clean, noise)
    mix_spec = stft(mixture)
    clean_spec = stft(clean)
    # the IBM must describe the noise actually present in the mixture,
    # i.e. the 0 dB-rescaled segment: exactly the mixture residual
    scaled_noise = Waveform(mixture.samples - clean.samples, clean.sample_rate)
    noise_spec = stft(scaled_noise)
    mix_mag = mix_spec.magnitudes()
    features = np.stack([qad_encode(m, cb).features() for m in mix_mag])
    targets = np.stack(
        [
            compute_ibm(s_mag, n_mag)
            for s_mag, n_mag in zip(clean_spec.magnitudes(), noise_spec.magnitudes())
        ]
    )
    return UtterancePair(
        clean=clean,
        noise=scaled_noise,
        mixture=mixture,
        mix_spec=mix_spec,
        features=features,
        targets=targets,
        clean_id=clean_id,
        noise_id=noise_id,
    )
