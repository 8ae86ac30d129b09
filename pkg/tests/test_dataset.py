import numpy as np
import pytest

from bgru.audio import Waveform, write_wav
from bgru.dataset import (
    NOISE_KINDS,
    CorpusSpec,
    build_pairs,
    collect_train_magnitudes,
    fit_corpus_codebook,
    synth_noise,
    synth_utterance,
)
from bgru.errors import ConfigError, DomainError
from bgru.numerics import SeededRng
from bgru.pipeline import score_pair


def small_spec(**overrides):
    base = dict(mode="synthetic", train_utterances=2, test_utterances=1,
                noise_kinds=("white", "pulsed"), duration_s=0.5, seed=11)
    base.update(overrides)
    return CorpusSpec(**base)


class TestSynthUtterance:
    def test_deterministic_per_seed(self):
        a = synth_utterance(SeededRng(5), 0.5)
        b = synth_utterance(SeededRng(5), 0.5)
        assert np.array_equal(a.samples, b.samples)

    def test_sample_count(self):
        w = synth_utterance(SeededRng(1), 1.0)
        assert len(w) == 16000

    def test_energy_below_4khz(self):
        w = synth_utterance(SeededRng(2), 1.0)
        spec = np.abs(np.fft.rfft(w.samples)) ** 2
        freqs = np.fft.rfftfreq(len(w), 1.0 / w.sample_rate)
        below = spec[freqs < 4000].sum()
        assert below / spec.sum() >= 0.90

    def test_bad_duration(self):
        with pytest.raises(DomainError):
            synth_utterance(SeededRng(0), 0.0)


class TestSynthNoise:
    def test_white_spectrum_flat_across_octaves(self):
        w = synth_noise(SeededRng(3), "white", 2.0)
        spec = np.abs(np.fft.rfft(w.samples)) ** 2
        freqs = np.fft.rfftfreq(len(w), 1.0 / w.sample_rate)
        bands = [(250, 500), (500, 1000), (1000, 2000), (2000, 4000)]
        densities = []
        for lo, hi in bands:
            sel = (freqs >= lo) & (freqs < hi)
            densities.append(spec[sel].mean())
        ratios_db = 10 * np.log10(np.array(densities) / np.mean(densities))
        assert np.all(np.abs(ratios_db) < 3.0)

    def test_pulsed_duty_cycle_near_half(self):
        w = synth_noise(SeededRng(4), "pulsed", 2.0)
        frame = 160
        n = len(w) // frame
        rms = np.sqrt(
            np.mean(w.samples[: n * frame].reshape(n, frame) ** 2, axis=1)
        )
        duty = np.mean(rms > 0.5 * rms.max())
        assert 0.35 < duty < 0.65

    def test_pink_tilt_negative(self):
        w = synth_noise(SeededRng(5), "pink", 2.0)
        spec = np.abs(np.fft.rfft(w.samples)) ** 2
        freqs = np.fft.rfftfreq(len(w), 1.0 / w.sample_rate)
        low = spec[(freqs >= 100) & (freqs < 400)].mean()
        high = spec[(freqs >= 2000) & (freqs < 8000)].mean()
        assert low > 4 * high

    def test_deterministic(self):
        for kind in NOISE_KINDS:
            a = synth_noise(SeededRng(6), kind, 0.3)
            b = synth_noise(SeededRng(6), kind, 0.3)
            assert np.array_equal(a.samples, b.samples)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            synth_noise(SeededRng(0), "vuvuzela", 1.0)


@pytest.fixture(scope="module")
def corpus():
    spec = small_spec()
    cb = fit_corpus_codebook(spec)
    return spec, cb


class TestBuildPairs:

    def test_feature_dimension_is_four_times_bins(self, corpus):
        spec, cb = corpus
        pairs = build_pairs(spec, cb, "train")
        assert pairs[0].features.shape[1] == 4 * 513 == 2052

    def test_pair_count_is_clean_times_noises(self, corpus):
        spec, cb = corpus
        assert len(build_pairs(spec, cb, "train")) == 2 * 2
        assert len(build_pairs(spec, cb, "test")) == 1 * 2

    def test_targets_nondegenerate(self, corpus):
        spec, cb = corpus
        for pair in build_pairs(spec, cb, "train"):
            assert 0.0 < pair.targets.mean() < 1.0

    def test_features_bipolar(self, corpus):
        spec, cb = corpus
        pair = build_pairs(spec, cb, "train")[0]
        assert np.all(np.abs(pair.features) == 1.0)

    def test_frame_alignment(self, corpus):
        spec, cb = corpus
        for pair in build_pairs(spec, cb, "train"):
            assert pair.features.shape[0] == pair.targets.shape[0]
            assert pair.features.shape[0] == pair.mix_spec.num_frames

    def test_deterministic_pairs(self, corpus):
        spec, cb = corpus
        a = build_pairs(spec, cb, "train")
        b = build_pairs(spec, cb, "train")
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.features, pb.features)
            assert np.array_equal(pa.mixture.samples, pb.mixture.samples)

    def test_train_and_test_disjoint_content(self, corpus):
        spec, cb = corpus
        tr = build_pairs(spec, cb, "train")
        te = build_pairs(spec, cb, "test")
        assert not np.array_equal(tr[0].clean.samples, te[0].clean.samples)

    def test_mixture_is_clean_plus_noise(self, corpus):
        spec, cb = corpus
        pair = build_pairs(spec, cb, "train")[0]
        assert np.array_equal(pair.clean.samples + pair.noise.samples,
                              pair.mixture.samples)

    def test_oracle_ibm_improves_sdr(self, corpus):
        spec, cb = corpus
        for pair in build_pairs(spec, cb, "test"):
            row = score_pair(pair, pair.targets)
            assert row.sdr_est > row.sdr_mix

    def test_oracle_holds_for_quiet_noise_sources(self, tmp_path):
        # a noise file far below speech level is rescaled up to 0 dB; the
        # IBM must describe the rescaled noise or masking would misfire
        rng = SeededRng(31)
        clean = synth_utterance(rng.stream("c"), 1.0)
        quiet = synth_noise(rng.stream("n"), "white", 1.0)
        quiet = Waveform(quiet.samples * 1e-3, quiet.sample_rate)
        from bgru.dataset import make_pair
        from bgru.quantizer import fit_codebook_for_magnitudes
        from bgru.audio import stft as _stft

        cb, _ = fit_codebook_for_magnitudes(
            _stft(clean).magnitudes().ravel())
        pair = make_pair(clean, quiet, cb, "c", "n")
        row = score_pair(pair, pair.targets)
        assert row.sdr_est > row.sdr_mix
        # rescaled noise dominates many bins despite the quiet source file
        assert 0.05 < pair.targets.mean() < 0.95


class TestDirectoryMode:
    def _write_corpus(self, tmp_path):
        speech = tmp_path / "speech"
        noise = tmp_path / "noise"
        speech.mkdir()
        noise.mkdir()
        rng = SeededRng(0)
        for i in range(3):
            w = synth_utterance(rng.stream(f"s{i}"), 0.4)
            write_wav(speech / f"utt{i}.wav", w)
        write_wav(noise / "white.wav", synth_noise(rng.stream("n"), "white", 0.4))
        (tmp_path / "train.txt").write_text("utt0.wav\nutt1.wav\n")
        (tmp_path / "test.txt").write_text("utt2.wav\n")
        return CorpusSpec(
            mode="directory",
            speech_dir=str(speech),
            noise_dir=str(noise),
            train_list=str(tmp_path / "train.txt"),
            test_list=str(tmp_path / "test.txt"),
            seed=1,
        )

    def test_loads_pairs(self, tmp_path):
        spec = self._write_corpus(tmp_path)
        cb = fit_corpus_codebook(spec)
        train = build_pairs(spec, cb, "train")
        test = build_pairs(spec, cb, "test")
        assert len(train) == 2 and len(test) == 1

    def test_overlapping_manifests_rejected(self, tmp_path):
        spec = self._write_corpus(tmp_path)
        cb = fit_corpus_codebook(spec)
        (tmp_path / "test.txt").write_text("utt0.wav\n")
        with pytest.raises(ConfigError, match="overlap"):
            build_pairs(spec, cb, "train")

    def test_missing_fields_rejected(self):
        with pytest.raises(ConfigError):
            CorpusSpec(mode="directory").validate()

    def test_silent_noise_file_rejected(self, tmp_path):
        spec = self._write_corpus(tmp_path)
        cb = fit_corpus_codebook(spec)
        write_wav(tmp_path / "noise" / "silence.wav",
                  Waveform(np.zeros(6400)))
        with pytest.raises(DomainError, match="silent noise"):
            build_pairs(spec, cb, "train")


class TestCodebookFitScope:
    def test_fit_uses_training_split_only(self):
        # the fit helper has no access to the test split: magnitudes come
        # from the train generator alone, so changing test counts is inert
        a = collect_train_magnitudes(small_spec(test_utterances=1))
        b = collect_train_magnitudes(small_spec(test_utterances=5))
        assert np.array_equal(a, b)
