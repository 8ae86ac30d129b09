"""End-to-end inference and scoring: features -> IBM -> masked ISTFT -> SDR."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .audio import Spectrogram, Waveform, apply_mask, istft, sdr
from .bitkernel import PackedNetwork, run_sequence
from .errors import StateError
from .gru import MaskSet, Network, forward_network, ibm_from_prediction
from .numerics import SeededRng


def predict_ibm(
    net: Network,
    features: np.ndarray,
    mode: str,
    masks: Optional[MaskSet] = None,
    act_rng: Optional[SeededRng] = None,
    binary_states: bool = False,
    h0s: Optional[list] = None,
) -> np.ndarray:
    """Predicted {0,1} masks for a full feature sequence (no dropout)."""
    cache = forward_network(
        net, features, mode, masks=masks, act_rng=act_rng,
        binary_states=binary_states, h0s=h0s,
    )
    return ibm_from_prediction(cache.preds)


def predict_ibm_packed(pnet: PackedNetwork, features: np.ndarray) -> np.ndarray:
    return run_sequence(pnet, features)


@dataclass
class EvalRow:
    utterance: str
    sdr_mix: float
    sdr_est: float


def reconstruct(mix_spec: Spectrogram, ibm: np.ndarray) -> Waveform:
    return istft(apply_mask(mix_spec, ibm))


def score_pair(pair, ibm: np.ndarray) -> EvalRow:
    """SDR of the masked reconstruction vs the unprocessed mixture.

    Both are compared to the clean reference on the interior of the
    reconstructed span (one analysis window trimmed per side).
    """
    est = reconstruct(pair.mix_spec, ibm)
    w = pair.mix_spec.window_size
    n = len(est)
    if n <= 2 * w:
        raise StateError("utterance too short to score (needs > 2 windows)")
    sl = slice(w, n - w)
    ref = pair.clean.samples[sl]
    return EvalRow(
        utterance=pair.name,
        sdr_mix=sdr(ref, pair.mixture.samples[sl]),
        sdr_est=sdr(ref, est.samples[sl]),
    )


def evaluate_pairs(
    net: Network,
    pairs,
    mode: str,
    masks: Optional[MaskSet] = None,
    act_rng: Optional[SeededRng] = None,
    binary_states: bool = False,
) -> list[EvalRow]:
    rows = []
    for i, pair in enumerate(pairs):
        rng = act_rng.stream(f"pair:{i}") if act_rng is not None else None
        ibm = predict_ibm(net, pair.features, mode, masks=masks, act_rng=rng,
                          binary_states=binary_states)
        rows.append(score_pair(pair, ibm))
    return rows


def evaluate_pairs_packed(pnet: PackedNetwork, pairs) -> list[EvalRow]:
    return [score_pair(pair, predict_ibm_packed(pnet, pair.features)) for pair in pairs]


def mean_sdr(rows) -> float:
    return float(np.mean([r.sdr_est for r in rows]))


def median_sdr(rows) -> float:
    return float(np.median([r.sdr_est for r in rows]))
