"""Bitwise GRU networks for single-channel speech denoising.

Two-round training (tanh-compressed pretraining, then incremental
binarization under sparsity and Bernoulli masks) plus a fully bit-packed
XNOR/popcount inference engine for the final binarized network.
"""

__version__ = "0.1.0"

from .audio import Waveform, Spectrogram, stft, istft, mix_at_0db, apply_mask, sdr
from .gru import (
    GruLayer,
    Network,
    OutputLayer,
    MaskSet,
    build_scaled_sparsity_mask,
    bgru_forward,
    compressed_forward,
    gru_forward,
    init_network,
)
from .bitkernel import (
    PackedBipolarVector,
    PackedGateVector,
    PackedTernaryMatrix,
    bgru_infer_step,
    bit_mux,
    masked_xnor_dot,
    pack_network,
    pack_ternary,
    xnor_dot,
)
from .numerics import Mat, SeededRng, bernoulli_matrix, finite_diff_grad, matmul
from .quantizer import QadCodebook, QadFrame, compute_ibm, fit_lloyd_max, qad_encode
from .trainer import (
    AdamState,
    LossReport,
    TrainConfig,
    adam_step,
    apply_dropout,
    bptt_round1,
    bptt_round2,
    loss_mse_bipolar,
    train_round1,
    train_round2,
)

__all__ = [name for name in dir() if not name.startswith("_")]
