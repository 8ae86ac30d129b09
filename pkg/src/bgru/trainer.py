"""Truncated backprop-through-time training for both rounds.

Round 1 pretrains the tanh-compressed network; round 2 walks the Bernoulli
binarization fraction pi up a schedule, rebuilding the sparsity masks from
the current weights at each stage and resampling the weight-C masks every
iteration.  All gradients are hand-derived; the finite-difference oracle in
`numerics` checks them in the test suite.

Determinism contract: every random draw (init, batch order, masks, dropout)
comes from a named stream derived from (seed, stage, epoch, sequence index),
so identical config + seed reproduce identical weights and loss reports bit
for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, ShapeError, StateError
from .gru import (
    GRU_MATRIX_NAMES,
    MaskSet,
    Network,
    NetworkCache,
    build_mask_set,
    forward_network,
    init_network,
    network_effective_weights,
    sigmoid_deriv,
    tanh_deriv,
)
from .numerics import Mat, SeededRng

ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Hyperparameters for both training rounds.

    Defaults follow the reference recipe: truncation length 50, sparsity
    0.8, Adam betas (0.4, 0.9), minibatch 10, input/hidden dropout
    0.05/0.2, and a pi schedule rising by 0.1 from 0.1 to 1.0 with the
    learning rate halved at each increment from pi = 0.8 on.
    """

    T: int = 50
    rho: float = 0.8
    adam_beta1: float = 0.4
    adam_beta2: float = 0.9
    learning_rate: float = 1e-3
    lr_damping: float = 0.5
    damp_from_pi: float = 0.8
    minibatch: int = 10
    dropout_input: float = 0.05
    dropout_hidden: float = 0.2
    pi_schedule: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    epochs_round1: int = 100
    epochs_per_pi: int = 1000
    epochs_final_pi: int = 100
    eval_every: int = 10
    early_stop_patience: int = 3
    grad_clip: float = 5.0
    round1_binary_states: bool = False
    mask_scope: str = "per_matrix"
    units: int = 1024
    layers: int = 1
    seed: int = 1234

    def validate(self) -> "TrainConfig":
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must be in (0,1], got {self.rho}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ConfigError(f"{name} must be in (0,1), got {b}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.minibatch < 1:
            raise ConfigError("minibatch must be >= 1")
        for name in ("dropout_input", "dropout_hidden"):
            r = getattr(self, name)
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"{name} must be in [0,1), got {r}")
        sched = tuple(float(p) for p in self.pi_schedule)
        if not sched or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ConfigError("pi_schedule must be strictly ascending")
        if any(not 0.0 < p <= 1.0 for p in sched):
            raise ConfigError("pi_schedule values must lie in (0,1]")
        if sched[-1] != 1.0:
            raise ConfigError("pi_schedule must end at 1.0")
        if self.units < 1 or self.layers < 1:
            raise ConfigError("units and layers must be >= 1")
        if self.mask_scope not in ("per_matrix", "per_layer"):
            raise ConfigError(f"unknown mask_scope {self.mask_scope!r}")
        return self


@dataclass
class AdamState:
    m: Mat
    v: Mat
    step: int
    beta1: float
    beta2: float

    @classmethod
    def zeros(cls, shape, beta1: float, beta2: float) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), step=0,
                   beta1=beta1, beta2=beta2)


def adam_step(
    param: Mat, grad: Mat, st: AdamState, lr: float
) -> tuple[Mat, AdamState]:
    """One bias-corrected Adam update; returns the new parameter and state."""
    if param.shape != grad.shape or param.shape != st.m.shape:
        raise ShapeError(
            f"adam shapes disagree: param {param.shape}, grad {grad.shape}"
        )
    step = st.step + 1
    m = st.beta1 * st.m + (1.0 - st.beta1) * grad
    v = st.beta2 * st.v + (1.0 - st.beta2) * grad * grad
    m_hat = m / (1.0 - st.beta1**step)
    v_hat = v / (1.0 - st.beta2**step)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_param, AdamState(m=m, v=v, step=step, beta1=st.beta1, beta2=st.beta2)


@dataclass
class LossReport:
    epoch: int
    pi: Optional[float]
    loss: float
    grad_norm: float
    val_sdr: Optional[float] = None

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return f"{self.epoch},{fmt(self.pi)},{fmt(self.loss)},{fmt(self.grad_norm)},{fmt(self.val_sdr)}"


LOSS_CSV_HEADER = "epoch,pi,loss,grad_norm,val_sdr"


def loss_mse_bipolar(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error against {-1,+1} targets, averaged over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    if not np.all(np.abs(target) == 1.0):
        raise DomainError("targets must be bipolar (-1 or +1)")
    return float(np.mean((pred - target) ** 2))


def dropout_mask(rng: SeededRng, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability rate, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0,1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.gen.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def apply_dropout(x: np.ndarray, rate: float, rng: SeededRng, training: bool = True):
    """Inverted dropout; the identity map at evaluation time."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0,1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(rng, x.shape, rate)


# ---------------------------------------------------------------------------
# backpropagation through time


def _cell_bptt(states, maps, delta_ext):
    """Backward pass of one GRU layer over a cached sequence.

    ``delta_ext[t]`` is dL/dh(t) arriving from the output stage and upper
    layers.  Returns per-matrix gradients w.r.t. the effective matrices and
    dL/dx(t) for routing into the layer below.  Activation derivatives are
    evaluated on the cached pre-activations, which is both the exact chain
    rule for the soft forwards and the straight-through convention for the
    hard ones.
    """
    T = len(states)
    D = states[0].x.size
    grads = {
        "Wr": np.zeros_like(maps["Wr"]),
        "Ur": np.zeros_like(maps["Ur"]),
        "Wz": np.zeros_like(maps["Wz"]),
        "Uz": np.zeros_like(maps["Uz"]),
        "Wh": np.zeros_like(maps["Wh"]),
        "Uh": np.zeros_like(maps["Uh"]),
    }
    delta_x = np.zeros((T, D))
    carry = np.zeros(states[0].h.size)
    for t in range(T - 1, -1, -1):
        st = states[t]
        dh = delta_ext[t] + carry
        dV = dh * (1.0 - st.z) * tanh_deriv(st.V)
        da_z = dh * (st.h_prev - st.h_tilde) * sigmoid_deriv(st.a_z)
        dg = maps["Uh"].T @ dV
        da_r = dg * st.g_h * sigmoid_deriv(st.a_r)
        grads["Wh"] += np.outer(dV, st.x)
        grads["Uh"] += np.outer(dV, st.g)
        grads["Wz"] += np.outer(da_z, st.x)
        grads["Uz"] += np.outer(da_z, st.h_prev)
        grads["Wr"] += np.outer(da_r, st.x)
        grads["Ur"] += np.outer(da_r, st.h_prev)
        delta_x[t] = maps["Wr"].T @ da_r + maps["Wz"].T @ da_z + maps["Wh"].T @ dV
        via_g = dg * st.r
        if st.g_dh is not None:
            via_g = via_g * st.g_dh
        carry = dh * st.z + maps["Uz"].T @ da_z + maps["Ur"].T @ da_r + via_g
    return grads, delta_x


def network_gradients(
    net: Network,
    cache: NetworkCache,
    targets_bipolar: np.ndarray,
    masks: Optional[MaskSet] = None,
) -> tuple[dict, float]:
    """Gradients of the bipolar MSE loss w.r.t. the real-valued weights.

    For the compressed forward the tanh wrapper contributes the factor
    (1 - tanh^2(W)); the partly binarized forward additionally multiplies by
    the mask factor B*C + (1-C), and only the real weights receive updates.
    """
    targets = np.asarray(targets_bipolar, dtype=np.float64)
    loss = loss_mse_bipolar(cache.preds, targets)
    T, F = cache.preds.shape

    dldp = 2.0 * (cache.preds - targets) / (T * F)
    do = dldp * tanh_deriv(cache.logits)

    m_grads = {"out.Wo": do.T @ cache.top_input}
    Mo = cache.eff_maps["out.Wo"]
    delta = do @ Mo
    if cache.hidden_masks is not None:
        delta = delta * cache.hidden_masks[-1]

    for i in range(len(net.layers) - 1, -1, -1):
        maps = {n: cache.eff_maps[f"l{i}.{n}"] for n in GRU_MATRIX_NAMES}
        layer_grads, delta_x = _cell_bptt(cache.layer_states[i], maps, delta)
        for n, g in layer_grads.items():
            m_grads[f"l{i}.{n}"] = g
        if i > 0:
            delta = delta_x
            if cache.hidden_masks is not None:
                delta = delta * cache.hidden_masks[i - 1]

    mats = net.matrices()
    grads = {}
    for name, gm in m_grads.items():
        W = mats[name]
        if cache.mode == "real":
            grads[name] = gm
            continue
        g = gm * tanh_deriv(W)
        if cache.mode == "bgru":
            wm = masks.masks[name]
            g = g * (wm.B * wm.C + (1.0 - wm.C))
        grads[name] = g
    return grads, loss


def bptt_round1(net: Network, cache: NetworkCache, targets_bipolar) -> tuple[dict, float]:
    """Round-1 gradients; requires states cached from a compressed forward."""
    if cache is None or cache.mode != "compressed":
        raise StateError("round-1 backward needs a compressed-forward cache")
    return network_gradients(net, cache, targets_bipolar)


def bptt_round2(
    net: Network, cache: NetworkCache, targets_bipolar, masks: MaskSet
) -> tuple[dict, float]:
    """Round-2 gradients; the cache must come from the same mask set."""
    if cache is None or cache.mode != "bgru":
        raise StateError("round-2 backward needs a bgru-forward cache")
    if cache.masks is not masks:
        raise StateError("mask set does not match the cached forward pass")
    return network_gradients(net, cache, targets_bipolar, masks=masks)


# ---------------------------------------------------------------------------
# sequence preparation and the epoch loop


@dataclass(frozen=True)
class TrainSequence:
    x: np.ndarray
    y: np.ndarray
    clean_id: str
    noise_id: str
    segment_id: int
    uid: int = -1


def make_sequences(pairs, T: int) -> list[TrainSequence]:
    """Chop utterance pairs into non-overlapping length-T training windows.

    Trailing frames shorter than T are dropped.  Sequences are ordered by
    (clean id, segment, noise id) so that with a minibatch equal to the
    noise count each batch holds one clean signal under all noises.
    """
    seqs = []
    for pair in pairs:
        n = pair.features.shape[0]
        y_bip = 2.0 * pair.targets - 1.0
        for s in range(n // T):
            lo = s * T
            seqs.append(
                TrainSequence(
                    x=pair.features[lo : lo + T],
                    y=y_bip[lo : lo + T],
                    clean_id=str(pair.clean_id),
                    noise_id=str(pair.noise_id),
                    segment_id=s,
                )
            )
    seqs.sort(key=lambda s: (s.clean_id, s.segment_id, s.noise_id))
    return [replace(s, uid=i) for i, s in enumerate(seqs)]


def _global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def _clip_matrix(g: Mat, max_norm: float) -> Mat:
    norm = float(np.linalg.norm(g))
    if max_norm > 0 and norm > max_norm:
        return g * (max_norm / norm)
    return g


class _Optimizer:
    """Per-matrix Adam with L2 gradient clipping."""

    def __init__(self, net: Network, cfg: TrainConfig):
        self.cfg = cfg
        self.states = {
            name: AdamState.zeros(m.shape, cfg.adam_beta1, cfg.adam_beta2)
            for name, m in net.matrices().items()
        }

    def update(self, net: Network, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            g = _clip_matrix(g, self.cfg.grad_clip)
            new_param, self.states[name] = adam_step(
                net.matrices()[name], g, self.states[name], lr
            )
            net.set_matrix(name, new_param)


def _sequence_dropout(cfg: TrainConfig, net: Network, rng: SeededRng, T: int):
    in_mask = dropout_mask(rng, (T, net.input_dim), cfg.dropout_input)
    hidden = [
        dropout_mask(rng, (T, layer.units), cfg.dropout_hidden)
        for layer in net.layers
    ]
    return in_mask, hidden


def _run_epoch(
    net: Network,
    seqs: list,
    cfg: TrainConfig,
    rng: SeededRng,
    opt: _Optimizer,
    lr: float,
    tag: str,
    epoch: int,
    base_masks: Optional[MaskSet] = None,
) -> tuple[float, float]:
    """One pass over all minibatches; returns (mean loss, mean grad norm)."""
    nb = math.ceil(len(seqs) / cfg.minibatch)
    order = rng.stream(f"{tag}:order:{epoch}").permutation(nb)
    losses = []
    norms = []
    for b in order:
        batch = seqs[b * cfg.minibatch : (b + 1) * cfg.minibatch]
        masks = None
        eff = None
        if base_masks is not None:
            masks = base_masks.with_fresh_c(rng.stream(f"{tag}:wc:{epoch}:{b}"))
            eff = network_effective_weights(net, masks)
        grads = None
        loss_sum = 0.0
        for seq in batch:
            drop_rng = rng.stream(f"{tag}:drop:{epoch}:{seq.uid}")
            in_mask, hidden_masks = _sequence_dropout(cfg, net, drop_rng, seq.x.shape[0])
            if masks is None:
                cache = forward_network(
                    net, seq.x, "compressed",
                    binary_states=cfg.round1_binary_states,
                    input_mask=in_mask, hidden_masks=hidden_masks,
                )
                g, loss = bptt_round1(net, cache, seq.y)
            else:
                act_rng = rng.stream(f"{tag}:act:{epoch}:{seq.uid}")
                cache = forward_network(
                    net, seq.x, "bgru", masks=masks, act_rng=act_rng,
                    input_mask=in_mask, hidden_masks=hidden_masks, eff=eff,
                )
                g, loss = bptt_round2(net, cache, seq.y, masks)
            loss_sum += loss
            if grads is None:
                grads = g
            else:
                for name in grads:
                    grads[name] += g[name]
        scale = 1.0 / len(batch)
        grads = {name: g * scale for name, g in grads.items()}
        norms.append(_global_norm(grads))
        opt.update(net, grads, lr)
        losses.append(loss_sum * scale)
    return float(np.mean(losses)), float(np.mean(norms))


def train_round1(
    config: TrainConfig,
    pairs,
    val_pairs=None,
    progress: Optional[Callable] = None,
) -> tuple[Network, list[LossReport]]:
    """Pretrain the tanh-compressed network on quantized bipolar inputs."""
    cfg = config.validate()
    if not pairs:
        raise ConfigError("training dataset is empty")
    rng = SeededRng(cfg.seed)
    D = pairs[0].features.shape[1]
    F = pairs[0].targets.shape[1]
    net = init_network(rng.stream("init"), D, cfg.units, F, cfg.layers)
    seqs = make_sequences(pairs, cfg.T)
    if not seqs:
        raise ConfigError(
            f"no training sequences: utterances shorter than T={cfg.T} frames"
        )
    opt = _Optimizer(net, cfg)
    reports = []
    for epoch in range(1, cfg.epochs_round1 + 1):
        loss, gnorm = _run_epoch(net, seqs, cfg, rng, opt, cfg.learning_rate,
                                 "r1", epoch)
        val = None
        if val_pairs is not None and epoch == cfg.epochs_round1:
            val = evaluate_compressed_sdr(net, val_pairs, cfg)
        reports.append(LossReport(epoch=epoch, pi=None, loss=loss,
                                  grad_norm=gnorm, val_sdr=val))
        if progress is not None:
            progress(reports[-1])
    return net, reports


def train_round2(
    config: TrainConfig,
    pretrained: Network,
    pairs,
    val_pairs=None,
    snapshot_hook: Optional[Callable] = None,
    progress: Optional[Callable] = None,
) -> tuple[Network, MaskSet, list[LossReport]]:
    """Incrementally binarize a pretrained network along the pi schedule.

    Per stage: the sparsity masks are rebuilt from the current real weights
    and frozen; weight-C masks are resampled every iteration and
    activation-C masks every timestep; the learning rate is multiplied by
    ``lr_damping`` at each increment from ``damp_from_pi`` on.  The final
    stage runs ``epochs_final_pi`` epochs with early stopping on validation
    SDR (restoring the best weights).  Returns the final network, the
    finalized all-bitwise mask set (C forced to 1) used to pack it, and the
    per-epoch reports with one evaluation row (val_sdr filled) per stage.
    """
    cfg = config.validate()
    if not pairs:
        raise ConfigError("training dataset is empty")
    net = pretrained.copy()
    rng = SeededRng(cfg.seed)
    seqs = make_sequences(pairs, cfg.T)
    if not seqs:
        raise ConfigError(
            f"no training sequences: utterances shorter than T={cfg.T} frames"
        )
    reports = []
    lr = cfg.learning_rate
    schedule = tuple(float(p) for p in cfg.pi_schedule)
    final_masks = None
    for si, pi in enumerate(schedule):
        is_final = si == len(schedule) - 1
        if si > 0 and pi >= cfg.damp_from_pi:
            lr *= cfg.lr_damping
        base_masks = build_mask_set(
            net, cfg.rho, pi, rng.stream(f"r2:mask:{si}"), cfg.mask_scope
        )
        epochs = cfg.epochs_final_pi if is_final else cfg.epochs_per_pi
        opt = _Optimizer(net, cfg)
        best_net = None
        best_sdr = -math.inf
        degraded = 0
        last = LossReport(epoch=0, pi=pi, loss=math.nan, grad_norm=math.nan)
        for epoch in range(1, epochs + 1):
            loss, gnorm = _run_epoch(net, seqs, cfg, rng, opt, lr,
                                     f"r2:{si}", epoch, base_masks=base_masks)
            last = LossReport(epoch=epoch, pi=pi, loss=loss, grad_norm=gnorm)
            reports.append(last)
            if progress is not None:
                progress(last)
            if is_final and val_pairs is not None and epoch % cfg.eval_every == 0:
                sdr = evaluate_bgru_sdr(
                    net, val_pairs, base_masks,
                    rng.stream(f"r2:earlystop:{epoch}"),
                )
                if sdr > best_sdr:
                    best_sdr = sdr
                    best_net = net.copy()
                    degraded = 0
                else:
                    degraded += 1
                    if degraded >= cfg.early_stop_patience:
                        break
        if is_final and best_net is not None:
            net = best_net
        # stage evaluation snapshot; the final stage is scored (and packed)
        # with masks rebuilt from the weights it ends up with, C forced to 1
        if is_final:
            final_masks = build_mask_set(
                net, cfg.rho, 1.0, rng.stream("r2:final-mask"), cfg.mask_scope
            ).with_constant_c(1.0)
            eval_masks = final_masks
        else:
            eval_masks = base_masks.with_fresh_c(rng.stream(f"r2:evalmask:{si}"))
        val = None
        if val_pairs is not None:
            val = evaluate_bgru_sdr(net, val_pairs, eval_masks,
                                    rng.stream(f"r2:eval:{si}"))
        reports.append(replace(last, val_sdr=val if val is not None else math.nan))
        if snapshot_hook is not None:
            snapshot_hook(pi, net.copy())
    return net, final_masks, reports


# SDR evaluation lives in `pipeline`; imported late to avoid a cycle.


def evaluate_compressed_sdr(net: Network, pairs, cfg: TrainConfig) -> float:
    from .pipeline import evaluate_pairs, mean_sdr

    rows = evaluate_pairs(net, pairs, mode="compressed",
                          binary_states=cfg.round1_binary_states)
    return mean_sdr(rows)


def evaluate_bgru_sdr(net: Network, pairs, masks: MaskSet, act_rng: SeededRng) -> float:
    from .pipeline import evaluate_pairs, mean_sdr

    rows = evaluate_pairs(net, pairs, mode="bgru", masks=masks, act_rng=act_rng)
    return mean_sdr(rows)
