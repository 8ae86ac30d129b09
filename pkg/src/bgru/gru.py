"""GRU forward passes in three flavors plus binarization-mask machinery.

Three float-domain forwards share one cell structure:

* ``gru_forward``       -- plain real-valued GRU cell,
* ``compressed_forward``-- every weight matrix wrapped in tanh (the round-1
  pretraining network),
* ``bgru_forward``      -- partly binarized cell where weights blend a
  scaled ternary branch with the tanh branch under a Bernoulli mask, and
  activations blend their hard and soft versions per timestep.

Hard activations use sgn(0) = +1 throughout, so the binary sigmoid maps 0 to
1 and the binary tanh maps 0 to +1.

The bitwise branch of a blended weight is evaluated as mu * (T @ v) with T a
{-1,0,+1} matrix: the matmul then runs on exact small integers, which makes
the fully binarized forward (pi=1) agree bit for bit with the packed
XNOR/popcount engine in `bitkernel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DomainError, ShapeError, StateError
from .numerics import Mat, SeededRng, as_mat, bernoulli_matrix

GRU_MATRIX_NAMES = ("Wr", "Ur", "Wz", "Uz", "Wh", "Uh")


# ---------------------------------------------------------------------------
# activations


def act_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def act_tanh(x):
    return np.tanh(x)


def sign_unit(x):
    """sgn with sgn(0) = +1, returning exact -1.0 / +1.0 floats."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def act_bsigmoid(x):
    """Hard step (sgn(x)+1)/2 in {0,1}."""
    return np.where(np.asarray(x) >= 0, 1.0, 0.0)


def act_btanh(x):
    """Hard sign in {-1,+1}."""
    return sign_unit(x)


def sigmoid_deriv(pre):
    s = act_sigmoid(pre)
    return s * (1.0 - s)


def tanh_deriv(pre):
    t = np.tanh(pre)
    return 1.0 - t * t


# ---------------------------------------------------------------------------
# layers


@dataclass
class GruLayer:
    """One GRU layer: six weight matrices, no biases.

    W* are (units, input_dim); U* are (units, units).
    """

    Wr: Mat
    Ur: Mat
    Wz: Mat
    Uz: Mat
    Wh: Mat
    Uh: Mat

    def __post_init__(self):
        k, d = self.Wr.shape
        self.Wr = as_mat(self.Wr, k, d)
        self.Wz = as_mat(self.Wz, k, d)
        self.Wh = as_mat(self.Wh, k, d)
        self.Ur = as_mat(self.Ur, k, k)
        self.Uz = as_mat(self.Uz, k, k)
        self.Uh = as_mat(self.Uh, k, k)

    @property
    def units(self) -> int:
        return self.Wr.shape[0]

    @property
    def input_dim(self) -> int:
        return self.Wr.shape[1]

    @classmethod
    def init(cls, rng: SeededRng, input_dim: int, units: int) -> "GruLayer":
        def w(name, rows, cols):
            return rng.stream(name).normal((rows, cols), scale=1.0 / math.sqrt(cols))

        return cls(
            Wr=w("Wr", units, input_dim),
            Ur=w("Ur", units, units),
            Wz=w("Wz", units, input_dim),
            Uz=w("Uz", units, units),
            Wh=w("Wh", units, input_dim),
            Uh=w("Uh", units, units),
        )

    def matrices(self) -> dict[str, Mat]:
        return {name: getattr(self, name) for name in GRU_MATRIX_NAMES}

    def copy(self) -> "GruLayer":
        return GruLayer(**{n: m.copy() for n, m in self.matrices().items()})


@dataclass
class OutputLayer:
    """Dense map from the hidden state to F mask logits."""

    Wo: Mat

    def __post_init__(self):
        self.Wo = as_mat(self.Wo)

    @property
    def out_dim(self) -> int:
        return self.Wo.shape[0]

    @classmethod
    def init(cls, rng: SeededRng, units: int, out_dim: int) -> "OutputLayer":
        return cls(Wo=rng.stream("Wo").normal((out_dim, units), scale=1.0 / math.sqrt(units)))

    def copy(self) -> "OutputLayer":
        return OutputLayer(Wo=self.Wo.copy())


@dataclass
class Network:
    """A stack of GRU layers plus the output layer."""

    layers: list
    out: OutputLayer

    def __post_init__(self):
        if not self.layers:
            raise DomainError("network needs at least one GRU layer")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.input_dim != lower.units:
                raise ShapeError(
                    f"layer input dim {upper.input_dim} != lower units {lower.units}"
                )
        if self.out.Wo.shape[1] != self.layers[-1].units:
            raise ShapeError("output layer width does not match top GRU layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def out_dim(self) -> int:
        return self.out.out_dim

    def matrices(self) -> dict[str, Mat]:
        mats = {}
        for i, layer in enumerate(self.layers):
            for name, m in layer.matrices().items():
                mats[f"l{i}.{name}"] = m
        mats["out.Wo"] = self.out.Wo
        return mats

    def set_matrix(self, key: str, value: Mat) -> None:
        scope, name = key.split(".")
        if scope == "out":
            self.out.Wo = value
        else:
            setattr(self.layers[int(scope[1:])], name, value)

    def copy(self) -> "Network":
        return Network(layers=[l.copy() for l in self.layers], out=self.out.copy())


def init_network(
    rng: SeededRng, input_dim: int, units: int, out_dim: int, num_layers: int = 1
) -> Network:
    layers = []
    for i in range(num_layers):
        d = input_dim if i == 0 else units
        layers.append(GruLayer.init(rng.stream(f"layer{i}"), d, units))
    return Network(layers=layers, out=OutputLayer.init(rng.stream("out"), units, out_dim))


# ---------------------------------------------------------------------------
# scaled sparsity and Bernoulli masks


def build_scaled_sparsity_mask(W: Mat, rho: float) -> tuple[Mat, float, float]:
    """Mask holding the mean retained magnitude on the top-rho weights.

    Keeps the ceil(rho*N) largest |W| entries (ties broken toward the lower
    row-major index), returns (B, beta, mu) where beta is the smallest
    retained magnitude and mu the mean over retained magnitudes; B is mu on
    the retained set and 0 elsewhere.
    """
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"sparsity rho must be in (0, 1], got {rho}")
    W = as_mat(W)
    flat = np.abs(W).ravel()
    keep = math.ceil(rho * flat.size)
    order = np.argsort(-flat, kind="stable")
    kept = order[:keep]
    beta = float(flat[kept[-1]])
    mu = float(flat[kept].mean())
    B = np.zeros_like(flat)
    B[kept] = mu
    return B.reshape(W.shape), beta, mu


@dataclass(frozen=True)
class WeightMask:
    """Per-matrix scaled sparsity mask B ({0, mu}) and Bernoulli mask C ({0,1})."""

    B: Mat
    C: Mat
    beta: float
    mu: float


@dataclass(frozen=True)
class MaskSet:
    """Masks for every weight matrix in a network at one binarization level."""

    rho: float
    pi: float
    masks: dict

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise DomainError(f"binarization fraction pi must be in [0,1], got {self.pi}")

    def with_fresh_c(self, rng: SeededRng) -> "MaskSet":
        """Resample every weight-C (done once per training iteration)."""
        fresh = {}
        for name, wm in self.masks.items():
            rows, cols = wm.B.shape
            c = bernoulli_matrix(rng.stream(name), rows, cols, self.pi)
            fresh[name] = replace(wm, C=c)
        return MaskSet(rho=self.rho, pi=self.pi, masks=fresh)

    def with_constant_c(self, value: float) -> "MaskSet":
        fresh = {
            name: replace(wm, C=np.full_like(wm.B, float(value)))
            for name, wm in self.masks.items()
        }
        return MaskSet(rho=self.rho, pi=self.pi, masks=fresh)


def build_mask_set(
    net: Network,
    rho: float,
    pi: float,
    rng: SeededRng,
    scope: str = "per_matrix",
) -> MaskSet:
    """Build B for every matrix of the network and sample one C per matrix.

    ``scope`` selects whether the cutoff/scale pair is computed per matrix
    (default) or shared across the six GRU matrices of each layer (the
    output layer always gets its own pair).
    """
    if scope not in ("per_matrix", "per_layer"):
        raise DomainError(f"unknown mask scope {scope!r}")
    mats = net.matrices()
    masks = {}

    def add(name, B, beta, mu):
        rows, cols = B.shape
        C = bernoulli_matrix(rng.stream(f"c:{name}"), rows, cols, pi)
        masks[name] = WeightMask(B=B, C=C, beta=beta, mu=mu)

    if scope == "per_matrix":
        for name, W in mats.items():
            B, beta, mu = build_scaled_sparsity_mask(W, rho)
            add(name, B, beta, mu)
    else:
        for i in range(len(net.layers)):
            names = [f"l{i}.{n}" for n in GRU_MATRIX_NAMES]
            pooled = np.concatenate([np.abs(mats[n]).ravel() for n in names])
            keep = math.ceil(rho * pooled.size)
            order = np.argsort(-pooled, kind="stable")
            kept_flags = np.zeros(pooled.size, dtype=bool)
            kept_flags[order[:keep]] = True
            beta = float(pooled[order[keep - 1]])
            mu = float(pooled[order[:keep]].mean())
            offset = 0
            for n in names:
                W = mats[n]
                flags = kept_flags[offset : offset + W.size].reshape(W.shape)
                offset += W.size
                add(n, np.where(flags, mu, 0.0), beta, mu)
        B, beta, mu = build_scaled_sparsity_mask(mats["out.Wo"], rho)
        add("out.Wo", B, beta, mu)
    return MaskSet(rho=rho, pi=pi, masks=masks)


def blend_weight(W: Mat, B: Mat, C: Mat) -> Mat:
    """Partly binarized matrix: (sign(W) * B) * C + tanh(W) * (1 - C)."""
    if not (W.shape == B.shape == C.shape):
        raise ShapeError(f"shape mismatch: {W.shape}, {B.shape}, {C.shape}")
    return (sign_unit(W) * B) * C + act_tanh(W) * (1.0 - C)


def blend_activation(real_val, bin_val, C):
    """Per-element selection: bin_val where C=1, real_val where C=0."""
    real_val = np.asarray(real_val)
    bin_val = np.asarray(bin_val)
    C = np.asarray(C)
    if not (real_val.shape == bin_val.shape == C.shape):
        raise ShapeError(
            f"shape mismatch: {real_val.shape}, {bin_val.shape}, {C.shape}"
        )
    return bin_val * C + real_val * (1.0 - C)


@dataclass(frozen=True)
class EffectiveWeight:
    """A blended weight split into its exact branches.

    ``apply`` evaluates mu * (T @ v) + R @ v where T is the ternary bitwise
    branch (sign * nonzero * C) and R the real branch tanh(W) * (1-C).  M is
    the combined dense matrix used by backpropagation transposes.
    """

    T: Mat
    R: Mat
    mu: float
    M: Mat

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.mu * (self.T @ v) + self.R @ v


def effective_weight(W: Mat, wm: WeightMask, relaxed: bool = False) -> EffectiveWeight:
    if W.shape != wm.B.shape or W.shape != wm.C.shape:
        raise ShapeError(f"mask shape mismatch for weight of shape {W.shape}")
    if relaxed:
        # straight-through surrogate: the sign branch relaxes to tanh as well
        M = act_tanh(W) * (wm.B * wm.C + (1.0 - wm.C))
        return EffectiveWeight(T=np.zeros_like(W), R=M, mu=0.0, M=M)
    nonzero = (wm.B != 0).astype(np.float64)
    T = sign_unit(W) * nonzero * wm.C
    R = act_tanh(W) * (1.0 - wm.C)
    return EffectiveWeight(T=T, R=R, mu=wm.mu, M=wm.mu * T + R)


# ---------------------------------------------------------------------------
# cell states and forwards


@dataclass
class CellState:
    """Everything one timestep caches for backpropagation through time."""

    x: np.ndarray
    h_prev: np.ndarray
    a_r: np.ndarray
    a_z: np.ndarray
    V: np.ndarray
    r: np.ndarray
    z: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray
    g: np.ndarray
    g_h: np.ndarray
    g_dh: Optional[np.ndarray] = None
    c_r: Optional[np.ndarray] = None
    c_z: Optional[np.ndarray] = None
    c_h: Optional[np.ndarray] = None


def _check_seq(layer: GruLayer, x_seq: np.ndarray, h0) -> tuple[np.ndarray, np.ndarray]:
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[1] != layer.input_dim:
        raise ShapeError(
            f"input sequence shape {x_seq.shape} does not match layer input dim "
            f"{layer.input_dim}"
        )
    if h0 is None:
        h0 = np.zeros(layer.units)
    h0 = np.asarray(h0, dtype=np.float64)
    if h0.shape != (layer.units,):
        raise ShapeError(f"h0 shape {h0.shape} != ({layer.units},)")
    return x_seq, h0


def gru_forward(layer: GruLayer, x_seq: np.ndarray, h0=None) -> list[CellState]:
    """Plain real-valued GRU over a sequence; returns all cached states."""
    x_seq, h = _check_seq(layer, x_seq, h0)
    states = []
    for t in range(x_seq.shape[0]):
        x = x_seq[t]
        a_r = layer.Wr @ x + layer.Ur @ h
        a_z = layer.Wz @ x + layer.Uz @ h
        r = act_sigmoid(a_r)
        z = act_sigmoid(a_z)
        g = r * h
        V = layer.Wh @ x + layer.Uh @ g
        h_tilde = act_tanh(V)
        h_new = z * h + (1.0 - z) * h_tilde
        states.append(
            CellState(x=x, h_prev=h, a_r=a_r, a_z=a_z, V=V, r=r, z=z,
                      h_tilde=h_tilde, h=h_new, g=g, g_h=h)
        )
        h = h_new
    return states


def compressed_layer(layer: GruLayer) -> dict[str, Mat]:
    """tanh-wrapped copies of all six matrices (the round-1 effective weights)."""
    return {name: act_tanh(m) for name, m in layer.matrices().items()}


def compressed_forward(
    layer: GruLayer, x_seq: np.ndarray, h0=None, binary_states: bool = False,
    _eff: dict | None = None,
) -> list[CellState]:
    """Round-1 forward: gru_forward with every weight matrix wrapped in tanh.

    With ``binary_states`` the literal hard-state reading is used instead:
    the reset gate output is the hard step of its pre-activation and the
    previous hidden state enters the candidate term through a hard sign,
    while the propagated state stays real.
    """
    x_seq, h = _check_seq(layer, x_seq, h0)
    eff = compressed_layer(layer) if _eff is None else _eff
    states = []
    for t in range(x_seq.shape[0]):
        x = x_seq[t]
        a_r = eff["Wr"] @ x + eff["Ur"] @ h
        a_z = eff["Wz"] @ x + eff["Uz"] @ h
        z = act_sigmoid(a_z)
        if binary_states:
            r = act_bsigmoid(a_r)
            g_h = sign_unit(h)
            g_dh = tanh_deriv(h)
        else:
            r = act_sigmoid(a_r)
            g_h = h
            g_dh = None
        g = r * g_h
        V = eff["Wh"] @ x + eff["Uh"] @ g
        h_tilde = act_tanh(V)
        h_new = z * h + (1.0 - z) * h_tilde
        states.append(
            CellState(x=x, h_prev=h, a_r=a_r, a_z=a_z, V=V, r=r, z=z,
                      h_tilde=h_tilde, h=h_new, g=g, g_h=g_h, g_dh=g_dh)
        )
        h = h_new
    return states


def _act_mask(rng: Optional[SeededRng], pi: float, n: int) -> np.ndarray:
    if rng is None:
        raise StateError("bgru_forward needs an activation-mask RNG")
    return (rng.gen.random(n) < pi).astype(np.float64)


def bgru_forward(
    layer: GruLayer,
    eff: dict,
    x_seq: np.ndarray,
    h0,
    pi: float,
    act_rng: Optional[SeededRng],
    relaxed: bool = False,
) -> list[CellState]:
    """Round-2 forward with partly binarized weights and activations.

    ``eff`` maps the six matrix names to EffectiveWeight objects built from
    one fixed weight-C sample; activation-C vectors are drawn fresh per
    timestep and per site (reset, update, candidate) from ``act_rng``.  At
    pi=0 the outputs equal ``compressed_forward`` exactly; at pi=1 every
    gate is in {0,1}, every state in {-1,+1}, and the outputs match the
    packed engine bit for bit.

    ``relaxed`` swaps the hard activations for their soft counterparts
    (keeping all masks), producing the straight-through surrogate whose
    gradient the round-2 backward pass computes exactly.
    """
    if not 0.0 <= pi <= 1.0:
        raise DomainError(f"pi must be in [0,1], got {pi}")
    x_seq, h = _check_seq(layer, x_seq, h0)
    K = layer.units
    bsig = act_sigmoid if relaxed else act_bsigmoid
    btanh = act_tanh if relaxed else act_btanh
    states = []
    for t in range(x_seq.shape[0]):
        x = x_seq[t]
        c_r = _act_mask(act_rng, pi, K)
        c_z = _act_mask(act_rng, pi, K)
        c_h = _act_mask(act_rng, pi, K)
        a_r = eff["Wr"].apply(x) + eff["Ur"].apply(h)
        a_z = eff["Wz"].apply(x) + eff["Uz"].apply(h)
        r = blend_activation(act_sigmoid(a_r), bsig(a_r), c_r)
        z = blend_activation(act_sigmoid(a_z), bsig(a_z), c_z)
        g = r * h
        V = eff["Wh"].apply(x) + eff["Uh"].apply(g)
        h_tilde = blend_activation(act_tanh(V), btanh(V), c_h)
        h_new = z * h + (1.0 - z) * h_tilde
        states.append(
            CellState(x=x, h_prev=h, a_r=a_r, a_z=a_z, V=V, r=r, z=z,
                      h_tilde=h_tilde, h=h_new, g=g, g_h=h,
                      c_r=c_r, c_z=c_z, c_h=c_h)
        )
        h = h_new
    return states


def output_forward(
    out: OutputLayer,
    h: np.ndarray,
    mode: str,
    eff: Optional[EffectiveWeight] = None,
    c_out: Optional[np.ndarray] = None,
    relaxed: bool = False,
    _m: Optional[Mat] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Map a hidden state to (logits, prediction) under the given mode.

    mode 'real': raw Wo and tanh; 'compressed': tanh(Wo) and tanh; 'bgru':
    blended Wo and a per-frame blend of hard/soft tanh under c_out.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (out.Wo.shape[1],):
        raise ShapeError(f"hidden state shape {h.shape} != ({out.Wo.shape[1]},)")
    if mode == "real":
        o = (out.Wo if _m is None else _m) @ h
        return o, act_tanh(o)
    if mode == "compressed":
        o = (act_tanh(out.Wo) if _m is None else _m) @ h
        return o, act_tanh(o)
    if mode == "bgru":
        if eff is None or c_out is None:
            raise StateError("bgru output needs effective weights and c_out")
        o = eff.apply(h)
        btanh = act_tanh if relaxed else act_btanh
        return o, blend_activation(act_tanh(o), btanh(o), c_out)
    raise DomainError(f"unknown forward mode {mode!r}")


def ibm_from_prediction(pred: np.ndarray) -> np.ndarray:
    """Threshold bipolar predictions at 0 into a {0,1} mask (0 maps to 1)."""
    return (np.asarray(pred) >= 0).astype(np.float64)


# ---------------------------------------------------------------------------
# network-level forward


@dataclass
class NetworkCache:
    """Caches of one sequence forward: per-layer states, output stage, and the
    effective linear maps every backward transpose needs."""

    mode: str
    relaxed: bool
    layer_inputs: list
    layer_states: list
    top_input: np.ndarray
    logits: np.ndarray
    preds: np.ndarray
    c_out: Optional[np.ndarray]
    eff_maps: dict
    masks: Optional[MaskSet]
    hidden_masks: Optional[list]


def network_effective_weights(
    net: Network, masks: MaskSet, relaxed: bool = False
) -> dict:
    """EffectiveWeight per matrix name for one fixed weight-C sample."""
    mats = net.matrices()
    return {
        name: effective_weight(mats[name], masks.masks[name], relaxed=relaxed)
        for name in mats
    }


def forward_network(
    net: Network,
    x_seq: np.ndarray,
    mode: str,
    masks: Optional[MaskSet] = None,
    act_rng: Optional[SeededRng] = None,
    relaxed: bool = False,
    binary_states: bool = False,
    h0s: Optional[list] = None,
    input_mask: Optional[np.ndarray] = None,
    hidden_masks: Optional[list] = None,
    eff: Optional[dict] = None,
) -> NetworkCache:
    """Run a full stack forward over one sequence and cache everything.

    Dropout enters through pre-sampled multiplicative masks: ``input_mask``
    scales the input sequence and ``hidden_masks[i]`` scales layer i's
    hidden states on their way up (never on the recurrent path).
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2:
        raise ShapeError(f"expected (T, D) input sequence, got {x_seq.shape}")
    T = x_seq.shape[0]
    if h0s is None:
        h0s = [None] * len(net.layers)

    if mode == "bgru":
        if masks is None:
            raise StateError("bgru mode needs a MaskSet")
        if eff is None:
            eff = network_effective_weights(net, masks, relaxed=relaxed)
        eff_maps = {name: e.M for name, e in eff.items()}
    elif mode == "compressed":
        eff_maps = {}
        for i, layer in enumerate(net.layers):
            for name, m in compressed_layer(layer).items():
                eff_maps[f"l{i}.{name}"] = m
        eff_maps["out.Wo"] = act_tanh(net.out.Wo)
    elif mode == "real":
        eff_maps = dict(net.matrices())
    else:
        raise DomainError(f"unknown forward mode {mode!r}")

    layer_inputs = []
    layer_states = []
    cur = x_seq if input_mask is None else x_seq * input_mask
    for i, layer in enumerate(net.layers):
        layer_inputs.append(cur)
        if mode == "bgru":
            leff = {n: eff[f"l{i}.{n}"] for n in GRU_MATRIX_NAMES}
            states = bgru_forward(layer, leff, cur, h0s[i], masks.pi, act_rng,
                                  relaxed=relaxed)
        elif mode == "compressed":
            leff = {n: eff_maps[f"l{i}.{n}"] for n in GRU_MATRIX_NAMES}
            states = compressed_forward(layer, cur, h0s[i],
                                        binary_states=binary_states, _eff=leff)
        else:
            states = gru_forward(layer, cur, h0s[i])
        layer_states.append(states)
        hs = np.stack([st.h for st in states])
        if hidden_masks is not None:
            hs = hs * hidden_masks[i]
        cur = hs

    F = net.out_dim
    logits = np.empty((T, F))
    preds = np.empty((T, F))
    c_out = None
    out_eff = eff["out.Wo"] if mode == "bgru" else None
    out_map = eff_maps["out.Wo"]
    if mode == "bgru":
        c_out = np.empty((T, F))
    for t in range(T):
        co = None
        if mode == "bgru":
            co = _act_mask(act_rng, masks.pi, F)
            c_out[t] = co
        o, p = output_forward(net.out, cur[t], mode, eff=out_eff, c_out=co,
                              relaxed=relaxed, _m=out_map)
        logits[t] = o
        preds[t] = p

    return NetworkCache(
        mode=mode,
        relaxed=relaxed,
        layer_inputs=layer_inputs,
        layer_states=layer_states,
        top_input=cur,
        logits=logits,
        preds=preds,
        c_out=c_out,
        eff_maps=eff_maps,
        masks=masks,
        hidden_masks=hidden_masks,
    )
