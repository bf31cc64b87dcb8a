"""The detection head.

Pipeline per utterance: two projector stacks squeeze the raw frame features,
attentive statistical pooling summarizes them into one extra utterance row,
per-class channel attention vectors (CAVs) feed a first classifier, a learned
gate turns the CAVs into channel weights, and the gated, logit-masked feature
drives both the temporal class activation map and a second classifier over
split-pooled segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .errors import DimensionError, UsageError
from .featio import FeatureSeq
from .ndcore import EVAL, TRAIN, Param, RunningStats, Tensor

VAR_FLOOR = 1e-12  # keeps the pooled standard deviation differentiable at zero variance


@dataclass
class ModelDims:
    """Structural sizes of the head. t_prime counts the extra utterance row."""

    c_in: int
    hidden: int
    c: int
    k: int
    t_target: int
    use_utterance: bool = True

    @property
    def t_prime(self) -> int:
        return self.t_target + 1 if self.use_utterance else self.t_target


@dataclass
class StackParams:
    w: Param
    b: Param
    gamma: Param
    beta: Param
    running: RunningStats
    rate: float


@dataclass
class AttnPoolParams:
    """Frame scoring (shared weight vector + bias) and the 2C -> C projection."""

    w: Param
    b: Param
    proj_w: Param
    proj_b: Param


@dataclass
class CavParams:
    w_cav: Param  # T' x K, column k weights time steps for class k
    u: Param      # shared C -> 1 classifier weight
    b_z: Param    # per-class bias


@dataclass
class GateParams:
    w_gate: Param  # scalar temperature of the channel softmax


@dataclass
class TcaHeadParams:
    v: Param  # 2C x K
    b: Param  # K


@dataclass
class ModelOutput:
    """Everything one forward pass produces."""

    cav_logits: Tensor     # z, length K
    tca_logits: Tensor     # z', length K
    embedding: Tensor      # S, T' x C (frame rows plus optional utterance row)
    cav: Tensor            # A, K x C
    gate: Tensor           # M, C x K, columns sum to 1
    tca_feat: Tensor       # S', T' x C
    tca_map: np.ndarray    # T' x K per-frame, per-class activation
    attention: Tensor      # alpha, length T, sums to 1


class ModelParams:
    """All learnable state of the head, with stable parameter names."""

    def __init__(self, dims: ModelDims, class_names, dropout_rate: float,
                 bn_eps: float = 1e-5, bn_momentum: float = 0.1):
        if len(class_names) != dims.k:
            raise UsageError(f"{len(class_names)} class names for K={dims.k}")
        self.dims = dims
        self.class_names = tuple(class_names)
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum
        self.dropout_rate = dropout_rate
        self.stacks: list[StackParams] = []
        self.attn: AttnPoolParams | None = None
        self.cav: CavParams | None = None
        self.gate: GateParams | None = None
        self.head: TcaHeadParams | None = None

    @classmethod
    def init(cls, dims: ModelDims, class_names, dropout_rate: float,
             rng: np.random.Generator, bn_eps: float = 1e-5,
             bn_momentum: float = 0.1) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in)) weights, zero biases, unit gate."""
        m = cls(dims, class_names, dropout_rate, bn_eps, bn_momentum)

        def uni(fan_in, shape):
            s = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-s, s, size=shape)

        widths = [(dims.c_in, dims.hidden), (dims.hidden, dims.c)]
        for i, (w_in, w_out) in enumerate(widths):
            m.stacks.append(StackParams(
                w=Param(f"proj{i}.w", uni(w_in, (w_in, w_out))),
                b=Param(f"proj{i}.b", np.zeros(w_out)),
                gamma=Param(f"proj{i}.gamma", np.ones(w_out)),
                beta=Param(f"proj{i}.beta", np.zeros(w_out)),
                running=RunningStats.initial(w_out),
                rate=dropout_rate,
            ))
        c, k, tp = dims.c, dims.k, dims.t_prime
        m.attn = AttnPoolParams(
            w=Param("attn.w", uni(c, (c,))),
            b=Param("attn.b", np.zeros(())),
            proj_w=Param("attn.proj_w", uni(2 * c, (2 * c, c))),
            proj_b=Param("attn.proj_b", np.zeros(c)),
        )
        m.cav = CavParams(
            w_cav=Param("cav.w", uni(tp, (tp, k))),
            u=Param("cav.u", uni(c, (c,))),
            b_z=Param("cav.b", np.zeros(k)),
        )
        m.gate = GateParams(w_gate=Param("gate.w", np.ones(())))
        m.head = TcaHeadParams(
            v=Param("head.v", uni(2 * c, (2 * c, k))),
            b=Param("head.b", np.zeros(k)),
        )
        return m

    def parameters(self) -> list[Param]:
        ps: list[Param] = []
        for s in self.stacks:
            ps += [s.w, s.b, s.gamma, s.beta]
        ps += [self.attn.w, self.attn.b, self.attn.proj_w, self.attn.proj_b]
        ps += [self.cav.w_cav, self.cav.u, self.cav.b_z]
        ps += [self.gate.w_gate]
        ps += [self.head.v, self.head.b]
        names = [p.name for p in ps]
        assert len(names) == len(set(names))
        return ps

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus batch-norm running statistics, keyed by name."""
        out = {p.name: p.data.copy() for p in self.parameters()}
        for i, s in enumerate(self.stacks):
            out[f"proj{i}.run_mean"] = s.running.mean.copy()
            out[f"proj{i}.run_var"] = s.running.var.copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise UsageError(f"missing parameter {p.name!r}")
            src = np.asarray(arrays[p.name], dtype=np.float64)
            if src.shape != p.data.shape:
                raise DimensionError(
                    f"{p.name}: stored shape {src.shape} != expected {p.data.shape}")
            p.value.data[...] = src
        for i, s in enumerate(self.stacks):
            s.running.mean = np.array(arrays[f"proj{i}.run_mean"], dtype=np.float64)
            s.running.var = np.array(arrays[f"proj{i}.run_var"], dtype=np.float64)


# ---------------------------------------------------------------------------
# forward pieces


def projector_forward(raw: Tensor, params: ModelParams, mode: str,
                      rng: np.random.Generator | None = None) -> Tensor:
    """Two stacks of affine -> batch norm over frames -> ReLU -> dropout."""
    if raw.data.ndim != 2 or raw.data.shape[1] != params.dims.c_in:
        raise DimensionError(
            f"projector expects T x {params.dims.c_in}, got {raw.data.shape}")
    x = raw
    for s in params.stacks:
        x = nd.affine(x, s.w, s.b)
        x = nd.batch_norm(x, s.gamma, s.beta, s.running, mode,
                          eps=params.bn_eps, momentum=params.bn_momentum)
        x = nd.relu(x)
        x = nd.dropout(x, s.rate, mode, rng)
    return x


def attentive_scores(frames: Tensor, attn: AttnPoolParams) -> Tensor:
    """Per-frame weights: softmax over t of tanh(w . frame_t + b)."""
    t, c = frames.data.shape
    scores = nd.tanh(nd.add(nd.matmul(frames, nd.reshape(attn.w.value, (c, 1))), attn.b.value))
    return nd.reshape(nd.softmax_axis(scores, 0), (t,))


def attentive_stats(frames: Tensor, alpha: Tensor) -> tuple[Tensor, Tensor]:
    """Attention-weighted mean and standard deviation across frames."""
    t, c = frames.data.shape
    row = nd.reshape(alpha, (1, t))
    mean = nd.matmul(row, frames)                       # 1 x C
    second = nd.matmul(row, nd.mul(frames, frames))     # 1 x C
    var = nd.relu(nd.sub(second, nd.mul(mean, mean)))   # clamp rounding negatives
    std = nd.sqrt(nd.add(var, VAR_FLOOR))
    return nd.reshape(mean, (c,)), nd.reshape(std, (c,))


def project_utterance(mean: Tensor, std: Tensor, attn: AttnPoolParams) -> Tensor:
    """Concatenate weighted stats and project 2C -> C into one utterance row."""
    c = mean.data.shape[0]
    stats = nd.reshape(nd.concat([mean, std], axis=0), (1, 2 * c))
    return nd.affine(stats, attn.proj_w, attn.proj_b)   # 1 x C


def build_embedding(frames: Tensor, attn: AttnPoolParams, use_utterance: bool) -> Tensor:
    """Frame rows with the projected utterance row appended last (when enabled)."""
    if not use_utterance:
        return frames
    alpha = attentive_scores(frames, attn)
    mean, std = attentive_stats(frames, alpha)
    return nd.concat([frames, project_utterance(mean, std, attn)], axis=0)


def cav_forward(embedding: Tensor, cav: CavParams) -> Tensor:
    """Per-class channel attention vectors: A[k] = sum_t w_cav[t, k] * S[t]."""
    if cav.w_cav.data.shape[0] != embedding.data.shape[0]:
        raise DimensionError(
            f"w_cav has {cav.w_cav.data.shape[0]} rows, embedding {embedding.data.shape[0]}")
    return nd.matmul(nd.transpose(cav.w_cav.value), embedding)  # K x C


def cav_classify(cav_vectors: Tensor, cav: CavParams) -> Tensor:
    """One shared C -> 1 map per class plus per-class bias."""
    k, c = cav_vectors.data.shape
    scores = nd.matmul(cav_vectors, nd.reshape(cav.u.value, (c, 1)))
    return nd.add(nd.reshape(scores, (k,)), cav.b_z.value)


def gate_channels(cav_vectors: Tensor, gate: GateParams) -> Tensor:
    """Channel softmax of the scaled CAVs; column k sums to 1."""
    scaled = nd.mul(gate.w_gate.value, nd.transpose(cav_vectors))  # C x K
    return nd.softmax_axis(scaled, 0)


def tca_feature(embedding: Tensor, gate: Tensor, logits: Tensor) -> Tensor:
    """S'[t, c] = S[t, c] * sum_k z[k] * M[c, k]; raw logits act as the class mask."""
    k = logits.data.shape[0]
    channel_weights = nd.matmul(gate, nd.reshape(logits, (k, 1)))  # C x 1
    return nd.mul(embedding, nd.transpose(channel_weights))        # broadcast over rows


def split_pool_classify(tca_feat: Tensor, head: TcaHeadParams, use_utterance: bool,
                        t: int) -> Tensor:
    """Average the frame segment, keep the utterance row, classify the pair."""
    c = tca_feat.data.shape[1]
    pooled = nd.tmean(nd.slice_rows(tca_feat, 0, t), axis=0)  # C
    if use_utterance:
        utt = nd.reshape(nd.slice_rows(tca_feat, t, t + 1), (c,))
    else:
        utt = Tensor(np.zeros(c))
    both = nd.reshape(nd.concat([pooled, utt], axis=0), (1, 2 * c))
    k = head.b.data.shape[0]
    return nd.add(nd.reshape(nd.matmul(both, head.v.value), (k,)), head.b.value)


def tca_map_values(embedding: np.ndarray, gate: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Per-frame, per-class activation: map[t, k] = z[k] * sum_c S[t, c] * M[c, k]."""
    return (embedding @ gate) * logits[None, :]


def model_forward(seq: FeatureSeq, params: ModelParams, mode: str,
                  rng: np.random.Generator | None = None) -> ModelOutput:
    """Run the full head on one length-normalized utterance."""
    if mode not in (TRAIN, EVAL):
        raise UsageError(f"unknown mode {mode!r}")
    if seq.t != params.dims.t_target:
        raise DimensionError(
            f"utterance {seq.utt_id!r} has {seq.t} frames; model expects "
            f"{params.dims.t_target} (normalize with fix_length first)")
    frames = projector_forward(seq.frames, params, mode, rng)
    alpha = attentive_scores(frames, params.attn)
    if params.dims.use_utterance:
        mean, std = attentive_stats(frames, alpha)
        embedding = nd.concat([frames, project_utterance(mean, std, params.attn)], axis=0)
    else:
        embedding = frames
    cav_vectors = cav_forward(embedding, params.cav)
    cav_logits = cav_classify(cav_vectors, params.cav)
    gate = gate_channels(cav_vectors, params.gate)
    tca_feat = tca_feature(embedding, gate, cav_logits)
    tca_logits = split_pool_classify(tca_feat, params.head, params.dims.use_utterance,
                                     params.dims.t_target)
    return ModelOutput(
        cav_logits=cav_logits,
        tca_logits=tca_logits,
        embedding=embedding,
        cav=cav_vectors,
        gate=gate,
        tca_feat=tca_feat,
        tca_map=tca_map_values(embedding.data, gate.data, cav_logits.data),
        attention=alpha,
    )
