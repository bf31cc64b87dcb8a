"""Finite-difference verification of every layer and of the assembled head.

Used by the `gradcheck` CLI command and by the acceptance suite. Each check
returns its maximum relative gradient error; the suite passes when every
check stays at or below TOLERANCE.
"""

from __future__ import annotations

import numpy as np

from . import model as md
from . import ndcore as nd
from . import train as tr
from .featio import FeatureSeq
from .model import ModelDims, ModelParams, model_forward
from .ndcore import Param, Tensor
from .seeding import substream

TOLERANCE = 1e-4

# tiny but fully wired head: 6 frames, 4 embedding channels, 3 classes
TINY = ModelDims(c_in=5, hidden=6, c=4, k=3, t_target=6, use_utterance=True)


def _probe(rng, shape):
    return rng.normal(size=shape)


def layer_checks(seed: int = 42) -> list[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    results = []

    a = Param("a", _probe(rng, (3, 4)))
    b = Param("b", _probe(rng, (4, 2)))
    r = _probe(rng, (3, 2))
    results.append(("matmul", nd.grad_check(
        lambda: nd.tsum(nd.mul(nd.matmul(a.value, b.value), r)), [a, b])))

    w = Param("w", _probe(rng, (4, 3)))
    bias = Param("bias", _probe(rng, (3,)))
    x = Param("x", _probe(rng, (5, 4)))
    r2 = _probe(rng, (5, 3))
    results.append(("affine", nd.grad_check(
        lambda: nd.tsum(nd.mul(nd.affine(x.value, w, bias), r2)), [x, w, bias])))

    xb = Param("xb", _probe(rng, (6, 3)))
    gamma = Param("gamma", 1.0 + 0.2 * _probe(rng, (3,)))
    beta = Param("beta", 0.2 * _probe(rng, (3,)))
    rb = _probe(rng, (6, 3))

    def bn_loss():
        running = nd.RunningStats.initial(3)
        y = nd.batch_norm(xb.value, gamma, beta, running, nd.TRAIN)
        return nd.tsum(nd.mul(y, rb))

    results.append(("batch_norm", nd.grad_check(bn_loss, [xb, gamma, beta])))

    xd = Param("xd", _probe(rng, (5, 4)))
    rd = _probe(rng, (5, 4))

    def dropout_loss():
        masks = np.random.default_rng(seed + 1)  # same masks on every call
        y = nd.dropout(xd.value, 0.3, nd.TRAIN, masks)
        return nd.tsum(nd.mul(y, rd))

    results.append(("dropout", nd.grad_check(dropout_loss, [xd])))

    xt = Param("xt", _probe(rng, (4, 3)))
    rt = _probe(rng, (4, 3))
    results.append(("tanh", nd.grad_check(
        lambda: nd.tsum(nd.mul(nd.tanh(xt.value), rt)), [xt])))
    results.append(("relu", nd.grad_check(
        lambda: nd.tsum(nd.mul(nd.relu(xt.value), rt)), [xt])))
    results.append(("softmax", nd.grad_check(
        lambda: nd.tsum(nd.mul(nd.softmax_axis(xt.value, 1), rt)), [xt])))
    results.append(("log_softmax", nd.grad_check(
        lambda: nd.tsum(nd.mul(nd.log_softmax_axis(xt.value, 0), rt)), [xt])))

    logits = Param("logits", _probe(rng, (3,)))
    onehot = np.array([0.0, 1.0, 0.0])
    results.append(("wce_loss", nd.grad_check(
        lambda: tr.wce_loss(logits.value, onehot, np.array([8.0, 1.0, 1.0])), [logits])))

    return results


def block_checks(seed: int = 42) -> list[tuple[str, float]]:
    """Gradients through the head's sub-blocks, isolated from the projector."""
    rng = np.random.default_rng(seed + 2)
    params = ModelParams.init(TINY, ("bonafide", "tts", "vc"), 0.0,
                              substream(seed, "init"))
    frames = Param("frames", 0.5 + 0.5 * rng.random((TINY.t_target, TINY.c)))
    results = []

    r_alpha = _probe(rng, (TINY.t_target,))

    def attn_loss():
        alpha = md.attentive_scores(frames.value, params.attn)
        mean, std = md.attentive_stats(frames.value, alpha)
        utt = md.project_utterance(mean, std, params.attn)
        return nd.add(nd.tsum(nd.mul(alpha, r_alpha)), nd.tsum(utt))

    results.append(("attentive_pooling", nd.grad_check(
        attn_loss, [frames, params.attn.w, params.attn.b,
                    params.attn.proj_w, params.attn.proj_b])))

    emb = Param("emb", _probe(rng, (TINY.t_prime, TINY.c)))
    r_k = _probe(rng, (TINY.k,))

    def cav_loss():
        vectors = md.cav_forward(emb.value, params.cav)
        z = md.cav_classify(vectors, params.cav)
        return nd.tsum(nd.mul(z, r_k))

    results.append(("cav_classifier", nd.grad_check(
        cav_loss, [emb, params.cav.w_cav, params.cav.u, params.cav.b_z])))

    def tca_loss():
        vectors = md.cav_forward(emb.value, params.cav)
        z = md.cav_classify(vectors, params.cav)
        gate = md.gate_channels(vectors, params.gate)
        feat = md.tca_feature(emb.value, gate, z)
        z2 = md.split_pool_classify(feat, params.head, True, TINY.t_target)
        return nd.tsum(nd.mul(z2, r_k))

    results.append(("gate_tca_head", nd.grad_check(
        tca_loss, [emb, params.cav.w_cav, params.cav.u, params.cav.b_z,
                   params.gate.w_gate, params.head.v, params.head.b])))

    return results


def full_model_check(seed: int = 42, batch: int = 1) -> tuple[str, float]:
    """Gradient of the complete training loss on `batch` tiny utterances."""
    config = tr.TrainConfig(lr=1e-3, epochs=1, t_target=TINY.t_target,
                            hidden=TINY.hidden, channels=TINY.c,
                            dropout=0.2, seed=seed)
    params = ModelParams.init(TINY, config.class_names, config.dropout,
                              substream(seed, "init"))
    data_rng = np.random.default_rng(seed + 3)
    seqs = [FeatureSeq(f"probe{i}", Tensor(data_rng.normal(size=(TINY.t_target, TINY.c_in))))
            for i in range(batch)]
    labels = [tr.encode_label(lbl, config)
              for _, lbl in zip(range(batch), ["tts", "bonafide", "vc", "tts"])]
    weights = np.asarray(config.wce_weights)

    def loss():
        masks = np.random.default_rng(seed + 4)  # identical dropout draws per call
        total = None
        for seq, onehot in zip(seqs, labels):
            out = model_forward(seq, params, nd.TRAIN, masks)
            l = tr.total_loss(tr.wce_loss(out.cav_logits, onehot, weights),
                              tr.wce_loss(out.tca_logits, onehot, weights), config)
            total = l if total is None else nd.add(total, l)
        return nd.mul(total, 1.0 / batch)

    name = "full_model" if batch == 1 else f"full_model_batch{batch}"
    return name, nd.grad_check(loss, params.parameters())


def run_suite(seed: int = 42) -> list[tuple[str, float]]:
    results = layer_checks(seed)
    results += block_checks(seed)
    results.append(full_model_check(seed, batch=1))
    results.append(full_model_check(seed, batch=4))
    return results
