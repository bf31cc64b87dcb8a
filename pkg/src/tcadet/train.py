"""Objectives, Adam with weight decay, the training loop, checkpoints.

Checkpoint file layout (little-endian):
    bytes 0-4   magic "TCAS1"
    bytes 5-8   uint32 header byte length
    header      UTF-8 JSON: version, config snapshot, model structure, best
                dev loss, epoch index, rng states, ordered parameter records
                (name, shape, byte length)
    blobs       raw float64 values in header order
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import ndcore as nd
from .errors import CheckpointError, ConfigError, UsageError
from .featio import FeatureSeq, fix_length, load_manifest, read_features
from .model import ModelDims, ModelParams, ModelOutput, model_forward
from .ndcore import EVAL, TRAIN, Param, Tensor
from .seeding import substream

CHECKPOINT_MAGIC = b"TCAS1"
CHECKPOINT_VERSION = 1

MULTILABEL_CLASSES = ("bonafide", "tts", "vc")
BINARY_CLASSES = ("bonafide", "spoof")


@dataclass
class TrainConfig:
    """Training recipe. Defaults follow the published recipe where one exists."""

    lr: float = 1e-5
    weight_decay: float = 1e-4
    epochs: int = 50
    batch_size: int = 10
    lambda1: float = 0.3
    lambda2: float = 0.7
    wce_weights: tuple = ()  # empty = per-mode default (8,1,1) / (8,1)
    mode: str = "multilabel"
    use_utterance: bool = True
    cav_loss_enabled: bool = True
    t_target: int = 200
    hidden: int = 512
    channels: int = 128
    dropout: float = 0.2
    seed: int = 42
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    decoupled_decay: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("multilabel", "binary"):
            raise ConfigError(f"mode must be multilabel or binary, got {self.mode!r}")
        if self.lr <= 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lr must be positive and loss weights non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.t_target < 1:
            raise ConfigError("epochs, batch_size and t_target must be sensible")
        if not self.wce_weights:
            self.wce_weights = (8.0, 1.0, 1.0) if self.mode == "multilabel" else (8.0, 1.0)
        self.wce_weights = tuple(float(w) for w in self.wce_weights)
        if len(self.wce_weights) != self.k or any(w <= 0 for w in self.wce_weights):
            raise ConfigError(
                f"need {self.k} positive class weights for mode {self.mode}, "
                f"got {self.wce_weights}")

    @property
    def class_names(self) -> tuple:
        return MULTILABEL_CLASSES if self.mode == "multilabel" else BINARY_CLASSES

    @property
    def k(self) -> int:
        return len(self.class_names)


def encode_label(label: str, config: TrainConfig) -> np.ndarray:
    """One-hot target for the configured mode; binary folds tts/vc into spoof."""
    names = config.class_names
    if config.mode == "binary" and label in ("tts", "vc"):
        label = "spoof"
    if label not in names:
        raise UsageError(f"label {label!r} not valid in mode {config.mode!r}")
    y = np.zeros(len(names))
    y[names.index(label)] = 1.0
    return y


def wce_loss(logits: Tensor, onehot: np.ndarray, weights) -> Tensor:
    """Weighted cross entropy: -(1/K) * w[true] * log softmax(logits)[true]."""
    weights = np.asarray(weights, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    k = logits.data.shape[0]
    if onehot.shape != (k,) or weights.shape != (k,):
        raise UsageError(
            f"labels/weights must have length {k}, got {onehot.shape}/{weights.shape}")
    if not (np.all((onehot == 0) | (onehot == 1)) and onehot.sum() == 1):
        raise UsageError(f"target must be one-hot, got {onehot}")
    if np.any(weights <= 0):
        raise UsageError("class weights must be positive")
    logp = nd.log_softmax_axis(logits, 0)
    return nd.mul(nd.tsum(nd.mul(logp, weights * onehot)), -1.0 / k)


def total_loss(l_cav: Tensor, l_tca: Tensor, config: TrainConfig) -> Tensor:
    """lambda1 * CAV loss + lambda2 * TCA loss; ablation drops the CAV term."""
    if not config.cav_loss_enabled:
        return l_tca
    return nd.add(nd.mul(l_cav, config.lambda1), nd.mul(l_tca, config.lambda2))


class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    def __init__(self, params):
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}
        self.t = 0


def adam_step(params, state: AdamState, config: TrainConfig) -> None:
    """Classic bias-corrected Adam; weight decay is coupled (added to the
    gradient) unless decoupled_decay is set."""
    state.t += 1
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        if config.weight_decay:
            if config.decoupled_decay:
                p.value.data *= 1.0 - config.lr * config.weight_decay
            else:
                g = g + config.weight_decay * p.value.data
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value.data -= config.lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class Checkpoint:
    """A trained model frozen at its best development epoch."""

    config: TrainConfig
    c_in: int
    arrays: dict
    best_dev_loss: float
    epoch: int
    rng_state: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def build(self) -> ModelParams:
        cfg = self.config
        dims = ModelDims(c_in=self.c_in, hidden=cfg.hidden, c=cfg.channels, k=cfg.k,
                         t_target=cfg.t_target, use_utterance=cfg.use_utterance)
        params = ModelParams(dims, cfg.class_names, cfg.dropout, cfg.bn_eps, cfg.bn_momentum)
        rng = np.random.default_rng(0)
        fresh = ModelParams.init(dims, cfg.class_names, cfg.dropout, rng,
                                 cfg.bn_eps, cfg.bn_momentum)
        fresh.load_state_arrays(self.arrays)
        return fresh


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = sorted(ckpt.arrays)
    header = {
        "version": ckpt.version,
        "config": asdict(ckpt.config),
        "c_in": ckpt.c_in,
        "best_dev_loss": ckpt.best_dev_loss,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "params": [
            {"name": n, "shape": list(ckpt.arrays[n].shape),
             "nbytes": int(np.asarray(ckpt.arrays[n]).size * 8)}
            for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(ckpt.arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:5] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {raw[:5]!r}")
    if len(raw) < 9:
        raise CheckpointError("truncated header")
    (header_len,) = struct.unpack_from("<I", raw, 5)
    if len(raw) < 9 + header_len:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(raw[9 : 9 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable header: {err}") from err
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {header.get('version')!r}")

    cfg_dict = dict(header["config"])
    cfg_dict["wce_weights"] = tuple(cfg_dict.get("wce_weights", ()))
    config = TrainConfig(**cfg_dict)

    arrays: dict = {}
    offset = 9 + header_len
    for rec in header["params"]:
        shape = tuple(rec["shape"])
        nbytes = int(rec["nbytes"])
        if nbytes != int(np.prod(shape, dtype=np.int64)) * 8:
            raise CheckpointError(f"{rec['name']}: byte length {nbytes} does not match {shape}")
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{rec['name']}: blob truncated at byte {len(raw)}")
        arrays[rec["name"]] = np.frombuffer(
            raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after blobs")
    return Checkpoint(
        config=config,
        c_in=int(header["c_in"]),
        arrays=arrays,
        best_dev_loss=float(header["best_dev_loss"]),
        epoch=int(header["epoch"]),
        rng_state=header.get("rng_state", {}),
    )


# ---------------------------------------------------------------------------
# dataset plumbing


@dataclass
class LabeledSeq:
    seq: FeatureSeq
    label: str
    attack_id: str
    onehot: np.ndarray


def load_dataset(manifest_path, config: TrainConfig) -> list[LabeledSeq]:
    entries = load_manifest(manifest_path)
    if not entries:
        raise UsageError(f"manifest {manifest_path} is empty")
    base = Path(manifest_path).parent
    out = []
    c_in = None
    for e in entries:
        seq = fix_length(read_features(base / e.path, utt_id=e.utt_id), config.t_target)
        if c_in is None:
            c_in = seq.c
        elif seq.c != c_in:
            raise UsageError(f"{e.utt_id}: channel count {seq.c} != {c_in}")
        out.append(LabeledSeq(seq, e.label, e.attack_id, encode_label(e.label, config)))
    return out


def utterance_loss(item: LabeledSeq, params: ModelParams, config: TrainConfig,
                   mode: str, rng=None) -> tuple[Tensor, ModelOutput]:
    if item.onehot.shape[0] != config.k:
        raise UsageError(
            f"{item.seq.utt_id}: target length {item.onehot.shape[0]} in {config.mode} mode")
    out = model_forward(item.seq, params, mode, rng)
    weights = np.asarray(config.wce_weights)
    l_cav = wce_loss(out.cav_logits, item.onehot, weights)
    l_tca = wce_loss(out.tca_logits, item.onehot, weights)
    return total_loss(l_cav, l_tca, config), out


@dataclass
class EvalRow:
    utt_id: str
    label: str      # manifest label
    expected: str   # label mapped into the active class set
    attack_id: str
    loss: float
    probs: np.ndarray
    predicted: str


def evaluate(dataset, params: ModelParams, config: TrainConfig) -> list[EvalRow]:
    """Deterministic eval-mode pass: per-utterance loss and class probabilities."""
    rows = []
    for item in dataset:
        loss, out = utterance_loss(item, params, config, EVAL)
        logits = out.tca_logits.data
        shifted = np.exp(logits - logits.max())
        probs = shifted / shifted.sum()
        rows.append(EvalRow(
            utt_id=item.seq.utt_id,
            label=item.label,
            expected=config.class_names[int(np.argmax(item.onehot))],
            attack_id=item.attack_id,
            loss=loss.item(),
            probs=probs,
            predicted=config.class_names[int(np.argmax(probs))],
        ))
    return rows


def accuracy(rows) -> float:
    return sum(1 for r in rows if r.predicted == r.expected) / len(rows)


def fit(train_manifest, dev_manifest, config: TrainConfig,
        on_epoch: Callable | None = None,
        on_batch: Callable | None = None) -> Checkpoint:
    """Train with seeded shuffling and keep the minimum-dev-loss parameters.

    The untrained model counts as epoch 0, so epochs=0 still yields a valid
    checkpoint with its dev loss recorded. Ties keep the earlier epoch.
    """
    train_set = load_dataset(train_manifest, config)
    dev_set = load_dataset(dev_manifest, config)
    c_in = train_set[0].seq.c
    if dev_set[0].seq.c != c_in:
        raise UsageError("train and dev feature widths differ")

    init_rng = substream(config.seed, "init")
    dropout_rng = substream(config.seed, "dropout")
    shuffle_rng = substream(config.seed, "shuffle")

    dims = ModelDims(c_in=c_in, hidden=config.hidden, c=config.channels, k=config.k,
                     t_target=config.t_target, use_utterance=config.use_utterance)
    params = ModelParams.init(dims, config.class_names, config.dropout, init_rng,
                              config.bn_eps, config.bn_momentum)
    plist = params.parameters()
    state = AdamState(plist)

    def dev_loss() -> float:
        return float(np.mean([r.loss for r in evaluate(dev_set, params, config)]))

    best_loss = dev_loss()
    best_epoch = 0
    best_arrays = params.state_arrays()
    if on_epoch is not None:
        on_epoch(0, float("nan"), best_loss)

    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            nd.zero_grads(plist)
            with nd.Tape() as tape:
                losses = [utterance_loss(item, params, config, TRAIN, dropout_rng)[0]
                          for item in batch]
                acc = losses[0]
                for extra in losses[1:]:
                    acc = nd.add(acc, extra)
                batch_loss = nd.mul(acc, 1.0 / len(batch))
                tape.backward(batch_loss)
            adam_step(plist, state, config)
            value = batch_loss.item()
            epoch_losses.append(value)
            if on_batch is not None:
                on_batch(epoch, start // config.batch_size, value)
        current = dev_loss()
        if current < best_loss:
            best_loss = current
            best_epoch = epoch
            best_arrays = params.state_arrays()
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(epoch_losses)), current)

    rng_state = {
        "init": init_rng.bit_generator.state,
        "dropout": dropout_rng.bit_generator.state,
        "shuffle": shuffle_rng.bit_generator.state,
    }
    return Checkpoint(config=replace(config), c_in=c_in, arrays=best_arrays,
                      best_dev_loss=best_loss, epoch=best_epoch, rng_state=rng_state)
