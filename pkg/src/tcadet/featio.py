"""Feature files, dataset manifests, length normalization, synthetic corpora.

Feature file layout (all little-endian):
    bytes 0-4   magic "FEAT1"
    bytes 5-8   uint32 frame count T
    bytes 9-12  uint32 channel count C
    bytes 13-   T*C float64 values, frame-major

Manifests are UTF-8 TSV with columns utt_id, path, label, attack_id; lines
starting with "#" are comments. Plant-mask files are TSV with utt_id,
start_frame, end_frame (inclusive, 0-based); utterances without a row have no
planted frames.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ParseError
from .ndcore import Tensor
from .seeding import substream

MAGIC = b"FEAT1"
LABELS = ("bonafide", "tts", "vc")
SPOOF_LABELS = ("tts", "vc")

# T*C is capped so a corrupted header cannot trigger a huge allocation
MAX_ELEMENTS = 10**8


@dataclass
class FeatureSeq:
    """One utterance's frame-level embedding plus identity metadata."""

    utt_id: str
    frames: Tensor
    frame_stride: float = 0.02

    def __post_init__(self):
        if not isinstance(self.frames, Tensor):
            self.frames = Tensor(self.frames)
        if self.frames.data.ndim != 2 or min(self.frames.data.shape) < 1:
            raise ConfigError(f"frames must be T x C with T,C >= 1, got {self.frames.data.shape}")

    @property
    def t(self) -> int:
        return self.frames.data.shape[0]

    @property
    def c(self) -> int:
        return self.frames.data.shape[1]


@dataclass
class ManifestEntry:
    utt_id: str
    path: str
    label: str
    attack_id: str


@dataclass
class SynthSpec:
    """Parameters of the synthetic labeled corpus."""

    n_per_class: int = 10
    t: int = 50
    c: int = 24
    window_len: int = 12
    noise_scale: float = 0.5
    seed: int = 42

    def __post_init__(self):
        if not (1 <= self.window_len <= self.t):
            raise ConfigError(f"window_len must lie in [1, {self.t}], got {self.window_len}")
        if self.n_per_class < 1 or self.c < 1 or self.noise_scale <= 0:
            raise ConfigError("n_per_class, channels and noise_scale must be positive")


@dataclass
class PlantMask:
    """Which frames of one utterance carry an injected artifact."""

    utt_id: str
    planted: np.ndarray  # bool, length T

    @property
    def any(self) -> bool:
        return bool(self.planted.any())


@dataclass
class CorpusInfo:
    """What synthesize_corpus wrote, plus the class signatures it used."""

    manifest_path: Path
    mask_path: Path
    entries: list[ManifestEntry]
    masks: dict[str, PlantMask]
    signatures: dict[str, np.ndarray] = field(default_factory=dict)


def write_features(seq: FeatureSeq, path) -> None:
    t, c = seq.frames.data.shape
    payload = seq.frames.data.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", t, c))
        fh.write(payload)


def read_features(path, utt_id: str | None = None, frame_stride: float = 0.02) -> FeatureSeq:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise FormatError(f"bad magic {raw[:5]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < 13:
        raise FormatError("truncated header", offset=len(raw))
    t, c = struct.unpack_from("<II", raw, 5)
    if t == 0 or c == 0:
        raise FormatError(f"dimensions must be positive, got {t}x{c}", offset=5)
    if t * c > MAX_ELEMENTS:
        raise FormatError(f"dimensions {t}x{c} exceed the element cap", offset=5)
    expected = 13 + t * c * 8
    if len(raw) != expected:
        which = "truncated payload" if len(raw) < expected else "trailing bytes after payload"
        raise FormatError(f"{which}: file has {len(raw)} bytes, header implies {expected}",
                          offset=min(len(raw), expected))
    data = np.frombuffer(raw, dtype="<f8", offset=13).reshape(t, c)
    return FeatureSeq(utt_id or Path(path).stem, Tensor(data), frame_stride)


def fix_length(seq: FeatureSeq, t_target: int) -> FeatureSeq:
    """Truncate to the first t_target frames or repeat cyclically from frame 0."""
    if t_target < 1:
        raise ConfigError(f"t_target must be >= 1, got {t_target}")
    t = seq.t
    if t == t_target:
        return seq
    frames = seq.frames.data
    if t > t_target:
        out = frames[:t_target].copy()
    else:
        reps = math.ceil(t_target / t)
        out = np.tile(frames, (reps, 1))[:t_target]
    return FeatureSeq(seq.utt_id, Tensor(out), seq.frame_stride)


def load_manifest(path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(f"expected 4 tab-separated columns, got {len(cols)}", lineno)
            utt_id, rel_path, label, attack_id = cols
            if label not in LABELS:
                raise ParseError(f"unknown label {label!r}", lineno)
            if utt_id in seen:
                raise ParseError(f"duplicate utt_id {utt_id!r} (first on line {seen[utt_id]})", lineno)
            if (label == "bonafide") != (attack_id == "-"):
                raise ParseError(
                    f"label {label!r} inconsistent with attack_id {attack_id!r}", lineno)
            seen[utt_id] = lineno
            entries.append(ManifestEntry(utt_id, rel_path, label, attack_id))
    return entries


def write_manifest(entries, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# columns: utt_id\tpath\tlabel\tattack_id\n")
        for e in entries:
            fh.write(f"{e.utt_id}\t{e.path}\t{e.label}\t{e.attack_id}\n")


def write_masks(masks, path) -> None:
    """TSV of planted windows; utterances with no planted frames are omitted."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# columns: utt_id\tstart_frame\tend_frame (inclusive, 0-based)\n")
        for m in masks:
            if not m.any:
                continue
            idx = np.flatnonzero(m.planted)
            fh.write(f"{m.utt_id}\t{idx[0]}\t{idx[-1]}\n")


def read_masks(path, t: int) -> dict[str, PlantMask]:
    out: dict[str, PlantMask] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(f"expected 3 tab-separated columns, got {len(cols)}", lineno)
            utt_id, start, end = cols[0], int(cols[1]), int(cols[2])
            if not (0 <= start <= end < t):
                raise ParseError(f"window [{start}, {end}] out of range for T={t}", lineno)
            planted = np.zeros(t, dtype=bool)
            planted[start : end + 1] = True
            out[utt_id] = PlantMask(utt_id, planted)
    return out


def class_signatures(c: int, seed: int) -> dict[str, np.ndarray]:
    """Unit-norm artifact directions for tts and vc, drawn once per seed.

    Redraws until the signature pair is well separated (cosine <= 0.5) so the
    two spoof classes stay distinguishable.
    """
    rng = substream(seed, "signatures")
    while True:
        p_tts = rng.standard_normal(c)
        p_tts /= np.linalg.norm(p_tts)
        p_vc = rng.standard_normal(c)
        p_vc /= np.linalg.norm(p_vc)
        if abs(float(p_tts @ p_vc)) <= 0.5:
            return {"tts": p_tts, "vc": p_vc}


ATTACK_IDS = {"tts": "T01", "vc": "V01", "bonafide": "-"}


def spread_total(total: int) -> dict[str, int]:
    """Distribute a target utterance count over the three labels, extras first."""
    base, rem = divmod(total, len(LABELS))
    return {label: base + (1 if i < rem else 0) for i, label in enumerate(LABELS)}


def synthesize_corpus(spec: SynthSpec, out_dir, split: str = "",
                      counts: dict[str, int] | None = None) -> CorpusInfo:
    """Write a labeled synthetic corpus with known artifact positions.

    Bonafide utterances are pure Gaussian noise. Spoofed utterances add the
    class signature to one contiguous random window of window_len frames.
    Class signatures depend only on the seed, so corpora generated with
    different split names share them. Deterministic given (spec, split).
    `counts` overrides spec.n_per_class with a per-label utterance count.
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "feats"
    feat_dir.mkdir(parents=True, exist_ok=True)
    sigs = class_signatures(spec.c, spec.seed)
    rng = substream(spec.seed, f"synth:{split}" if split else "synth")

    prefix = f"{split}-" if split else ""
    entries: list[ManifestEntry] = []
    masks: dict[str, PlantMask] = {}
    for label in LABELS:
        n_label = counts.get(label, 0) if counts is not None else spec.n_per_class
        for i in range(n_label):
            utt_id = f"{prefix}{label}{i:04d}"
            frames = rng.normal(0.0, spec.noise_scale, size=(spec.t, spec.c))
            planted = np.zeros(spec.t, dtype=bool)
            if label in SPOOF_LABELS:
                start = int(rng.integers(0, spec.t - spec.window_len + 1))
                frames[start : start + spec.window_len] += sigs[label]
                planted[start : start + spec.window_len] = True
            rel = f"feats/{utt_id}.feat"
            write_features(FeatureSeq(utt_id, Tensor(frames)), out_dir / rel)
            entries.append(ManifestEntry(utt_id, rel, label, ATTACK_IDS[label]))
            masks[utt_id] = PlantMask(utt_id, planted)

    suffix = f"_{split}" if split else ""
    manifest_path = out_dir / f"manifest{suffix}.tsv"
    mask_path = out_dir / f"masks{suffix}.tsv"
    write_manifest(entries, manifest_path)
    write_masks(masks.values(), mask_path)
    return CorpusInfo(manifest_path, mask_path, entries, masks, sigs)
