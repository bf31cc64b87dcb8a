"""Run a pretrained wav2vec 2.0 style frontend and emit FEAT1 feature files.

The FEAT1 layout matches the detection toolkit's reader: magic "FEAT1",
uint32 LE frame count, uint32 LE channel count, float64 LE values
frame-major. The exporter also appends rows to a manifest fragment
(utt_id, relative path, label, attack_id TSV) with the realized frame count
recorded in a comment, since the exact frame count for a clip length is a
property of the checkpoint's convolutional stack.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import TARGET_RATE, fix_duration, load_wav, normalize

MAGIC = b"FEAT1"


@dataclass
class ExportJob:
    """Batch description: which clips, which checkpoint, where to write."""

    audio_paths: list
    checkpoint: str
    out_dir: str
    seconds: float = 4.0
    layer: int = -1
    label: str = "bonafide"
    attack_id: str = "-"
    labels: dict = field(default_factory=dict)      # per-file override
    attack_ids: dict = field(default_factory=dict)  # per-file override


@dataclass
class ExportResult:
    utt_id: str
    feat_path: str | None
    frames: int
    channels: int
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def write_feat1(values: np.ndarray, path) -> None:
    t, c = values.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", t, c))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_frontend(checkpoint: str):
    """Load the checkpoint (hub id or local directory) in inference mode."""
    import torch
    from transformers import Wav2Vec2Model

    model = Wav2Vec2Model.from_pretrained(checkpoint)
    model.eval()
    torch.set_grad_enabled(False)
    return model


def embed(model, wave: np.ndarray, layer: int) -> np.ndarray:
    """Frame embeddings (T x C float64) of one normalized waveform."""
    import torch

    batch = torch.from_numpy(normalize(wave)[None, :]).to(torch.float32)
    with torch.no_grad():
        out = model(batch, output_hidden_states=True)
    hidden = out.hidden_states[layer]
    return hidden[0].numpy().astype(np.float64)


def export_features(job: ExportJob, model=None) -> list[ExportResult]:
    """Export every clip; a failing file is reported and skipped, not fatal.

    Appends to <out_dir>/manifest_fragment.tsv so consecutive jobs can build
    one manifest.
    """
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = load_frontend(job.checkpoint)

    results: list[ExportResult] = []
    fragment = out_dir / "manifest_fragment.tsv"
    with open(fragment, "a", encoding="utf-8") as manifest:
        for path in job.audio_paths:
            path = Path(path)
            utt_id = path.stem
            try:
                wave = load_wav(path)
                wave = fix_duration(wave, job.seconds, TARGET_RATE)
                values = embed(model, wave, job.layer)
                rel = f"{utt_id}.feat"
                write_feat1(values, out_dir / rel)
            except Exception as err:  # noqa: BLE001 - per-file isolation
                results.append(ExportResult(utt_id, None, 0, 0, error=str(err)))
                continue
            t, c = values.shape
            label = job.labels.get(str(path), job.label)
            attack = job.attack_ids.get(str(path), job.attack_id)
            manifest.write(f"# {utt_id} frames={t} channels={c}\n")
            manifest.write(f"{utt_id}\t{rel}\t{label}\t{attack}\n")
            results.append(ExportResult(utt_id, rel, t, c))
    return results
