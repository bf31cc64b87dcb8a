"""Temporal class activation maps and their renderings.

The map assigns each frame (plus the optional utterance row) one activation
per class. Rendering normalizes by the utterance's max absolute value and
clamps negative activations to zero; the CSV export keeps raw values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParseError, UsageError

# Okabe-Ito colors: readable under the common forms of color blindness
DEFAULT_PALETTE = {
    "bonafide": (0, 158, 115),  # bluish green
    "tts": (230, 159, 0),       # orange
    "vc": (0, 114, 178),        # blue
    "spoof": (213, 94, 0),      # vermillion (binary mode)
}
FALLBACK_COLORS = [(204, 121, 167), (240, 228, 66), (86, 180, 233), (153, 153, 153)]


@dataclass
class TcaMap:
    """Per-frame, per-class activation for one utterance."""

    values: np.ndarray  # T' x K
    class_names: tuple
    utt_id: str = ""
    has_utterance_row: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.class_names):
            raise DimensionError(
                f"values {self.values.shape} vs {len(self.class_names)} classes")
        if self.has_utterance_row and self.values.shape[0] < 2:
            raise DimensionError("utterance row requires at least two rows")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0] - (1 if self.has_utterance_row else 0)


@dataclass
class RenderSpec:
    """How to turn activations into glyphs and pixels."""

    palette: dict = field(default_factory=dict)
    scale_x: int = 1
    scale_y: int = 1

    def color(self, name: str, index: int):
        if name in self.palette:
            return self.palette[name]
        if name in DEFAULT_PALETTE:
            return DEFAULT_PALETTE[name]
        return FALLBACK_COLORS[index % len(FALLBACK_COLORS)]


def extract_tca_map(embedding: np.ndarray, gate: np.ndarray, logits: np.ndarray,
                    class_names, utt_id: str = "",
                    has_utterance_row: bool = True) -> TcaMap:
    """map[t, k] = logits[k] * sum_c embedding[t, c] * gate[c, k]."""
    embedding = np.asarray(embedding, dtype=np.float64)
    gate = np.asarray(gate, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if embedding.ndim != 2 or gate.ndim != 2 or embedding.shape[1] != gate.shape[0]:
        raise DimensionError(f"embedding {embedding.shape} vs gate {gate.shape}")
    if logits.shape != (gate.shape[1],):
        raise DimensionError(f"logits {logits.shape} vs gate {gate.shape}")
    values = (embedding @ gate) * logits[None, :]
    return TcaMap(values, tuple(class_names), utt_id, has_utterance_row)


def normalized_intensity(tca: TcaMap) -> np.ndarray:
    """Clamp negatives to zero and scale by the utterance's max |activation|."""
    peak = float(np.abs(tca.values).max())
    if peak == 0.0:
        return np.zeros_like(tca.values)
    return np.clip(tca.values, 0.0, None) / peak


def _glyph(class_names, intensities_row: np.ndarray) -> str:
    k = int(np.argmax(intensities_row))
    v = float(intensities_row[k])
    if v <= 0.0:
        return "·"  # no activation at all
    initial = class_names[k][0]
    if v <= 1 / 3:
        return "."
    if v <= 2 / 3:
        return initial.lower()
    return initial.upper()


def render_ascii(tca: TcaMap, spec: RenderSpec | None = None) -> str:
    """One character per frame: argmax-class initial, shaded by intensity.

    Shade buckets over normalized intensity: (0, 1/3] a dot, (1/3, 2/3] the
    lowercase initial, (2/3, 1] the uppercase initial; exactly zero renders
    as a middle dot. The utterance row, when present, gets its own line.
    """
    intensity = normalized_intensity(tca)
    t = tca.n_frames
    lines = [
        "utt    : " + (tca.utt_id or "?"),
        "classes: " + " ".join(tca.class_names),
        "frames : " + "".join(_glyph(tca.class_names, intensity[i]) for i in range(t)),
    ]
    if tca.has_utterance_row:
        lines.append("utter  : " + _glyph(tca.class_names, intensity[t]))
    return "\n".join(lines) + "\n"


def export_ppm(tca: TcaMap, spec: RenderSpec, path) -> None:
    """Binary P6 pixmap: one row per class plus a composite argmax row.

    Pixel = class color scaled by normalized intensity. Rows and columns are
    repeated scale_y/scale_x times. Output bytes are platform-independent.
    """
    if spec.scale_x < 1 or spec.scale_y < 1:
        raise UsageError("scale factors must be >= 1")
    intensity = normalized_intensity(tca)
    tp, k = intensity.shape
    colors = np.array([spec.color(name, i) for i, name in enumerate(tca.class_names)],
                      dtype=np.float64)  # K x 3

    rows = np.zeros((k + 1, tp, 3))
    for j in range(k):
        rows[j] = intensity[:, j : j + 1] * colors[j]
    winner = np.argmax(intensity, axis=1)
    peak = intensity[np.arange(tp), winner]
    rows[k] = peak[:, None] * colors[winner]

    pixels = np.rint(rows).astype(np.uint8)
    pixels = np.repeat(pixels, spec.scale_y, axis=0)
    pixels = np.repeat(pixels, spec.scale_x, axis=1)
    height, width = pixels.shape[0], pixels.shape[1]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def export_csv(tca: TcaMap, path) -> None:
    """frame,class,value rows at full precision, frame-major."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,class,value\n")
        for t in range(tca.values.shape[0]):
            for k, name in enumerate(tca.class_names):
                fh.write(f"{t},{name},{float(tca.values[t, k])!r}\n")


def read_tca_csv(path, utt_id: str = "", has_utterance_row: bool = True) -> TcaMap:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "frame,class,value":
            raise ParseError(f"unexpected header {header!r}", 1)
        names: list[str] = []
        cells: dict[tuple[int, str], float] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split(",")
            if len(cols) != 3:
                raise ParseError(f"expected 3 columns, got {len(cols)}", lineno)
            frame = int(cols[0])
            if cols[1] not in names:
                names.append(cols[1])
            cells[(frame, cols[1])] = float(cols[2])
    t_rows = 1 + max(f for f, _ in cells)
    values = np.zeros((t_rows, len(names)))
    for (frame, name), v in cells.items():
        values[frame, names.index(name)] = v
    return TcaMap(values, tuple(names), utt_id, has_utterance_row)


def localization_score(tca: TcaMap, planted: np.ndarray, true_class: str) -> float:
    """Rank AUC of the true class's frame activations, planted vs unplanted.

    Ties count one half. The utterance row is excluded: the mask covers only
    the T frame rows.
    """
    planted = np.asarray(planted, dtype=bool)
    if true_class not in tca.class_names:
        raise UsageError(f"unknown class {true_class!r}")
    if planted.shape != (tca.n_frames,):
        raise UsageError(
            f"mask length {planted.shape} does not match frame count {tca.n_frames}")
    if planted.all() or not planted.any():
        raise UsageError("localization needs both planted and unplanted frames")
    column = tca.values[: tca.n_frames, tca.class_names.index(true_class)]

    order = np.argsort(column, kind="mergesort")
    ranks = np.empty(len(column), dtype=np.float64)
    ranks[order] = np.arange(1, len(column) + 1)
    # midranks for ties
    sorted_vals = column[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1

    n_pos = int(planted.sum())
    n_neg = len(column) - n_pos
    rank_sum = float(ranks[planted].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
