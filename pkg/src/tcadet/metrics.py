"""Detection scoring: EER, normalized minimum tandem cost, per-attack breakdown.

Score files are UTF-8 text, one trial per line:
    utt_id attack_id key score
with key in {bonafide, spoof}. Scores follow the convention higher = more
bonafide; the writer records that in a header comment. Lines starting with
"#" are comments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, UsageError

log = logging.getLogger(__name__)

KEYS = ("bonafide", "spoof")


@dataclass
class ScoreRecord:
    utt_id: str
    attack_id: str
    key: str
    score: float

    def __post_init__(self):
        if self.key not in KEYS:
            raise UsageError(f"key must be one of {KEYS}, got {self.key!r}")
        self.score = float(self.score)
        if not np.isfinite(self.score):
            raise UsageError(f"{self.utt_id}: score must be finite")


@dataclass
class TdcfCosts:
    """Composite countermeasure costs: c1 scales misses, c2 false alarms."""

    c1: float
    c2: float

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError(f"costs must be positive, got c1={self.c1}, c2={self.c2}")

    @classmethod
    def from_asv_operating_point(cls, pi_tar, pi_non, pi_spoof, c_miss_asv, c_fa_asv,
                                 c_miss_cm, c_fa_cm, p_miss_asv, p_fa_asv,
                                 p_miss_spoof_asv) -> "TdcfCosts":
        c1 = pi_tar * (c_miss_cm - c_miss_asv * p_miss_asv) - pi_non * c_fa_asv * p_fa_asv
        c2 = c_fa_cm * pi_spoof * (1.0 - p_miss_spoof_asv)
        if c1 <= 0 or c2 <= 0:
            raise ConfigError(
                f"ASV operating point yields non-positive costs c1={c1}, c2={c2}")
        return cls(c1, c2)


def load_costs(path=None) -> TdcfCosts:
    """Read a key=value cost file; defaults to the packaged ASVspoof2019 model."""
    if path is None:
        text = (resources.files("tcadet") / "data" / "tdcf_asvspoof2019.cfg").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    values: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected key = value", lineno)
        key, _, raw = line.partition("=")
        try:
            values[key.strip()] = float(raw.strip())
        except ValueError as err:
            raise ParseError(f"bad number {raw.strip()!r}", lineno) from err
    if "c1" in values or "c2" in values:
        if not {"c1", "c2"} <= values.keys():
            raise ConfigError("cost file must define both c1 and c2 or neither")
        return TdcfCosts(values["c1"], values["c2"])
    needed = ["pi_tar", "pi_non", "pi_spoof", "c_miss_asv", "c_fa_asv",
              "c_miss_cm", "c_fa_cm", "p_miss_asv", "p_fa_asv", "p_miss_spoof_asv"]
    missing = [k for k in needed if k not in values]
    if missing:
        raise ConfigError(f"cost file missing keys: {missing}")
    return TdcfCosts.from_asv_operating_point(*(values[k] for k in needed))


def _split(records) -> tuple[np.ndarray, np.ndarray]:
    bon = np.array([r.score for r in records if r.key == "bonafide"], dtype=np.float64)
    spoof = np.array([r.score for r in records if r.key == "spoof"], dtype=np.float64)
    if bon.size == 0 or spoof.size == 0:
        raise UsageError("need at least one bonafide and one spoof trial")
    return bon, spoof


def _operating_points(bon: np.ndarray, spoof: np.ndarray):
    """Error rates swept over every distinct score plus the reject-all extreme.

    Thresholds descend; a trial is accepted as bonafide iff score >= threshold.
    The lowest distinct score is the accept-all point. Equal scores collapse
    into a single operating point.
    """
    thresholds = np.concatenate(
        [[np.inf], np.unique(np.concatenate([bon, spoof]))[::-1]])
    bon_sorted = np.sort(bon)
    spoof_sorted = np.sort(spoof)
    p_miss = np.searchsorted(bon_sorted, thresholds, side="left") / bon.size
    p_fa = (spoof.size - np.searchsorted(spoof_sorted, thresholds, side="left")) / spoof.size
    return thresholds, p_miss, p_fa


def compute_eer(records) -> tuple[float, float]:
    """Equal error rate with linear interpolation between bracketing sweep points."""
    bon, spoof = _split(records)
    thresholds, p_miss, p_fa = _operating_points(bon, spoof)
    diff = p_miss - p_fa  # starts at +1 (reject all), ends <= 0 (accept all)
    for j in range(len(thresholds) - 1):
        d0, d1 = diff[j], diff[j + 1]
        if d0 == 0.0:
            return float(p_miss[j]), float(thresholds[j])
        if d0 > 0.0 >= d1:
            frac = d0 / (d0 - d1)
            eer = p_fa[j] + frac * (p_fa[j + 1] - p_fa[j])
            use_next = frac >= 0.5 or np.isinf(thresholds[j])
            thr = thresholds[j + 1] if use_next else thresholds[j]
            return float(eer), float(thr)
    return float(p_miss[-1]), float(thresholds[-1])


def compute_min_tdcf(records, costs: TdcfCosts) -> tuple[float, float]:
    """Minimum of c1*P_miss + c2*P_fa over the sweep, normalized by min(c1, c2)."""
    bon, spoof = _split(records)
    thresholds, p_miss, p_fa = _operating_points(bon, spoof)
    tdcf = costs.c1 * p_miss + costs.c2 * p_fa
    j = int(np.argmin(tdcf))
    return float(tdcf[j] / min(costs.c1, costs.c2)), float(thresholds[j])


def breakdown_by_attack(records) -> tuple[dict[str, float], float]:
    """EER per attack (its spoofs vs all bonafide trials) plus the pooled EER."""
    bonafide = [r for r in records if r.key == "bonafide"]
    by_attack: dict[str, list[ScoreRecord]] = {}
    for r in records:
        if r.key == "spoof":
            by_attack.setdefault(r.attack_id, []).append(r)
    table: dict[str, float] = {}
    for attack in sorted(by_attack):
        group = by_attack[attack]
        if not group:
            log.warning("attack %s has no trials, skipping", attack)
            continue
        table[attack], _ = compute_eer(bonafide + group)
    pooled, _ = compute_eer(records)
    return table, pooled


def write_scores(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# columns: utt_id attack_id key score (higher score = more bonafide)\n")
        for r in records:
            # shortest exact decimal, padded to at least 6 significant digits
            text = np.format_float_positional(r.score, unique=True, min_digits=6)
            fh.write(f"{r.utt_id} {r.attack_id} {r.key} {text}\n")


def read_scores(path) -> list[ScoreRecord]:
    out: list[ScoreRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split()
            if len(cols) != 4:
                raise ParseError(f"expected 4 fields, got {len(cols)}", lineno)
            try:
                score = float(cols[3])
            except ValueError as err:
                raise ParseError(f"bad score {cols[3]!r}", lineno) from err
            if cols[2] not in KEYS:
                raise ParseError(f"bad key {cols[2]!r}", lineno)
            out.append(ScoreRecord(cols[0], cols[1], cols[2], score))
    return out


def bonafide_probability(logits: np.ndarray, class_names) -> float:
    """Detection score: softmax probability of the bonafide class.

    With multi-class logits the spoof probability is implicitly the sum of
    the spoof-class probabilities, so one scalar carries the decision.
    """
    if "bonafide" not in class_names:
        raise UsageError(f"class set {class_names} lacks 'bonafide'")
    shifted = np.exp(logits - logits.max())
    probs = shifted / shifted.sum()
    return float(probs[list(class_names).index("bonafide")])
