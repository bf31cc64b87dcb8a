import math

import numpy as np
import pytest

from tcadet import metrics as mt
from tcadet.errors import ConfigError, ParseError, UsageError


def records(bon, spoof, attack="A"):
    out = [mt.ScoreRecord(f"b{i}", "-", "bonafide", s) for i, s in enumerate(bon)]
    out += [mt.ScoreRecord(f"s{i}", attack, "spoof", s) for i, s in enumerate(spoof)]
    return out


# ---------------------------------------------------------------------------
# oracle: dumb exhaustive sweep sharing only the operating-point definition


def sweep_oracle(bon, spoof):
    """(thresholds, p_miss, p_fa) computed by explicit counting, high to low."""
    points = []
    for theta in [math.inf] + sorted(set(bon) | set(spoof), reverse=True):
        p_miss = sum(1 for s in bon if s < theta) / len(bon)
        p_fa = sum(1 for s in spoof if s >= theta) / len(spoof)
        points.append((theta, p_miss, p_fa))
    return points


def eer_oracle(bon, spoof):
    pts = sweep_oracle(bon, spoof)
    for (t0, m0, f0), (t1, m1, f1) in zip(pts, pts[1:]):
        d0, d1 = m0 - f0, m1 - f1
        if d0 == 0.0:
            return m0
        if d0 > 0.0 >= d1:
            frac = d0 / (d0 - d1)
            return f0 + frac * (f1 - f0)
    return pts[-1][1]


def min_tdcf_oracle(bon, spoof, c1, c2):
    pts = sweep_oracle(bon, spoof)
    best = min(c1 * m + c2 * f for _, m, f in pts)
    return best / min(c1, c2)


# ---------------------------------------------------------------------------
# EER


def test_eer_perfect_separation():
    eer, thr = mt.compute_eer(records([0.9, 0.8], [0.1, 0.2]))
    assert eer == 0.0
    assert 0.2 < thr <= 0.8


def test_eer_half():
    eer, _ = mt.compute_eer(records([0.8, 0.2], [0.7, 0.3]))
    assert eer == pytest.approx(0.5, abs=1e-12)


def test_eer_one_third():
    eer, _ = mt.compute_eer(records([3.0, 2.0, 1.0], [2.5, 0.5, 0.0]))
    assert eer == pytest.approx(1 / 3, abs=1e-12)


def test_eer_single_class_rejected():
    with pytest.raises(UsageError):
        mt.compute_eer([mt.ScoreRecord("a", "-", "bonafide", 1.0)])


def test_eer_monotone_transform_invariant():
    rng = np.random.default_rng(0)
    bon = rng.normal(1.0, 1.0, size=20).tolist()
    spoof = rng.normal(-1.0, 1.0, size=30).tolist()
    base, _ = mt.compute_eer(records(bon, spoof))
    warped, _ = mt.compute_eer(records([math.tanh(s) for s in bon],
                                       [math.tanh(s) for s in spoof]))
    assert base == pytest.approx(warped, abs=1e-12)


def test_eer_zero_iff_separated():
    eer, _ = mt.compute_eer(records([0.6, 0.9], [0.5, 0.1]))
    assert eer == 0.0
    eer, _ = mt.compute_eer(records([0.6, 0.4], [0.5, 0.1]))
    assert eer > 0.0


# ---------------------------------------------------------------------------
# min t-DCF


def test_min_tdcf_perfect_separation_zero():
    value, _ = mt.compute_min_tdcf(records([2.0, 3.0], [0.0, 1.0]), mt.TdcfCosts(1.0, 10.0))
    assert value == 0.0


def test_min_tdcf_constant_scores_is_one():
    value, _ = mt.compute_min_tdcf(records([0.5, 0.5], [0.5, 0.5, 0.5]),
                                   mt.TdcfCosts(0.9405, 0.5))
    assert value == pytest.approx(1.0, abs=1e-12)


def test_min_tdcf_matches_oracle_hand_case():
    bon, spoof = [3.0, 2.0, 1.0], [2.5, 0.5, 0.0]
    value, _ = mt.compute_min_tdcf(records(bon, spoof), mt.TdcfCosts(1.0, 10.0))
    assert value == pytest.approx(min_tdcf_oracle(bon, spoof, 1.0, 10.0), abs=1e-12)


def test_min_tdcf_rejects_bad_costs():
    with pytest.raises(ConfigError):
        mt.TdcfCosts(0.0, 1.0)
    with pytest.raises(ConfigError):
        mt.TdcfCosts(1.0, -2.0)


def test_random_sets_match_oracle():
    rng = np.random.default_rng(1)
    for trial in range(200):
        n_bon = int(rng.integers(1, 40))
        n_spoof = int(rng.integers(1, 40))
        bon = rng.normal(0.5, 1.0, size=n_bon)
        spoof = rng.normal(-0.5, 1.0, size=n_spoof)
        if trial % 2:  # force ties half the time
            bon = np.round(bon, 1)
            spoof = np.round(spoof, 1)
        bon, spoof = bon.tolist(), spoof.tolist()
        c1, c2 = float(rng.uniform(0.1, 5.0)), float(rng.uniform(0.1, 5.0))
        recs = records(bon, spoof)
        eer, _ = mt.compute_eer(recs)
        assert eer == pytest.approx(eer_oracle(bon, spoof), abs=1e-12)
        assert 0.0 <= eer <= 1.0
        val, _ = mt.compute_min_tdcf(recs, mt.TdcfCosts(c1, c2))
        assert val == pytest.approx(min_tdcf_oracle(bon, spoof, c1, c2), abs=1e-12)
        assert 0.0 <= val <= 1.0 + 1e-15


# ---------------------------------------------------------------------------
# breakdown


def test_breakdown_single_attack_matches_pooled():
    recs = records([0.9, 0.4], [0.5, 0.2], attack="T01")
    table, pooled = mt.breakdown_by_attack(recs)
    assert set(table) == {"T01"}
    assert table["T01"] == pytest.approx(pooled, abs=1e-12)


def test_breakdown_separated_attack_zero():
    recs = records([0.9, 0.8], [0.1], attack="T01")
    recs += [mt.ScoreRecord("v0", "V01", "spoof", 0.85)]
    table, pooled = mt.breakdown_by_attack(recs)
    assert table["T01"] == 0.0
    assert table["V01"] > 0.0
    assert pooled > 0.0


def test_breakdown_matches_per_group_oracle():
    rng = np.random.default_rng(2)
    bon = rng.normal(1.0, 0.5, size=15).tolist()
    groups = {"T01": rng.normal(0.0, 0.5, size=10).tolist(),
              "V01": rng.normal(-0.5, 0.5, size=8).tolist()}
    recs = [mt.ScoreRecord(f"b{i}", "-", "bonafide", s) for i, s in enumerate(bon)]
    for attack, scores in groups.items():
        recs += [mt.ScoreRecord(f"{attack}-{i}", attack, "spoof", s)
                 for i, s in enumerate(scores)]
    table, pooled = mt.breakdown_by_attack(recs)
    for attack, scores in groups.items():
        assert table[attack] == pytest.approx(eer_oracle(bon, scores), abs=1e-12)
    assert pooled == pytest.approx(eer_oracle(bon, groups["T01"] + groups["V01"]), abs=1e-12)


# ---------------------------------------------------------------------------
# score files


def test_score_file_round_trip(tmp_path):
    recs = records([0.9, 1 / 3], [0.12345678901234567])
    path = tmp_path / "scores.txt"
    mt.write_scores(recs, path)
    back = mt.read_scores(path)
    assert back == recs


def test_score_file_empty(tmp_path):
    path = tmp_path / "scores.txt"
    path.write_text("")
    assert mt.read_scores(path) == []


def test_score_file_bad_line_cites_number(tmp_path):
    path = tmp_path / "scores.txt"
    path.write_text("# header\nu1 A07 spoof 0.5\nu2 A07 spoof\n")
    with pytest.raises(ParseError) as err:
        mt.read_scores(path)
    assert err.value.line == 3


def test_score_file_min_digits(tmp_path):
    path = tmp_path / "scores.txt"
    mt.write_scores(records([0.5], [0.25]), path)
    body = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    for line in body:
        digits = line.split()[-1].replace(".", "").replace("-", "").lstrip("0")
        assert len(line.split()[-1].replace(".", "").replace("-", "")) >= 6


# ---------------------------------------------------------------------------
# cost model plumbing


def test_default_costs_match_plan_constants():
    costs = mt.load_costs()
    assert costs.c1 == pytest.approx(0.9405)
    assert costs.c2 == pytest.approx(0.5)


def test_costs_from_custom_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# direct costs\nc1 = 2.0\nc2 = 0.25\n")
    costs = mt.load_costs(p)
    assert (costs.c1, costs.c2) == (2.0, 0.25)


def test_bonafide_probability():
    logits = np.array([2.0, 0.0, -1.0])
    p = mt.bonafide_probability(logits, ("bonafide", "tts", "vc"))
    e = np.exp(logits - 2.0)
    assert p == pytest.approx(e[0] / e.sum(), abs=1e-12)
    with pytest.raises(UsageError):
        mt.bonafide_probability(logits, ("a", "b", "c"))
