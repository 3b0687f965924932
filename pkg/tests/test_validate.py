import json

import numpy as np
import pytest

from conftest import brute_force_ks
from twintool.flowmap import parse_script
from twintool.validate import (LoopResult, MeanRatioTuner, TrafficDatabase,
                               ValidationReport, compare, joint_range,
                               ks_distance, normalize, validate_and_loop)

SCRIPT = ("0 ON 1 UDP DST 127.0.0.1/5000 PERIODIC [100 1250]\n"
          "\n"
          "10 OFF 1\n")


def test_normalize_basic():
    out = normalize([0.0, 5.0, 10.0], 0.0, 10.0)
    assert out == pytest.approx([0.0, 0.5, 1.0])


def test_normalize_constant_degenerate():
    assert normalize([7.0, 7.0]) == pytest.approx([0.5, 0.5])


def test_normalize_shared_transform():
    real = np.arange(11.0)
    twin = np.arange(2.0, 9.0)
    lo, hi = joint_range(real, twin)
    out = normalize(twin, lo, hi)
    assert out.min() == pytest.approx(0.2) and out.max() == pytest.approx(0.8)


def test_ks_identical_is_zero():
    a = np.array([1.0, 2.0, 3.0])
    assert ks_distance(a, a.copy()) == 0.0


def test_ks_disjoint_supports_is_one():
    assert ks_distance([0.0], [1.0]) == 1.0


def test_ks_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.normal(size=rng.integers(1, 21))
        b = rng.normal(size=rng.integers(1, 21))
        assert ks_distance(a, b) == pytest.approx(brute_force_ks(a, b), abs=1e-12)


def test_ks_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.normal(size=15), rng.normal(size=10)
        assert ks_distance(a, b) == ks_distance(b, a)


def test_ks_invariant_under_monotone_transforms():
    rng = np.random.default_rng(2)
    transforms = [np.exp, np.cbrt, lambda x: 3 * x + 2, lambda x: x ** 3]
    for _ in range(10):
        a, b = rng.normal(size=25), rng.normal(size=30)
        base = ks_distance(a, b)
        for f in transforms:
            assert ks_distance(f(a), f(b)) == pytest.approx(base, abs=1e-15)


def test_normalized_ks_equals_raw_ks():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.uniform(-5, 20, size=30)
        b = rng.uniform(-3, 25, size=40)
        lo, hi = joint_range(a, b)
        raw = ks_distance(a, b)
        normed = ks_distance(normalize(a, lo, hi), normalize(b, lo, hi))
        assert normed == pytest.approx(raw, abs=1e-12)


def test_ks_empty_rejected():
    with pytest.raises(ValueError):
        ks_distance([], [1.0])


def test_report_pass_iff_below_threshold():
    rep = ValidationReport("m", 0.09999, 0.1, 10, 10, 0.0, 1.0)
    assert rep.passed
    rep = ValidationReport("m", 0.1, 0.1, 10, 10, 0.0, 1.0)
    assert not rep.passed


def test_report_text_format():
    rep = ValidationReport("load_mbps", 0.05, 0.1, 100, 50, 0.0, 2.0)
    text = rep.to_text()
    assert "metric=load_mbps" in text
    assert "pass=true" in text
    assert "n_real=100" in text


def test_compare_requires_matching_metrics():
    with pytest.raises(KeyError, match="missing"):
        compare({"a": [1.0]}, {}, 0.1)


def test_loop_identical_passes_first_round(tmp_path):
    real = {"load_mbps": np.array([1.0, 2.0, 3.0])}
    script = parse_script(SCRIPT)
    result = validate_and_loop(real, script, run_twin=lambda s: real,
                               threshold=0.1, max_rounds=3,
                               database=TrafficDatabase(tmp_path / "db"),
                               config_hash="abc123")
    assert result.converged and result.n_rounds == 1
    assert result.rounds[0][0].ks_distance == 0.0
    db = TrafficDatabase(tmp_path / "db")
    assert len(db.scripts()) == 1
    manifest = json.loads((tmp_path / "db" / "twin_abc123.manifest.json").read_text())
    assert manifest["round"] == 1
    assert manifest["metrics"][0]["pass"] is True


def test_loop_mean_ratio_tuner_converges_in_two_rounds():
    rng = np.random.default_rng(4)
    real = {"load_mbps": rng.uniform(0.9, 1.1, size=200)}
    script = parse_script(SCRIPT)

    def run_twin(s):
        # fake replay: realized load is proportional to the scripted rate
        rate = next(e.pattern.rate_msgs_s for e in s.events if e.kind == "ON")
        scale = rate / 100.0 * 2.0  # starts twice as hot as the real trace
        return {"load_mbps": real["load_mbps"] * scale}

    result = validate_and_loop(real, script, run_twin, threshold=0.1, max_rounds=3,
                               tuner=MeanRatioTuner())
    assert result.converged
    assert result.n_rounds == 2
    final_rate = next(e.pattern.rate_msgs_s for e in result.script.events
                      if e.kind == "ON")
    assert final_rate == pytest.approx(50.0, rel=0.02)


def test_loop_non_convergence_reported():
    real = {"load_mbps": np.array([1.0, 1.0, 1.0])}
    script = parse_script(SCRIPT)
    result = validate_and_loop(real, script,
                               run_twin=lambda s: {"load_mbps": np.array([5.0, 5.0])},
                               threshold=0.1, max_rounds=1,
                               tuner=lambda s, r, t: s)
    assert not result.converged
    assert result.n_rounds == 1
    assert not result.rounds[0][0].passed


def test_loop_validates_threshold():
    with pytest.raises(ValueError, match="threshold"):
        validate_and_loop({}, parse_script(SCRIPT), lambda s: {}, threshold=0.0)
    with pytest.raises(ValueError, match="max_rounds"):
        validate_and_loop({}, parse_script(SCRIPT), lambda s: {}, max_rounds=0)


def test_database_script_roundtrip(tmp_path):
    db = TrafficDatabase(tmp_path / "db")
    script = parse_script(SCRIPT)
    rep = ValidationReport("m", 0.0, 0.1, 3, 3, 0.0, 1.0)
    path = db.save(script, [rep], round_index=2, config_hash="deadbeef")
    assert db.load(path.name).to_text() == script.to_text()
