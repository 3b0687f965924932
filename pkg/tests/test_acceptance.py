"""Acceptance gate: one test per release criterion, each printing a PASS line
with its measured figure. Run with ``pytest tests/test_acceptance.py -v -s``.

Criterion 8 needs the published dataset; point TWINTOOL_DATASET_DIR at a
checkout to enable it, otherwise it is skipped.
"""

import json
import os
import threading
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import (brute_force_ks, enumerate_min_labeling_cost_fast,
                      free_udp_port, permutation_accuracy, regime_series)
from twintool import kpm, replay
from twintool.config import Config
from twintool.flowmap import EndpointMap, emit_script, parse_script
from twintool.pipeline import stage_twin
from twintool.profile import derive_class_flows
from twintool.synth import write_piecewise_trace
from twintool.ticc import TiccSegmenter, dp_segment, labeling_cost
from twintool.validate import ks_distance

from test_flowmap import GOLDEN, fuzz_script, reference_profiles


def announce(name, detail):
    print(f"\n[PASS] {name}: {detail}")


def test_criterion_1_ks_oracle_equivalence():
    rng = np.random.default_rng(100)
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(200):
        a = rng.normal(loc=rng.uniform(-1, 1), size=int(rng.integers(1, 51)))
        b = rng.normal(loc=rng.uniform(-1, 1), size=int(rng.integers(1, 51)))
        got = ks_distance(a, b)
        expected = brute_force_ks(a, b)
        worst = max(worst, abs(got - expected))
        assert abs(got - expected) <= 1e-12
    elapsed = time.monotonic() - t0
    assert elapsed < 5.0
    announce("KS oracle equivalence",
             f"200 pairs, max |delta|={worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_dp_assignment_oracle():
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    cases = 0
    for i in range(100):
        T = 12 if i < 10 else int(rng.integers(2, 13))
        C = 3 if i < 10 else int(rng.integers(2, 4))
        # dyadic grid keeps every partial sum exact in binary floating point
        costs = rng.integers(0, 4096, size=(T, C)) / 256.0
        beta = float(rng.integers(0, 1024)) / 256.0
        labels = dp_segment(costs, beta)
        got = labeling_cost(costs, labels, beta)
        expected = enumerate_min_labeling_cost_fast(costs, beta)
        assert got == expected
        cases += 1
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    announce("DP assignment oracle",
             f"{cases} cost matrices exactly optimal, {elapsed:.2f}s")


def test_criterion_3_synthetic_regime_recovery():
    X, truth = regime_series(n_regimes=3, seconds_each=1000, n_variates=5, seed=102)
    t0 = time.monotonic()
    seg = TiccSegmenter(n_clusters=3, window=5, sparsity=0.11, switch_penalty=200,
                        max_iter=50, random_state=0).fit(X)
    elapsed = time.monotonic() - t0
    accuracy = permutation_accuracy(truth, seg.labels_)
    hist = seg.objective_history_
    non_increasing = bool(np.all(np.diff(hist) <= np.abs(hist[:-1]) * 1e-9 + 1e-9))
    assert accuracy >= 0.95
    assert non_increasing
    assert elapsed < 60.0
    announce("synthetic regime recovery",
             f"accuracy={accuracy:.4f}, {len(hist)} outer iters monotone, {elapsed:.1f}s")


def test_criterion_4_script_fidelity():
    script = emit_script(reference_profiles(), EndpointMap.default(), warmup_s=70)
    emitted_lines = script.to_text().splitlines()
    golden_lines = GOLDEN.splitlines()
    assert len(golden_lines) == 24
    assert emitted_lines[:24] == golden_lines

    rng = np.random.default_rng(103)
    for _ in range(50):
        fuzzed = fuzz_script(rng)
        fuzzed.validate()
        text = fuzzed.to_text()
        assert parse_script(text).to_text() == text
    announce("script fidelity",
             "24 reference lines byte-identical; 50 fuzzed round-trips stable")


def test_criterion_5_loopback_replay():
    port = free_udp_port()
    script = parse_script(f"0 ON 1 UDP DST 127.0.0.1/{port} PERIODIC [100 1250]\n")
    stop, ready = threading.Event(), threading.Event()
    box = {}

    def recv():
        box["log"] = replay.receive(f"127.0.0.1:{port}", stop=stop, ready=ready)

    thread = threading.Thread(target=recv, daemon=True)
    thread.start()
    assert ready.wait(5.0)
    report = replay.send(script, duration_s=10.0)
    time.sleep(0.4)
    stop.set()
    thread.join()
    log = box["log"]

    received = len(log.rows)
    assert log.malformed == 0
    assert 950 <= received <= 1050  # 1000 +- 5%
    df = pd.DataFrame([vars(r) for r in log.rows])
    _, mbps = kpm.windowed_throughput(df, 0.25, t0=report.t0_wall,
                                      t_end=report.t0_wall + 10.0)
    mean_mbps = float(mbps.mean())
    assert mean_mbps == pytest.approx(1.0, rel=0.05)
    p99 = report.flows[1].p99_interval_deviation_s
    assert p99 <= 0.002
    announce("loopback replay",
             f"{received} packets, {mean_mbps:.4f} Mbps, p99 pacing dev {p99 * 1e3:.3f} ms")


def test_criterion_6_kpm_arithmetic():
    # planted dyadic latencies survive the float arithmetic exactly
    tx = np.arange(64, dtype=float)
    deltas = (np.arange(64) % 8 + 1) / 1024.0
    df = pd.DataFrame({"rx_time": tx + deltas, "tx_time": tx,
                       "flow": 1, "seq": np.arange(64),
                       "size": np.tile([125, 1250, 720, 64], 16),
                       "src": "a", "dst": "b"})
    lat = kpm.latency_series(df)
    assert np.array_equal(lat, deltas * 1000.0)

    _, mbps = kpm.windowed_throughput(df, 0.25)
    total_megabits = df["size"].sum() * 8 / 1e6
    assert (mbps * 0.25).sum() == pytest.approx(total_megabits, abs=1e-9)

    rng = np.random.default_rng(104)
    frames = pd.DataFrame({
        "imsi": rng.choice(["u1", "u2", "u3"], size=300),
        "dl_cqi": rng.integers(0, 16, size=300),
    })
    table = kpm.cqi_occupancy(frames)
    for _, row in table.iterrows():
        assert row.sum() == pytest.approx(100.0, abs=1e-9)
    announce("KPM arithmetic",
             "latencies exact, throughput bit-conserving, CQI rows sum to 100%")


def test_criterion_7_end_to_end_twin_loop(tmp_path):
    port = free_udp_port()
    trace = tmp_path / "trace.csv"
    write_piecewise_trace(trace, [1.0, 2.0, 1.0], 60, n_ues=4)
    cfg = Config({
        "paths.trace": str(trace),
        "paths.workdir": str(tmp_path / "work"),
        "paths.database": str(tmp_path / "db"),
        "ingest.rolling_width": "1",
        "ticc.num_clusters": "2",
        "profile.window_s": "60",
        "emit.warmup_s": "0",
        "emit.window_s": "12",
        "endpoints.mode": "loopback",
        "endpoints.port": str(port),
        "replay.recv_addr": f"127.0.0.1:{port}",
        "validate.threshold": "0.1",
        "validate.max_rounds": "3",
        "validate.load_window_s": "1",
    })
    t0 = time.monotonic()
    result = stage_twin(cfg)
    elapsed = time.monotonic() - t0
    assert result.converged
    assert result.n_rounds <= 3
    final = result.rounds[-1]
    assert all(r.passed and r.ks_distance < 0.1 for r in final)
    db_files = list((tmp_path / "db").glob("*.manifest.json"))
    assert len(db_files) == 1
    assert elapsed < 300.0
    distances = ", ".join(f"{r.metric}={r.ks_distance:.3f}" for r in final)
    announce("end-to-end twin loop",
             f"converged in {result.n_rounds} round(s), {distances}, {elapsed:.0f}s")


DATASET_DIR = os.environ.get("TWINTOOL_DATASET_DIR", "")

#: Table of expected satisfaction probabilities keyed by (use case bound, URLLC
#: PRBs); only the spot checks named by the release criteria.
EXPECTED_SATISFACTION = {(7.0, 41): 0.957, (10.0, 29): 0.971}


@pytest.mark.skipif(not DATASET_DIR, reason="set TWINTOOL_DATASET_DIR to run the "
                                            "dataset-replication checks")
def test_criterion_8_dataset_replication():
    """Optional: replicate the published-dataset satisfaction and CQI figures.

    Expects the dataset checkout layout: experiment directories whose path
    names the slicing configuration (slicing_1 .. slicing_5), each holding
    per-UE ``mgen.csv`` logs plus ``<ue_imsi>_metrics.csv`` stack metrics.
    URLLC UEs are IMSIs 1010123456006..9.
    """
    root = Path(DATASET_DIR)
    urllc_imsis = {f"10101234560{i:02d}" for i in range(6, 10)}

    def urllc_latencies(slicing: str) -> np.ndarray:
        chunks = []
        for log_path in root.rglob("mgen.csv"):
            if slicing not in str(log_path):
                continue
            if not any(imsi in str(log_path) for imsi in urllc_imsis):
                continue
            chunks.append(kpm.latency_series(kpm.read_packet_log(log_path)))
        if not chunks:
            pytest.skip(f"no URLLC mgen.csv files under {root} for {slicing}")
        return np.concatenate(chunks)

    by_prbs = {41: "slicing_1", 29: "slicing_2", 11: "slicing_4"}
    for (bound_ms, prbs), expected in EXPECTED_SATISFACTION.items():
        lat = urllc_latencies(by_prbs[prbs])
        got = float(np.mean(lat <= bound_ms))
        assert got == pytest.approx(expected, abs=0.02)

    lat11 = urllc_latencies("slicing_4")
    assert float(np.mean(lat11 <= 10.0)) == pytest.approx(0.93, abs=0.02)

    cqi_frames = []
    for metrics_path in root.rglob("*_metrics.csv"):
        if metrics_path.name in ("enb_metrics.csv", "ue_metrics.csv"):
            continue
        cqi_frames.append(kpm.read_kpm_csv(metrics_path))
    if not cqi_frames:
        pytest.skip("no per-UE metrics files found")
    table = kpm.cqi_occupancy(pd.concat(cqi_frames, ignore_index=True))
    for imsi, row in table.iterrows():
        modal = int(row.to_numpy().argmax())
        assert 8 <= modal <= 12
    announce("dataset replication", "satisfaction and CQI figures within tolerance")
