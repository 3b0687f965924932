"""Stage orchestration: each stage reads its prerequisite artifacts from the
workdir, writes its own artifacts stamped with the config hash, and the twin
stage chains characterization, flow mapping, loopback replay, and validation
into the full retune loop."""

from __future__ import annotations

import json
import logging
import threading
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import flowmap, ingest, kpm, profile, replay, ticc, validate
from .config import Config

log = logging.getLogger(__name__)

ARTIFACTS = {
    "series": "series.csv",
    "labels": "labels.csv",
    "model": "ticc_model.json",
    "profiles": "profiles.csv",
    "script": "twin_script.mgn",
    "packet_log": "packet_log.csv",
    "send_report": "send_report.json",
    "validation": "validation_report.txt",
}


class MissingArtifact(FileNotFoundError):
    def __init__(self, path, producer):
        super().__init__(f"missing prerequisite artifact {path} (run the "
                         f"'{producer}' stage first)")


def artifact(cfg: Config, name: str) -> Path:
    return cfg.workdir() / ARTIFACTS[name]


def _require(cfg: Config, name: str, producer: str) -> Path:
    path = artifact(cfg, name)
    if not path.exists():
        raise MissingArtifact(path, producer)
    return path


def _write_meta(path: Path, cfg: Config, stage: str) -> None:
    meta = {"stage": stage, "config_hash": cfg.hash()}
    path.with_suffix(path.suffix + ".meta").write_text(json.dumps(meta) + "\n")


def stage_ingest(cfg: Config) -> Path:
    trace = Path(cfg["paths.trace"])
    if not trace.exists():
        raise FileNotFoundError(f"trace file {trace} does not exist")
    cfg.workdir().mkdir(parents=True, exist_ok=True)
    budget = cfg.get_int("ingest.budget_prbs")
    result = ingest.parse_trace(trace, cfg.column_mapping(), budget)
    series = ingest.aggregate_1s(
        result.records, budget,
        direction=cfg["ingest.direction"],
        rolling_width=cfg.get_int("ingest.rolling_width"),
        subframes_per_second=cfg.get_int("ingest.subframes_per_s"),
        cell_id=cfg["ingest.cell_id"],
    )
    out = artifact(cfg, "series")
    ingest.write_series(out, series, cfg.hash())
    log.info("ingest: %d rows (%d skipped) -> %d seconds", result.rows_total,
             result.rows_skipped, len(series))
    return out


def stage_cluster(cfg: Config) -> Path:
    series = ingest.read_series(_require(cfg, "series", "ingest"))
    variates = cfg.get_list("ticc.variates")
    seg = cfg.segmenter().fit(series.values(variates), variate_names=variates)
    ticc.write_labels(artifact(cfg, "labels"), seg.labels_, series.t0, cfg.hash())
    ticc.save_model(artifact(cfg, "model"), seg.model_)
    _write_meta(artifact(cfg, "model"), cfg, "cluster")
    log.info("cluster: %d labels over %d clusters, objective %.4f (%s)",
             len(seg.labels_), seg.n_clusters, seg.objective_history_[-1],
             "converged" if seg.converged_ else "max_iter")
    return artifact(cfg, "labels")


def stage_profile(cfg: Config) -> Path:
    series = ingest.read_series(_require(cfg, "series", "ingest"))
    labels, _ = ticc.read_labels(_require(cfg, "labels", "cluster"))
    profiles = profile.window_aggregate(series, labels, cfg.get_int("profile.window_s"))
    profile.derive_class_flows(profiles, cfg.class_specs(), cfg.get_float("profile.split"))
    out = artifact(cfg, "profiles")
    profile.write_profiles(out, profiles, cfg.hash())
    log.info("profile: %d windows of %d s", len(profiles), cfg.get_int("profile.window_s"))
    return out


def stage_emit(cfg: Config) -> Path:
    profiles = profile.read_profiles(_require(cfg, "profiles", "profile"),
                                     cfg.get_int("profile.window_s"))
    script = flowmap.emit_script(profiles, cfg.endpoint_map(),
                                 warmup_s=cfg.get_float("emit.warmup_s"),
                                 window_s=cfg.emit_window_s())
    out = artifact(cfg, "script")
    out.write_text(script.to_text())
    _write_meta(out, cfg, "emit")
    log.info("emit: %d events, %.1f s", len(script.events), script.duration())
    return out


def script_duration(cfg: Config, profiles) -> float:
    return cfg.get_float("emit.warmup_s") + len(profiles) * cfg.emit_window_s()


def _write_send_report(cfg: Config, report: replay.SendReport) -> Path:
    report_path = artifact(cfg, "send_report")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps({
        "t0_wall": report.t0_wall,
        "duration_s": report.duration_s,
        "flows": {str(f): {"sent": s.sent, "achieved_rate": s.achieved_rate,
                           "target_rate": s.target_rate,
                           "p99_interval_deviation_s": s.p99_interval_deviation_s}
                  for f, s in report.flows.items()},
    }, indent=2) + "\n")
    _write_meta(report_path, cfg, "replay-send")
    return report_path


def stage_replay_send(cfg: Config, script_path=None, duration_s=None) -> replay.SendReport:
    path = Path(script_path) if script_path else _require(cfg, "script", "emit")
    script = flowmap.parse_script(path.read_text())
    if duration_s is None:
        duration_s = script.duration() + cfg.emit_window_s()
    report = replay.send(script, cfg["replay.bind"], duration_s)
    _write_send_report(cfg, report)
    return report


def stage_replay_recv(cfg: Config, bind=None, out_path=None,
                      duration_s: float = 10.0) -> replay.PacketLog:
    bind = bind or cfg["replay.recv_addr"]
    out = Path(out_path) if out_path else artifact(cfg, "packet_log")
    out.parent.mkdir(parents=True, exist_ok=True)
    logbook = replay.receive(bind, duration_s, out_path=out)
    _write_meta(out, cfg, "replay-recv")
    log.info("recv: %d packets, %d malformed", len(logbook), logbook.malformed)
    return logbook


def log_to_dataframe(logbook: replay.PacketLog) -> pd.DataFrame:
    return pd.DataFrame([vars(r) for r in logbook.rows],
                        columns=["rx_time", "tx_time", "flow", "seq",
                                 "size", "src", "dst"])


def real_metrics(cfg: Config, series: ingest.CellSeries) -> dict[str, np.ndarray]:
    """Per-window load plus per-second active-UE count from the source trace."""
    width = cfg.load_window_s()
    loads = []
    n = len(series)
    step = int(width)
    for lo in range(0, n, step):
        loads.append(series.load_mbps[lo:min(lo + step, n)].mean())
    return {
        "load_mbps": np.array(loads),
        "active_flows": series.active_ues.copy(),
    }


def twin_metrics(cfg: Config, log_df: pd.DataFrame, t0: float,
                 duration_s: float) -> dict[str, np.ndarray]:
    """The same metrics measured from the replayed traffic's packet log."""
    width = cfg.load_window_s()
    if len(log_df) == 0:
        return {"load_mbps": np.zeros(1), "active_flows": np.zeros(1)}
    _, mbps = kpm.windowed_throughput(log_df, width, t0=t0, t_end=t0 + duration_s)
    flows = kpm.active_flows_per_window(log_df, 1.0, t0=t0, t_end=t0 + duration_s)
    return {"load_mbps": mbps, "active_flows": flows}


def run_twin_round(cfg: Config, script: flowmap.TrafficScript,
                   duration_s: float) -> dict[str, np.ndarray]:
    """One loopback replay round: receive in-process, send, extract metrics."""
    recv_addr = cfg["replay.recv_addr"]
    stop = threading.Event()
    ready = threading.Event()
    box = {}

    def _recv():
        box["log"] = replay.receive(recv_addr, stop=stop,
                                    out_path=artifact(cfg, "packet_log"),
                                    ready=ready)

    recv_thread = threading.Thread(target=_recv, daemon=True)
    recv_thread.start()
    if not ready.wait(timeout=5.0):
        stop.set()
        recv_thread.join()
        raise RuntimeError(f"receiver failed to bind {recv_addr}")
    try:
        report = replay.send(script, cfg["replay.bind"], duration_s)
    finally:
        # drain in-flight datagrams before stopping the receiver
        time.sleep(0.3)
        stop.set()
        recv_thread.join()
    _write_send_report(cfg, report)
    log_df = log_to_dataframe(box["log"])
    warmup = cfg.get_float("emit.warmup_s")
    t0 = report.t0_wall + warmup
    return twin_metrics(cfg, log_df, t0, duration_s - warmup)


def stage_validate(cfg: Config) -> list[validate.ValidationReport]:
    """Offline comparison of the recorded packet log against the real series."""
    series = ingest.read_series(_require(cfg, "series", "ingest"))
    log_path = _require(cfg, "packet_log", "replay-recv")
    log_df = kpm.read_packet_log(log_path)
    send_report_path = _require(cfg, "send_report", "replay-send")
    report = json.loads(send_report_path.read_text())
    warmup = cfg.get_float("emit.warmup_s")
    t0 = report["t0_wall"] + warmup
    duration = report["duration_s"] - warmup
    reports = validate.compare(
        real_metrics(cfg, series),
        twin_metrics(cfg, log_df, t0, duration),
        cfg.get_float("validate.threshold"),
    )
    out = artifact(cfg, "validation")
    out.write_text("".join(r.to_text() + "\n" for r in reports))
    _write_meta(out, cfg, "validate")
    return reports


def stage_twin(cfg: Config) -> validate.LoopResult:
    """Full pipeline: ingest, cluster, profile, emit, loopback replay, and the
    validate/retune loop; accepted scripts are stored in the traffic database."""
    stage_ingest(cfg)
    stage_cluster(cfg)
    stage_profile(cfg)
    stage_emit(cfg)

    series = ingest.read_series(artifact(cfg, "series"))
    profiles = profile.read_profiles(artifact(cfg, "profiles"),
                                     cfg.get_int("profile.window_s"))
    script = flowmap.parse_script(artifact(cfg, "script").read_text())
    duration = script_duration(cfg, profiles)

    embb_flows = set(cfg.endpoint_map().ids_for_class(profile.EMBB))
    result = validate.validate_and_loop(
        real_metrics(cfg, series),
        script,
        run_twin=lambda s: run_twin_round(cfg, s, duration),
        threshold=cfg.get_float("validate.threshold"),
        max_rounds=cfg.get_int("validate.max_rounds"),
        tuner=validate.MeanRatioTuner(flow_ids=embb_flows),
        database=validate.TrafficDatabase(cfg["paths.database"]),
        config_hash=cfg.hash(),
    )
    summary = artifact(cfg, "validation")
    lines = []
    for i, round_reports in enumerate(result.rounds, start=1):
        for rep in round_reports:
            lines.append(f"round={i}\n{rep.to_text()}")
    lines.append(f"converged={str(result.converged).lower()}\n")
    summary.write_text("\n".join(lines))
    return result
