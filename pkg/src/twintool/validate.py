"""Statistical fidelity validation of twinned traffic.

Compares metric distributions of the replayed traffic against the original
trace with a two-sample KS distance over exact empirical CDFs, after mapping
both samples through one shared [0, 1] normalization. A threshold on the
distance drives the accept/retune loop; accepted scripts land in a traffic
database directory together with a machine-readable manifest.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flowmap import TrafficScript, parse_script, scaled

log = logging.getLogger(__name__)


def joint_range(*samples) -> tuple[float, float]:
    """Min/max over the union of all samples, for one shared normalization."""
    pooled = np.concatenate([np.asarray(s, dtype=float) for s in samples])
    if len(pooled) == 0:
        raise ValueError("cannot compute a range over empty samples")
    return float(pooled.min()), float(pooled.max())


def normalize(values, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Affine map onto [0, 1]; a degenerate (constant) range maps to 0.5."""
    vals = np.asarray(values, dtype=float)
    if len(vals) == 0:
        raise ValueError("cannot normalize an empty sample")
    if lo is None or hi is None:
        lo, hi = joint_range(vals)
    if hi == lo:
        return np.full_like(vals, 0.5)
    return (vals - lo) / (hi - lo)


def ks_distance(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| over exact ECDFs (merged sort, no binning)."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("KS distance needs two non-empty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / len(a)
    fb = np.searchsorted(b, pooled, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


@dataclass
class ValidationReport:
    metric: str
    ks_distance: float
    threshold: float
    n_real: int
    n_twin: int
    norm_lo: float
    norm_hi: float

    @property
    def passed(self) -> bool:
        return self.ks_distance < self.threshold

    def to_text(self) -> str:
        return "\n".join([
            f"metric={self.metric}",
            f"ks_distance={self.ks_distance:.6f}",
            f"threshold={self.threshold}",
            f"pass={str(self.passed).lower()}",
            f"n_real={self.n_real}",
            f"n_twin={self.n_twin}",
            f"norm_min={self.norm_lo:.12g}",
            f"norm_max={self.norm_hi:.12g}",
        ]) + "\n"

    def to_dict(self) -> dict:
        return {
            "metric": self.metric, "ks_distance": self.ks_distance,
            "threshold": self.threshold, "pass": self.passed,
            "n_real": self.n_real, "n_twin": self.n_twin,
            "normalization": {"min": self.norm_lo, "max": self.norm_hi},
        }


def compare(real_metrics: dict, twin_metrics: dict, threshold: float) -> list[ValidationReport]:
    """One report per metric present in both dictionaries."""
    reports = []
    for name in real_metrics:
        if name not in twin_metrics:
            raise KeyError(f"twin metrics missing {name!r}")
        real = np.asarray(real_metrics[name], dtype=float)
        twin = np.asarray(twin_metrics[name], dtype=float)
        lo, hi = joint_range(real, twin)
        dist = ks_distance(normalize(real, lo, hi), normalize(twin, lo, hi))
        reports.append(ValidationReport(name, dist, threshold, len(real), len(twin), lo, hi))
    return reports


@dataclass
class MeanRatioTuner:
    """Default retune policy: rescale the selected flows' periodic rates by the
    ratio of real to twinned mean of one anchor metric. Deliberately simple."""

    metric: str = "load_mbps"
    flow_ids: set[int] | None = None  # None = every periodic flow

    def __call__(self, script: TrafficScript, real_metrics, twin_metrics) -> TrafficScript:
        real_mean = float(np.mean(real_metrics[self.metric]))
        twin_mean = float(np.mean(twin_metrics[self.metric]))
        if twin_mean <= 0:
            log.warning("twin mean of %s is zero; script left unchanged", self.metric)
            return script
        factor = real_mean / twin_mean
        log.info("retuning: scaling rates by %.4f", factor)
        return scaled(script, factor, self.flow_ids)


class TrafficDatabase:
    """Directory of accepted scripts plus one manifest per script."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def save(self, script: TrafficScript, reports: list[ValidationReport],
             round_index: int, config_hash: str = "") -> Path:
        name = f"twin_{config_hash or 'unhashed'}"
        script_path = self.root / f"{name}.mgn"
        script_path.write_text(script.to_text())
        manifest = {
            "script": script_path.name,
            "round": round_index,
            "config_hash": config_hash,
            "metrics": [r.to_dict() for r in reports],
        }
        (self.root / f"{name}.manifest.json").write_text(
            json.dumps(manifest, indent=2) + "\n")
        return script_path

    def scripts(self) -> list[Path]:
        return sorted(self.root.glob("*.mgn"))

    def load(self, name) -> TrafficScript:
        return parse_script((self.root / name).read_text())


@dataclass
class LoopResult:
    converged: bool
    rounds: list[list[ValidationReport]] = field(default_factory=list)
    script: TrafficScript | None = None

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)


def validate_and_loop(real_metrics: dict, initial_script: TrafficScript, run_twin,
                      threshold: float = 0.1, max_rounds: int = 3,
                      tuner=None, database: TrafficDatabase | None = None,
                      config_hash: str = "") -> LoopResult:
    """Replay/validate/retune until every metric passes or rounds run out.

    ``run_twin(script) -> twin_metrics`` performs one replay round and
    extracts the twin-side metric samples. On failure the tuner produces an
    adjusted script for the next round. Non-convergence is a reported
    outcome, not an exception; on success the accepted script is stored in
    the traffic database.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    tuner = tuner or MeanRatioTuner()
    script = initial_script
    result = LoopResult(converged=False)
    for round_index in range(1, max_rounds + 1):
        twin_metrics = run_twin(script)
        reports = compare(real_metrics, twin_metrics, threshold)
        result.rounds.append(reports)
        for rep in reports:
            log.info("round %d: %s ks=%.4f (threshold %.3f) -> %s", round_index,
                     rep.metric, rep.ks_distance, rep.threshold,
                     "pass" if rep.passed else "fail")
        if all(r.passed for r in reports):
            result.converged = True
            result.script = script
            if database is not None:
                database.save(script, reports, round_index, config_hash)
            return result
        if round_index < max_rounds:
            script = tuner(script, real_metrics, twin_metrics)
    result.script = script
    log.warning("validation did not converge within %d rounds", max_rounds)
    return result
