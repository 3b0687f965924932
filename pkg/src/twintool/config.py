"""Pipeline configuration: flat ``section.key = value`` files, CLI overrides,
and a stable hash stamped into every artifact."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .flowmap import EndpointMap
from .ingest import ColumnMapping
from .profile import EMBB, FIXED, SHARE_OF_AGGREGATE, URLLC, ClassSpec
from .ticc import TiccSegmenter

DEFAULTS = {
    "paths.trace": "",
    "paths.workdir": "work",
    "paths.database": "traffic_db",
    "seed": "1",
    "ingest.budget_prbs": "50",
    "ingest.direction": "downlink",
    "ingest.rolling_width": "5",
    "ingest.subframes_per_s": "1000",
    "ingest.tbs_unit": "bits",
    "ingest.delimiter": ",",
    "ingest.cell_id": "",
    "ingest.col.timestamp": "0",
    "ingest.col.sfn": "1",
    "ingest.col.subframe": "2",
    "ingest.col.rnti": "3",
    "ingest.col.direction": "4",
    "ingest.col.mcs": "5",
    "ingest.col.tbs": "6",
    "ingest.col.prb": "7",
    "ticc.num_clusters": "3",
    "ticc.window": "5",
    "ticc.sparsity": "0.11",
    "ticc.switch_penalty": "200",
    "ticc.max_iters": "50",
    "ticc.tol": "1e-4",
    "ticc.variates": "load_mbps,prb_util,active_ues",
    "profile.window_s": "60",
    "profile.split": "1.0",
    "classes.embb.population": "4",
    "classes.embb.payload_bytes": "1250",
    "classes.embb.policy": SHARE_OF_AGGREGATE,
    "classes.embb.rate_msgs_s": "0",
    "classes.urllc.population": "4",
    "classes.urllc.payload_bytes": "125",
    "classes.urllc.policy": FIXED,
    "classes.urllc.rate_msgs_s": "10",
    "endpoints.mode": "testbed",  # testbed | loopback
    "endpoints.port": "5000",
    "emit.warmup_s": "70",
    "emit.window_s": "",  # blank: use profile.window_s
    "replay.bind": "",
    "replay.recv_addr": "127.0.0.1:5000",
    "validate.threshold": "0.1",
    "validate.max_rounds": "3",
    "validate.load_window_s": "",  # blank: use profile.window_s
}


class ConfigError(ValueError):
    pass


class Config:
    """Immutable view over defaults + file values + overrides."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(DEFAULTS)
        for key, val in (values or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            self.values[key] = val

    @classmethod
    def from_file(cls, path, overrides=()) -> "Config":
        values = {}
        text = Path(path).read_text()
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, val = line.split("=", 1)
            values[key.strip()] = val.strip()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must be key=value")
            key, val = item.split("=", 1)
            values[key.strip()] = val.strip()
        return cls(values)

    def __getitem__(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def get_float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from None

    def get_list(self, key: str) -> list[str]:
        return [t.strip() for t in self.values[key].split(",") if t.strip()]

    def hash(self) -> str:
        canon = "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    # ---- typed sections -------------------------------------------------

    def column_mapping(self) -> ColumnMapping:
        def col(name):
            raw = self.values[f"ingest.col.{name}"]
            return int(raw) if raw.lstrip("-").isdigit() else raw

        return ColumnMapping(
            timestamp=col("timestamp"), sfn=col("sfn"), subframe=col("subframe"),
            rnti=col("rnti"), direction=col("direction"), mcs=col("mcs"),
            tbs=col("tbs"), prb=col("prb"),
            delimiter=self.values["ingest.delimiter"],
            tbs_unit=self.values["ingest.tbs_unit"],
        )

    def segmenter(self) -> TiccSegmenter:
        return TiccSegmenter(
            n_clusters=self.get_int("ticc.num_clusters"),
            window=self.get_int("ticc.window"),
            sparsity=self.get_float("ticc.sparsity"),
            switch_penalty=self.get_float("ticc.switch_penalty"),
            max_iter=self.get_int("ticc.max_iters"),
            tol=self.get_float("ticc.tol"),
            random_state=self.get_int("seed"),
        )

    def class_specs(self) -> tuple[ClassSpec, ...]:
        return (
            ClassSpec(EMBB,
                      population=self.get_int("classes.embb.population"),
                      payload_bytes=self.get_int("classes.embb.payload_bytes"),
                      rate_policy=self.values["classes.embb.policy"],
                      fixed_rate_msgs_s=self.get_float("classes.embb.rate_msgs_s")),
            ClassSpec(URLLC,
                      population=self.get_int("classes.urllc.population"),
                      payload_bytes=self.get_int("classes.urllc.payload_bytes"),
                      rate_policy=self.values["classes.urllc.policy"],
                      fixed_rate_msgs_s=self.get_float("classes.urllc.rate_msgs_s")),
        )

    def endpoint_map(self) -> EndpointMap:
        n_embb = self.get_int("classes.embb.population")
        n_urllc = self.get_int("classes.urllc.population")
        port = self.get_int("endpoints.port")
        mode = self.values["endpoints.mode"]
        if mode == "loopback":
            return EndpointMap.loopback(n_embb, n_urllc, port)
        if mode == "testbed":
            return EndpointMap.default(n_embb, n_urllc, port)
        raise ConfigError(f"endpoints.mode must be 'testbed' or 'loopback', got {mode!r}")

    def emit_window_s(self) -> float:
        raw = self.values["emit.window_s"]
        return float(raw) if raw else self.get_float("profile.window_s")

    def load_window_s(self) -> float:
        raw = self.values["validate.load_window_s"]
        return float(raw) if raw else self.get_float("profile.window_s")

    def workdir(self) -> Path:
        return Path(self.values["paths.workdir"])
