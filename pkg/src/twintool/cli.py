"""twintool: twin decoded traffic traces onto replayable UDP workloads.

Usage: ``twintool <stage> --config FILE [--override key=value]...``

Stages: ingest, cluster, profile, emit, replay-send, replay-recv, kpm,
validate, twin, synth-trace. Exit status is 0 on success/pass, 1 when the
twin loop does not converge, 2 on error. Logs go to stderr; artifacts only
to the configured workdir and database directory.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import kpm, pipeline, synth
from .config import Config, ConfigError


def _add_config_args(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--override", action="append", default=[], metavar="K=V",
                     help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twintool", description=__doc__)
    sub = parser.add_subparsers(dest="stage", required=True)

    for stage in ("ingest", "cluster", "profile", "emit", "validate", "twin"):
        _add_config_args(sub.add_parser(stage))

    p = sub.add_parser("replay-send", help="replay a traffic script over UDP")
    _add_config_args(p)
    p.add_argument("--script", help="script file (default: workdir artifact)")
    p.add_argument("--bind", default=None, help="local source address")
    p.add_argument("--duration", type=float, default=None,
                   help="stop time in seconds from script start")

    p = sub.add_parser("replay-recv", help="log received datagrams to CSV")
    _add_config_args(p)
    p.add_argument("--bind", default=None, help="ip:port to listen on")
    p.add_argument("--out", default=None, help="packet log output file")
    p.add_argument("--duration", type=float, default=10.0)

    p = sub.add_parser("kpm", help="packet-log and protocol-stack analytics")
    p.add_argument("op", choices=["latency", "throughput", "prb-ratio", "cqi", "satisfy"])
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--slicing", choices=sorted(kpm.SLICING_CONFIGS),
                   help="annotate output with a slicing configuration")
    p.add_argument("--window", type=float, default=0.25,
                   help="throughput window in seconds")

    p = sub.add_parser("synth-trace", help="generate a synthetic piecewise trace")
    p.add_argument("--out", required=True)
    p.add_argument("--levels", default="1,2,1", help="Mbps per segment, comma separated")
    p.add_argument("--seconds", type=int, default=60, help="seconds per segment")
    p.add_argument("--ues", type=int, default=4)
    return parser


def _config(args) -> Config:
    if args.config:
        return Config.from_file(args.config, args.override)
    values = {}
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        key, val = item.split("=", 1)
        values[key.strip()] = val.strip()
    return Config(values)


def _run_kpm(args) -> int:
    header = []
    if args.slicing:
        embb, urllc = kpm.SLICING_CONFIGS[args.slicing]
        header.append(f"# slicing={args.slicing} embb_prbs={embb} urllc_prbs={urllc}")

    if args.op in ("latency", "throughput", "satisfy"):
        df = kpm.read_packet_log(args.infile)
    else:
        df = kpm.read_kpm_csv(args.infile)

    with open(args.outfile, "w") as fh:
        for line in header:
            fh.write(line + "\n")
        if args.op == "latency":
            lat = kpm.latency_series(df)
            fh.write("latency_ms\n")
            fh.writelines(f"{v:.6f}\n" for v in lat)
        elif args.op == "throughput":
            starts, mbps = kpm.windowed_throughput(df, args.window)
            fh.write("window_start,mbps\n")
            fh.writelines(f"{s:.6f},{m:.6f}\n" for s, m in zip(starts, mbps))
        elif args.op == "prb-ratio":
            ratios = kpm.prb_ratio(df)
            fh.write("prb_ratio\n")
            fh.writelines(f"{v:.6f}\n" for v in ratios)
        elif args.op == "cqi":
            table = kpm.cqi_occupancy(df)
            fh.write("imsi," + ",".join(f"cqi{i}" for i in range(kpm.CQI_LEVELS)) + "\n")
            for imsi, row in table.iterrows():
                fh.write(f"{imsi}," + ",".join(f"{v:.4f}" for v in row) + "\n")
        else:  # satisfy
            lat = kpm.latency_series(df)
            table = kpm.requirement_satisfaction(lat)
            fh.write("use_case,bound_ms,probability\n")
            for _, row in table.iterrows():
                fh.write(f"{row.use_case},{row.bound_ms:g},{row.probability:.4f}\n")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.stage == "kpm":
            return _run_kpm(args)
        if args.stage == "synth-trace":
            levels = [float(x) for x in args.levels.split(",")]
            n = synth.write_piecewise_trace(args.out, levels, args.seconds, args.ues)
            print(f"wrote {n} rows to {args.out}", file=sys.stderr)
            return 0

        cfg = _config(args)
        if args.stage == "ingest":
            pipeline.stage_ingest(cfg)
        elif args.stage == "cluster":
            pipeline.stage_cluster(cfg)
        elif args.stage == "profile":
            pipeline.stage_profile(cfg)
        elif args.stage == "emit":
            pipeline.stage_emit(cfg)
        elif args.stage == "replay-send":
            report = pipeline.stage_replay_send(cfg, args.script, args.duration)
            for fid, st in sorted(report.flows.items()):
                print(f"flow {fid}: sent={st.sent} rate={st.achieved_rate:.2f}/s "
                      f"(target {st.target_rate:g}/s)", file=sys.stderr)
        elif args.stage == "replay-recv":
            logbook = pipeline.stage_replay_recv(cfg, args.bind, args.out, args.duration)
            print(f"received {len(logbook)} packets ({logbook.malformed} malformed)",
                  file=sys.stderr)
        elif args.stage == "validate":
            reports = pipeline.stage_validate(cfg)
            for rep in reports:
                sys.stdout.write(rep.to_text() + "\n")
            if not all(r.passed for r in reports):
                return 1
        elif args.stage == "twin":
            result = pipeline.stage_twin(cfg)
            print(f"twin loop: {'converged' if result.converged else 'non-converged'} "
                  f"after {result.n_rounds} round(s)", file=sys.stderr)
            if not result.converged:
                return 1
        return 0
    except (ConfigError, FileNotFoundError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
