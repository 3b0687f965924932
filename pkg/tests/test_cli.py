import json

import pytest

from conftest import free_udp_port
from twintool.cli import main
from twintool.config import Config, ConfigError
from twintool.synth import write_piecewise_trace


def test_config_defaults():
    cfg = Config()
    assert cfg.get_int("ticc.num_clusters") == 3
    assert cfg.get_float("ticc.sparsity") == 0.11
    assert cfg.get_int("profile.window_s") == 60
    assert cfg.get_float("emit.warmup_s") == 70.0


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "twin.cfg"
    path.write_text("# comment\nticc.num_clusters = 5\nprofile.window_s = 30\n")
    cfg = Config.from_file(path, overrides=["ticc.num_clusters=2"])
    assert cfg.get_int("ticc.num_clusters") == 2  # override wins
    assert cfg.get_int("profile.window_s") == 30


def test_config_unknown_key_rejected(tmp_path):
    path = tmp_path / "twin.cfg"
    path.write_text("no.such.key = 1\n")
    with pytest.raises(ConfigError, match="unknown config key"):
        Config.from_file(path)


def test_config_bad_value_type():
    cfg = Config({"ticc.num_clusters": "many"})
    with pytest.raises(ConfigError, match="integer"):
        cfg.get_int("ticc.num_clusters")


def test_config_hash_stable_and_sensitive():
    a = Config({"seed": "1"})
    b = Config({"seed": "1"})
    c = Config({"seed": "2"})
    assert a.hash() == b.hash()
    assert a.hash() != c.hash()


def test_endpoint_modes():
    assert Config({"endpoints.mode": "loopback"}).endpoint_map()[1].dst_ip == "127.0.0.1"
    assert Config().endpoint_map()[1].dst_ip == "172.16.0.3"
    with pytest.raises(ConfigError):
        Config({"endpoints.mode": "teapot"}).endpoint_map()


def base_config(tmp_path, port=5000):
    trace = tmp_path / "trace.csv"
    write_piecewise_trace(trace, [1.0, 2.0, 1.0], 30, n_ues=4)
    cfg_path = tmp_path / "twin.cfg"
    cfg_path.write_text("\n".join([
        f"paths.trace = {trace}",
        f"paths.workdir = {tmp_path}/work",
        f"paths.database = {tmp_path}/db",
        "ingest.rolling_width = 1",
        "ticc.num_clusters = 2",
        "profile.window_s = 30",
        "emit.warmup_s = 0",
        "emit.window_s = 5",
        "endpoints.mode = loopback",
        f"endpoints.port = {port}",
        f"replay.recv_addr = 127.0.0.1:{port}",
        "validate.load_window_s = 1",
    ]) + "\n")
    return cfg_path


def test_cluster_without_ingest_names_missing_file(tmp_path, capsys):
    cfg_path = base_config(tmp_path)
    rc = main(["cluster", "--config", str(cfg_path)])
    err = capsys.readouterr().err
    assert rc == 2
    assert "series.csv" in err
    assert "ingest" in err


def test_stage_chain_and_determinism(tmp_path):
    cfg_path = base_config(tmp_path)
    for stage in ("ingest", "cluster", "profile", "emit"):
        assert main([stage, "--config", str(cfg_path)]) == 0
    script1 = (tmp_path / "work" / "twin_script.mgn").read_bytes()
    labels1 = (tmp_path / "work" / "labels.csv").read_bytes()
    series = (tmp_path / "work" / "series.csv").read_text()
    assert series.splitlines()[0].startswith("# config_hash=")

    # second run from scratch: byte-identical artifacts
    work = tmp_path / "work"
    for f in work.iterdir():
        f.unlink()
    for stage in ("ingest", "cluster", "profile", "emit"):
        assert main([stage, "--config", str(cfg_path)]) == 0
    assert (work / "twin_script.mgn").read_bytes() == script1
    assert (work / "labels.csv").read_bytes() == labels1

    meta = json.loads((work / "twin_script.mgn.meta").read_text())
    assert meta["stage"] == "emit" and len(meta["config_hash"]) == 12


def test_emitted_script_realizes_expected_rates(tmp_path):
    cfg_path = base_config(tmp_path)
    for stage in ("ingest", "cluster", "profile", "emit"):
        assert main([stage, "--config", str(cfg_path)]) == 0
    text = (tmp_path / "work" / "twin_script.mgn").read_text()
    # 1 Mbps window: 2 active broadband UEs at 49 msg/s; 2 Mbps: 99 msg/s
    assert "PERIODIC [49 1250]" in text
    assert "PERIODIC [99 1250]" in text
    assert "PERIODIC [10 125]" in text


def test_synth_trace_cli(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["synth-trace", "--out", str(out), "--levels", "1,2",
                 "--seconds", "5", "--ues", "2"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 5 * 100 + 5 * 200


def test_kpm_cli_latency_and_satisfy(tmp_path):
    log = tmp_path / "mgen.csv"
    log.write_text("rx_time,tx_time,flow,seq,size,src,dst\n"
                   "1.004,1.000,1,0,125,a,b\n"
                   "2.030,2.000,1,1,125,a,b\n")
    out = tmp_path / "lat.csv"
    assert main(["kpm", "latency", "--in", str(log), "--out", str(out)]) == 0
    assert "4.0" in out.read_text()

    out2 = tmp_path / "sat.csv"
    assert main(["kpm", "satisfy", "--in", str(log), "--out", str(out2),
                 "--slicing", "slicing_2"]) == 0
    text = out2.read_text()
    assert text.startswith("# slicing=slicing_2 embb_prbs=21 urllc_prbs=29")
    assert "Cloud gaming,7,0.5" in text


def test_kpm_cli_cqi_and_prb(tmp_path):
    frames = tmp_path / "ue_metrics.csv"
    frames.write_text("timestamp,imsi,slice_id,dl_cqi,sum_requested_prbs,sum_granted_prbs\n"
                      "0.0,u1,0,10,100,50\n0.25,u1,0,10,80,80\n")
    out = tmp_path / "cqi.csv"
    assert main(["kpm", "cqi", "--in", str(frames), "--out", str(out)]) == 0
    assert "u1,0.0000" in out.read_text()
    out2 = tmp_path / "prb.csv"
    assert main(["kpm", "prb-ratio", "--in", str(frames), "--out", str(out2)]) == 0
    body = out2.read_text().splitlines()
    assert body[1:] == ["0.500000", "1.000000"]


def test_bad_config_path_is_exit_2(capsys):
    assert main(["ingest", "--config", "/nonexistent/twin.cfg"]) == 2
    assert "error" in capsys.readouterr().err


def test_replay_roundtrip_via_cli(tmp_path):
    port = free_udp_port()
    script = tmp_path / "s.mgn"
    script.write_text(f"0 ON 1 UDP DST 127.0.0.1/{port} PERIODIC [50 125]\n"
                      f"\n"
                      f"2 OFF 1\n")
    cfg_path = tmp_path / "twin.cfg"
    cfg_path.write_text(f"paths.workdir = {tmp_path}/work\n")

    import threading
    out = tmp_path / "log.csv"
    recv_rc = {}

    def run_recv():
        recv_rc["rc"] = main(["replay-recv", "--config", str(cfg_path),
                              "--bind", f"127.0.0.1:{port}",
                              "--out", str(out), "--duration", "3.5"])

    thread = threading.Thread(target=run_recv)
    thread.start()
    import time
    time.sleep(0.3)
    rc = main(["replay-send", "--config", str(cfg_path), "--script", str(script)])
    thread.join()
    assert rc == 0 and recv_rc["rc"] == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "rx_time,tx_time,flow,seq,size,src,dst"
    assert len(rows) - 1 == pytest.approx(100, abs=8)
