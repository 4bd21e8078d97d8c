import csv
import hashlib
import json
import struct

import pytest

from cep3.cli import main

TINY = {"hidden_dim": 4, "forecaster_hidden": 4, "heads": 2, "time_dim": 2, "hops": 1,
        "fanout": 5, "epochs": 1, "K": 10, "lr": 1e-3, "embed_dim": 4, "rnn_hidden": 4,
        "context": 4}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    sim = root / "sim"
    assert main(["simulate", "--preset", "poisson", "--n-communities", "2", "--size", "3",
                 "--horizon", "60", "--rate", "0.1", "--out", str(sim)]) == 0
    stream = root / "stream"
    assert main(["ingest", "--input", str(sim / "events.csv"), "--features", "--out", str(stream)]) == 0
    return root, cfg, sim, stream


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_help_returns_zero(capsys):
    assert main(["--help"]) == 0
    assert main(["train", "--help"]) == 0
    assert "file formats" in capsys.readouterr().out


def test_simulate_outputs_and_manifest(workspace):
    root, cfg, sim, stream = workspace
    for name in ("events.csv", "spec.json", "communities.csv", "manifest.json"):
        assert (sim / name).exists()
    man = json.loads((sim / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 0
    for rel, digest in man["outputs"].items():
        assert hashlib.sha256((sim / rel).read_bytes()).hexdigest() == digest
    assert set(man["outputs"]) == {"events.csv", "spec.json", "communities.csv"}


def test_simulate_deterministic(workspace, tmp_path):
    root, cfg, sim, stream = workspace
    again = tmp_path / "again"
    assert main(["simulate", "--preset", "poisson", "--n-communities", "2", "--size", "3",
                 "--horizon", "60", "--rate", "0.1", "--out", str(again)]) == 0
    assert (again / "events.csv").read_bytes() == (sim / "events.csv").read_bytes()


def test_ingest_stream_dir(workspace):
    root, cfg, sim, stream = workspace
    meta = json.loads((stream / "stream.json").read_text())
    assert meta["feature_dim"] == 10
    split = json.loads((stream / "split.json").read_text())
    assert split is not None
    rows = _rows(stream / "events.csv")
    assert len(rows) == len(_rows(sim / "events.csv"))


def test_communities_command(workspace, tmp_path):
    root, cfg, sim, stream = workspace
    out = tmp_path / "comm"
    assert main(["communities", "--stream", str(stream), "--full-stream", "--out", str(out)]) == 0
    rows = _rows(out / "communities.csv")
    assert {r["node"] for r in rows} and set(rows[0]) == {"node", "community"}


@pytest.mark.parametrize("kind", ["cep3", "cep3-noar", "cep3-joint", "rmtpp", "rmtpp-hrchy",
                                  "gru", "poisson", "hawkes"])
def test_train_evaluate_each_kind(workspace, tmp_path, kind):
    root, cfg, sim, stream = workspace
    mdir = tmp_path / "model"
    args = ["train", "--stream", str(stream), "--communities", str(sim / "communities.csv"),
            "--model", kind, "--config", str(cfg), "--out", str(mdir)]
    assert main(args) == 0
    info = json.loads((mdir / "model.json").read_text())
    assert info["kind"] == kind
    rep = tmp_path / "report"
    assert main(["evaluate", "--stream", str(stream), "--communities", str(sim / "communities.csv"),
                 "--model-dir", str(mdir), "--config", str(cfg), "--out", str(rep)]) == 0
    doc = json.loads((rep / "report.json").read_text())
    assert doc["averages"]["pp"] >= 1.0
    assert _rows(rep / "report.csv")


@pytest.fixture(scope="module")
def trained(workspace):
    root, cfg, sim, stream = workspace
    mdir = root / "cep3"
    assert main(["train", "--stream", str(stream), "--communities", str(sim / "communities.csv"),
                 "--config", str(cfg), "--checkpoint-every", "1", "--validate", "--out", str(mdir)]) == 0
    return mdir


def test_train_artifacts(trained):
    assert (trained / "checkpoints" / "epoch_0001.bin").exists()
    trace = _rows(trained / "trace.csv")
    assert list(trace[0]) == ["epoch", "batch", "time_nll", "entity_nll", "total"]
    blob = (trained / "model.bin").read_bytes()
    assert blob[:8] == b"CEP3PSET"
    version, mlen = struct.unpack("<IQ", blob[8:20])
    man = json.loads(blob[20:20 + mlen])
    assert version == 1 and man["version"] == 1
    payload = len(blob) - 20 - mlen
    assert payload == 4 * sum(a["count"] for a in man["arrays"])


def test_forecast_command(workspace, trained, tmp_path):
    root, cfg, sim, stream = workspace
    out = tmp_path / "fc"
    assert main(["forecast", "--stream", str(stream), "--communities", str(sim / "communities.csv"),
                 "--model-dir", str(trained), "--config", str(cfg), "--K", "5",
                 "--distributions", "--out", str(out)]) == 0
    rows = _rows(out / "forecast.csv")
    assert [int(r["step"]) for r in rows] == [1, 2, 3, 4, 5]
    times = [float(r["t_abs"]) for r in rows]
    assert times == sorted(times)
    dist = json.loads((out / "distributions.json").read_text())
    assert abs(sum(dist[0]["p_source"]) - 1) < 1e-9


def test_forecast_sample_seeded(workspace, trained, tmp_path):
    root, cfg, sim, stream = workspace
    outs = []
    for i in range(2):
        out = tmp_path / f"s{i}"
        assert main(["forecast", "--stream", str(stream), "--communities", str(sim / "communities.csv"),
                     "--model-dir", str(trained), "--config", str(cfg), "--mode", "sample",
                     "--seed", "7", "--out", str(out)]) == 0
        outs.append((out / "forecast.csv").read_bytes())
    assert outs[0] == outs[1]


def test_export_viz_keeps_at_most_a_third(workspace, trained, tmp_path):
    root, cfg, sim, stream = workspace
    out = tmp_path / "viz"
    assert main(["export-viz", "--stream", str(stream), "--communities", str(sim / "communities.csv"),
                 "--model-dir", str(trained), "--config", str(cfg), "--out", str(out)]) == 0
    rows = _rows(out / "viz.csv")
    assert 0 < len(rows) <= int(0.33 * 9)
    freqs = [int(r["frequency"]) for r in rows]
    assert freqs == sorted(freqs, reverse=True)


def test_bench_scaling_output(tmp_path):
    out = tmp_path / "bench"
    assert main(["bench-scaling", "--sizes", "4,8", "--steps", "2", "--hidden-dim", "4",
                 "--out", str(out)]) == 0
    rows = _rows(out / "scaling.csv")
    assert {(int(r["size"]), r["head"]) for r in rows} == {
        (4, "hierarchical"), (4, "joint"), (8, "hierarchical"), (8, "joint")}
    assert all(float(r["ns_per_step"]) > 0 for r in rows)


def _err(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    assert line.startswith("error code=")
    return line


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 1
    _err(capsys)
    assert main(["train", "--out", str(tmp_path / "x")]) == 1
    assert "kind=usage" in _err(capsys)
    assert main(["bench-scaling", "--sizes", "a,b", "--out", str(tmp_path / "b")]) == 1
    assert main(["train", "--stream", str(tmp_path / "nope"), "--communities", "x",
                 "--out", str(tmp_path / "y")]) == 1
    assert main(["export-viz", "--stream", ".", "--communities", ".", "--model-dir", ".",
                 "--keep", "1.5", "--out", str(tmp_path / "z")]) == 1


def test_unknown_config_key_is_usage(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"bogus": 1}')
    assert main(["bench-scaling", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_data_errors(workspace, trained, tmp_path, capsys):
    root, cfg, sim, stream = workspace
    bad = tmp_path / "bad.csv"
    bad.write_text("source,dest,time\n0,1,notanumber\n")
    assert main(["ingest", "--input", str(bad), "--out", str(tmp_path / "o1")]) == 2
    assert "kind=data" in _err(capsys)
    badcfg = tmp_path / "bad.json"
    badcfg.write_text("{not json")
    assert main(["bench-scaling", "--config", str(badcfg), "--out", str(tmp_path / "o2")]) == 2
    assert main(["evaluate", "--stream", str(stream), "--communities", str(sim / "communities.csv"),
                 "--model-dir", str(tmp_path), "--out", str(tmp_path / "o3")]) == 2
    assert main(["forecast", "--stream", str(stream), "--communities", str(sim / "communities.csv"),
                 "--model-dir", str(trained), "--community", "99", "--config", str(cfg),
                 "--out", str(tmp_path / "o4")]) == 2
