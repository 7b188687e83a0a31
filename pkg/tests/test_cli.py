import json
import os

import numpy as np
import pytest

from graphdna import cli, dna
from graphdna import factorize as fz
from graphdna.errors import DivergenceError
from graphdna.graph import SparseGraph, save_edges


def kv(text):
    out = {}
    for line in text.splitlines():
        if "=" in line and not line.startswith("---"):
            k, v = line.split("=", 1)
            out[k] = v
    return out


@pytest.fixture()
def small(tmp_path):
    prefix = tmp_path / "run"
    assert cli.run(["simulate", "--out", str(prefix), "--n", "300", "--m", "60", "--p", "0.02",
                    "--seed", "2"]) == 0
    return tmp_path, prefix


def test_encode_path_graph(tmp_path, capsys):
    g = SparseGraph.from_edges([0, 1, 2], [1, 2, 3], n=4)
    save_edges(g, tmp_path / "p.graph")
    assert cli.run(["encode", "--graph", str(tmp_path / "p.graph"), "--out", str(tmp_path / "p.dna"),
                    "--d", "1", "--c", "64", "--k", "2"]) == 0
    b = dna.load(tmp_path / "p.dna")
    for i in range(4):
        for j in range(max(0, i - 1), min(4, i + 2)):
            assert b.contains(i, j)
    man = json.loads((tmp_path / "p.dna.manifest.json").read_text())
    assert man["command"] == "encode" and man["nnz"]["nnz_dna"] == b.nnz
    assert man["params"]["theta"] == "inf"
    assert "wall_time_s" in man and str(tmp_path / "p.dna") in man["outputs"]


def test_full_pipeline_grmf_dna(tmp_path, capsys):
    p = tmp_path / "s"
    assert cli.run(["simulate", "--out", str(p), "--seed", "1"]) == 0
    common = ["--ratings", f"{p}.ratings", "--epochs", "15", "--seed", "0"]
    assert cli.run(["train", *common, "--method", "mf", "--lambda-l", "100", "--out", str(tmp_path / "mf")]) == 0
    assert cli.run(["train", *common, "--method", "grmf", "--graph", f"{p}.graph", "--lambda-l", "10",
                    "--lambda-g", "1", "--out", str(tmp_path / "g")]) == 0
    assert cli.run(["train", *common, "--method", "grmf_dna", "--graph", f"{p}.graph", "--d", "3",
                    "--lambda-l", "10", "--lambda-g", "0.1", "--out", str(tmp_path / "dna"),
                    "--report", str(tmp_path / "dna.txt")]) == 0
    assert (tmp_path / "dna.png").exists()
    capsys.readouterr()
    assert cli.run(["eval", "--ratings", f"{p}.ratings", "--model", str(tmp_path / "dna"),
                    "--baseline", str(tmp_path / "mf"), "--graph-model", str(tmp_path / "g"),
                    "--report", str(tmp_path / "eval.txt")]) == 0
    out = kv(capsys.readouterr().out)
    assert "rmse" in out and "rgg" in out
    assert "rgg=" in (tmp_path / "eval.txt").read_text()


def test_power_cap_leaves_nothing(small, capsys):
    tmp, prefix = small
    before = set(os.listdir(tmp))
    code = cli.run(["power", "--graph", f"{prefix}.graph", "--weights", "1,1,1", "--nnz-cap", "500",
                    "--out", str(tmp / "p.graph")])
    assert code == cli.EXIT_RESOURCE
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: nnz-cap:")
    assert set(os.listdir(tmp)) == before


def test_power_writes(small):
    tmp, prefix = small
    assert cli.run(["power", "--graph", f"{prefix}.graph", "--weights", "0,1", "--threshold", "2",
                    "--out", str(tmp / "p.graph")]) == 0
    assert (tmp / "p.graph.manifest.json").exists()


def test_simulate_manifest_replay(small):
    tmp, prefix = small
    again = tmp / "again"
    assert cli.run(["simulate", "--config", f"{prefix}.manifest.json", "--out", str(again)]) == 0
    for suffix in (".ratings", ".ratings.train", ".ratings.validation", ".ratings.test", ".graph"):
        assert (tmp / f"run{suffix}").read_bytes() == (tmp / f"again{suffix}").read_bytes()


def test_encode_manifest_replay(small):
    tmp, prefix = small
    assert cli.run(["encode", "--graph", f"{prefix}.graph", "--out", str(tmp / "a.dna"), "--d", "3",
                    "--theta", "40", "--seed", "5"]) == 0
    assert cli.run(["encode", "--config", str(tmp / "a.dna.manifest.json"), "--graph", f"{prefix}.graph",
                    "--out", str(tmp / "b.dna")]) == 0
    assert (tmp / "a.dna").read_bytes() == (tmp / "b.dna").read_bytes()


def test_train_manifest_replay(small):
    tmp, prefix = small
    args = ["train", "--ratings", f"{prefix}.ratings", "--graph", f"{prefix}.graph", "--method", "grmf_power",
            "--weights", "1,0.5", "--epochs", "4", "--out", str(tmp / "m1")]
    assert cli.run(args) == 0
    assert cli.run(["train", "--config", str(tmp / "m1.manifest.json"), "--ratings", f"{prefix}.ratings",
                    "--graph", f"{prefix}.graph", "--out", str(tmp / "m2")]) == 0
    h1 = json.loads((tmp / "m1.manifest.json").read_text())["history"]
    h2 = json.loads((tmp / "m2.manifest.json").read_text())["history"]
    assert h1 == h2 and len(h1) == 5
    assert (tmp / "m1").read_bytes() == (tmp / "m2").read_bytes()


def test_config_file_and_flag_precedence(small, capsys):
    tmp, prefix = small
    (tmp / "enc.cfg").write_text("# dna settings\nc = 128\nk = 3\nd = 2\ntheta = inf\n")
    capsys.readouterr()
    assert cli.run(["encode", "--config", str(tmp / "enc.cfg"), "--graph", f"{prefix}.graph",
                    "--out", str(tmp / "e.dna"), "--k", "1"]) == 0
    out = kv(capsys.readouterr().out)
    assert (out["c"], out["k"], out["d"]) == ("128", "1", "2")


def test_unknown_config_key(small, capsys):
    tmp, prefix = small
    (tmp / "bad.cfg").write_text("colour = blue\n")
    assert cli.run(["encode", "--config", str(tmp / "bad.cfg"), "--graph", f"{prefix}.graph",
                    "--out", str(tmp / "e.dna")]) == cli.EXIT_USAGE


@pytest.mark.parametrize("argv,code,kind", [
    (["bogus"], cli.EXIT_USAGE, None),
    (["train", "--ratings", "missing.txt", "--out", "x"], cli.EXIT_INPUT, "input"),
])
def test_exit_codes(argv, code, kind, capsys):
    assert cli.run(argv) == code
    if kind:
        assert capsys.readouterr().err.startswith(f"error: {kind}:")


def test_method_requires_graph(small, capsys):
    tmp, prefix = small
    assert cli.run(["train", "--ratings", f"{prefix}.ratings", "--method", "grmf_dna",
                    "--out", str(tmp / "m")]) == cli.EXIT_USAGE
    assert not (tmp / "m").exists()


def test_bad_input_file(tmp_path, capsys):
    (tmp_path / "g").write_text("0 -1\n")
    assert cli.run(["encode", "--graph", str(tmp_path / "g"), "--out", str(tmp_path / "o")]) == cli.EXIT_INPUT
    assert not (tmp_path / "o").exists()


def test_divergence_exit(small, monkeypatch, capsys):
    tmp, prefix = small

    def boom(*a, **k):
        raise DivergenceError("objective rose", [1.0, 2.0])

    monkeypatch.setattr(fz, "train_grmf", boom)
    code = cli.run(["train", "--ratings", f"{prefix}.ratings", "--method", "mf", "--out", str(tmp / "m")])
    assert code == cli.EXIT_DIVERGENCE
    assert capsys.readouterr().err.startswith("error: divergence:")
    assert not (tmp / "m").exists()


def test_bench(tmp_path, capsys):
    rep = tmp_path / "bench.txt"
    assert cli.run(["bench", "--n", "2000", "--p", "0.002", "--report", str(rep)]) == 0
    text = rep.read_text()
    rows = [l.split("\t") for l in text.splitlines() if l[:1].isdigit() and "\t" in l]
    assert len(rows) == 4
    nnz = [int(r[3]) for r in rows]
    assert nnz == sorted(nnz)
    assert (tmp_path / "bench.png").stat().st_size > 0


def test_bounds(tmp_path):
    rep = tmp_path / "b.txt"
    assert cli.run(["bounds", "--cs", "256", "--ks", "2,4", "--shares", "0.5", "--trials", "300",
                    "--report", str(rep)]) == 0
    assert "in_envelope=2" in rep.read_text()
    assert (tmp_path / "b.png").exists()


def test_sweep(small):
    tmp, prefix = small
    rep = tmp / "sw.txt"
    assert cli.run(["sweep", "--ratings", f"{prefix}.ratings", "--graph", f"{prefix}.graph", "--method", "grmf",
                    "--epochs", "3", "--lambda-l-grid", "1,10", "--lambda-g-grid", "0.1,1",
                    "--report", str(rep), "--out", str(tmp / "best")]) == 0
    vals = kv(rep.read_text())
    assert float(vals["best_lambda_l"]) in (1.0, 10.0)
    assert (tmp / "best").exists() and (tmp / "sw.png").exists()


def test_implicit_pipeline(tmp_path, capsys):
    p = tmp_path / "imp"
    assert cli.run(["simulate", "--out", str(p), "--n", "200", "--m", "50", "--p", "0.03",
                    "--train-frac", "0.2", "--test-frac", "0.1", "--implicit-threshold", "0.5"]) == 0
    for method in ("wmf", "wmf_dna", "cofactor_dna"):
        assert cli.run(["train", "--ratings", f"{p}.ratings", "--graph", f"{p}.graph", "--method", method,
                        "--epochs", "3", "--out", str(tmp_path / method)]) == 0
    capsys.readouterr()
    assert cli.run(["eval", "--ratings", f"{p}.ratings", "--model", str(tmp_path / "wmf_dna")]) == 0
    out = kv(capsys.readouterr().out)
    assert {"map", "hlu", "p@1", "ndcg@1", "p@5", "ndcg@5", "users_evaluated"} <= set(out)
    assert out["p@1"] == out["ndcg@1"]
