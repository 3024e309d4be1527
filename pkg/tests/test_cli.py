import json
from pathlib import Path

import numpy as np
import pytest

from treerank_var.cli import main

FAST = ["--n-iter", "60", "--n-warmup", "30", "--leapfrog", "6"]


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _edges(path, pairs):
    path.write_text("i,j\n" + "".join(f"{i},{j}\n" for i, j in pairs))
    return str(path)


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--p", "8", "--T", "400", "--kind", "tree", "--m0", "2", "--seed", "1",
                 "--out", str(root / "a")]) == 0
    return root


def test_simulate_contract_and_determinism(sim):
    a = sim / "a"
    for name in ("series.csv", "truth_coef.csv", "truth_noise_cov.csv", "truth_edges.csv", "truth.json"):
        assert (a / name).is_file()
    data = np.loadtxt(a / "series.csv", delimiter=",", skiprows=1)
    assert data.shape == (400, 8)
    assert main(["simulate", "--p", "8", "--T", "400", "--kind", "tree", "--m0", "2", "--seed", "1",
                 "--out", str(sim / "b")]) == 0
    assert _tree_bytes(a) == _tree_bytes(sim / "b")


def test_simulate_infeasible_tree_count(tmp_path):
    assert main(["simulate", "--p", "8", "--T", "50", "--m0", "5", "--out", str(tmp_path)]) == 3


def test_missing_input_exit_code(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "f")]) == 2
    assert main(["select", "--input", str(tmp_path / "nope.csv")]) == 2
    assert main(["treerank", "--edges", str(tmp_path / "nope.csv")]) == 2
    assert main(["summarize", str(tmp_path / "nope.csv")]) == 2


def test_fit_is_reproducible_and_manifest_round_trips(sim, tmp_path):
    series = str(sim / "a" / "series.csv")
    args = ["fit", "--input", series, "--d", "2", "--m", "2", "--seed", "4", *FAST]
    assert main([*args, "--out", str(tmp_path / "f1")]) == 0
    assert main([*args, "--out", str(tmp_path / "f2")]) == 0
    f1 = _tree_bytes(tmp_path / "f1")
    assert f1 == _tree_bytes(tmp_path / "f2")
    man = json.loads((tmp_path / "f1" / "manifest.json").read_text())
    assert man["args"]["d"] == 2 and man["args"]["m"] == 2 and man["args"]["seed"] == 4
    assert "numpy" in man["versions"]
    # explicit (d, m) skips the plateau surface
    assert "plateau.csv" not in f1
    assert main(["fit", "--manifest", str(tmp_path / "f1" / "manifest.json"), "--out", str(tmp_path / "f3")]) == 0
    f3 = _tree_bytes(tmp_path / "f3")
    assert [k for k in f1 if f1[k] != f3.get(k)] == []
    coef = np.loadtxt(tmp_path / "f1" / "coef_mean.csv", delimiter=",")
    assert coef.shape == (16, 8)


def test_bad_manifest_exit_code(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    assert main(["fit", "--manifest", str(tmp_path / "m.json")]) == 2


def test_select_is_reproducible(sim, tmp_path, capsys):
    series = str(sim / "a" / "series.csv")
    assert main(["select", "--input", series, "--d-max", "2", "--m-max", "2", "--out", str(tmp_path / "s1")]) == 0
    assert main(["select", "--input", series, "--d-max", "2", "--m-max", "2", "--out", str(tmp_path / "s2")]) == 0
    assert _tree_bytes(tmp_path / "s1") == _tree_bytes(tmp_path / "s2")
    sel = json.loads((tmp_path / "s1" / "selection.json").read_text())
    assert {"d", "m"} <= set(sel)


def test_treerank_outputs(tmp_path, capsys):
    k4 = _edges(tmp_path / "k4.csv", [(i, j) for i in range(4) for j in range(i + 1, 4)])
    assert main(["treerank", "--edges", k4]) == 0
    out = capsys.readouterr().out
    assert "exact tree rank: 2" in out and "upper bound: 2" in out
    path = _edges(tmp_path / "path.csv", [(i, i + 1) for i in range(5)])
    assert main(["treerank", "--edges", path]) == 0
    out = capsys.readouterr().out
    assert "exact tree rank: 1" in out and "upper bound: 1" in out
    big = _edges(tmp_path / "big.csv", [(i, i + 1) for i in range(19)])
    assert main(["treerank", "--edges", big]) == 0
    out = capsys.readouterr().out
    assert "skipped" in out and "upper bound: 1" in out


def test_bench_and_summarize(tmp_path, capsys):
    cfg = tmp_path / "scen.cfg"
    cfg.write_text("p = 4\nT = 60, 80\nm0 = 1\nreplicates = 5\nd = 1\nm = 1\n"
                   "n_iter = 40\nn_warmup = 20\nleapfrog_steps = 5\n")
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "b1")]) == 0
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "b2")]) == 0
    assert _tree_bytes(tmp_path / "b1") == _tree_bytes(tmp_path / "b2")
    lines = (tmp_path / "b1" / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 10
    agg = json.loads((tmp_path / "b1" / "aggregate.json").read_text())
    assert agg["by_T"]["60"]["n"] == 5
    capsys.readouterr()
    assert main(["summarize", str(tmp_path / "b1" / "metrics.csv"), "--out", str(tmp_path / "sum.json")]) == 0
    summ = json.loads((tmp_path / "sum.json").read_text())
    assert summ["by_T"] == agg["by_T"]
    (tmp_path / "bad.cfg").write_text("p = 4\nbogus = 1\n")
    assert main(["bench", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "b3")]) == 2
    (tmp_path / "inf.cfg").write_text("p = 4\nm0 = 3\n")
    assert main(["bench", "--config", str(tmp_path / "inf.cfg"), "--out", str(tmp_path / "b4")]) == 3
