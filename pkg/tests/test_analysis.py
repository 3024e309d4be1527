import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treerank_var.analysis import (FitSettings, GrangerGraph, ScenarioConfig, aggregate, count_components,
                                   effective_tree_rank, extract_graph, forecast, graph_metrics,
                                   make_ground_truth, r_squared, relative_error, run_scenario,
                                   threshold_sweep, write_metrics_csv)
from treerank_var.graph_trees import tree_rank_exact
from treerank_var.priors import HyperParams
from treerank_var.sampler import HmcConfig
from treerank_var.var_core import (InvalidInputError, LaggedDesign, TimeSeries, TransitionStack,
                                   build_lagged_design, check_stability_sufficient, simulate_var)


# --- graph extraction ------------------------------------------------------------

def test_threshold_extremes():
    rng = np.random.default_rng(0)
    C = TransitionStack(rng.uniform(0.01, 1.0, size=(2, 5, 5)) * rng.choice([-1, 1], size=(2, 5, 5)))
    dense = extract_graph(C, 0.0)
    assert dense.directed.sum() == 5 * 4
    assert extract_graph(C, np.abs(C.coef).max() + 1e-9).n_edges == 0


def test_single_entry_graph():
    coef = np.zeros((1, 3, 3))
    coef[0, 1, 0] = 0.5  # series 0 drives series 1
    g = extract_graph(TransitionStack(coef), 0.1)
    assert np.argwhere(g.directed).tolist() == [[1, 0]]
    assert g.edges() == [(0, 1)]


def test_component_counts():
    path = np.zeros((5, 5))
    for i in range(4):
        path[i, i + 1] = path[i + 1, i] = 1
    assert count_components(path) == 1
    assert count_components(np.zeros((4, 4))) == 4
    two = np.zeros((6, 6))
    for a, b in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]:
        two[a, b] = two[b, a] = 1
    assert count_components(two) == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 3))
def test_threshold_sweep_is_monotone(seed, p, d):
    C = TransitionStack(np.random.default_rng(seed).normal(scale=0.1, size=(d, p, p)))
    sweep = threshold_sweep(C, np.linspace(0, 0.3, 16))
    edges = [e for _, e, _ in sweep]
    comps = [c for _, _, c in sweep]
    assert all(a >= b for a, b in zip(edges, edges[1:]))
    assert all(a <= b for a, b in zip(comps, comps[1:]))


def test_graph_metrics_cases():
    rng = np.random.default_rng(1)
    A = np.triu(rng.uniform(size=(6, 6)) < 0.4, 1)
    truth = GrangerGraph.from_undirected(A | A.T)
    assert graph_metrics(truth, truth) == (0, 0)
    assert graph_metrics(GrangerGraph.from_undirected(np.zeros((6, 6))), truth) == (0, truth.n_edges)
    full = GrangerGraph.from_undirected(np.ones((6, 6)))
    assert graph_metrics(full, truth) == (15 - truth.n_edges, 0)
    with pytest.raises(InvalidInputError):
        graph_metrics(full, GrangerGraph.from_undirected(np.ones((5, 5))))


# --- effective tree-rank -----------------------------------------------------------

def test_effective_tree_rank_examples():
    assert effective_tree_rank([[0.7, 0.3, 1e-6]])[1] == 2
    assert effective_tree_rank([[1.0, 0.0, 0.0]])[1] == 1
    hist, mode = effective_tree_rank(np.tile([0.5, 0.5, 0.0], (7, 1)))
    assert hist.tolist() == [0, 0, 7, 0] and mode == 2


# --- ground truth --------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_ground_truth_contract(seed):
    gt = make_ground_truth(ScenarioConfig(p=8, m0=2), seed)
    assert check_stability_sufficient(gt.C0).sufficient_pass
    assert np.linalg.norm(gt.C0.coef) / np.linalg.norm(gt.Sigma) == pytest.approx(2.0, abs=1e-8)
    assert tree_rank_exact(gt.G0) == 2
    off = ~gt.G0 & ~np.eye(8, dtype=bool)
    assert np.all(gt.C0.coef[0][off] == 0)


def test_random_kind_density():
    gt = make_ground_truth(ScenarioConfig(p=10, kind="random", m0=None, density=0.2), 0)
    assert np.triu(gt.G0, 1).sum() == 9
    with pytest.raises(InvalidInputError):
        ScenarioConfig(p=10, kind="tree", m0=None)


# --- forecasting and fit quality --------------------------------------------------------

def test_diagonal_forecast_decays_geometrically():
    coef = np.diag([0.5, -0.8])[None]
    mean, paths = forecast([(coef, np.eye(2))], np.array([[2.0, 1.0]]), 4, noise=False)
    expect = np.array([[2.0 * 0.5**h, (-0.8) ** h] for h in range(1, 5)])
    assert np.allclose(mean, expect, atol=1e-15) and paths.shape == (1, 4, 2)


def test_zero_draws_forecast_averages_to_zero():
    draws = [(np.zeros((1, 3, 3)), np.eye(3))] * 4000
    mean, _ = forecast(draws, np.ones((1, 3)), 2, seed=0)
    assert np.abs(mean).max() < 0.06


def test_one_step_noiseless_forecast_is_mean_prediction():
    rng = np.random.default_rng(2)
    draws = [(rng.normal(size=(2, 3, 3)), np.eye(3)) for _ in range(5)]
    hist = rng.normal(size=(4, 3))
    mean, _ = forecast(draws, hist, 1, noise=False)
    expect = np.mean([c[0] @ hist[-1] + c[1] @ hist[-2] for c, _ in draws], axis=0)
    assert np.allclose(mean[0], expect, atol=1e-14)


def test_r_squared_cases():
    C = TransitionStack(np.array([[[0.5, 0.2], [0.0, -0.4]]]))
    ts = simulate_var(C, np.eye(2), 300, seed=4)
    des = build_lagged_design(ts, 1)
    exact = LaggedDesign(des.X @ C.cbar, des.X, 1)
    assert r_squared(C, exact) == pytest.approx(1.0, abs=1e-10)
    Yc = des.Y - des.Y.mean(axis=0)
    assert r_squared(np.zeros((2, 2)), LaggedDesign(Yc, des.X, 1)) == pytest.approx(0.0, abs=1e-12)


def test_relative_error_pads_lags():
    C0 = TransitionStack(np.ones((1, 2, 2)))
    C1 = TransitionStack(np.concatenate([np.ones((1, 2, 2)), 0.5 * np.ones((1, 2, 2))]))
    assert relative_error(C1, C0) == pytest.approx(np.sqrt(4 * 0.25) / 2.0)


# --- scenario harness ---------------------------------------------------------------------

def test_small_scenario_rows_are_deterministic(tmp_path):
    cfg = ScenarioConfig(p=4, T=80, m0=1, replicates=2)
    settings_ = FitSettings(d=1, m=1, gd_steps=20, hmc=HmcConfig(n_iter=60, n_warmup=30, leapfrog_steps=6))
    rows = run_scenario(cfg, HyperParams(), settings_)
    again = run_scenario(cfg, HyperParams(), settings_)
    assert len(rows) == 2
    write_metrics_csv(tmp_path / "a.csv", rows)
    write_metrics_csv(tmp_path / "b.csv", again)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    agg = aggregate(rows)
    with (tmp_path / "a.csv").open() as fh:
        table = list(csv.DictReader(fh))
    for key in ("est_error", "fp", "fn", "etr_mode"):
        assert agg[key] == pytest.approx(np.mean([float(r[key]) for r in table]), rel=1e-12)
