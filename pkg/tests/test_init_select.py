import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treerank_var.analysis import ScenarioConfig, make_ground_truth
from treerank_var.init_select import (DegenerateSurfaceWarning, admm_init, init_state, plateau_select,
                                      two_means_split)
from treerank_var.priors import HyperParams
from treerank_var.var_core import (InvalidInputError, LaggedDesign, TimeSeries, build_lagged_design,
                                   simulate_var, standardize)


def _design(p, T, m0, seed, d=1):
    gt = make_ground_truth(ScenarioConfig(p=p, T=T, m0=m0), seed)
    return build_lagged_design(simulate_var(gt.C0, gt.Sigma, T, seed=seed + 1), d), gt


def test_primal_feasibility_at_convergence():
    des, _ = _design(6, 201, 2, 1)
    st_ = admm_init(des, 2)
    assert st_.converged
    assert np.linalg.norm(st_.Cbar - st_.Z) < 1e-6
    mask = st_.union + np.eye(6)
    assert np.all(st_.stack().coef[0][mask == 0] == 0)


def test_full_mask_matches_least_squares():
    des, _ = _design(4, 201, 1, 3)
    st_ = admm_init(des, 2)
    assert np.array_equal(st_.union, np.ones((4, 4)) - np.eye(4))
    ls = np.linalg.lstsq(des.X, des.Y, rcond=None)[0]
    assert np.abs(st_.Cbar - ls).max() < 1e-4


def test_single_tree_noiseless_recovery():
    des, gt = _design(6, 200, 1, 4)
    des = LaggedDesign(des.X @ gt.C0.cbar, des.X, 1)
    st_ = admm_init(des, 1)
    assert np.array_equal(st_.union, gt.G0.astype(float))
    assert np.linalg.norm(st_.Z - gt.C0.cbar) / np.linalg.norm(gt.C0.cbar) < 0.05


def test_init_state_is_supported_and_tree_aligned():
    des, _ = _design(5, 150, 2, 5)
    st_ = admm_init(des, 2)
    hyper = HyperParams(d=1, m=2)
    init = init_state(des, st_, hyper, n_steps=30)
    init.check_support()
    assert np.array_equal(init.C.coef, st_.stack().coef)
    from treerank_var.graph_trees import max_spanning_tree
    for l, t in enumerate(st_.union_trees):
        assert max_spanning_tree(init.u[l]).edges == t.edges


def test_invalid_rho():
    des, _ = _design(4, 50, 1, 0)
    with pytest.raises(InvalidInputError):
        admm_init(des, 1, rho=0.0)


# --- two-means split ------------------------------------------------------------

def test_two_means_examples():
    lab, _ = two_means_split([10, 9.5, 0.2, 0.1, 0.15])
    assert lab.tolist() == [1, 1, 0, 0, 0]
    lab, _ = two_means_split([3.0, 3.0])
    assert lab.tolist() == [0, 1]
    lab, means = two_means_split([0.0, 100.0])
    assert lab.tolist() == [0, 1] and means.tolist() == [0.0, 100.0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12))
def test_two_means_is_optimal(values):
    x = np.array(values)
    lab, _ = two_means_split(x)
    sse = lambda a: ((a - a.mean()) ** 2).sum() if a.size else 0.0
    got = sse(x[lab == 0]) + sse(x[lab == 1])
    xs = np.sort(x)
    best = min(sse(xs[:k]) + sse(xs[k:]) for k in range(1, len(xs)))
    assert got <= best + 1e-9 * max(1.0, np.abs(x).max() ** 2)
    assert x[lab == 0].max() <= x[lab == 1].min()


# --- plateau method ---------------------------------------------------------------

def test_white_noise_surface_is_degenerate():
    ts = TimeSeries(np.random.default_rng(0).standard_normal((200, 6)))
    with pytest.warns(DegenerateSurfaceWarning):
        ps = plateau_select(ts, 3, 3)
    assert ps.degenerate and ps.selected == (1, 1)


def test_loss_surface_monotone_and_selection():
    cfg = ScenarioConfig(p=8, T=800, m0=2, d0=2)
    gt = make_ground_truth(cfg, 0)
    ts = standardize(simulate_var(gt.C0, gt.Sigma, 800, seed=1))
    with warnings.catch_warnings():
        warnings.simplefilter("error", DegenerateSurfaceWarning)
        ps = plateau_select(ts, 3, 3)
    assert np.all(np.diff(ps.loss, axis=1) <= 0) and np.all(np.diff(ps.loss, axis=0) <= 0)
    # the raw losses are non-increasing in m up to solver slack (warm starts keep the support nested)
    assert np.all(np.diff(ps.raw_loss, axis=1) <= 1e-6 * ps.raw_loss[:, :-1])
    assert ps.selected == (2, 2)
    rows = list(ps.rows())
    assert len(rows) == 9 and rows[0][:2] == (1, 1)


def test_plateau_argument_checks():
    ts = TimeSeries(np.random.default_rng(1).standard_normal((50, 4)))
    with pytest.raises(InvalidInputError):
        plateau_select(ts, 2, 3)
    with pytest.raises(InvalidInputError):
        plateau_select(ts, 2, 1, rule="other")
