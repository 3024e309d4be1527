import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_discrete_lyapunov

from treerank_var.var_core import (DegenerateInputError, InsufficientDataError, InvalidInputError, TimeSeries, TransitionStack,
                                   build_lagged_design, check_stability_sufficient,
                                   companion_spectral_radius, destandardize_coef, lyapunov_covariance,
                                   read_series_csv, scale_to_stability, simulate_var, standardize,
                                   write_series_csv)


def test_white_noise_moments():
    ts = simulate_var(TransitionStack(np.zeros((1, 2, 2))), np.eye(2), 10000, seed=3)
    assert ts.data.shape == (10000, 2)
    assert np.abs(ts.data.mean(axis=0)).max() < 0.05
    assert np.abs(np.cov(ts.data.T) - np.eye(2)).max() < 0.05


def test_diagonal_var_long_run_variance():
    C = TransitionStack(np.diag([0.5, 0.5])[None])
    S = lyapunov_covariance(C, np.eye(2))
    oracle = solve_discrete_lyapunov(0.5 * np.eye(2), np.eye(2))
    assert np.allclose(S, oracle, atol=1e-12)
    assert np.allclose(np.diag(S), 4.0 / 3.0, atol=1e-12)


def test_simulation_is_deterministic():
    C = TransitionStack(np.array([[[0.3, 0.1], [0.0, 0.2]]]))
    a = simulate_var(C, np.eye(2), 50, seed=11).data
    b = simulate_var(C, np.eye(2), 50, seed=11).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, simulate_var(C, np.eye(2), 50, seed=12).data)


def test_zero_stack_passes_stability():
    rep = check_stability_sufficient(TransitionStack(np.zeros((2, 3, 3))))
    assert rep.sufficient_pass
    assert rep.degrees_star.max() == 0 and rep.degrees_dstar.max() == 0
    assert companion_spectral_radius(TransitionStack(np.zeros((2, 3, 3)))) == 0


def test_symmetric_pair_passes():
    C = TransitionStack(np.array([[[0.0, 0.4], [0.4, 0.0]]]))
    rep = check_stability_sufficient(C)
    assert rep.sufficient_pass
    assert rep.degrees_star[0] == pytest.approx(0.4)
    assert companion_spectral_radius(C) == pytest.approx(0.4)


def test_sufficiency_gap_example():
    C = TransitionStack(np.array([[[0.99, 0.5], [0.0, 0.0]]]))
    rep = check_stability_sufficient(C)
    assert rep.degrees_star[0] == pytest.approx(1.24)
    assert not rep.sufficient_pass
    assert companion_spectral_radius(C) == pytest.approx(0.99)


def test_two_lag_scalar_root():
    # largest root modulus of l^2 - 0.5 l - 0.3
    C = TransitionStack(np.array([[[0.5]], [[0.3]]]))
    oracle = np.abs(np.roots([1.0, -0.5, -0.3])).max()
    assert companion_spectral_radius(C) == pytest.approx(oracle, abs=1e-12)
    assert oracle == pytest.approx(0.8521, abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_single_lag_radius_is_eigenvalue_radius(seed, p):
    A = np.random.default_rng(seed).normal(size=(p, p))
    assert companion_spectral_radius(TransitionStack(A[None])) == pytest.approx(np.abs(np.linalg.eigvals(A)).max())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(2, 5))
def test_scale_to_stability_hits_margin(seed, d, p):
    C = TransitionStack(np.random.default_rng(seed).normal(size=(d, p, p)))
    out = scale_to_stability(C, 0.9)
    rep = check_stability_sufficient(out)
    assert rep.margin == pytest.approx(0.9, rel=1e-9)
    assert rep.sufficient_pass and companion_spectral_radius(out) < 1


def test_lagged_design_construction():
    y = np.arange(1.0, 6.0)[:, None]
    des = build_lagged_design(TimeSeries(y), 2)
    assert np.array_equal(des.Y, [[3.0], [4.0], [5.0]])
    assert np.array_equal(des.X, [[2.0, 1.0], [3.0, 2.0], [4.0, 3.0]])
    des = build_lagged_design(TimeSeries(np.ones((3, 2)) * [1.0, 2.0] + np.arange(3)[:, None]), 1)
    assert des.X.shape == (2, 2) and des.Y.shape == (2, 2)


def test_noiseless_design_has_zero_residual():
    C = TransitionStack(np.array([[[0.5, 0.2], [-0.1, 0.3]], [[0.1, 0.0], [0.05, -0.2]]]))
    y = np.zeros((30, 2))
    y[:2] = [[1.0, -1.0], [0.5, 2.0]]
    for t in range(2, 30):
        y[t] = C.coef[0] @ y[t - 1] + C.coef[1] @ y[t - 2]
    des = build_lagged_design(TimeSeries(y), 2)
    assert np.linalg.norm(des.Y - des.X @ C.cbar) < 1e-12


def test_too_short_series_is_rejected():
    with pytest.raises(InsufficientDataError):
        build_lagged_design(TimeSeries(np.array([[1.0], [2.0]])), 2)
    with pytest.raises(InvalidInputError):
        build_lagged_design(TimeSeries(np.array([[1.0], [2.0]])), 0)


def test_standardize():
    z = standardize(TimeSeries(np.array([[1.0], [2.0], [3.0]])))
    assert z.data.mean() == pytest.approx(0.0, abs=1e-15)
    assert z.data.var(ddof=1) == pytest.approx(1.0)
    again = standardize(z)
    assert np.allclose(again.data, z.data, atol=1e-12)
    with pytest.raises(DegenerateInputError):
        standardize(TimeSeries(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])))


def test_destandardize_maps_coefficients_back():
    rng = np.random.default_rng(0)
    C = scale_to_stability(TransitionStack(rng.normal(size=(1, 3, 3))), 0.8)
    raw = simulate_var(C, np.diag([1.0, 4.0, 9.0]), 400, seed=1)
    z = standardize(raw)
    Cz = TransitionStack(np.linalg.lstsq(build_lagged_design(z, 1).X, build_lagged_design(z, 1).Y, rcond=None)[0]
                         .T[None])
    dr = build_lagged_design(raw, 1)
    ols_raw = np.linalg.lstsq(dr.X, dr.Y, rcond=None)[0].T
    # centering changes the intercept only, so slopes agree once the scales are restored
    back = destandardize_coef(Cz, z.scale).coef[0]
    assert np.abs(back - ols_raw).max() < 0.05


def test_series_csv_round_trip(tmp_path):
    ts = TimeSeries(np.random.default_rng(2).normal(size=(7, 3)))
    write_series_csv(tmp_path / "s.csv", ts)
    back = read_series_csv(tmp_path / "s.csv")
    assert np.array_equal(back.data, ts.data)
