import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from oracles import tree_marginals_brute
from test_priors import _reference_log_prior
from treerank_var.posterior import (Layout, PosteriorModel, UnconstrainedVector, conditional_c_posterior,
                                    from_unconstrained, phi_vec, potential_energy, potential_gradient,
                                    to_unconstrained)
from treerank_var.priors import HyperParams, sample_prior
from treerank_var.var_core import LaggedDesign, TimeSeries, TransitionStack, build_lagged_design


def _instance(seed, p=4, d=2, m=2, N=30, tau=0.2, **kw):
    rng = np.random.default_rng(seed)
    hyper = HyperParams(d=d, m=m, tau=tau, **kw)
    des = build_lagged_design(TimeSeries(rng.standard_normal((N + d, p))), d)
    st_ = sample_prior(hyper, p, seed=seed, n_obs=N)
    st_ = st_.with_(C=TransitionStack(rng.normal(scale=0.3, size=(d, p, p))), r=0.1 * np.arange(d, 0, -1) + 0.05,
                    s=np.full(m, 1.0 / m) if m > 1 else np.ones(1), sigma2=1.3)
    return st_, des, hyper


def _reference_energy(state, design, hyper):
    R = design.Y - design.X @ state.C.cbar - state.Zstar @ state.W.T
    loglik = stats.norm.logpdf(R, scale=np.sqrt(state.sigma2)).sum()
    return -(_reference_log_prior(state, hyper) + loglik)


def test_energy_matches_reference_up_to_a_constant():
    hyper = HyperParams(d=2, m=2, tau=0.2, a_u=2.0, alpha_s=0.7)
    rng = np.random.default_rng(0)
    des = build_lagged_design(TimeSeries(rng.standard_normal((32, 4))), 2)
    gaps = []
    for seed in range(4):
        st_ = sample_prior(hyper, 4, seed=seed, n_obs=des.N)
        gaps.append(potential_energy(st_, des, hyper) - _reference_energy(st_, des, hyper))
    assert np.ptp(gaps) < 1e-10 * max(1.0, abs(gaps[0]))


def test_doubling_residual_quadruples_data_term():
    st_, des, hyper = _instance(1)
    fit = des.X @ st_.C.cbar + st_.Zstar @ st_.W.T
    R = des.Y - fit
    at = lambda Y: potential_energy(st_, LaggedDesign(Y, des.X, des.d), hyper)
    base = at(fit)  # zero residual isolates the data term
    q1 = at(fit + R) - base
    q2 = at(fit + 2 * R) - base
    assert q2 == pytest.approx(4 * q1, rel=1e-12)
    assert q1 == pytest.approx((R**2).sum() / (2 * st_.sigma2), rel=1e-12)


def test_data_term_at_least_squares_fit():
    st_, des, hyper = _instance(2)
    B, res, *_ = np.linalg.lstsq(des.X, des.Y, rcond=None)
    ols = st_.with_(C=TransitionStack.from_cbar(B, des.p), Zstar=np.zeros_like(st_.Zstar))
    fitted = LaggedDesign(des.X @ B, des.X, des.d)
    data = potential_energy(ols, des, hyper) - potential_energy(ols, fitted, hyper)
    assert data == pytest.approx(res.sum() / (2 * ols.sigma2), rel=1e-10)


def _fd(f, z, h=1e-6):
    out = np.zeros_like(z)
    for i in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        out[i] = (f(zp) - f(zm)) / (2 * h)
    return out


def _rel(g, fd):
    return np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    st_, des, hyper = _instance(seed, p=4, d=2, m=2, N=20, tau=0.01)
    zz = to_unconstrained(st_)
    model = PosteriorModel(des, hyper, zz.layout)
    g = potential_gradient(zz, des, hyper)
    assert _rel(g, _fd(model.energy, zz.z)) < 1e-5


def test_pseudo_jacobian_gradient():
    st_, des, hyper = _instance(3, p=4, d=1, m=1, N=15, tau=0.3, jacobian_mode="pseudo-jacobian")
    zz = to_unconstrained(st_)
    model = PosteriorModel(des, hyper, zz.layout)
    assert _rel(model.grad(zz.z), _fd(model.energy, zz.z)) < 1e-5


def test_factor_gradients_vanish_at_zero():
    st_, des, hyper = _instance(4, N=25)
    st_ = st_.with_(W=np.zeros_like(st_.W), Zstar=np.zeros_like(st_.Zstar))
    zz = to_unconstrained(st_)
    model = PosteriorModel(des, hyper, zz.layout)
    g = model.grad(zz.z)
    fd = _fd(model.energy, zz.z)
    for name in ("W", "Zstar"):
        sl = zz.layout.slices[name]
        assert np.abs(g[sl]).max() == 0.0
        assert np.abs(fd[sl]).max() < 1e-7


def test_noise_variance_stationary_point():
    st_, des, hyper = _instance(5)
    R = des.Y - des.X @ st_.C.cbar - st_.Zstar @ st_.W.T
    a, b = hyper.sigma2_shape, hyper.sigma2_scale
    # d/dlog s2 of (Np/2 + a + 1) log s2 + (RSS/2 + b)/s2 - log s2
    s2 = ((R**2).sum() / 2 + b) / (des.N * des.p / 2 + a)
    zz = to_unconstrained(st_.with_(sigma2=s2))
    g = potential_gradient(zz, des, hyper)
    assert abs(g[zz.layout.slices["sigma2"]][0]) < 1e-8


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 5), st.integers(1, 3), st.integers(1, 3))
def test_unconstrained_round_trip(seed, p, d, m):
    hyper = HyperParams(d=d, m=m)
    st_ = sample_prior(hyper, p, seed=seed, n_obs=4)
    back, _ = from_unconstrained(to_unconstrained(st_))
    assert np.allclose(back.C.coef, st_.C.coef, rtol=1e-12, atol=0)
    for name in ("r", "s", "W", "Zstar"):
        assert np.allclose(getattr(back, name), getattr(st_, name), rtol=1e-12, atol=1e-300)
    iu = np.triu_indices(p, 1)
    ok = st_.u[:, iu[0], iu[1]] < 1 - 1e-4  # logit loses digits next to 1
    assert np.allclose(back.u[:, iu[0], iu[1]][ok], st_.u[:, iu[0], iu[1]][ok], rtol=1e-12, atol=0)
    assert back.sigma2 == pytest.approx(st_.sigma2, rel=1e-12)


def test_uniform_weights_and_half_u_map_to_zero():
    st_, _, _ = _instance(6, m=3)
    st_ = st_.with_(s=np.full(3, 1 / 3), u=np.where(np.eye(4, dtype=bool)[None], 0.0, 0.5) * np.ones((3, 4, 4)))
    zz = to_unconstrained(st_)
    assert np.allclose(zz.block("s"), 0.0, atol=1e-15)
    assert np.allclose(zz.block("u"), 0.0, atol=1e-15)


def test_log_jacobian_matches_numerical_determinant():
    st_, _, _ = _instance(7, p=3, d=1, m=2, N=2)
    zz = to_unconstrained(st_)
    _, logjac = from_unconstrained(zz)

    def flat(z):
        s, _ = from_unconstrained(UnconstrainedVector(z, zz.layout))
        iu = np.triu_indices(3, 1)
        return np.concatenate([s.C.coef.ravel(), s.r, s.s[:-1], s.u[:, iu[0], iu[1]].ravel(), s.W.ravel(),
                               s.Zstar.ravel(), [s.sigma2]])

    J = np.column_stack([(flat(zz.z + h) - flat(zz.z - h)) / 2e-6 for h in 1e-6 * np.eye(zz.z.size)])
    assert logjac == pytest.approx(np.linalg.slogdet(J)[1], abs=1e-6)


# --- non-centered sampling coordinates ---------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_noncentered_gradient_and_round_trip(seed):
    st_, des, hyper = _instance(seed, p=4, d=1, m=2, N=20, tau=0.01)
    lay = Layout.of(st_)
    model = PosteriorModel(des, hyper, lay, noncentered=True)
    z = model.encode(st_)
    assert np.allclose(model.centered(z), to_unconstrained(st_).z, atol=1e-9)
    assert _rel(model.grad(z), _fd(model.energy, z)) < 1e-5


def test_noncentered_energy_is_a_change_of_variables():
    # the two parameterizations differ by the log-Jacobian of the map between them
    st_, des, hyper = _instance(8, p=3, d=1, m=1, N=10, tau=0.5)
    lay = Layout.of(st_)
    nc = PosteriorModel(des, hyper, lay, noncentered=True)
    ce = PosteriorModel(des, hyper, lay)
    z = nc.encode(st_)
    J = np.column_stack([(nc.centered(z + h) - nc.centered(z - h)) / 2e-6 for h in 1e-6 * np.eye(z.size)])
    gap = nc.energy(z) - (ce.energy(nc.centered(z)) - np.linalg.slogdet(J)[1])
    z2 = z + 0.05 * np.random.default_rng(0).normal(size=z.size)
    J2 = np.column_stack([(nc.centered(z2 + h) - nc.centered(z2 - h)) / 2e-6 for h in 1e-6 * np.eye(z.size)])
    gap2 = nc.energy(z2) - (ce.energy(nc.centered(z2)) - np.linalg.slogdet(J2)[1])
    assert gap == pytest.approx(gap2, abs=1e-5)


# --- conditional Gaussian posterior of the coefficients ------------------------

def _small_design(seed, p, d, N):
    rng = np.random.default_rng(seed)
    return build_lagged_design(TimeSeries(rng.standard_normal((N + d, p))), d)


def test_flat_prior_limit_is_least_squares():
    des = _small_design(0, 3, 2, 60)
    post = conditional_c_posterior(np.full((2, 3, 3), 1e12), np.eye(3), des)
    B = np.linalg.lstsq(des.X, des.Y, rcond=None)[0]
    assert np.abs(post.mean - B.ravel(order="F")).max() < 1e-6


def test_dense_two_series_oracle():
    des = _small_design(1, 2, 1, 50)
    rng = np.random.default_rng(2)
    phi = rng.uniform(0.1, 2.0, size=(1, 2, 2))
    Sig = np.array([[1.0, 0.3], [0.3, 0.5]])
    # coordinates c = (C11, C12, C21, C22) of y_t = C y_{t-1} + e_t
    X, Y = des.X, des.Y
    Si = np.linalg.inv(Sig)
    P = np.diag(1.0 / np.array([phi[0, 0, 0], phi[0, 0, 1], phi[0, 1, 0], phi[0, 1, 1]]))
    b = np.zeros(4)
    for t in range(des.N):
        Zt = np.zeros((2, 4))
        Zt[0, :2] = X[t]
        Zt[1, 2:] = X[t]
        P = P + Zt.T @ Si @ Zt
        b = b + Zt.T @ Si @ Y[t]
    mean = np.linalg.solve(P, b)
    cov = np.linalg.inv(P)
    post = conditional_c_posterior(phi, Sig, des)
    # vec(Cbar) in column-major order lists response 1 first: (C11, C12, C21, C22)
    assert np.abs(post.mean - mean).max() < 1e-10
    assert np.abs(post.cov - cov).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
def test_conditional_covariance_is_spd(seed, p, d):
    des = _small_design(seed, p, d, 30)
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.01, 3.0, size=(d, p, p))
    A = rng.normal(size=(p, p))
    post = conditional_c_posterior(phi, A @ A.T + np.eye(p), des)
    C = post.cov
    assert np.allclose(C, C.T, atol=1e-12)
    np.linalg.cholesky(C)
    assert phi_vec(phi).shape == (d * p * p,)
