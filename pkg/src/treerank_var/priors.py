"""Prior densities, hyperparameter defaults and prior sampling."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from .graph_trees import EdgeMarginals, marginals_jacobian, tree_marginals
from .state import ParamState, SupportError
from .var_core import TransitionStack

JACOBIAN_MODES = ("hierarchical", "pseudo-jacobian")
CONFIG_KEYS = ("alpha_eta", "alpha_s", "a_u", "b_u", "tau", "p_star", "m", "d", "delta", "jacobian_mode")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    """Model dimensions and prior hyperparameters.

    Lag scales follow ``r_k ~ InvGamma(a_k, b_k)`` with ``a_k = 3`` and
    ``b_k = 2 * 0.1**k`` unless overridden. ``p_star=None`` resolves to
    ``min(5, p - 1)`` once the dimension is known.
    """

    d: int = 1
    m: int = 1
    p_star: int | None = None
    alpha_eta: float = 3.0
    alpha_s: float = 0.1
    a_u: float = 1.0
    b_u: float = 1.0
    tau: float = 0.01
    sigma2_shape: float = 2.0
    sigma2_scale: float = 1.0
    delta: float = 0.05
    jacobian_mode: str = "hierarchical"
    a_r: tuple[float, ...] | None = None
    b_r: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ConfigError("d and m must be at least 1")
        for name in ("alpha_eta", "alpha_s", "a_u", "b_u", "sigma2_shape", "sigma2_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.tau <= 1:
            raise ConfigError("tau must lie in (0, 1]")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        if self.p_star is not None and self.p_star < 0:
            raise ConfigError("p_star must be nonnegative")
        if self.jacobian_mode not in JACOBIAN_MODES:
            raise ConfigError(f"jacobian_mode must be one of {JACOBIAN_MODES}")
        for name in ("a_r", "b_r"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(float(v) for v in val)
                if len(val) != self.d or min(val) <= 0:
                    raise ConfigError(f"{name} needs {self.d} positive entries")
                object.__setattr__(self, name, val)

    @property
    def a_k(self) -> np.ndarray:
        return np.array(self.a_r) if self.a_r is not None else np.full(self.d, 3.0)

    @property
    def b_k(self) -> np.ndarray:
        if self.b_r is not None:
            return np.array(self.b_r)
        return 2.0 * 0.1 ** np.arange(1, self.d + 1)

    def resolved_p_star(self, p: int) -> int:
        if self.p_star is None:
            return min(5, p - 1)
        if self.p_star >= p:
            raise ConfigError(f"p_star must be smaller than p = {p}")
        return self.p_star

    def with_(self, **changes) -> "HyperParams":
        if "d" in changes and changes["d"] != self.d:
            changes.setdefault("a_r", None)
            changes.setdefault("b_r", None)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def read_hyper_config(path, base: HyperParams | None = None) -> HyperParams:
    """Flat ``key = value`` file; ``#`` starts a comment. Unknown keys are an error."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (x.strip() for x in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = val
    return hyper_from_strings(values, base)


def hyper_from_strings(values: dict, base: HyperParams | None = None) -> HyperParams:
    base = base or HyperParams()
    kw = {}
    for key, val in values.items():
        if key == "jacobian_mode":
            kw[key] = str(val)
        elif key in ("p_star", "m", "d"):
            kw[key] = None if str(val).lower() in ("none", "") else int(val)
        else:
            kw[key] = float(val)
    try:
        return base.with_(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def write_hyper_config(path, hyper: HyperParams) -> None:
    lines = [f"{k} = {getattr(hyper, k)}" for k in CONFIG_KEYS]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# densities


def gdp_log_density(x, scale, alpha):
    """Log density of the generalized double Pareto with the given scale and shape.

    ``log[(alpha / (2 scale)) * (1 + |x| / scale) ** -(alpha + 1)]``; this is
    the normal scale mixture with variance ``eta * scale**2``,
    ``eta ~ Exp(rate=lambda**2 / 2)``, ``lambda ~ Gamma(alpha, 1)``.
    """
    scale = np.asarray(scale, dtype=float)
    if np.any(~(scale > 0)) or not alpha > 0:
        raise ValueError("scale and alpha must be positive")
    return np.log(alpha / (2.0 * scale)) - (alpha + 1.0) * np.log1p(np.abs(x) / scale)


def gdp_log_density_logscale(x, log_scale, alpha):
    """``gdp_log_density`` parameterized by ``log(scale)``; stays finite when the scale underflows."""
    with np.errstate(divide="ignore"):
        t = np.log(np.abs(x)) - log_scale
    return np.log(alpha / 2.0) - log_scale - (alpha + 1.0) * np.logaddexp(0.0, t)


def log_scale_matrix(s: np.ndarray, marginals) -> np.ndarray:
    """``log S`` computed by log-sum-exp over trees; diagonal 0."""
    logA = np.stack([_log_probs(mg) for mg in marginals])
    with np.errstate(divide="ignore"):
        logs = np.log(np.asarray(s, dtype=float))
    L = logsumexp(logA + logs[:, None, None], axis=0)
    np.fill_diagonal(L, 0.0)
    return L


def _log_probs(mg) -> np.ndarray:
    if isinstance(mg, EdgeMarginals):
        if mg.logprobs is not None:
            return mg.logprobs
        mg = mg.probs
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(mg, dtype=float))


def scale_matrix(s: np.ndarray, marginals) -> np.ndarray:
    """``S_ij = sum_l s_l A^l_ij`` with the diagonal fixed at 1 (own lags are never tree-restricted)."""
    A = np.stack([mg.probs if isinstance(mg, EdgeMarginals) else np.asarray(mg) for mg in marginals])
    S = np.tensordot(s, A, axes=1)
    np.fill_diagonal(S, 1.0)
    return S


def state_marginals(state: ParamState, hyper: HyperParams) -> list[EdgeMarginals]:
    return [tree_marginals(state.u[l], hyper.tau) for l in range(state.m)]


def log_pseudo_det(J: np.ndarray, cutoff: float = 1e-10) -> float:
    sv = np.linalg.svd(J, compute_uv=False)
    return float(np.log(sv[sv > cutoff]).sum())


def log_tree_jacobian(state: ParamState, hyper: HyperParams) -> float:
    """Sum over trees of the log pseudo-determinant of dA/du."""
    return sum(log_pseudo_det(marginals_jacobian(state.u[l], hyper.tau)) for l in range(state.m))


def _log_invgamma(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1) * np.log(x) - b / x


def log_prior(state: ParamState, hyper: HyperParams, marginals=None) -> float:
    """Normalized log prior density of a state with the local scales integrated out."""
    state.check_support()
    if marginals is None:
        marginals = state_marginals(state, hyper)
    if len(marginals) != state.m:
        raise SupportError("u", "need one marginal matrix per tree")
    logS = log_scale_matrix(state.s, marginals)
    if not np.all(np.isfinite(logS)):
        raise SupportError("u", "tree marginals vanish for some pair")
    a = hyper.alpha_eta
    log_scale = np.log(state.r)[:, None, None] + logS[None]
    lp = float(gdp_log_density_logscale(state.C.coef, log_scale, a).sum())
    m = state.m
    if m > 1:
        if np.any(state.s <= 0):
            raise SupportError("s", "zero tree weight has zero Dirichlet density")
        lp += float(gammaln(m * hyper.alpha_s) - m * gammaln(hyper.alpha_s)
                    + ((hyper.alpha_s - 1) * np.log(state.s)).sum())
    lp += float(_log_invgamma(state.r, hyper.a_k, hyper.b_k).sum())
    lp += float(-0.5 * (state.W**2).sum() - 0.5 * state.W.size * np.log(2 * np.pi))
    lp += float(-0.5 * (state.Zstar**2).sum() - 0.5 * state.Zstar.size * np.log(2 * np.pi))
    iu = np.triu_indices(state.p, 1)
    ue = state.u[:, iu[0], iu[1]]
    lp += float(((hyper.a_u - 1) * np.log(ue) + (hyper.b_u - 1) * np.log1p(-ue)).sum()
                - ue.size * betaln(hyper.a_u, hyper.b_u))
    lp += float(_log_invgamma(state.sigma2, hyper.sigma2_shape, hyper.sigma2_scale))
    if hyper.jacobian_mode == "pseudo-jacobian":
        lp += log_tree_jacobian(state, hyper)
    return lp


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class ScaleField:
    """Local and global scales of the normal mixture prior on the coefficients."""

    eta: np.ndarray
    lam: np.ndarray
    r: np.ndarray
    s: np.ndarray
    S: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        """Prior variance of each coefficient, shape ``(d, p, p)``."""
        return self.eta * (self.r[:, None, None] * self.S[None]) ** 2


def sample_scale_field(hyper: HyperParams, r, s, marginals, rng) -> ScaleField:
    S = scale_matrix(np.asarray(s), marginals)
    p = S.shape[0]
    lam = rng.gamma(hyper.alpha_eta, 1.0, size=(hyper.d, p, p))
    eta = rng.exponential(2.0 / lam**2)
    return ScaleField(eta, lam, np.asarray(r, dtype=float), np.asarray(s, dtype=float), S)


def sample_u(hyper: HyperParams, p: int, rng) -> np.ndarray:
    iu = np.triu_indices(p, 1)
    u = np.zeros((hyper.m, p, p))
    draws = rng.beta(hyper.a_u, hyper.b_u, size=(hyper.m, len(iu[0])))
    # keep strictly inside (0, 1)
    draws = np.clip(draws, 1e-300, 1 - 1e-16)
    u[:, iu[0], iu[1]] = draws
    return u + np.transpose(u, (0, 2, 1))


def sample_dirichlet(alpha: float, m: int, rng) -> np.ndarray:
    """Dirichlet draw via log-gamma variates so that tiny shapes do not underflow to 0/0."""
    if m == 1:
        return np.ones(1)
    # log Gamma(a) = log Gamma(a + 1) + log(U) / a
    lg = np.log(rng.gamma(alpha + 1.0, 1.0, size=m)) + np.log(rng.uniform(size=m)) / alpha
    lg -= lg.max()
    w = np.exp(lg)
    return w / w.sum()


def sample_prior(hyper: HyperParams, p: int, seed: int = 0, n_obs: int = 0) -> ParamState:
    """Draw every model parameter from the prior (``n_obs`` rows of latent factors)."""
    rng = np.random.default_rng(seed)
    p_star = hyper.resolved_p_star(p)
    u = sample_u(hyper, p, rng)
    s = sample_dirichlet(hyper.alpha_s, hyper.m, rng)
    r = hyper.b_k / rng.gamma(hyper.a_k, 1.0)
    marg = [tree_marginals(u[l], hyper.tau) for l in range(hyper.m)]
    field_ = sample_scale_field(hyper, r, s, marg, rng)
    W = rng.standard_normal((p, p_star))
    Z = rng.standard_normal((n_obs, p_star))
    sigma2 = hyper.sigma2_scale / rng.gamma(hyper.sigma2_shape, 1.0)
    C = rng.standard_normal((hyper.d, p, p)) * np.sqrt(field_.phi)
    return ParamState(TransitionStack(C), r, s, u, W, Z, sigma2)
