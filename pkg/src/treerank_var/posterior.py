"""Potential energy, its gradient, the unconstrained parameterization and the
exact conditional posterior of the coefficients given all scales.

Coordinates of the unconstrained vector, in order: ``C`` (``coef.ravel()``),
``log r``, the additive log-ratio of ``s`` against its last component,
``logit u`` over upper-triangle pairs of each tree, ``W``, ``Zstar`` and
``log sigma2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import expit, log_expit, logsumexp

from .graph_trees import marginal_system
from .priors import HyperParams, ScaleField, log_tree_jacobian, gdp_log_density_logscale
from .state import ParamState, SupportError
from .var_core import LaggedDesign, TransitionStack


class NumericalError(ArithmeticError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (coordinate {index})")
        self.index = index


@dataclass(frozen=True)
class Layout:
    d: int
    p: int
    m: int
    p_star: int
    N: int

    @property
    def n_edges(self) -> int:
        return self.p * (self.p - 1) // 2

    @property
    def sizes(self) -> dict:
        return {
            "C": self.d * self.p * self.p,
            "r": self.d,
            "s": self.m - 1,
            "u": self.m * self.n_edges,
            "W": self.p * self.p_star,
            "Zstar": self.N * self.p_star,
            "sigma2": 1,
        }

    @property
    def slices(self) -> dict:
        out, start = {}, 0
        for name, n in self.sizes.items():
            out[name] = slice(start, start + n)
            start += n
        return out

    @property
    def dim(self) -> int:
        return sum(self.sizes.values())

    @classmethod
    def of(cls, state: ParamState) -> "Layout":
        return cls(state.d, state.p, state.m, state.p_star, state.N)


@dataclass(frozen=True)
class UnconstrainedVector:
    z: np.ndarray
    layout: Layout

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if z.shape != (self.layout.dim,):
            raise ValueError(f"expected {self.layout.dim} coordinates, got {z.shape}")
        object.__setattr__(self, "z", z)

    def block(self, name: str) -> np.ndarray:
        return self.z[self.layout.slices[name]]


def to_unconstrained(state: ParamState) -> UnconstrainedVector:
    state.check_support()
    lay = Layout.of(state)
    iu = np.triu_indices(lay.p, 1)
    ue = state.u[:, iu[0], iu[1]]
    logs = np.log(state.s)
    parts = [
        state.C.coef.ravel(),
        np.log(state.r),
        logs[:-1] - logs[-1],
        (np.log(ue) - np.log1p(-ue)).ravel(),
        state.W.ravel(),
        state.Zstar.ravel(),
        [np.log(state.sigma2)],
    ]
    return UnconstrainedVector(np.concatenate([np.asarray(a, dtype=float).ravel() for a in parts]), lay)


def _softmax_ref(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simplex point and its logs from additive log-ratios (reference component last)."""
    full = np.append(x, 0.0)
    logs = full - logsumexp(full)
    return np.exp(logs), logs


def from_unconstrained(z, layout: Layout | None = None) -> tuple[ParamState, float]:
    """Map back to a state; also returns the log-Jacobian of the inverse transform."""
    if isinstance(z, UnconstrainedVector):
        z, layout = z.z, z.layout
    z = np.asarray(z, dtype=float)
    lay = layout
    sl = lay.slices
    d, p, m = lay.d, lay.p, lay.m
    coef = z[sl["C"]].reshape(d, p, p)
    logr = z[sl["r"]]
    s, logs = _softmax_ref(z[sl["s"]])
    xu = z[sl["u"]].reshape(m, lay.n_edges)
    ue = expit(xu)
    iu = np.triu_indices(p, 1)
    u = np.zeros((m, p, p))
    u[:, iu[0], iu[1]] = ue
    u = u + np.transpose(u, (0, 2, 1))
    W = z[sl["W"]].reshape(p, lay.p_star)
    Zs = z[sl["Zstar"]].reshape(lay.N, lay.p_star)
    ls2 = z[sl["sigma2"]][0]
    logjac = logr.sum() + logs.sum() + (log_expit(xu) + log_expit(-xu)).sum() + ls2
    state = ParamState(TransitionStack(coef), np.exp(logr), s, u, W, Zs, np.exp(ls2))
    return state, float(logjac)


# ---------------------------------------------------------------------------
# potential


def _check_design(state: ParamState, design: LaggedDesign) -> None:
    if design.X.shape[1] != state.p * state.d or design.p != state.p:
        raise ValueError("design does not match the state's (p, d)")
    if state.N != design.N:
        raise ValueError(f"Zstar has {state.N} rows but the design has {design.N}")


@dataclass
class _Terms:
    """Intermediate quantities of one energy evaluation, reused by the gradient."""

    resid: np.ndarray
    systems: list
    logS: np.ndarray
    logA: np.ndarray  # (m, p, p) log marginals
    ell: np.ndarray  # (d, p, p) log(r_k S_ij)
    energy: float
    state: ParamState  # with the realized coefficients
    xi: np.ndarray | None = None


def _evaluate(state: ParamState, design: LaggedDesign, hyper: HyperParams, xi: np.ndarray | None = None) -> _Terms:
    """Energy and its intermediates.

    With ``xi`` given the coefficients are non-centered, ``C = r_k S_ij xi``,
    and the returned energy is that of ``xi`` (the Jacobian of the map cancels
    the scale in the GDP density, leaving ``(a + 1) log(1 + |xi|)``).
    """
    state.check_support()
    p, m = state.p, state.m
    a = hyper.alpha_eta
    systems = [marginal_system(state.u[l], hyper.tau) for l in range(m)]
    logA = np.stack([ms.logA for ms in systems])
    with np.errstate(divide="ignore"):
        logs = np.log(state.s)
    logS = logsumexp(logA + logs[:, None, None], axis=0)
    np.fill_diagonal(logS, 0.0)
    if not np.all(np.isfinite(logS)):
        raise SupportError("u", "tree marginals vanish for some pair")
    ell = np.log(state.r)[:, None, None] + logS[None]
    if xi is not None:
        state = state.with_(C=TransitionStack(np.exp(ell) * xi))
    _check_design(state, design)

    R = design.Y - design.X @ state.C.cbar - state.Zstar @ state.W.T
    s2 = state.sigma2
    U = (design.N * p / 2 + hyper.sigma2_shape + 1) * np.log(s2) + ((R**2).sum() / 2 + hyper.sigma2_scale) / s2
    if xi is None:
        U -= gdp_log_density_logscale(state.C.coef, ell, a).sum() - np.log(a / 2.0) * state.C.coef.size
    else:
        U += (a + 1) * np.log1p(np.abs(xi)).sum()

    U -= ((hyper.alpha_s - 1) * logs).sum() if m > 1 else 0.0
    U += ((hyper.a_k + 1) * np.log(state.r) + hyper.b_k / state.r).sum()
    U += 0.5 * (state.W**2).sum() + 0.5 * (state.Zstar**2).sum()
    iu = np.triu_indices(p, 1)
    ue = state.u[:, iu[0], iu[1]]
    U -= ((hyper.a_u - 1) * np.log(ue) + (hyper.b_u - 1) * np.log1p(-ue)).sum()
    if hyper.jacobian_mode == "pseudo-jacobian":
        U -= log_tree_jacobian(state, hyper)
    return _Terms(R, systems, logS, logA, ell, float(U), state, xi)


def potential_energy(state: ParamState, design: LaggedDesign, hyper: HyperParams) -> float:
    """Negative log posterior of a state (constant offset fixed so that U has no normalizers)."""
    return _evaluate(state, design, hyper).energy


def _grad_theta(state: ParamState, design: LaggedDesign, hyper: HyperParams, t: _Terms) -> dict:
    """Gradient of U in the natural (constrained) coordinates, except u which is w.r.t. log u."""
    p, d, m = state.p, state.d, state.m
    a = hyper.alpha_eta
    s2 = state.sigma2
    R = t.resid
    coef = state.C.coef
    g = {}

    # data term
    gcbar = -(design.X.T @ R) / s2
    gC = np.stack([gcbar[k * p:(k + 1) * p].T for k in range(d)])
    if t.xi is not None:
        # C = e^ell xi: the data term reaches ell through C, the GDP term depends on xi only
        g["C"] = gC * np.exp(t.ell) + (a + 1) * np.sign(t.xi) / (1 + np.abs(t.xi))
        dell = gC * coef
    else:
        # GDP term f = (a+1) log(1 + |C| e^-ell) + ell, so df/dC = (a+1) sign(C) / (|C| + e^ell)
        absC = np.abs(coef)
        with np.errstate(divide="ignore"):
            logabs = np.log(absC)
        # |C| + e^ell via logaddexp so a vanishing scale does not overflow
        denom_log = np.logaddexp(logabs, t.ell)
        with np.errstate(over="ignore", invalid="ignore"):
            gC += np.where(absC > 0, (a + 1) * np.sign(coef) * np.exp(-np.where(absC > 0, denom_log, 0.0)), 0.0)
        g["C"] = gC
        # df/dell = 1 - (a+1) * t / (1 + t) = 1 - (a+1) sigmoid(log|C| - ell)
        dell = 1.0 - (a + 1) * expit(logabs - t.ell)
    g["logr_gdp"] = dell.sum(axis=(1, 2))
    gL = dell.sum(axis=0)  # dU/dlog S_ij, (p, p); diagonal S is fixed
    np.fill_diagonal(gL, 0.0)

    g["r"] = (hyper.a_k + 1) / state.r - hyper.b_k / state.r**2

    # dU/ds_l through S: sum_ij gL_ij A^l_ij / S_ij
    with np.errstate(divide="ignore"):
        logs = np.log(state.s)
    resp_base = t.logA - t.logS[None]  # log(A^l / S)
    gs = np.array([(gL * np.exp(resp_base[l])).sum() for l in range(m)])
    if m > 1:
        gs -= (hyper.alpha_s - 1) / state.s
    g["s"] = gs

    # trees: dU/dA^l_ij (unordered pair) = s_l (gL_ij + gL_ji) / S_ij
    gsym = gL + gL.T
    glogu = []
    for l, ms in enumerate(t.systems):
        GA = np.triu(gsym * np.exp(logs[l] + resp_base[l]), 1)
        glogu.append(ms.pullback(GA))
    g["logu"] = np.stack(glogu)

    g["W"] = -(R.T @ state.Zstar) / s2 + state.W
    g["Zstar"] = -(R @ state.W) / s2 + state.Zstar
    g["sigma2"] = (design.N * p / 2 + hyper.sigma2_shape + 1) / s2 - ((R**2).sum() / 2 + hyper.sigma2_scale) / s2**2
    return g


def _assemble(state: ParamState, g: dict, hyper: HyperParams, lay: Layout) -> np.ndarray:
    """Chain rule to unconstrained coordinates, including the transform log-Jacobian."""
    sl = lay.slices
    out = np.empty(lay.dim)
    out[sl["C"]] = g["C"].ravel()
    out[sl["r"]] = g["logr_gdp"] + state.r * g["r"] - 1.0
    if lay.m > 1:
        s = state.s
        gs = g["s"]
        # s = softmax([x, 0]): d/dx_i = s_i (g_i - <g, s>); Jacobian -sum log s gives -(1 - m s_i)
        out[sl["s"]] = (s * (gs - gs @ s))[:-1] - (1.0 - lay.m * s[:-1])
    iu = np.triu_indices(lay.p, 1)
    ue = state.u[:, iu[0], iu[1]]
    glogu = g["logu"][:, iu[0], iu[1]]
    gx = glogu * (1 - ue) - (hyper.a_u - 1) * (1 - ue) + (hyper.b_u - 1) * ue - (1 - 2 * ue)
    out[sl["u"]] = gx.ravel()
    out[sl["W"]] = g["W"].ravel()
    out[sl["Zstar"]] = g["Zstar"].ravel()
    out[sl["sigma2"]] = state.sigma2 * g["sigma2"] - 1.0
    return out


def _weight_to_logit(zeta: np.ndarray, tau: float):
    """Map ``zeta`` with ``u = sigmoid(zeta)**tau`` (so ``log w = log sigmoid(zeta)``) to ``logit u``.

    Returns ``(logit u, dlogit/dzeta, log of that derivative, its derivative)``.
    """
    logu = tau * log_expit(zeta)
    # far out (zeta > ~745) u rounds to 1 and the energy becomes infinite
    with np.errstate(divide="ignore", invalid="ignore"):
        log1mu = np.log(-np.expm1(logu))
        zu = logu - log1mu
        u = np.exp(logu)
        logJ = np.log(tau) + log_expit(-zeta) - log1mu
        dlogJ = -expit(zeta) + tau * expit(-zeta) * u / -np.expm1(logu)
    return zu, np.exp(logJ), logJ, dlogJ


def _logit_to_weight(zu: np.ndarray, tau: float) -> np.ndarray:
    y = log_expit(zu) / tau  # log sigmoid(zeta)
    return y - np.log(-np.expm1(y))


class PosteriorModel:
    """The sampled density ``U(theta(z)) - log|J(z)|`` over unconstrained ``z``.

    With ``noncentered=True`` two blocks of ``z`` change meaning. The ``C``
    block holds ``xi = C / (r_k S_ij)``: at small ``tau`` pairs off the
    dominant trees get scales many orders of magnitude below one, and in
    centered coordinates the posterior of such a coefficient is a spike of
    that width. The ``u`` block holds ``zeta`` with ``u = sigmoid(zeta)**tau``,
    i.e. the log tree weight ``log sigmoid(zeta)``, on which the marginals
    vary at unit scale instead of at scale ``tau``. Both are exact changes of
    variables; :meth:`centered` maps a point back to the standard layout.
    """

    def __init__(self, design: LaggedDesign, hyper: HyperParams, layout: Layout, fd_step: float = 1e-5,
                 noncentered: bool = False):
        self.design = design
        self.hyper = hyper
        self.layout = layout
        self.fd_step = fd_step
        self.noncentered = noncentered

    def _standard_u(self, z: np.ndarray):
        """``z`` with the ``u`` block in logit form, plus the Jacobian pieces of that map."""
        if not self.noncentered:
            return z, None
        sl = self.layout.slices["u"]
        out = z.copy()
        zu, J, logJ, dlogJ = _weight_to_logit(z[sl], self.hyper.tau)
        out[sl] = zu
        return out, (J, logJ, dlogJ)

    def _terms(self, z: np.ndarray) -> tuple[_Terms, float, tuple | None]:
        zs, ujac = self._standard_u(z)
        state, logjac = from_unconstrained(zs, self.layout)
        xi = state.C.coef if self.noncentered else None
        if ujac is not None:
            logjac += float(ujac[1].sum())
        return _evaluate(state, self.design, self.hyper, xi), logjac, ujac

    def energy(self, z: np.ndarray) -> float:
        t, logjac, _ = self._terms(np.asarray(z, dtype=float))
        return t.energy - logjac

    def decode(self, z: np.ndarray) -> ParamState:
        """State with the realized coefficients."""
        return self._terms(np.asarray(z, dtype=float))[0].state

    def centered(self, z: np.ndarray) -> np.ndarray:
        """Same point in the standard layout of :func:`to_unconstrained`."""
        if not self.noncentered:
            return np.asarray(z, dtype=float)
        return to_unconstrained(self.decode(z)).z

    def encode(self, state: ParamState, clip: float | None = None) -> np.ndarray:
        """Inverse of :meth:`centered` composed with :func:`to_unconstrained`.

        ``clip`` bounds ``|xi|``; useful for starting points whose coefficients
        sit far out in the tails of their prior scale.
        """
        z = to_unconstrained(state).z
        if self.noncentered:
            t = _evaluate(state, self.design, self.hyper)
            coef = state.C.coef
            with np.errstate(divide="ignore", over="ignore"):
                xi = np.sign(coef) * np.exp(np.log(np.abs(coef)) - t.ell)
            if clip is not None:
                xi = np.clip(xi, -clip, clip)
            if not np.all(np.isfinite(xi)):
                raise NumericalError("coefficient lies beyond the range of its prior scale", None)
            z[self.layout.slices["C"]] = xi.ravel()
            sl = self.layout.slices["u"]
            z[sl] = _logit_to_weight(z[sl], self.hyper.tau)
        return z

    def energy_and_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        z = np.asarray(z, dtype=float)
        t, logjac, ujac = self._terms(z)
        state = t.state
        g = _assemble(state, _grad_theta(state, self.design, self.hyper, t), self.hyper, self.layout)
        sl = self.layout.slices["u"]
        if self.hyper.jacobian_mode == "pseudo-jacobian":
            g[sl] += self._fd_tree_jacobian(self._standard_u(z)[0])
        if ujac is not None:
            J, _, dlogJ = ujac
            g[sl] = g[sl] * J - dlogJ
        bad = np.nonzero(~np.isfinite(g))[0]
        if bad.size or not np.isfinite(t.energy):
            raise NumericalError("non-finite potential or gradient", int(bad[0]) if bad.size else None)
        return t.energy - logjac, g

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.energy_and_grad(z)[1]

    def _fd_tree_jacobian(self, z: np.ndarray) -> np.ndarray:
        sl = self.layout.slices["u"]
        h = self.fd_step

        def term(zz):
            return -log_tree_jacobian(from_unconstrained(zz, self.layout)[0], self.hyper)

        out = np.zeros(sl.stop - sl.start)
        for n, idx in enumerate(range(sl.start, sl.stop)):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            out[n] = (term(zp) - term(zm)) / (2 * h)
        return out


def potential_gradient(z: UnconstrainedVector, design: LaggedDesign, hyper: HyperParams) -> np.ndarray:
    """Gradient of ``U o from_unconstrained`` minus the transform log-Jacobian."""
    return PosteriorModel(design, hyper, z.layout).grad(z.z)


# ---------------------------------------------------------------------------
# conditional Gaussian posterior of c


@dataclass(frozen=True)
class GaussianPosterior:
    """``N(mean, cov)`` over ``c = vec(Cbar)`` (column-major), with ``cov = chol^-T chol^-1``."""

    mean: np.ndarray
    precision_chol: np.ndarray  # upper Cholesky factor of the precision

    @property
    def cov(self) -> np.ndarray:
        inv = np.linalg.inv(self.precision_chol)
        return inv @ inv.T

    def mean_stack(self, p: int) -> TransitionStack:
        return TransitionStack.from_cbar(self.mean.reshape(p, -1).T, p)


def phi_vec(phi: np.ndarray) -> np.ndarray:
    """Prior variances of shape ``(d, p, p)`` laid out as ``vec(Cbar)`` (column-major)."""
    d, p, _ = phi.shape
    cbar = np.concatenate([phi[k].T for k in range(d)], axis=0)
    return cbar.ravel(order="F")


def conditional_c_posterior(scale_field: ScaleField | np.ndarray, noise_cov, design: LaggedDesign
                            ) -> GaussianPosterior:
    """Gaussian posterior of ``c = vec(Cbar)`` given every scale and the noise covariance.

    With ``Gamma = Sigma^-1 (x) X'X / N`` and ``gamma = (Sigma^-1 (x) X') y / N`` the
    mean is ``(Gamma + Phi^-1 / N)^-1 gamma`` and the covariance
    ``(Gamma + Phi^-1 / N)^-1 / N``. ``scale_field`` may be a ``ScaleField`` or
    the ``(d, p, p)`` array of prior variances directly.
    """
    phi = scale_field.phi if isinstance(scale_field, ScaleField) else np.asarray(scale_field, dtype=float)
    if np.any(~(phi > 0)):
        raise ValueError("prior variances must be positive")
    X, Y = design.X, design.Y
    N = design.N
    try:
        Sinv = np.linalg.inv(np.linalg.cholesky(noise_cov).T)
    except np.linalg.LinAlgError:
        raise ValueError("noise covariance is not positive definite") from None
    Sinv = Sinv @ Sinv.T
    prec = np.kron(Sinv, X.T @ X) + np.diag(1.0 / phi_vec(phi))
    rhs = (X.T @ Y @ Sinv).ravel(order="F")
    try:
        cf = cho_factor(prec, lower=False)
    except LinAlgError as exc:
        raise NumericalError(f"conditional posterior precision is singular: {exc}") from None
    mean = cho_solve(cf, rhs)
    return GaussianPosterior(mean, np.triu(cf[0]))


class ConditionalCTarget:
    """Energy over ``C`` alone with Gaussian prior ``N(0, phi)`` and Gaussian noise.

    Used to check the sampler against the closed-form conditional posterior;
    coordinates are ``coef.ravel()`` like the ``C`` block of the full model.
    """

    def __init__(self, design: LaggedDesign, phi: np.ndarray, noise_cov):
        self.design = design
        self.phi = np.asarray(phi, dtype=float)
        self.d, self.p = self.phi.shape[0], self.phi.shape[1]
        self.Sinv = np.linalg.inv(np.asarray(noise_cov, dtype=float))

    def energy_and_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        coef = np.asarray(z).reshape(self.d, self.p, self.p)
        cbar = np.concatenate([c.T for c in coef], axis=0)
        R = self.design.Y - self.design.X @ cbar
        RS = R @ self.Sinv
        U = 0.5 * (RS * R).sum() + 0.5 * (coef**2 / self.phi).sum()
        gcbar = -self.design.X.T @ RS
        p = self.p
        g = np.stack([gcbar[k * p:(k + 1) * p].T for k in range(self.d)]) + coef / self.phi
        return float(U), g.ravel()

    def energy(self, z) -> float:
        return self.energy_and_grad(z)[0]

    def grad(self, z) -> np.ndarray:
        return self.energy_and_grad(z)[1]
