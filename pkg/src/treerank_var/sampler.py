"""Hamiltonian Monte Carlo with a diagonal Fisher mass matrix and dual-averaging step size.

Convention: kinetic energy ``K(v) = v' M v / 2`` with ``M = 1 / Minv`` and
``Minv`` the diagonal observed Fisher information at the starting point. The
drift is ``z <- z + eps * M v`` and momenta are drawn from ``N(0, Minv)``, so
a coordinate with curvature ``a`` moves with effective step ``eps / sqrt(a)``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .posterior import Layout, NumericalError, PosteriorModel, from_unconstrained, to_unconstrained
from .state import ParamState, SupportError


class AdaptationError(RuntimeError):
    pass


@dataclass(frozen=True)
class HmcConfig:
    n_iter: int = 5000
    n_warmup: int = 2500
    target_accept: float = 0.6
    leapfrog_steps: int = 32
    eps0: float = 0.01
    mass_diag: np.ndarray | None = None
    seed: int = 0
    jitter: float = 0.2
    max_delta_h: float = 1000.0
    max_divergent_frac: float = 0.5
    # dual averaging constants
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    restart_adaptation: bool = True

    def __post_init__(self):
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be at least 1")
        if not 0 <= self.n_warmup <= self.n_iter:
            raise ValueError("need 0 <= n_warmup <= n_iter")
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")

    def with_(self, **changes) -> "HmcConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.mass_diag is not None:
            out["mass_diag"] = np.asarray(self.mass_diag).tolist()
        return out


# ---------------------------------------------------------------------------
# integrator and mass matrix


def leapfrog(z, v, eps: float, L: int, Minv, grad_fn):
    """``L`` half-kick / drift / half-kick steps; returns ``(z, v)``."""
    M = 1.0 / np.asarray(Minv, dtype=float)
    z = np.array(z, dtype=float)
    v = np.array(v, dtype=float)
    g = grad_fn(z)
    for _ in range(L):
        v -= 0.5 * eps * g
        z += eps * M * v
        g = grad_fn(z)
        v -= 0.5 * eps * g
    return z, v


def _leapfrog_eg(z, v, eps, L, M, eg_fn, g):
    """Leapfrog that tracks energy and gradient; reuses the starting gradient."""
    z = z.copy()
    v = v.copy()
    U = None
    for _ in range(L):
        v -= 0.5 * eps * g
        z += eps * M * v
        U, g = eg_fn(z)
        v -= 0.5 * eps * g
    return z, v, U, g


def fisher_diag_mass(z0, grad_fn, step: float = 1e-4, floor: float = 1e-6, cap: float = 1e6) -> np.ndarray:
    """Diagonal of the Hessian of U at ``z0`` by central differences of the gradient, clipped."""
    z0 = np.asarray(z0, dtype=float)
    out = np.empty_like(z0)
    for i in range(z0.size):
        zp, zm = z0.copy(), z0.copy()
        zp[i] += step
        zm[i] -= step
        out[i] = (grad_fn(zp)[i] - grad_fn(zm)[i]) / (2 * step)
    out = np.where(np.isfinite(out), out, floor)
    return np.clip(out, floor, cap)


def regularize_mass(Minv, floor: float = 1e-6) -> np.ndarray:
    """Replace floored entries of a Fisher diagonal by the median of the rest.

    A coordinate with non-positive observed curvature ends up at the floor,
    which under ``theta += eps M v`` gives it the largest step of all. The
    median of the informative entries is a neutral stand-in.
    """
    Minv = np.array(Minv, dtype=float)
    bad = Minv <= floor
    if bad.any() and not bad.all():
        Minv[bad] = np.median(Minv[~bad])
    return Minv


def kinetic(v, Minv) -> float:
    return float(0.5 * (v**2 / Minv).sum())


# ---------------------------------------------------------------------------
# chains


@dataclass
class ChainTrace:
    """Raw output of one chain over unconstrained coordinates (all iterations)."""

    z: np.ndarray
    energy: np.ndarray
    accept_prob: np.ndarray
    accepted: np.ndarray
    divergent: np.ndarray
    delta_h: np.ndarray
    n_leapfrog: np.ndarray
    eps_trace: np.ndarray
    eps: float
    Minv: np.ndarray
    n_warmup: int


class _DualAveraging:
    def __init__(self, eps0: float, target: float, gamma: float, t0: float, kappa: float):
        self.mu = math.log(10 * eps0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.hbar = 0.0
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.t = 0
        self.final_eps0 = eps0

    def update(self, accept_prob: float) -> float:
        self.t += 1
        t = self.t
        w = 1.0 / (t + self.t0)
        self.hbar = (1 - w) * self.hbar + w * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(t) / self.gamma * self.hbar
        eta = t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def _safe_eg(eg_fn):
    def f(z):
        try:
            # overflow along a diverging trajectory is reported as U = inf below
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                U, g = eg_fn(z)
        except (NumericalError, SupportError, FloatingPointError, np.linalg.LinAlgError, ValueError, OverflowError):
            return np.inf, np.zeros_like(z)
        if not (np.isfinite(U) and np.all(np.isfinite(g))):
            return np.inf, np.zeros_like(z)
        return U, g

    return f


def hmc_sample(eg_fn, z0, config: HmcConfig, Minv=None) -> ChainTrace:
    """Generic HMC over a flat vector given ``eg_fn(z) -> (U, grad U)``."""
    rng = np.random.default_rng(config.seed)
    z = np.array(z0, dtype=float)
    n = z.size
    safe = _safe_eg(eg_fn)
    U, g = safe(z)
    if not np.isfinite(U):
        raise NumericalError("potential is not finite at the initial point")
    if Minv is None:
        Minv = config.mass_diag if config.mass_diag is not None else fisher_diag_mass(z, lambda x: safe(x)[1])
    Minv = np.asarray(Minv, dtype=float)
    M = 1.0 / Minv
    sd = np.sqrt(Minv)
    L0 = config.leapfrog_steps
    lo = max(1, int(round((1 - config.jitter) * L0)))
    hi = max(lo, int(round((1 + config.jitter) * L0)))

    da = _DualAveraging(config.eps0, config.target_accept, config.gamma, config.t0, config.kappa)
    eps = config.eps0
    T = config.n_iter
    out_z = np.empty((T, n))
    energy = np.empty(T)
    aprob = np.empty(T)
    acc = np.zeros(T, dtype=bool)
    div = np.zeros(T, dtype=bool)
    dH = np.empty(T)
    nlf = np.empty(T, dtype=int)
    eps_trace = np.empty(T)
    n_div_warm = 0
    for it in range(T):
        if it == config.n_warmup and config.n_warmup > 0:
            if n_div_warm > config.max_divergent_frac * config.n_warmup:
                raise AdaptationError(
                    f"{n_div_warm} of {config.n_warmup} warmup iterations diverged; try a smaller eps0")
            eps = da.final
        L = int(rng.integers(lo, hi + 1))
        v = sd * rng.standard_normal(n)
        H0 = U + 0.5 * (v * v * M).sum()
        z1, v1, U1, g1 = _leapfrog_eg(z, v, eps, L, M, safe, g)
        H1 = U1 + 0.5 * (v1 * v1 * M).sum() if np.isfinite(U1) else np.inf
        delta = H1 - H0
        diverged = not np.isfinite(delta) or abs(delta) > config.max_delta_h
        a = 0.0 if diverged else min(1.0, math.exp(min(0.0, -delta)))
        if not diverged and rng.uniform() < a:
            z, U, g = z1, U1, g1
            acc[it] = True
        div[it] = diverged
        if diverged and it < config.n_warmup:
            n_div_warm += 1
        aprob[it] = a
        dH[it] = delta if np.isfinite(delta) else np.inf
        nlf[it] = L
        eps_trace[it] = eps
        out_z[it] = z
        energy[it] = U
        if it < config.n_warmup:
            eps = da.update(a)
            if config.restart_adaptation and it + 1 == config.n_warmup // 2:
                # early warmup runs far from the typical set; start a fresh
                # adaptation window from the step size reached so far
                da = _DualAveraging(da.final, config.target_accept, config.gamma, config.t0, config.kappa)
                eps = da.final_eps0
    if config.n_warmup == T and n_div_warm > config.max_divergent_frac * max(T, 1):
        raise AdaptationError(f"{n_div_warm} of {T} warmup iterations diverged; try a smaller eps0")
    final_eps = da.final if config.n_warmup > 0 else config.eps0
    return ChainTrace(out_z, energy, aprob, acc, div, dH, nlf, eps_trace, final_eps, Minv, config.n_warmup)


def energy_error(eg_fn, z0, eps: float, L: int, Minv, n_rep: int = 50, seed: int = 0) -> np.ndarray:
    """``|dH|`` over ``n_rep`` independent trajectories from ``z0`` at a fixed step size."""
    rng = np.random.default_rng(seed)
    z0 = np.asarray(z0, dtype=float)
    Minv = np.asarray(Minv, dtype=float)
    M = 1.0 / Minv
    eg_fn = _safe_eg(eg_fn)
    U0, g0 = eg_fn(z0)
    out = np.empty(n_rep)
    for i in range(n_rep):
        v = np.sqrt(Minv) * rng.standard_normal(z0.size)
        _, v1, U1, _ = _leapfrog_eg(z0, v, eps, L, M, eg_fn, g0)
        out[i] = abs(U1 + 0.5 * (v1 * v1 * M).sum() - U0 - 0.5 * (v * v * M).sum())
    return out


# ---------------------------------------------------------------------------
# posterior draws


@dataclass
class PosteriorDraws:
    """Retained post-warmup draws (unconstrained) plus per-iteration diagnostics."""

    z: np.ndarray
    layout: Layout
    accepted: np.ndarray
    energy: np.ndarray
    eps: float
    divergent: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    delta_h: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chain: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    warmup_accept_rate: float = float("nan")

    def __len__(self) -> int:
        return self.z.shape[0]

    def __getitem__(self, i: int) -> ParamState:
        return from_unconstrained(self.z[i], self.layout)[0]

    @property
    def states(self) -> list[ParamState]:
        return [self[i] for i in range(len(self))]

    @property
    def accept_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self) else float("nan")

    def _block(self, name: str) -> np.ndarray:
        return self.z[:, self.layout.slices[name]]

    @property
    def coef(self) -> np.ndarray:
        lay = self.layout
        return self._block("C").reshape(len(self), lay.d, lay.p, lay.p)

    @property
    def s(self) -> np.ndarray:
        x = self._block("s")
        full = np.concatenate([x, np.zeros((len(self), 1))], axis=1)
        full -= full.max(axis=1, keepdims=True)
        e = np.exp(full)
        return e / e.sum(axis=1, keepdims=True)

    @property
    def r(self) -> np.ndarray:
        return np.exp(self._block("r"))

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(self._block("sigma2")[:, 0])

    @property
    def W(self) -> np.ndarray:
        lay = self.layout
        return self._block("W").reshape(len(self), lay.p, lay.p_star)

    def posterior_mean_coef(self) -> np.ndarray:
        return self.coef.mean(axis=0)

    @classmethod
    def merge(cls, parts: list["PosteriorDraws"]) -> "PosteriorDraws":
        return cls(
            np.concatenate([d.z for d in parts]),
            parts[0].layout,
            np.concatenate([d.accepted for d in parts]),
            np.concatenate([d.energy for d in parts]),
            float(np.mean([d.eps for d in parts])),
            np.concatenate([d.divergent for d in parts]),
            np.concatenate([d.delta_h for d in parts]),
            np.concatenate([np.full(len(d), c) for c, d in enumerate(parts)]),
            float(np.mean([d.warmup_accept_rate for d in parts])),
        )

    def summary(self) -> dict:
        s = self.s
        ess = [effective_sample_size(self.energy)] if len(self) > 3 else [float("nan")]
        return {
            "n_draws": len(self),
            "accept_rate": self.accept_rate,
            "warmup_accept_rate": self.warmup_accept_rate,
            "step_size": self.eps,
            "n_divergent": int(self.divergent.sum()),
            "energy_mean": float(np.mean(self.energy)),
            "energy_ess": float(ess[0]),
            "s_mean": s.mean(axis=0).tolist(),
            "r_mean": self.r.mean(axis=0).tolist(),
            "sigma2_mean": float(self.sigma2.mean()),
        }

    def write_trace_csv(self, path, theta: bool = False) -> None:
        """One row per retained iteration: energy, acceptance, and optionally all coordinates."""
        import csv

        cols = ["iter", "chain", "energy", "accepted", "divergent"]
        if theta:
            cols += [f"z{i}" for i in range(self.z.shape[1])]
        chain = self.chain if self.chain.size == len(self) else np.zeros(len(self), dtype=int)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i in range(len(self)):
                row = [i, int(chain[i]), repr(float(self.energy[i])), int(self.accepted[i]),
                       int(self.divergent[i]) if self.divergent.size else 0]
                if theta:
                    row += [repr(float(x)) for x in self.z[i]]
                w.writerow(row)

    def write_summary_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _draws_from_trace(tr: ChainTrace, layout: Layout, to_centered=None) -> PosteriorDraws:
    k = tr.n_warmup
    wa = float(np.mean(tr.accept_prob[:k])) if k else float("nan")
    z = tr.z[k:]
    if to_centered is not None:
        # rejected iterations repeat the previous row, so only decode on change
        out = np.empty_like(z)
        for i in range(z.shape[0]):
            out[i] = out[i - 1] if i and np.array_equal(z[i], z[i - 1]) else to_centered(z[i])
        z = out
    return PosteriorDraws(z, layout, tr.accepted[k:], tr.energy[k:], tr.eps,
                          tr.divergent[k:], tr.delta_h[k:], np.zeros(z.shape[0], dtype=int), wa)


def hmc_run(init: ParamState, design, hyper, config: HmcConfig, noncentered: bool = True,
            xi_clip: float = 10.0) -> PosteriorDraws:
    """Sample the model posterior starting from ``init``.

    By default the chain moves in non-centered coefficient coordinates (see
    :class:`PosteriorModel`); the returned draws hold the coefficients
    themselves either way. ``xi_clip`` bounds the starting non-centered
    coefficients.
    """
    layout = to_unconstrained(init).layout
    model = PosteriorModel(design, hyper, layout, noncentered=noncentered)
    z0 = model.encode(init, clip=xi_clip if noncentered else None)
    Minv = config.mass_diag
    if Minv is None:
        Minv = regularize_mass(fisher_diag_mass(z0, model.grad))
    tr = hmc_sample(model.energy_and_grad, z0, config, Minv=Minv)
    return _draws_from_trace(tr, layout, model.centered if noncentered else None)


def _run_one(args):
    init, design, hyper, config = args
    return hmc_run(init, design, hyper, config)


def run_chains(init: ParamState, design, hyper, config: HmcConfig, n_chains: int = 1,
               threads: int = 1) -> PosteriorDraws:
    """Independent chains with seeds ``config.seed + c``; merged after completion."""
    jobs = [(init, design, hyper, config.with_(seed=config.seed + c)) for c in range(n_chains)]
    if threads > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_run_one, jobs))
    else:
        parts = [_run_one(j) for j in jobs]
    return PosteriorDraws.merge(parts) if len(parts) > 1 else parts[0]


# ---------------------------------------------------------------------------
# diagnostics


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, n=2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n]
    return ac / ac[0] if ac[0] > 0 else np.zeros(n)


def effective_sample_size(x: np.ndarray) -> float:
    """ESS with Geyer's initial positive sequence truncation."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    rho = autocorrelation(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2 * pair
    return float(n / max(tau, 1e-12))
