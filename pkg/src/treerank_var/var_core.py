"""VAR(d) processes: coefficient stacks, simulation, lagged design and stability checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InvalidInputError(ValueError):
    pass


class StabilityError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionStack:
    """Lag coefficients, ``coef[k, i, j]`` is the effect of series j on series i at lag k+1."""

    coef: np.ndarray

    def __post_init__(self):
        C = np.array(self.coef, dtype=float)
        if C.ndim == 2:
            C = C[None]
        if C.ndim != 3 or C.shape[1] != C.shape[2]:
            raise InvalidInputError(f"coef must have shape (d, p, p), got {C.shape}")
        if C.shape[0] < 1:
            raise InvalidInputError("need at least one lag")
        if not np.all(np.isfinite(C)):
            raise InvalidInputError("coefficients must be finite")
        C.setflags(write=False)
        object.__setattr__(self, "coef", C)

    @property
    def d(self) -> int:
        return self.coef.shape[0]

    @property
    def p(self) -> int:
        return self.coef.shape[1]

    @property
    def cbar(self) -> np.ndarray:
        """Stacked regression layout ``[C1^T; ...; Cd^T]`` of shape ``(p*d, p)``."""
        return np.concatenate([c.T for c in self.coef], axis=0)

    @classmethod
    def from_cbar(cls, cbar: np.ndarray, p: int) -> "TransitionStack":
        cbar = np.asarray(cbar, dtype=float)
        d = cbar.shape[0] // p
        return cls(np.stack([cbar[k * p:(k + 1) * p].T for k in range(d)]))

    def companion(self) -> np.ndarray:
        d, p = self.d, self.p
        F = np.zeros((p * d, p * d))
        F[:p, :] = np.concatenate(list(self.coef), axis=1)
        if d > 1:
            F[p:, :-p] = np.eye(p * (d - 1))
        return F

    def scaled(self, factor: float) -> "TransitionStack":
        return TransitionStack(self.coef * factor)


@dataclass(frozen=True)
class TimeSeries:
    data: np.ndarray
    standardized: bool = False
    center: np.ndarray | None = field(default=None, compare=False)
    scale: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.array(self.data, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InvalidInputError("time series must be a T x p array")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("time series contains non-finite values")
        X.setflags(write=False)
        object.__setattr__(self, "data", X)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    def to_original(self, values: np.ndarray) -> np.ndarray:
        """Map values in standardized units back to the original scale."""
        if self.scale is None:
            return np.asarray(values)
        return np.asarray(values) * self.scale + self.center


@dataclass(frozen=True)
class LaggedDesign:
    """Regression layout: ``Y`` is ``(N, p)``, row t of ``X`` is ``[y_{t-1}, ..., y_{t-d}]``."""

    Y: np.ndarray
    X: np.ndarray
    d: int

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class StabilityReport:
    degrees_star: np.ndarray
    degrees_dstar: np.ndarray
    bound: float
    sufficient_pass: bool
    g0: float

    @property
    def margin(self) -> float:
        """Largest node degree relative to the bound (below 1 means pass)."""
        return float(max(self.degrees_star.max(), self.degrees_dstar.max()) / self.bound)


def check_stability_sufficient(C: TransitionStack) -> StabilityReport:
    """Sparsity-based sufficient stability condition on symmetrized lag coefficients."""
    coef = C.coef
    d = C.d
    g0 = -0.4 - 0.61 / d
    Ct = np.transpose(coef, (0, 2, 1))
    a_star = np.sqrt((((coef + Ct) / 2) ** 2).sum(axis=0))
    # for d = 1, g0 < -1 and the radicand can dip below zero where sum_k C_ij C_ji > 0;
    # that branch never binds there, so it is clipped at zero
    rad = (((coef + g0 * Ct) / 2) ** 2 + (1 - g0**2) * (Ct / 2) ** 2).sum(axis=0)
    a_dstar = np.sqrt(np.clip(rad, 0.0, None))
    D1 = a_star.sum(axis=1)
    D2 = a_dstar.sum(axis=1)
    bound = 1.0 / np.sqrt(d)
    ok = bool(np.all(D1 < bound) and np.all(D2 < bound))
    return StabilityReport(D1, D2, float(bound), ok, g0)


def companion_spectral_radius(C: TransitionStack) -> float:
    """Spectral radius of the companion matrix; below 1 iff the process is stable."""
    try:
        eig = np.linalg.eigvals(C.companion())
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.abs(eig).max())


def scale_to_stability(C: TransitionStack, margin: float = 0.95, tol: float = 1e-12) -> TransitionStack:
    """Scale ``C`` by a global factor so its largest degree ratio equals ``margin``.

    Both degree vectors are positively homogeneous of degree one in ``C``, so
    bisection on the scale factor converges to the unique root.
    """
    if not np.any(C.coef):
        return C
    target = margin
    lo, hi = 0.0, 1.0
    while check_stability_sufficient(C.scaled(hi)).margin < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if check_stability_sufficient(C.scaled(mid)).margin < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * hi:
            break
    return C.scaled(lo)


def _check_spd(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
        raise InvalidInputError("noise covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise InvalidInputError("noise covariance is not positive definite") from None


def simulate_var(C: TransitionStack, noise_cov, T: int, burn_in: int = 200, seed: int = 0,
                 init: np.ndarray | None = None) -> TimeSeries:
    """Simulate ``T`` observations of the VAR after ``burn_in`` discarded steps.

    ``init`` optionally gives the ``d`` most recent states (oldest first); the
    default is a zero initial state.
    """
    chol = _check_spd(noise_cov)
    if chol.shape[0] != C.p:
        raise InvalidInputError("noise covariance dimension does not match C")
    if burn_in < 0 or T < 1:
        raise InvalidInputError("T must be positive and burn_in nonnegative")
    if not check_stability_sufficient(C).sufficient_pass and companion_spectral_radius(C) >= 1:
        raise StabilityError("transition matrices define an unstable process")
    rng = np.random.default_rng(seed)
    d, p = C.d, C.p
    total = T + burn_in
    eps = rng.standard_normal((total, p)) @ chol.T
    y = np.zeros((total + d, p))
    if init is not None:
        y[:d] = np.asarray(init, dtype=float).reshape(d, p)
    F = np.concatenate(list(C.coef), axis=1)  # (p, p*d) against [y_{t-1}, ..., y_{t-d}]
    for t in range(total):
        lags = y[t:t + d][::-1].ravel()
        y[t + d] = F @ lags + eps[t]
    return TimeSeries(y[d + burn_in:])


def build_lagged_design(ts: TimeSeries, d: int, start: int | None = None) -> LaggedDesign:
    """Lagged regression design.

    ``start`` (default ``d``) is the first response row; passing a value larger
    than ``d`` drops early responses so designs of different lag order share a
    common response window.
    """
    if d < 1:
        raise InvalidInputError("lag count must be positive")
    y = ts.data
    T = y.shape[0]
    start = d if start is None else start
    if start < d:
        raise InvalidInputError("start must be at least d")
    if T <= start:
        raise InsufficientDataError(f"need T > {start} observations, got {T}")
    Y = y[start:]
    X = np.concatenate([y[start - k:T - k] for k in range(1, d + 1)], axis=1)
    return LaggedDesign(Y.copy(), X, d)


def standardize(ts: TimeSeries) -> TimeSeries:
    """Center and scale each column to sample mean 0 and sample variance 1 (ddof=1)."""
    y = ts.data
    if y.shape[0] < 2:
        raise DegenerateInputError("need at least two observations to standardize")
    mu = y.mean(axis=0)
    sd = y.std(axis=0, ddof=1)
    if np.any(sd <= 1e-12 * np.maximum(1.0, np.abs(mu))):
        bad = np.nonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(mu)))[0].tolist()
        raise DegenerateInputError(f"constant column(s) {bad} cannot be standardized")
    z = (y - mu) / sd
    if ts.scale is not None:
        center = ts.center + ts.scale * mu
        scale = ts.scale * sd
    else:
        center, scale = mu, sd
    return TimeSeries(z, standardized=True, center=center, scale=scale)


def destandardize_coef(C: TransitionStack, scale: np.ndarray) -> TransitionStack:
    """Coefficients fitted on standardized series expressed on the original scale."""
    s = np.asarray(scale, dtype=float)
    return TransitionStack(C.coef * s[None, :, None] / s[None, None, :])


def lyapunov_covariance(C: TransitionStack, noise_cov) -> np.ndarray:
    """Stationary covariance of the stacked state (top-left ``p x p`` block is Var(y_t))."""
    from scipy.linalg import solve_discrete_lyapunov

    F = C.companion()
    Q = np.zeros_like(F)
    Q[:C.p, :C.p] = noise_cov
    return solve_discrete_lyapunov(F, Q)[:C.p, :C.p]


def read_series_csv(path) -> TimeSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidInputError(f"{path} is empty")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        data = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2:
        raise InvalidInputError(f"{path}: ragged rows")
    return TimeSeries(data)


def write_matrix_csv(path, M: np.ndarray, header: list[str] | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for row in np.atleast_2d(M):
            w.writerow([repr(float(x)) for x in row])


def write_series_csv(path, ts: TimeSeries, header: bool = True) -> None:
    names = [f"y{j}" for j in range(ts.p)] if header else None
    write_matrix_csv(path, ts.data, names)
