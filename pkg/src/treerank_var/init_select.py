"""ADMM initialization under a tree-union support constraint, posterior-state
initialization, and the plateau method for choosing the lag order and tree count.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .graph_trees import InfeasibleTreesError, SpanningTree, top_m_disjoint_trees
from .posterior import Layout, PosteriorModel, from_unconstrained, to_unconstrained
from .priors import HyperParams
from .state import ParamState
from .var_core import InvalidInputError, LaggedDesign, TimeSeries, TransitionStack, build_lagged_design


class DegenerateSurfaceWarning(UserWarning):
    pass


def _coef_layout(cbar: np.ndarray, p: int) -> np.ndarray:
    d = cbar.shape[0] // p
    return np.stack([cbar[k * p:(k + 1) * p].T for k in range(d)])


def edge_score(V: np.ndarray, p: int) -> np.ndarray:
    """Symmetric score ``sum_k V^(k)_ij^2 + V^(k)_ji^2`` from a matrix in regression layout."""
    sq = (_coef_layout(V, p) ** 2).sum(axis=0)
    S = sq + sq.T
    np.fill_diagonal(S, 0.0)
    return S


def stacked_mask(union: np.ndarray, d: int) -> np.ndarray:
    """Regression-layout mask: tree-union edges plus own lags, repeated over the ``d`` lags."""
    A = (np.asarray(union) != 0).astype(float)
    np.fill_diagonal(A, 1.0)
    return np.tile(A.T, (d, 1))


@dataclass
class AdmmState:
    Cbar: np.ndarray
    Z: np.ndarray
    Psi: np.ndarray
    rho: float
    union_trees: list[SpanningTree]
    n_iter: int = 0
    converged: bool = False
    primal_residual: float = float("inf")
    dual_residual: float = float("inf")
    history: list = field(default_factory=list, repr=False)

    @property
    def p(self) -> int:
        return self.Cbar.shape[1]

    @property
    def d(self) -> int:
        return self.Cbar.shape[0] // self.p

    @property
    def union(self) -> np.ndarray:
        A = np.zeros((self.p, self.p))
        for t in self.union_trees:
            A += t.adjacency
        return (A > 0).astype(float)

    def stack(self) -> TransitionStack:
        """Feasible (masked) coefficients."""
        return TransitionStack.from_cbar(self.Z, self.p)

    def loss(self, design: LaggedDesign) -> float:
        return 0.5 * float(((design.Y - design.X @ self.Z) ** 2).sum())


def admm_init(design: LaggedDesign, m: int, rho: float = 1.0, max_iter: int = 500, tol: float = 1e-6,
              warm: AdmmState | None = None, freeze_after: int = 50) -> AdmmState:
    """Minimize ``0.5 ||Y - X Cbar||^2 / N`` with ``Cbar`` supported on a union of ``m`` disjoint trees.

    Starts from the ridge fit ``(X'X + I)^-1 X'Y`` (or from ``warm``), then
    alternates the tree selection, the ``Cbar`` / ``Z`` / ``Psi`` updates, and
    stops when both the primal residual ``||Cbar - Z||`` and the dual residual
    ``rho ||Z - Z_prev||`` fall below ``tol``.

    Near-tied edge scores can make the greedy tree search flip between
    supports indefinitely, so trees are re-selected only during the first
    ``freeze_after`` sweeps; afterwards the mask is fixed and the remaining
    iterations are plain convex ADMM.
    """
    if rho <= 0:
        raise InvalidInputError("rho must be positive")
    X, Y = design.X, design.Y
    p, d = design.p, design.d
    if design.N < 1:
        raise InvalidInputError("empty design")
    # the data term is averaged over rows: same minimizer, but rho = 1 is then on the scale of X'X / N
    G = X.T @ X / design.N
    XtY = X.T @ Y / design.N
    fac = cho_factor(G + rho * np.eye(G.shape[0]))
    if warm is not None and warm.Cbar.shape == (p * d, p):
        Cbar, Psi = warm.Cbar.copy(), warm.Psi.copy()
    else:
        Cbar = np.linalg.solve(X.T @ X + np.eye(G.shape[0]), X.T @ Y)
        Psi = np.zeros_like(Cbar)
    if warm is not None and len(warm.union_trees) == m:
        trees = warm.union_trees
    else:
        try:
            _, trees = top_m_disjoint_trees(edge_score(Cbar + Psi, p), m)
        except InfeasibleTreesError:
            if warm is None or len(warm.union_trees) >= m:
                raise
            # extend the smaller fit's trees instead of searching from scratch
            _, trees = top_m_disjoint_trees(edge_score(Cbar + Psi, p), m, base=warm.union_trees)
    mask = stacked_mask(sum(t.adjacency for t in trees), d)
    Z = mask * (Cbar + Psi)
    st = AdmmState(Cbar, Z, Psi, rho, trees)
    for it in range(1, max_iter + 1):
        Cbar = cho_solve(fac, XtY + rho * (Z - Psi))
        V = Cbar + Psi
        if it <= freeze_after:
            try:
                union, trees = top_m_disjoint_trees(edge_score(V, p), m)
                mask = stacked_mask(union, d)
            except InfeasibleTreesError:
                # greedy search got stuck on this score; keep the current trees
                pass
        Z_new = mask * V
        Psi = Psi + Cbar - Z_new
        r_pri = float(np.linalg.norm(Cbar - Z_new))
        r_dual = float(rho * np.linalg.norm(Z_new - Z))
        Z = Z_new
        st.history.append((r_pri, r_dual))
        st.Cbar, st.Z, st.Psi, st.union_trees = Cbar, Z, Psi, trees
        st.n_iter, st.primal_residual, st.dual_residual = it, r_pri, r_dual
        if r_pri < tol and r_dual < tol:
            st.converged = True
            break
    return st


# ---------------------------------------------------------------------------
# posterior initialization


def init_state(design: LaggedDesign, admm: AdmmState, hyper: HyperParams, n_steps: int = 200,
               step: float = 1e-2) -> ParamState:
    """Posterior starting point: the masked ADMM coefficients plus scales fitted by gradient descent.

    Tree weights are 0.9 on the edges of tree ``l`` and 0.1 elsewhere so the
    maximum spanning tree of ``u^l`` is ``T^l``. Factors come from the leading
    singular vectors of the residual. With ``C`` held fixed, the remaining
    coordinates take ``n_steps`` gradient steps on the unconstrained
    potential, halving the step whenever the potential would increase.
    """
    p, d, m = design.p, design.d, hyper.m
    p_star = hyper.resolved_p_star(p)
    C = admm.stack()
    u = np.full((m, p, p), 0.1)
    for l, t in enumerate(admm.union_trees):
        u[l][t.adjacency > 0] = 0.9
    R = design.Y - design.X @ C.cbar
    Uu, sv, Vt = np.linalg.svd(R, full_matrices=False)
    N = design.N
    Zs = np.sqrt(N) * Uu[:, :p_star]
    W = Vt[:p_star].T * sv[:p_star] / np.sqrt(N)
    sigma2 = max(float(((R - Zs @ W.T) ** 2).mean()), 1e-6)
    r = 0.1 ** np.arange(1, d + 1)
    state = ParamState(C, r, np.full(m, 1.0 / m), u, W, Zs, sigma2)
    if n_steps <= 0:
        return state
    zz = to_unconstrained(state)
    model = PosteriorModel(design, hyper, zz.layout)
    free = np.ones(zz.layout.dim, dtype=bool)
    free[zz.layout.slices["C"]] = False
    z = zz.z.copy()
    U, g = model.energy_and_grad(z)
    h = step
    for _ in range(n_steps):
        while h > 1e-12:
            trial = z.copy()
            trial[free] -= h * g[free]
            try:
                U1, g1 = model.energy_and_grad(trial)
            except (ValueError, ArithmeticError):
                U1 = np.inf
            if np.isfinite(U1) and U1 <= U:
                z, U, g = trial, U1, g1
                break
            h *= 0.5
    return from_unconstrained(z, zz.layout)[0]


# ---------------------------------------------------------------------------
# plateau method


def two_means_split(values) -> tuple[np.ndarray, np.ndarray]:
    """Exact 1-D two-means: scan every split of the sorted values.

    Returns labels (0 for the cluster with the smaller mean) and the two means.
    Ties between splits go to the first split point in sorted order.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise InvalidInputError("need at least two values")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = xs.size
    c1 = np.cumsum(xs)
    c2 = np.cumsum(xs**2)
    best, best_k = np.inf, 1
    for k in range(1, n):
        n1, n2 = k, n - k
        s1, s2 = c1[k - 1], c1[-1] - c1[k - 1]
        q1, q2 = c2[k - 1], c2[-1] - c2[k - 1]
        sse = (q1 - s1**2 / n1) + (q2 - s2**2 / n2)
        if best == np.inf or sse < best - 1e-12 * max(1.0, abs(best)):
            best, best_k = sse, k
    labels = np.empty(n, dtype=int)
    labels[order[:best_k]] = 0
    labels[order[best_k:]] = 1
    means = np.array([xs[:best_k].mean(), xs[best_k:].mean()])
    return labels, means


@dataclass
class PlateauSurface:
    d_values: np.ndarray
    m_values: np.ndarray
    loss: np.ndarray  # (len(d_values), len(m_values)), monotone envelope
    raw_loss: np.ndarray
    labels: np.ndarray  # 0 marks the low-loss cluster
    selected: tuple[int, int]
    degenerate: bool = False

    def rows(self):
        for a, d in enumerate(self.d_values):
            for b, m in enumerate(self.m_values):
                yield int(d), int(m), float(self.loss[a, b]), int(self.labels[a, b])

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["d", "m", "loss", "cluster"])
            for d, m, loss, lab in self.rows():
                w.writerow([d, m, repr(loss), lab])


PLATEAU_RULES = ("axis", "grid")


def _n_free(d: int, m: int, p: int) -> int:
    """Free coefficients per cell: ``d`` lags over the diagonal plus both directions of ``m`` trees."""
    return d * (p + 2 * m * (p - 1))


def _real_drop(drop: float, dk: int, s2: float, z_crit: float) -> bool:
    """Whether a loss drop exceeds what ``dk`` extra least-squares coefficients give on noise alone.

    On noise the drop is about ``s2 / 2`` times a chi-square with ``dk`` degrees of freedom.
    """
    return drop > 0.5 * s2 * (dk + z_crit * np.sqrt(2.0 * max(dk, 0)))


def plateau_select(ts: TimeSeries, d_max: int, m_max: int, rho: float = 1.0, max_iter: int = 500,
                   tol: float = 1e-6, z_crit: float = 4.0, rule: str = "axis") -> PlateauSurface:
    """Fit every ``(d, m)`` cell and pick the smallest cell of the low-loss cluster.

    All cells share the response rows ``t >= d_max`` so losses are comparable.
    The recorded loss of a cell is the smallest loss over cells it dominates
    (a support feasible for fewer lags or trees is feasible for more), which
    keeps the surface monotone despite the greedy tree search.

    ``rule="grid"`` splits all cell losses into two clusters at once and takes
    the smallest ``(d + m, d)`` cell of the lower cluster. With noisy data the
    losses level off at the noise floor rather than at zero and the grid split
    tends to separate only the worst lag order; ``rule="axis"`` (default)
    applies the same split along each axis in turn: first ``d`` on the losses
    at ``m = m_max``, then ``m`` on the row of the chosen ``d``; an axis whose
    total drop is within noise (see ``z_crit`` below) resolves to its first value.

    Drops are judged against the decrease that extra coefficients produce on
    pure noise, with the noise variance estimated from the best cell; a drop
    counts when it exceeds the chi-square mean by ``z_crit`` standard
    deviations. The surface is degenerate when the drop from ``(1, 1)`` to the
    best cell does not count.
    """
    if rule not in PLATEAU_RULES:
        raise InvalidInputError(f"rule must be one of {PLATEAU_RULES}")
    p = ts.p
    if d_max < 1 or m_max < 1:
        raise InvalidInputError("d_max and m_max must be at least 1")
    if m_max > p // 2:
        raise InvalidInputError(f"m_max must be at most p // 2 = {p // 2}")
    raw = np.zeros((d_max, m_max))
    n_rows = 0
    for d in range(1, d_max + 1):
        design = build_lagged_design(ts, d, start=d_max)
        n_rows = design.N
        warm = None
        for m in range(1, m_max + 1):
            st = admm_init(design, m, rho=rho, max_iter=max_iter, tol=tol, warm=warm)
            raw[d - 1, m - 1] = st.loss(design)
            warm = st
    loss = np.minimum.accumulate(np.minimum.accumulate(raw, axis=0), axis=1)
    d_vals = np.arange(1, d_max + 1)
    m_vals = np.arange(1, m_max + 1)
    s2 = 2.0 * loss.min() / max(n_rows * p, 1)
    if loss.size < 2 or not _real_drop(loss[0, 0] - loss.min(), _n_free(d_max, m_max, p) - _n_free(1, 1, p), s2, z_crit):
        warnings.warn("loss surface is flat across the grid; returning (1, 1)", DegenerateSurfaceWarning)
        return PlateauSurface(d_vals, m_vals, loss, raw, np.zeros_like(loss, dtype=int), (1, 1), True)
    labels, _ = two_means_split(loss.ravel())
    labels = labels.reshape(loss.shape)
    if rule == "grid":
        cells = [(d + m, d, m) for d in d_vals for m in m_vals if labels[d - 1, m - 1] == 0]
        _, d_sel, m_sel = min(cells)
    else:
        col = loss[:, -1]
        d_sel = 1
        if _real_drop(col[0] - col[-1], _n_free(d_max, m_max, p) - _n_free(1, m_max, p), s2, z_crit):
            d_sel = _first_low(col, d_vals)
        row = loss[d_sel - 1]
        m_sel = 1
        if _real_drop(row[0] - row[-1], _n_free(d_sel, m_max, p) - _n_free(d_sel, 1, p), s2, z_crit):
            m_sel = _first_low(row, m_vals)
    return PlateauSurface(d_vals, m_vals, loss, raw, labels, (int(d_sel), int(m_sel)))


def _first_low(values: np.ndarray, grid: np.ndarray) -> int:
    if values.size == 1:
        return int(grid[0])
    if values.max() - values.min() <= 0:
        return int(grid[0])
    lab, _ = two_means_split(values)
    return int(grid[np.nonzero(lab == 0)[0][0]])
