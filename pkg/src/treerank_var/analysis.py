"""Graph extraction, simulation-study harness and validation metrics."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph_trees import _DisjointSet, top_m_disjoint_trees
from .init_select import admm_init, init_state, plateau_select
from .priors import HyperParams
from .sampler import HmcConfig, PosteriorDraws, run_chains
from .var_core import (
    DegenerateInputError,
    InvalidInputError,
    LaggedDesign,
    TimeSeries,
    TransitionStack,
    build_lagged_design,
    destandardize_coef,
    scale_to_stability,
    simulate_var,
    standardize,
)

KINDS = ("tree", "random")


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class GrangerGraph:
    """``directed[i, j]`` is the edge j -> i; ``delta`` is the threshold used."""

    directed: np.ndarray
    delta: float = 0.0

    @property
    def p(self) -> int:
        return self.directed.shape[0]

    @property
    def undirected(self) -> np.ndarray:
        A = np.logical_or(self.directed, self.directed.T)
        np.fill_diagonal(A, False)
        return A

    def edges(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.undirected, 1))
        return [(int(i), int(j)) for i, j in zip(iu, ju)]

    @property
    def n_edges(self) -> int:
        return int(np.triu(self.undirected, 1).sum())

    @classmethod
    def from_undirected(cls, A: np.ndarray) -> "GrangerGraph":
        A = np.asarray(A) != 0
        np.fill_diagonal(A, False)
        return cls(A | A.T)

    def write_edge_csv(self, path, weights: np.ndarray | None = None) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "weight"])
            for i, j in self.edges():
                w.writerow([i, j, repr(float(weights[i, j])) if weights is not None else "1.0"])


def extract_graph(C: TransitionStack, delta: float) -> GrangerGraph:
    """Directed edge j -> i whenever some lag has ``|C^(k)_ij| >= delta`` (self-loops excluded)."""
    if delta < 0:
        raise InvalidInputError("delta must be nonnegative")
    D = (np.abs(C.coef) >= delta).any(axis=0)
    np.fill_diagonal(D, False)
    return GrangerGraph(D, float(delta))


def count_components(A) -> int:
    A = A.undirected if isinstance(A, GrangerGraph) else np.asarray(A) != 0
    p = A.shape[0]
    dsu = _DisjointSet(p)
    for i, j in zip(*np.nonzero(np.triu(A, 1))):
        dsu.union(int(i), int(j))
    return len({dsu.find(a) for a in range(p)})


def graph_metrics(est: GrangerGraph, truth: GrangerGraph) -> tuple[int, int]:
    """(false positives, false negatives) on the undirected projections."""
    if est.p != truth.p:
        raise InvalidInputError("graphs have different node counts")
    E, T = np.triu(est.undirected, 1), np.triu(truth.undirected, 1)
    return int((E & ~T).sum()), int((T & ~E).sum())


def threshold_sweep(C: TransitionStack, deltas) -> list[tuple[float, int, int]]:
    out = []
    for dl in deltas:
        g = extract_graph(C, float(dl))
        out.append((float(dl), g.n_edges, count_components(g)))
    return out


def effective_tree_rank(s_draws, tol: float = 1e-5) -> tuple[np.ndarray, int]:
    """Histogram over 0..m of the per-draw count of tree weights above ``tol``, and its mode."""
    s = np.atleast_2d(np.asarray(s_draws, dtype=float))
    counts = (s > tol).sum(axis=1)
    hist = np.bincount(counts, minlength=s.shape[1] + 1)
    return hist, int(np.argmax(hist))


def r_squared(Cbar, design: LaggedDesign) -> float:
    B = Cbar.cbar if isinstance(Cbar, TransitionStack) else np.asarray(Cbar)
    Y = design.Y
    tot = ((Y - Y.mean(axis=0)) ** 2).sum()
    if tot <= 0:
        raise DegenerateInputError("response has zero variance")
    return float(1.0 - ((Y - design.X @ B) ** 2).sum() / tot)


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class ScenarioConfig:
    p: int = 10
    T: int = 200
    kind: str = "tree"
    m0: int | None = 2
    density: float = 0.05
    snr: float = 2.0
    d0: int = 1
    seeds: tuple[int, ...] = ()
    replicates: int = 10
    seed0: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"kind must be one of {KINDS}")
        if self.kind == "tree" and (self.m0 is None or self.m0 < 1):
            raise InvalidInputError("tree kind needs m0 >= 1")
        if self.kind == "random" and not 0 < self.density <= 1:
            raise InvalidInputError("random kind needs density in (0, 1]")
        if self.p < 2 or self.T < 2 or self.snr <= 0 or self.d0 < 1:
            raise InvalidInputError("need p >= 2, T >= 2, snr > 0 and d0 >= 1")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds else [self.seed0 + r for r in range(self.replicates)]


@dataclass(frozen=True)
class GroundTruth:
    C0: TransitionStack
    Sigma: np.ndarray
    G0: np.ndarray  # undirected adjacency


def make_ground_truth(cfg: ScenarioConfig, seed: int) -> GroundTruth:
    rng = np.random.default_rng(seed)
    p = cfg.p
    if cfg.kind == "tree":
        w = rng.uniform(size=(p, p))
        w = np.triu(w, 1)
        w = w + w.T
        union, _ = top_m_disjoint_trees(w, cfg.m0)
    else:
        iu = np.triu_indices(p, 1)
        n_e = max(1, int(round(cfg.density * len(iu[0]))))
        pick = rng.choice(len(iu[0]), size=n_e, replace=False)
        union = np.zeros((p, p))
        union[iu[0][pick], iu[1][pick]] = 1.0
        union = union + union.T
    G0 = union > 0
    C = rng.standard_normal((cfg.d0, p, p)) * G0[None]
    C0 = scale_to_stability(TransitionStack(C), 0.95)
    band = 0.5 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    rho = np.linalg.norm(C0.coef) / (cfg.snr * np.linalg.norm(band))
    return GroundTruth(C0, rho * band, G0)


# ---------------------------------------------------------------------------
# fitting and forecasting


@dataclass(frozen=True)
class FitSettings:
    d: int | None = None
    m: int | None = None
    d_max: int = 3
    m_max: int = 3
    rho: float = 1.0
    admm_iter: int = 500
    gd_steps: int = 200
    n_chains: int = 1
    threads: int = 1
    hmc: HmcConfig = field(default_factory=HmcConfig)


@dataclass
class FitResult:
    ts: TimeSeries  # standardized training series
    d: int
    m: int
    hyper: HyperParams
    draws: PosteriorDraws
    plateau: object = None
    admm: object = None
    timings: dict = field(default_factory=dict)

    def coef_standardized(self) -> TransitionStack:
        return TransitionStack(self.draws.posterior_mean_coef())

    def coef(self) -> TransitionStack:
        """Posterior mean coefficients on the original scale."""
        return destandardize_coef(self.coef_standardized(), self.ts.scale)


def fit_pipeline(ts: TimeSeries, hyper: HyperParams, settings: FitSettings) -> FitResult:
    """standardize -> (plateau selection) -> ADMM -> state initialization -> HMC."""
    times = {}
    t0 = time.perf_counter()
    z = standardize(ts)
    plateau = None
    d, m = settings.d, settings.m
    if d is None or m is None:
        m_cap = min(settings.m_max, z.p // 2)
        plateau = plateau_select(z, settings.d_max, m_cap, rho=settings.rho, max_iter=settings.admm_iter)
        d = d if d is not None else plateau.selected[0]
        m = m if m is not None else plateau.selected[1]
    times["select"] = time.perf_counter() - t0
    hyper = hyper.with_(d=d, m=m)
    design = build_lagged_design(z, d)
    t0 = time.perf_counter()
    admm = admm_init(design, m, rho=settings.rho, max_iter=settings.admm_iter)
    init = init_state(design, admm, hyper, n_steps=settings.gd_steps)
    times["init"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    draws = run_chains(init, design, hyper, settings.hmc, settings.n_chains, settings.threads)
    times["hmc"] = time.perf_counter() - t0
    return FitResult(z, d, m, hyper, draws, plateau, admm, times)


def forecast(draws, history: np.ndarray, horizon: int, seed: int = 0, noise: bool = True
             ) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``horizon`` steps per posterior draw from the last ``d`` observations.

    ``draws`` is a ``PosteriorDraws`` or a list of ``(coef, noise_cov)`` pairs.
    Returns the pointwise mean path and all per-draw paths ``(n_draws, H, p)``.
    """
    if horizon < 1:
        raise InvalidInputError("horizon must be at least 1")
    if isinstance(draws, PosteriorDraws):
        W, s2 = draws.W, draws.sigma2
        pairs = [(draws.coef[i], W[i] @ W[i].T + s2[i] * np.eye(W.shape[1])) for i in range(len(draws))]
    else:
        pairs = [(np.asarray(c, dtype=float).reshape(-1, *np.shape(c)[-2:]), S) for c, S in draws]
    rng = np.random.default_rng(seed)
    hist = np.atleast_2d(np.asarray(history, dtype=float))
    paths = []
    for coef, S in pairs:
        d, p = coef.shape[0], coef.shape[1]
        if hist.shape[0] < d:
            raise InvalidInputError(f"need {d} history rows, got {hist.shape[0]}")
        chol = np.linalg.cholesky(S) if noise else None
        buf = list(hist[-d:])
        out = np.empty((horizon, p))
        for h in range(horizon):
            y = sum(coef[k] @ buf[-1 - k] for k in range(d))
            if noise:
                y = y + chol @ rng.standard_normal(p)
            out[h] = y
            buf.append(y)
        paths.append(out)
    paths = np.array(paths)
    return paths.mean(axis=0), paths


# ---------------------------------------------------------------------------
# scenario harness


@dataclass
class MetricsRow:
    replicate: int
    seed: int
    T: int
    d: int
    m: int
    est_error: float
    pred_error: float
    fp: int
    fn: int
    n_edges_est: int
    n_edges_true: int
    etr_mode: int
    accept_rate: float
    seconds: float

    @property
    def tp(self) -> int:
        return self.n_edges_est - self.fp


def _pad_lags(coef: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros((d, *coef.shape[1:]))
    out[:coef.shape[0]] = coef
    return out


def relative_error(C_hat: TransitionStack, C0: TransitionStack) -> float:
    d = max(C_hat.d, C0.d)
    return float(np.linalg.norm(_pad_lags(C_hat.coef, d) - _pad_lags(C0.coef, d)) / np.linalg.norm(C0.coef))


def run_replicate(cfg: ScenarioConfig, seed: int, hyper: HyperParams, settings: FitSettings,
                  replicate: int = 0) -> tuple[MetricsRow, FitResult]:
    t0 = time.perf_counter()
    try:
        gt = make_ground_truth(cfg, seed)
        H = math.ceil(0.2 * cfg.T)
        full = simulate_var(gt.C0, gt.Sigma, cfg.T + H, seed=seed + 1)
        train = TimeSeries(full.data[:cfg.T])
        test = full.data[cfg.T:]
        fit = fit_pipeline(train, hyper, settings.__class__(**{**settings.__dict__,
                                                                "hmc": settings.hmc.with_(seed=seed)}))
        C_hat = fit.coef()
        z = fit.ts
        mean_std, _ = forecast(fit.draws, z.data[-fit.d:], H, seed=seed + 2)
        Y_hat = z.to_original(mean_std)
        est = extract_graph(C_hat, hyper.delta)
        truth = GrangerGraph.from_undirected(gt.G0)
        fp, fn = graph_metrics(est, truth)
        _, mode = effective_tree_rank(fit.draws.s)
    except Exception as exc:
        raise RuntimeError(f"replicate {replicate} (seed {seed}) failed: {exc}") from exc
    row = MetricsRow(replicate, seed, cfg.T, fit.d, fit.m, relative_error(C_hat, gt.C0),
                     float(np.linalg.norm(test - Y_hat) / np.linalg.norm(test)), fp, fn, est.n_edges,
                     truth.n_edges, mode, fit.draws.accept_rate, time.perf_counter() - t0)
    return row, fit


def _replicate_job(args):
    cfg, seed, hyper, settings, r = args
    return run_replicate(cfg, seed, hyper, settings, r)[0]


def run_scenario(cfg: ScenarioConfig, hyper: HyperParams, settings: FitSettings, workers: int = 1
                 ) -> list[MetricsRow]:
    jobs = [(cfg, s, hyper, settings, r) for r, s in enumerate(cfg.seed_list())]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_replicate_job, jobs))
    return [_replicate_job(j) for j in jobs]


METRIC_FIELDS = ("est_error", "pred_error", "fp", "fn", "etr_mode", "accept_rate")


def aggregate(rows: list[MetricsRow]) -> dict:
    return {k: float(np.mean([getattr(r, k) for r in rows])) for k in METRIC_FIELDS} | {"n": len(rows)}


def write_metrics_csv(path, rows: list[MetricsRow], include_timing: bool = False) -> None:
    names = [f for f in asdict(rows[0]) if include_timing or f != "seconds"] if rows else []
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            d = asdict(r)
            w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in names])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
