"""Spanning trees, tree-rank and the matrix-tree relaxation of tree adjacency.

Graphs are dense symmetric ``p x p`` numpy arrays throughout. Edges are
unordered pairs ``(i, j)`` with ``i < j`` and 0-based node labels.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

Edge = tuple[int, int]

ENUMERATION_LIMIT = 8
EXACT_RANK_LIMIT = 12


class GraphError(ValueError):
    """Invalid graph input (asymmetric weights, empty edge set, ...)."""


class NoSpanningTreeError(GraphError):
    """The admissible support of a graph is disconnected."""


class InfeasibleTreesError(GraphError):
    """Fewer edge-disjoint spanning trees exist than were requested."""

    def __init__(self, message: str, found: int = 0):
        super().__init__(message)
        self.found = found


class SizeLimitError(GraphError):
    pass


class CoverageError(GraphError):
    pass


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if ra > rb:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def _edge(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


def adjacency_from_edges(edges, p: int) -> np.ndarray:
    A = np.zeros((p, p))
    for i, j in edges:
        A[i, j] = A[j, i] = 1.0
    return A


def edges_from_adjacency(A: np.ndarray) -> list[Edge]:
    iu, ju = np.nonzero(np.triu(A, 1))
    return [(int(i), int(j)) for i, j in zip(iu, ju)]


def is_spanning_tree(edges, p: int) -> bool:
    if len(edges) != p - 1:
        return False
    dsu = _DisjointSet(p)
    return all(dsu.union(i, j) for i, j in edges)


def _check_square_symmetric(M: np.ndarray, name: str = "weights") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise GraphError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise GraphError(f"{name} contains non-finite entries")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise GraphError(f"{name} must be symmetric")
    return M


@dataclass(frozen=True)
class WeightedGraph:
    weights: np.ndarray

    def __post_init__(self):
        W = _check_square_symmetric(self.weights)
        if np.any(W < 0):
            raise GraphError("weights must be nonnegative")
        W = W.copy()
        np.fill_diagonal(W, 0.0)
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @property
    def p(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class SpanningTree:
    edges: tuple[Edge, ...]
    p: int

    def __post_init__(self):
        edges = tuple(sorted(_edge(int(i), int(j)) for i, j in self.edges))
        if not is_spanning_tree(edges, self.p):
            raise GraphError(f"edges do not form a spanning tree on {self.p} nodes")
        object.__setattr__(self, "edges", edges)

    @property
    def adjacency(self) -> np.ndarray:
        return adjacency_from_edges(self.edges, self.p)

    def weight(self, W: np.ndarray, log: bool = True) -> float:
        vals = np.array([W[i, j] for i, j in self.edges])
        return float(np.log(vals).sum()) if log else float(vals.sum())


@dataclass(frozen=True)
class Forest:
    edges: tuple[Edge, ...]
    p: int
    labels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = tuple(sorted(_edge(int(i), int(j)) for i, j in self.edges))
        dsu = _DisjointSet(self.p)
        for i, j in edges:
            if not dsu.union(i, j):
                raise GraphError(f"edge {(i, j)} closes a cycle; not a forest")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", np.array([dsu.find(a) for a in range(self.p)]))

    @property
    def n_components(self) -> int:
        return len(set(self.labels.tolist()))


@dataclass(frozen=True)
class EdgeMarginals:
    """Marginal edge-inclusion probabilities of the tree distribution at temperature ``tau``."""

    probs: np.ndarray
    tau: float
    logprobs: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return self.probs.shape[0]

    def total(self) -> float:
        return float(np.triu(self.probs, 1).sum())


# ---------------------------------------------------------------------------
# Prim


def _prim(W: np.ndarray, allow_zero: bool, ties: str = "lex") -> list[Edge]:
    """Maximum spanning tree by Prim's algorithm, O(p^2).

    Only the ordering of weights matters, so maximizing the sum of log weights
    and the sum of weights give the same tree. With ``ties="lex"`` ties go to
    the edge with the lexicographically smallest ``(i, j)``; with
    ``ties="recent"`` they go to the edge from the most recently added node
    (a depth-first growth that turns an unweighted clique into a path). With
    ``allow_zero`` the graph is treated as complete (zero-weight edges
    admissible); otherwise only positive entries are edges.
    """
    p = W.shape[0]
    if p == 1:
        return []
    recent = ties == "recent"
    in_tree = np.zeros(p, dtype=bool)
    in_tree[0] = True
    order = np.zeros(p, dtype=int)
    best = W[0].astype(float).copy()
    parent = np.zeros(p, dtype=int)
    edges = []
    for step in range(1, p):
        cand = []
        for v in np.nonzero(~in_tree)[0]:
            w = best[v]
            if w > 0 or (allow_zero and w >= 0):
                i, j = _edge(int(parent[v]), int(v))
                cand.append((-w, -order[parent[v]] if recent else 0, i, j, int(v)))
        if not cand:
            raise NoSpanningTreeError("positive-weight support of the graph is disconnected")
        _, _, i, j, v = min(cand)
        edges.append((i, j))
        in_tree[v] = True
        order[v] = step
        for x in np.nonzero(~in_tree)[0]:
            w = W[v, x]
            if w > best[x] or (w == best[x] and (recent or _edge(v, int(x)) < _edge(int(parent[x]), int(x)))):
                best[x] = w
                parent[x] = v
    return edges


def max_spanning_tree(g: WeightedGraph | np.ndarray) -> SpanningTree:
    """Spanning tree maximizing the sum of log edge weights over positive-weight edges."""
    if not isinstance(g, WeightedGraph):
        g = WeightedGraph(np.asarray(g, dtype=float))
    return SpanningTree(tuple(_prim(np.asarray(g.weights), allow_zero=False)), g.p)


def top_m_disjoint_trees(score: np.ndarray, m: int, base: list[SpanningTree] | tuple = ()
                         ) -> tuple[np.ndarray, list[SpanningTree]]:
    """Greedy top-``m`` edge-disjoint maximum spanning trees.

    Prim is run ``m`` times on the score matrix, zeroing the edges of each tree
    before the next round. Trees in ``base`` are kept as the first rounds. If a
    round finds the residual graph disconnected, the search falls back to
    ``packed_spanning_trees``, which only fails when no ``m`` edge-disjoint
    spanning trees exist on the positive-score edges. Returns the union
    adjacency and the trees.
    """
    S = _check_square_symmetric(score, "score").copy()
    if np.any(S < 0):
        raise GraphError("score must be nonnegative")
    np.fill_diagonal(S, 0.0)
    p = S.shape[0]
    if m < 1:
        raise GraphError("m must be at least 1")
    if m > p // 2:
        raise InfeasibleTreesError(
            f"{m} edge-disjoint spanning trees need {m * (p - 1)} edges but K_{p} has {p * (p - 1) // 2}",
            found=0,
        )
    R = S.copy()
    trees = list(base)[:m]
    for t in trees:
        for i, j in t.edges:
            R[i, j] = R[j, i] = 0.0
    for _ in range(len(trees), m):
        try:
            edges = _prim(R, allow_zero=False)
        except NoSpanningTreeError:
            trees = packed_spanning_trees(S, m)
            break
        tree = SpanningTree(tuple(edges), p)
        trees.append(tree)
        for i, j in tree.edges:
            R[i, j] = R[j, i] = 0.0
    union = np.zeros((p, p))
    for t in trees:
        union += t.adjacency
    return union, trees


def _forest_path(adj: dict, a: int, b: int) -> list[Edge] | None:
    """Edges on the path from a to b in a forest given as adjacency sets, or None."""
    prev = {a: None}
    queue = [a]
    for x in queue:
        if x == b:
            break
        for y in adj[x]:
            if y not in prev:
                prev[y] = x
                queue.append(y)
    if b not in prev:
        return None
    path = []
    while prev[b] is not None:
        path.append(_edge(b, prev[b]))
        b = prev[b]
    return path


def packed_spanning_trees(score: np.ndarray, m: int) -> list[SpanningTree]:
    """``m`` edge-disjoint spanning trees chosen greedily by score in the union matroid.

    Edges are offered in decreasing score order and inserted into one of ``m``
    forests by a shortest augmenting path of swaps (matroid partitioning), so
    an edge is rejected only when no rearrangement of the current forests can
    absorb it. The result is a maximum-score basis of the union of ``m``
    graphic matroids over the positive-score edges.
    """
    S = np.asarray(score, dtype=float)
    p = S.shape[0]
    iu, ju = np.nonzero(np.triu(S, 1) > 0)
    cand = sorted(((-S[i, j], int(i), int(j)) for i, j in zip(iu, ju)))
    owner: dict[Edge, int] = {}
    adj = [{v: set() for v in range(p)} for _ in range(m)]
    sizes = [0] * m
    target = m * (p - 1)
    for _, i, j in cand:
        if sum(sizes) == target:
            break
        x = (i, j)
        label = {x: None}  # edge -> (edge it makes room for, forest)
        queue = [x]
        done = False
        for y in queue:
            for l in range(m):
                if owner.get(y) == l:
                    continue
                path = _forest_path(adj[l], *y)
                if path is None:
                    # augment: y goes into forest l, each predecessor takes the slot freed
                    cur, dest = y, l
                    while cur is not None:
                        src = owner.get(cur)
                        if src is not None:
                            a, b = cur
                            adj[src][a].discard(b)
                            adj[src][b].discard(a)
                            sizes[src] -= 1
                        a, b = cur
                        adj[dest][a].add(b)
                        adj[dest][b].add(a)
                        sizes[dest] += 1
                        owner[cur] = dest
                        nxt = label[cur]
                        if nxt is None:
                            cur = None
                        else:
                            cur, dest = nxt[0], src
                    done = True
                    break
                for z in path:
                    if z not in label:
                        label[z] = (y, l)
                        queue.append(z)
            if done:
                break
    if sum(sizes) < target:
        found = sum(1 for sz in sizes if sz == p - 1)
        raise InfeasibleTreesError(f"the positive-score graph holds only {found} of {m} disjoint spanning trees",
                                   found=found)
    trees = []
    for l in range(m):
        edges = tuple(e for e, o in owner.items() if o == l)
        trees.append(SpanningTree(edges, p))
    trees.sort(key=lambda t: (-sum(S[i, j] for i, j in t.edges), t.edges))
    return trees


# ---------------------------------------------------------------------------
# enumeration oracle


def enumerate_spanning_trees(g: WeightedGraph | np.ndarray) -> list[SpanningTree]:
    """All spanning trees using positive-weight edges (``p <= 8``)."""
    if not isinstance(g, WeightedGraph):
        g = WeightedGraph(np.asarray(g, dtype=float))
    p = g.p
    if p > ENUMERATION_LIMIT:
        raise SizeLimitError(f"enumeration limited to p <= {ENUMERATION_LIMIT}, got {p}")
    if p == 1:
        return [SpanningTree((), 1)]
    W = np.asarray(g.weights)
    cand = [(i, j) for i in range(p) for j in range(i + 1, p) if W[i, j] > 0]
    out: list[SpanningTree] = []

    def extend(start: int, chosen: list[Edge], parent: list[int]):
        if len(chosen) == p - 1:
            out.append(SpanningTree(tuple(chosen), p))
            return
        need = p - 1 - len(chosen)
        for idx in range(start, len(cand) - need + 1):
            i, j = cand[idx]
            ri, rj = _find(parent, i), _find(parent, j)
            if ri == rj:
                continue
            nxt = parent.copy()
            nxt[max(ri, rj)] = min(ri, rj)
            chosen.append((i, j))
            extend(idx + 1, chosen, nxt)
            chosen.pop()

    extend(0, [], list(range(p)))
    return out


def _find(parent: list[int], a: int) -> int:
    while parent[a] != a:
        a = parent[a]
    return a


def tree_distribution(g: WeightedGraph | np.ndarray, tau: float) -> tuple[list[SpanningTree], np.ndarray]:
    """Enumerated trees and their probabilities, pr(T) proportional to prod (u_e)^(1/tau)."""
    if not isinstance(g, WeightedGraph):
        g = WeightedGraph(np.asarray(g, dtype=float))
    trees = enumerate_spanning_trees(g)
    logu = np.array([sum(math.log(g.weights[i, j]) for i, j in t.edges) for t in trees]) / tau
    logu -= logu.max()
    prob = np.exp(logu)
    return trees, prob / prob.sum()


def marginals_by_enumeration(g: WeightedGraph | np.ndarray, tau: float) -> np.ndarray:
    if not isinstance(g, WeightedGraph):
        g = WeightedGraph(np.asarray(g, dtype=float))
    trees, prob = tree_distribution(g, tau)
    A = np.zeros((g.p, g.p))
    for t, pr in zip(trees, prob):
        for i, j in t.edges:
            A[i, j] += pr
    return A + A.T


# ---------------------------------------------------------------------------
# matrix-tree relaxation


# smallest relative log weight resolved by the marginal computation (extended precision reaches about -11350)
LOGW_FLOOR = -11000.0


def _log_weights(u: np.ndarray, tau: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(u) / tau
    np.fill_diagonal(logw, -np.inf)
    top = logw[np.isfinite(logw)].max()
    return logw - top


def _grounded_factors(Wt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched elimination of a weighted Laplacian, one batch per ground node.

    For ground node ``g`` every other node is eliminated in index order. New
    conductances are formed as sums of positive terms and each pivot as the sum
    of a node's remaining conductances, so no subtraction ever occurs and the
    factors keep full relative accuracy however widely the weights are spread.

    Returns ``(Linv, D)``: for each ground ``g`` the inverse unit lower factor
    (the ``g`` row/column is an identity placeholder) and the pivots, so that
    the inverse grounded Laplacian is ``Linv.T @ diag(1/D) @ Linv``.
    """
    p = Wt.shape[0]
    dt = Wt.dtype
    W = np.broadcast_to(Wt, (p, p, p)).copy()
    ground = W[np.arange(p), np.arange(p), :].copy()  # conductance of each node to ground g
    W[np.arange(p), np.arange(p), :] = 0.0
    W[np.arange(p), :, np.arange(p)] = 0.0
    D = np.ones((p, p), dtype=dt)
    Lmul = np.zeros((p, p, p), dtype=dt)
    batches = np.arange(p)
    for k in range(p):
        live = batches != k
        wk = W[live, :, k]  # conductances into k, shape (p-1, p)
        piv = wk.sum(axis=1) + ground[live, k]
        D[live, k] = piv
        frac = wk / piv[:, None]
        Lmul[live, :, k] = frac
        Wl = W[live]
        Wl += frac[:, :, None] * wk[:, None, :]
        Wl[:, np.arange(p), np.arange(p)] = 0.0
        Wl[:, k, :] = 0.0
        Wl[:, :, k] = 0.0
        W[live] = Wl
        ground[live] += frac * ground[live, k][:, None]
        ground[live, k] = 0.0
    # multipliers only couple k to later nodes: the factor is unit lower triangular
    # with -Lmul below the diagonal, so its inverse follows by forward
    # substitution with nonnegative terms (and works in any float dtype)
    Lmul = np.tril(Lmul, -1)
    Linv = np.zeros((p, p, p), dtype=dt)
    for i in range(p):
        Linv[:, i, i] = 1.0
        Linv[:, i, :] += np.einsum("gk,gkj->gj", Lmul[:, i, :i], Linv[:, :i, :])
    return Linv, D


def _resistance_from_factors(Linv: np.ndarray, D: np.ndarray) -> np.ndarray:
    p = D.shape[0]
    R = np.einsum("gkj,gk->gj", Linv**2, 1.0 / D)
    R[np.arange(p), np.arange(p)] = 0.0
    return 0.5 * (R + R.T)


def _grounded_inverse(Linv: np.ndarray, D: np.ndarray, g: int = 0) -> np.ndarray:
    K = Linv[g].T @ (Linv[g] / D[g][:, None])
    K[g, :] = 0.0
    K[:, g] = 0.0
    return K


def _all_grounded_inverses(Linv: np.ndarray, D: np.ndarray) -> np.ndarray:
    """``K[g]`` is the inverse Laplacian grounded at ``g`` (row and column ``g`` zero)."""
    p = D.shape[0]
    K = np.einsum("gki,gk,gkj->gij", Linv, 1.0 / D, Linv)
    K[np.arange(p), np.arange(p), :] = 0.0
    K[np.arange(p), :, np.arange(p)] = 0.0
    return K


def _transfer_corr2(Kall: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Squared normalized transfer resistance between every two edges, shape ``(E, E)``.

    ``rho_ef = b_e' L^+ b_f / sqrt(R_e R_f)``. Potentials for the edge with the
    smaller resistance are used (grounded at one of its endpoints) so the
    difference of potentials is accurate relative to ``sqrt(R_e R_f)``.
    """
    p = R.shape[0]
    iu, ju = np.triu_indices(p, 1)
    # Phi[f] = potentials when unit current enters at ju[f] with iu[f] grounded
    Phi = Kall[iu, :, ju]
    T1 = Phi[:, ju] - Phi[:, iu]  # T1[f, e] computed from the potentials of f
    Re = R[iu, ju]
    use_f = Re[None, :] <= Re[:, None]  # rows e, cols f: f has the smaller resistance
    T = np.where(use_f, T1.T, T1)
    sq = np.sqrt(Re)
    return (T / sq[:, None] / sq[None, :]) ** 2


def effective_resistance(weights: np.ndarray) -> np.ndarray:
    """All-pairs effective resistance of a connected weighted graph.

    Each pair is read off the grounded inverse with one endpoint as ground,
    which avoids the cancellation in ``K_ii + K_jj - 2 K_ij``.
    """
    return _resistance_from_factors(*_grounded_factors(np.asarray(weights, dtype=float)))


def reduced_laplacian_inverse(w: np.ndarray) -> np.ndarray:
    """Inverse of the Laplacian with node 0 grounded, zero-padded to ``p x p``."""
    return _grounded_inverse(*_grounded_factors(np.asarray(w, dtype=float)))


def _check_u(u) -> np.ndarray:
    U = np.asarray(u.weights if isinstance(u, WeightedGraph) else u, dtype=float)
    U = _check_square_symmetric(U, "u")
    off = ~np.eye(U.shape[0], dtype=bool)
    if np.any(U[off] < 0) or np.any(U[off] > 1):
        raise GraphError("tree weights u must lie in [0, 1]")
    return U


@dataclass(frozen=True)
class MarginalSystem:
    """Everything derived from one tree-weight matrix at temperature ``tau``.

    ``w`` are the weights ``u ** (1/tau)`` rescaled so the largest is 1 and
    ``logw`` their logs (finite even where ``w`` underflows). ``A`` and
    ``logA`` are the marginals and ``rho2`` the squared normalized transfer
    resistances between edges (upper-triangle order).
    """

    tau: float
    logw: np.ndarray
    w: np.ndarray
    R: np.ndarray
    A: np.ndarray
    logA: np.ndarray
    rho2: np.ndarray

    def dlogw_jacobian(self) -> np.ndarray:
        """``dA_e / dlog w_f``, the covariance of the edge indicators under the tree distribution."""
        p = self.w.shape[0]
        Ae = self.A[np.triu_indices(p, 1)]
        return np.diag(Ae) - Ae[:, None] * Ae[None, :] * self.rho2

    def pullback(self, GA: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. ``log u`` of a function F of the marginals.

        Takes ``GA = dF/dA * A`` over the upper triangle (callers may form it in
        log space when ``dF/dA`` is huge and ``A`` tiny) and uses
        dA_e/dlog w_f = [e == f] A_e - A_e A_f rho_ef^2.
        """
        p = self.w.shape[0]
        iu, ju = np.triu_indices(p, 1)
        ga = GA[iu, ju]
        Ae = self.A[iu, ju]
        g = ga - Ae * (self.rho2.T @ ga)
        out = np.zeros((p, p))
        out[iu, ju] = g / self.tau
        return out + out.T


def marginal_system(u, tau: float) -> MarginalSystem:
    if tau <= 0:
        raise GraphError("tau must be positive")
    U = _check_u(u)
    p = U.shape[0]
    if p < 2:
        raise GraphError("need at least two nodes")
    logw = _log_weights(U, tau)
    ncomp = connected_components(np.isfinite(logw) & ~np.eye(p, dtype=bool), directed=False)[0]
    if ncomp > 1:
        raise np.linalg.LinAlgError("singular reduced Laplacian: weight support is disconnected")
    # Relative weights routinely span hundreds of orders of magnitude at small
    # tau, so the elimination runs in extended precision. Weights below the
    # floor are raised to it; only pairs with u below exp(LOGW_FLOOR * tau) are
    # affected.
    wx = np.exp(np.maximum(logw, LOGW_FLOOR).astype(np.longdouble))
    np.fill_diagonal(wx, 0.0)
    wx[~np.isfinite(logw)] = 0.0
    Linv, D = _grounded_factors(wx)
    Rx = _resistance_from_factors(Linv, D)
    with np.errstate(divide="ignore"):
        logA = (np.maximum(logw, LOGW_FLOOR) + np.log(Rx)).astype(float)
    logA[~np.isfinite(logw)] = -np.inf
    np.fill_diagonal(logA, -np.inf)
    A = np.exp(logA)
    if not np.all(np.isfinite(A)):
        raise np.linalg.LinAlgError("non-finite marginal probabilities")
    rho2 = _transfer_corr2(_all_grounded_inverses(Linv, D), Rx).astype(float)
    with np.errstate(over="ignore"):
        R = Rx.astype(float)
    return MarginalSystem(float(tau), logw, np.exp(logw), R, np.clip(A, 0.0, 1.0), np.minimum(logA, 0.0), rho2)


def tree_marginals(u, tau: float) -> EdgeMarginals:
    """Marginal edge probabilities of the Gibbs tree distribution at temperature ``tau``.

    ``probs[i, j] = w_ij * R_ij`` with ``w = u ** (1/tau)`` and ``R`` the
    effective resistance, i.e. ``w_ij`` times the derivative of the log
    Kirchhoff cofactor. Weights are rescaled in log space so the largest is 1;
    the marginals are invariant to that scaling.
    """
    ms = marginal_system(u, tau)
    return EdgeMarginals(ms.A, float(tau), ms.logA)


def marginals_vjp(u, tau: float, grad_A: np.ndarray) -> np.ndarray:
    """Pull ``dF/dA`` (upper triangle read) back to ``dF/d log u`` as a symmetric matrix."""
    ms = marginal_system(u, tau)
    G = np.triu(np.asarray(grad_A, dtype=float), 1)
    return ms.pullback(G * ms.A)


def marginals_jacobian(u, tau: float) -> np.ndarray:
    """Full Jacobian dA_e / du_f over upper-triangle pairs, shape ``(E, E)``."""
    U = _check_u(u)
    ms = marginal_system(U, tau)
    iu, ju = np.triu_indices(U.shape[0], 1)
    return ms.dlogw_jacobian() / (tau * U[iu, ju])[None, :]


# ---------------------------------------------------------------------------
# tree rank


def _binary_adjacency(adjacency) -> np.ndarray:
    A = _check_square_symmetric(np.asarray(adjacency, dtype=float), "adjacency")
    A = (A != 0).astype(float)
    np.fill_diagonal(A, 0.0)
    if not A.any():
        raise GraphError("tree rank is undefined for a graph with no edges")
    return A


def tree_rank_exact(adjacency) -> int:
    """Exact tree-rank (arboricity) by the Nash-Williams maximum over vertex subsets."""
    A = _binary_adjacency(adjacency)
    p = A.shape[0]
    if p > EXACT_RANK_LIMIT:
        raise SizeLimitError(f"exact tree rank limited to p <= {EXACT_RANK_LIMIT}, got {p}")
    masks = np.arange(1, 2**p)
    member = ((masks[:, None] >> np.arange(p)[None, :]) & 1).astype(float)
    size = member.sum(axis=1)
    n_edges = np.einsum("si,ij,sj->s", member, A, member) / 2
    keep = (size >= 2) & (n_edges >= 1)
    ratio = np.ceil(n_edges[keep] / (size[keep] - 1) - 1e-9)
    return int(ratio.max())


def greedy_tree_cover(adjacency) -> list[SpanningTree]:
    """Trees produced by the greedy maximum-spanning-tree cover of the graph.

    With 0/1 weights nearly every comparison is a tie; growing each tree
    depth-first keeps it path-like, which leaves the residual graph better
    connected than a star would.
    """
    A = _binary_adjacency(adjacency)
    p = A.shape[0]
    W = A.copy()
    trees = []
    while W.any():
        tree = SpanningTree(tuple(_prim(W, allow_zero=True, ties="recent")), p)
        trees.append(tree)
        W = W * (1.0 - tree.adjacency)
    return trees


def tree_rank_upper(adjacency) -> int:
    """Upper bound on the tree-rank: number of greedy spanning trees needed to cover all edges."""
    return len(greedy_tree_cover(adjacency))


def forest_decomposition(adjacency, trees) -> list[Forest]:
    """Disjoint forests ``F^l = (T^l minus earlier forests) intersected with the graph``."""
    A = _binary_adjacency(adjacency)
    p = A.shape[0]
    graph = set(edges_from_adjacency(A))
    covered = set()
    for t in trees:
        covered.update(t.edges)
    missing = graph - covered
    if missing:
        raise CoverageError(f"trees do not cover graph edges {sorted(missing)[:5]}")
    used: set[Edge] = set()
    forests = []
    for t in trees:
        edges = [e for e in t.edges if e in graph and e not in used]
        used.update(edges)
        forests.append(Forest(tuple(edges), p))
    return forests


def count_spanning_trees(adjacency) -> float:
    """Kirchhoff cofactor of the (unweighted) Laplacian."""
    A = np.asarray(adjacency, dtype=float)
    L = np.diag(A.sum(axis=1)) - A
    return float(np.linalg.det(L[1:, 1:]))


def cayley_count(p: int) -> int:
    return p ** (p - 2)


def all_pairs(p: int):
    return list(itertools.combinations(range(p), 2))
