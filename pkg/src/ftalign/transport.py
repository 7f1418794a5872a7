"""Discrete optimal transport between view sets.

Cost matrices, transport couplings over the polytope of fixed marginals, an
exact solver for small instances, and the rank-one product coupling whose
transport cost coincides with the dot product of fused embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptySimplexError,
    InfeasibleMarginalsError,
    NegativeEntryError,
    NotNormalizedError,
    NumericalFailureError,
)

SIMPLEX_ATOL = 1e-9
MARGINAL_ATOL = 1e-9
FLOW_ATOL = 1e-9

# Residuals below this are treated as saturated arcs inside the flow solver.
_RESIDUAL_EPS = 1e-15


def validate_simplex(values) -> np.ndarray:
    """Check that `values` is a probability vector and return it as float64.

    Raises EmptySimplexError, NegativeEntryError, or NotNormalizedError.
    """
    w = np.asarray(values, dtype=np.float64)
    if w.ndim != 1:
        raise DimensionMismatchError(f"weights must be one-dimensional, got shape {w.shape}")
    if w.size == 0:
        raise EmptySimplexError("weight vector is empty")
    if np.any(w < 0.0):
        raise NegativeEntryError(f"negative weight entry {w.min()}")
    total = float(w.sum())
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise NotNormalizedError(f"weights sum to {total!r}, expected 1 within {SIMPLEX_ATOL}")
    return w


def _views_matrix(view_set) -> np.ndarray:
    """Accept a ViewSet or a plain (n, d) array and return the float64 matrix."""
    mat = np.asarray(getattr(view_set, "views", view_set), dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionMismatchError(f"expected a (n, d) view matrix, got shape {mat.shape}")
    return mat


def negative_dot_cost(image_views, text_views) -> np.ndarray:
    """Cost matrix C[i, j] = -<image view i, text view j>."""
    img = _views_matrix(image_views)
    txt = _views_matrix(text_views)
    if img.shape[1] != txt.shape[1]:
        raise DimensionMismatchError(
            f"embedding dims differ: {img.shape[1]} vs {txt.shape[1]}"
        )
    return -(img @ txt.T)


@dataclass(eq=False)
class Coupling:
    """Nonnegative mass matrix with prescribed row and column marginals."""

    gamma: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=np.float64)
        a = validate_simplex(self.row_marginal)
        b = validate_simplex(self.col_marginal)
        if gamma.shape != (a.size, b.size):
            raise DimensionMismatchError(
                f"coupling shape {gamma.shape} does not match marginals ({a.size}, {b.size})"
            )
        if np.any(gamma < 0.0):
            raise InfeasibleMarginalsError(f"coupling has negative mass {gamma.min()}")
        row_dev = np.max(np.abs(gamma.sum(axis=1) - a))
        col_dev = np.max(np.abs(gamma.sum(axis=0) - b))
        if row_dev > MARGINAL_ATOL or col_dev > MARGINAL_ATOL:
            raise InfeasibleMarginalsError(
                f"marginal deviation (row {row_dev:.3e}, col {col_dev:.3e}) exceeds {MARGINAL_ATOL}"
            )
        self.gamma = gamma
        self.row_marginal = a
        self.col_marginal = b

    @property
    def shape(self) -> tuple[int, int]:
        return self.gamma.shape


def factorized_coupling(w, v) -> Coupling:
    """Rank-one product coupling gamma[i, j] = w[i] * v[j].

    Feasible for marginals (w, v) by construction.
    """
    w = validate_simplex(w)
    v = validate_simplex(v)
    return Coupling(np.outer(w, v), w, v)


def coupling_cost(coupling: Coupling, cost) -> float:
    """Total transport cost sum_ij gamma[i, j] * C[i, j] of a given coupling."""
    C = np.asarray(cost, dtype=np.float64)
    if coupling.gamma.shape != C.shape:
        raise DimensionMismatchError(
            f"coupling shape {coupling.gamma.shape} vs cost shape {C.shape}"
        )
    return float(np.sum(coupling.gamma * C))


def bilinear_fused_similarity(image_views, text_views, w, v) -> float:
    """Double sum sum_ij w[i] v[j] <image view i, text view j>.

    Equals -coupling_cost(factorized_coupling(w, v), negative_dot_cost(...))
    exactly, and the dot product of the raw (un-renormalized) fused vectors
    up to float reassociation.
    """
    img = _views_matrix(image_views)
    txt = _views_matrix(text_views)
    if img.shape[1] != txt.shape[1]:
        raise DimensionMismatchError(
            f"embedding dims differ: {img.shape[1]} vs {txt.shape[1]}"
        )
    w = validate_simplex(w)
    v = validate_simplex(v)
    if w.size != img.shape[0] or v.size != txt.shape[0]:
        raise DimensionMismatchError(
            f"weights ({w.size}, {v.size}) do not match view counts "
            f"({img.shape[0]}, {txt.shape[0]})"
        )
    return float(np.sum(np.outer(w, v) * (img @ txt.T)))


def exact_ot(a, b, cost) -> tuple[Coupling, float]:
    """Solve min_{gamma in Pi(a, b)} sum_ij gamma[i, j] * C[i, j] exactly.

    The transportation problem is solved by min-cost flow with successive
    shortest paths and node potentials on the complete bipartite graph.
    Costs are shifted by a constant to be nonnegative for the first Dijkstra
    pass; the reported optimum is evaluated on the original cost matrix
    (a constant shift moves every feasible objective by the same amount, so
    the argmin is unchanged).

    Returns (optimal coupling, optimal cost).
    """
    try:
        a = validate_simplex(a)
        b = validate_simplex(b)
    except (EmptySimplexError, NegativeEntryError, NotNormalizedError) as exc:
        raise InfeasibleMarginalsError(f"invalid marginals: {exc}") from exc
    C = np.asarray(cost, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise DimensionMismatchError(
            f"cost shape {C.shape} does not match marginals ({a.size}, {b.size})"
        )
    gamma = _solve_transport(a, b, C)
    coupling = Coupling(gamma, a, b)
    return coupling, float(np.sum(gamma * C))


def _solve_transport(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Successive-shortest-path min-cost flow for the transportation problem.

    Node layout: 0 = source, 1..n = rows, n+1..n+m = columns, n+m+1 = sink.
    Arc costs are C shifted to be nonnegative; Dijkstra runs on reduced costs
    kept nonnegative by node potentials.
    """
    n, m = C.shape
    shift = min(0.0, float(C.min()))
    cost = C - shift

    source = 0
    sink = n + m + 1
    num_nodes = n + m + 2

    flow = np.zeros((n, m))
    row_used = np.zeros(n)
    col_used = np.zeros(m)
    potential = np.zeros(num_nodes)

    total = float(a.sum())
    pushed = 0.0
    max_augmentations = 64 * (n + m + 2)

    for _ in range(max_augmentations):
        if total - pushed <= _RESIDUAL_EPS:
            break
        dist, prev = _dijkstra(
            n, m, cost, potential, a, b, flow, row_used, col_used
        )
        if not np.isfinite(dist[sink]):
            break
        finite = np.isfinite(dist)
        potential[finite] += dist[finite]

        # Walk back from the sink, collect the path, find the bottleneck.
        path = []
        node = sink
        bottleneck = np.inf
        while node != source:
            parent = prev[node]
            path.append((parent, node))
            if parent == source:
                i = node - 1
                bottleneck = min(bottleneck, a[i] - row_used[i])
            elif parent <= n and node > n and node <= n + m:
                pass  # forward row->col arc, infinite capacity
            elif parent > n and parent <= n + m and 1 <= node <= n:
                bottleneck = min(bottleneck, flow[node - 1, parent - n - 1])
            elif node == sink:
                j = parent - n - 1
                bottleneck = min(bottleneck, b[j] - col_used[j])
            else:
                raise NumericalFailureError("unexpected arc on augmenting path")
            node = parent

        for parent, child in path:
            if parent == source:
                row_used[child - 1] += bottleneck
            elif child == sink:
                col_used[parent - n - 1] += bottleneck
            elif parent <= n:
                flow[parent - 1, child - n - 1] += bottleneck
            else:
                flow[child - 1, parent - n - 1] -= bottleneck
        pushed += bottleneck

    if abs(pushed - total) > FLOW_ATOL:
        raise NumericalFailureError(
            f"flow saturated {pushed!r} of total mass {total!r}"
        )
    np.maximum(flow, 0.0, out=flow)  # clear float dust from reverse-arc updates
    return flow


def _dijkstra(n, m, cost, potential, a, b, flow, row_used, col_used):
    """Shortest paths from the source on reduced costs; returns (dist, prev)."""
    source = 0
    sink = n + m + 1
    num_nodes = n + m + 2
    row_nodes = np.arange(1, n + 1)
    col_nodes = np.arange(n + 1, n + m + 1)

    dist = np.full(num_nodes, np.inf)
    prev = np.full(num_nodes, -1, dtype=np.int64)
    done = np.zeros(num_nodes, dtype=bool)
    dist[source] = 0.0

    for _ in range(num_nodes):
        pending = np.where(~done & np.isfinite(dist))[0]
        if pending.size == 0:
            break
        u = pending[np.argmin(dist[pending])]
        done[u] = True
        base = dist[u]

        if u == source:
            open_rows = a - row_used > _RESIDUAL_EPS
            rc = np.maximum(potential[source] - potential[row_nodes], 0.0)
            _relax(dist, prev, row_nodes, base + rc, open_rows, u)
        elif 1 <= u <= n:
            i = u - 1
            rc = np.maximum(cost[i] + potential[u] - potential[col_nodes], 0.0)
            _relax(dist, prev, col_nodes, base + rc, np.ones(m, dtype=bool), u)
            if row_used[i] > _RESIDUAL_EPS and not done[source]:
                cand = base + max(potential[u] - potential[source], 0.0)
                if cand < dist[source]:
                    dist[source] = cand
                    prev[source] = u
        elif u <= n + m:
            j = u - n - 1
            back = flow[:, j] > _RESIDUAL_EPS
            rc = np.maximum(-cost[:, j] + potential[u] - potential[row_nodes], 0.0)
            _relax(dist, prev, row_nodes, base + rc, back, u)
            if b[j] - col_used[j] > _RESIDUAL_EPS and not done[sink]:
                cand = base + max(potential[u] - potential[sink], 0.0)
                if cand < dist[sink]:
                    dist[sink] = cand
                    prev[sink] = u
        else:  # sink
            open_cols = col_used > _RESIDUAL_EPS
            rc = np.maximum(potential[sink] - potential[col_nodes], 0.0)
            _relax(dist, prev, col_nodes, base + rc, open_cols, u)

    return dist, prev


def _relax(dist, prev, nodes, candidates, mask, origin):
    improving = mask & (candidates < dist[nodes])
    targets = nodes[improving]
    dist[targets] = candidates[improving]
    prev[targets] = origin
