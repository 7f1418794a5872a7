"""Shared test utilities: random instance builders and independent oracles."""

import numpy as np


def random_simplex(rng, size):
    return rng.dirichlet(np.ones(size))


def random_views(rng, count, dim):
    return rng.normal(size=(count, dim))


def rational_marginal(rng, parts, denominator, allow_zero=False):
    """Random composition of `denominator` into `parts` integer atoms."""
    if parts == 1:
        return np.array([denominator], dtype=int)
    if allow_zero:
        counts = rng.multinomial(denominator, np.ones(parts) / parts)
        return counts.astype(int)
    cuts = np.sort(rng.choice(np.arange(1, denominator), size=parts - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [denominator]])).astype(int)


def hungarian_transport_cost(p_atoms, q_atoms, denominator, cost):
    """Unit-atom assignment oracle for the transportation problem.

    Each marginal entry is split into atoms of mass 1/denominator and the
    resulting square assignment problem is solved exactly.
    """
    from scipy.optimize import linear_sum_assignment

    rows = np.repeat(np.arange(len(p_atoms)), p_atoms)
    cols = np.repeat(np.arange(len(q_atoms)), q_atoms)
    expanded = cost[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(expanded)
    return float(expanded[r, c].sum()) / denominator


def fd_gradient(fn, tensor, h=1e-5):
    """Central finite differences of scalar fn() w.r.t. every tensor entry."""
    grad = np.zeros_like(tensor)
    it = np.nditer(tensor, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = tensor[idx]
        tensor[idx] = orig + h
        up = fn()
        tensor[idx] = orig - h
        down = fn()
        tensor[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-3):
    """Largest |a - f| / max(|a|, |f|, floor) over paired tensors.

    The floor guards near-zero coordinates against FD cancellation noise;
    the loss scale is O(1) throughout.
    """
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst
