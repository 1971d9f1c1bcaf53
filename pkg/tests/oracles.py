"""Independent reference implementations used by the unit and acceptance tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def brute_force_improvement(costs: np.ndarray, k: int) -> float:
    """Best mincost improvement over the default row 0 by any k candidate rows."""
    base = costs[0].mean()
    best = 0.0
    for subset in itertools.combinations(range(1, costs.shape[0]), k):
        rows = costs[[0, *subset]]
        best = max(best, base - rows.min(axis=0).mean())
    return best


def ls_oracle(P: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares weights ``(w0, w)``; directions the design cannot identify stay at ``w = 1/k``.

    Derived from the SVD of the design ``[1, P]``: every least-squares
    solution is the minimum-norm one plus a null-space vector, and the
    null-space vector is chosen so the non-intercept part matches the
    initial weights along the unidentifiable directions.
    """
    n, k = P.shape
    D = np.hstack([np.ones((n, 1)), P])
    w_mn = np.linalg.lstsq(D, y, rcond=None)[0]
    _, s, vt = np.linalg.svd(D)
    rank = int(np.sum(s > 1e-10 * s[0]))
    null = vt[rank:].T  # (k+1, m)
    if null.shape[1] == 0:
        return w_mn
    init = np.r_[0.0, np.full(k, 1.0 / k)]
    # match the non-intercept part along the null directions (projected to weight space)
    B = null[1:]
    q, _ = np.linalg.qr(B)
    target = q.T @ (init[1:] - w_mn[1:])
    t = np.linalg.lstsq(q.T @ B, target, rcond=None)[0]
    return w_mn + null @ t


def random_stacking_design(rng):
    """Random correlated prediction matrix ``P`` and target ``y`` for stacking-weight checks."""
    n = int(rng.integers(15, 200))
    k = int(rng.integers(1, 5))
    base = rng.normal(size=n)
    # model predictions are strongly correlated with one another, as in practice
    P = base[:, None] * rng.uniform(0.5, 1.5, size=k) + rng.normal(scale=rng.uniform(0.05, 1.0), size=(n, k))
    y = rng.normal() + P @ rng.normal(size=k) + rng.normal(scale=0.3, size=n)
    return P, y


def enumerated_p(a, b) -> float:
    """P(U <= U_obs) by listing every assignment of the pooled values to the first group."""
    pooled = list(a) + list(b)
    n1 = len(a)

    def u(x, y):
        return sum(1.0 if xi > yi else 0.5 if xi == yi else 0.0 for xi in x for yi in y)

    obs = u(a, b)
    count = total = 0
    for idx in itertools.combinations(range(len(pooled)), n1):
        chosen = set(idx)
        x = [pooled[i] for i in idx]
        y = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        total += 1
        count += u(x, y) <= obs + 1e-9
    return count / total


def sorted_percentile(values, q):
    s = sorted(values)
    pos = q / 100 * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)
