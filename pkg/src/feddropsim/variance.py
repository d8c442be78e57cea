"""Variance analysis of probabilistically sparsified gradient vectors.

A gradient vector G is compressed by keeping coordinate i with probability
p_i and scaling survivors by 1/p_i, which keeps the estimator unbiased. The
top-k coordinates by magnitude are always kept (p = 1); the tail gets
p_i = min(1, r|g_i|). The rate r is chosen so the estimator's second moment
sum(g_i^2 / p_i) lands at (1 + epsilon) * sum(g_i^2), and the total expected
traffic sum(p_i) is compared against k * (1 + epsilon). That bound is
reported, not asserted: it only tends to hold when k is small relative to
the vector length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError, InputError

# Named so error messages can point at the exact identity that failed.
R_IDENTITY = "r = sum_tail|g_i| / ((1+eps)*sum(g_i^2) - sum_top(g_i^2))"
VARIANCE_IDENTITY = "sum(g_i^2 / p_i)"
BOUND_IDENTITY = "sum(p_i) <= k*(1+eps)"


def _as_gradient(G) -> np.ndarray:
    g = np.asarray(G, dtype=np.float64).ravel()
    if g.size == 0:
        raise InputError("gradient vector must be nonempty")
    if not np.isfinite(g).all():
        raise InputError("gradient vector must be finite")
    return g


def _check_k(g: np.ndarray, k: int) -> None:
    if not 0 <= k <= g.size:
        raise InputError(f"k must be in [0, {g.size}], got {k}")


def _top_k(g: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest |g| (ties to the lower index)."""
    return np.argsort(-np.abs(g), kind="stable")[:k]


def keep_probs(G, k: int, r: float) -> np.ndarray:
    """Keep probability per coordinate, in the original index order: 1 for the
    top-k by magnitude, min(1, r|g_i|) for the tail. Zero gradients get p = 1;
    dropping a zero saves nothing and p = 0 would break the variance formula.
    """
    g = _as_gradient(G)
    _check_k(g, k)
    if r <= 0:
        raise InputError("rate r must be positive")
    p = np.minimum(1.0, r * np.abs(g))
    p[g == 0.0] = 1.0
    p[_top_k(g, k)] = 1.0
    return p


def _check_probs(g: np.ndarray, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise InputError(f"probabilities shape {p.shape} does not match gradient {g.shape}")
    if np.any(p < 0) or np.any(p > 1):
        raise InputError("keep probabilities must lie in [0, 1]")
    if np.any((p == 0) & (g != 0)):
        raise AnalysisError(
            f"keep probability 0 on a nonzero gradient makes {VARIANCE_IDENTITY} diverge"
        )
    return p


@dataclass(frozen=True)
class RateSolution:
    r: float
    violations: tuple[int, ...]  # tail indices where r|g_i| > 1 (clamp active)


def solve_r(G, k: int, epsilon: float) -> RateSolution:
    """Rate at which the sparsified estimator's second moment equals
    (1 + epsilon) * sum(g_i^2), assuming no tail coordinate is clamped.
    Reports the tail indices where the side condition r|g_i| <= 1 fails.
    """
    g = _as_gradient(G)
    _check_k(g, k)
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    order = np.argsort(-np.abs(g), kind="stable")
    top, tail = order[:k], order[k:]
    denom = (1.0 + epsilon) * float(np.sum(g**2)) - float(np.sum(g[top] ** 2))
    if denom <= 0:
        raise AnalysisError(f"nonpositive denominator in {R_IDENTITY}")
    r = float(np.sum(np.abs(g[tail]))) / denom
    violations = tuple(int(i) for i in tail if r * abs(g[i]) > 1.0 + 1e-12)
    return RateSolution(r, violations)


def estimator_variance(G, p) -> float:
    """Second moment sum(g_i^2 / p_i) of the importance-weighted sparsified
    vector; equals sum(g_i^2) exactly when nothing is ever dropped."""
    g = _as_gradient(G)
    p = _check_probs(g, p)
    live = g != 0.0
    return float(np.sum(g[live] ** 2 / p[live]))


def mc_sparsify(G, p, seed: int) -> np.ndarray:
    """One seeded draw: coordinate i becomes g_i/p_i with probability p_i,
    else 0. The 1/p_i weighting makes the draw an unbiased estimate of G."""
    g = _as_gradient(G)
    p = _check_probs(g, p)
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    keep = rng.random(g.size) < p
    out = np.zeros_like(g)
    out[keep] = g[keep] / p[keep]
    return out


@dataclass(frozen=True)
class BoundCheck:
    holds: bool
    lhs: float  # sum of keep probabilities (expected coordinates sent)
    rhs: float  # k * (1 + epsilon)
    slack: float  # rhs - lhs
    r: float


def check_bound(G, k: int, epsilon: float) -> BoundCheck:
    """Compare expected traffic sum(p_i) against k*(1+epsilon) at the solved
    rate. Reports rather than asserts: the bound is only expected to hold
    when k is much smaller than the vector length."""
    g = _as_gradient(G)
    solution = solve_r(g, k, epsilon)
    # r = 0 only when the whole tail is zero; every p is then 1 regardless.
    p = keep_probs(g, k, solution.r) if solution.r > 0 else np.ones(g.size)
    lhs = float(np.sum(p))
    rhs = k * (1.0 + epsilon)
    return BoundCheck(holds=lhs <= rhs, lhs=lhs, rhs=rhs, slack=rhs - lhs, r=solution.r)
