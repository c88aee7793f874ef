"""Memory-for-bandwidth tradeoff in a symmetric three-tier tree.

Tier 1 holds the ``e1 * e2`` leaves, tier 2 the ``e2`` intermediate nodes and
tier 3 the root. Caches are filled with the most popular bytes: leaves hold
``C1``, intermediates the next ``C2`` and the root the next ``C3``. With the
continuous hit curve ``h(C) = (C/F)**(1-alpha)`` the network cost is separable
in the cumulative sizes ``X1 = C1``, ``X2 = C1 + C2``, ``X3 = C1 + C2 + C3``,
each term ``K_i X_i + T b_i (1 - h(X_i))`` being convex. The optimum under the
ordering ``X1 <= X2 <= X3 <= F`` follows by pooling adjacent violators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .demand import hit_prob_continuous

ALL_TIERS = frozenset({1, 2, 3})
DEFAULT_SUBSETS = (frozenset({1}), frozenset({1, 2}), frozenset({1, 3}), ALL_TIERS)


class TradeoffError(ValueError):
    pass


class DegeneratePricingError(TradeoffError):
    """Storing upstream is cheaper per unit than storing at a lower tier."""


@dataclass(frozen=True)
class TierParams:
    e1: int = 100
    e2: int = 10
    T: float = 1e4       # Mb/s, busy-hour demand over all leaves
    F: float = 1e4       # GB, catalog volume
    alpha: float = 0.8
    s: tuple = (0.03, 0.03, 0.03)  # $/GB/month at tiers 1, 2, 3
    b: tuple = (4.0, 4.0, 4.0)     # $/(Mb/s)/month into tiers 1, 2, 3
    enabled_tiers: frozenset = field(default=ALL_TIERS)

    def __post_init__(self):
        if self.e1 < 1 or self.e2 < 1:
            raise TradeoffError("fanouts must be >= 1")
        if not (self.T > 0 and self.F > 0):
            raise TradeoffError("T and F must be > 0")
        if not 0 <= self.alpha < 1:
            raise TradeoffError("alpha must lie in [0, 1)")
        if min(self.s) < 0 or min(self.b) < 0:
            raise TradeoffError("prices must be >= 0")
        object.__setattr__(self, "enabled_tiers", frozenset(self.enabled_tiers))
        if not self.enabled_tiers <= ALL_TIERS:
            raise TradeoffError(f"unknown tiers {sorted(self.enabled_tiers - ALL_TIERS)}")

    @property
    def gamma(self) -> float:
        return self.T * self.b[0] / (self.F * self.s[0])

    def with_gamma(self, gamma: float) -> "TierParams":
        """Same parameters with ``T`` rescaled so that ``T b1 / (F s1) = gamma``."""
        if not gamma > 0:
            raise TradeoffError("gamma must be > 0")
        return replace(self, T=gamma * self.F * self.s[0] / self.b[0])

    def storage_coefficients(self) -> tuple[float, float, float]:
        s1, s2, s3 = self.s
        return (self.e2 * (self.e1 * s1 - s2), self.e2 * s2 - s3, s3)


@dataclass(frozen=True)
class TierSolution:
    C1: float
    C2: float
    C3: float
    total_cost: float
    baseline_cost: float
    saving_fraction: float
    degenerate: bool = False


def network_cost(p: TierParams, C1, C2, C3):
    """Monthly storage plus bandwidth cost; broadcasts over array arguments."""
    C1, C2, C3 = (np.asarray(c, dtype=np.float64) for c in (C1, C2, C3))
    h = np.vectorize(lambda c: hit_prob_continuous(c, p.F, p.alpha), otypes=[float]) \
        if C1.ndim else (lambda c: hit_prob_continuous(float(c), p.F, p.alpha))
    x1, x2, x3 = C1, C1 + C2, C1 + C2 + C3
    s1, s2, s3 = p.s
    b1, b2, b3 = p.b
    storage = p.e1 * p.e2 * C1 * s1 + p.e2 * C2 * s2 + C3 * s3
    traffic = p.T * ((1 - h(x1)) * b1 + (1 - h(x2)) * b2 + (1 - h(x3)) * b3)
    return storage + traffic


def _fast_cost(p: TierParams, C):
    """Vectorised cost for an ``(m, 3)`` array of sizes."""
    X = np.cumsum(C, axis=1)
    h = np.minimum(1.0, np.clip(X / p.F, 0.0, None) ** (1.0 - p.alpha))
    s = np.array([p.e1 * p.e2 * p.s[0], p.e2 * p.s[1], p.s[2]])
    return C @ s + p.T * ((1 - h) @ np.asarray(p.b, dtype=np.float64))


def _block_optimum(p: TierParams, K: float, B: float) -> float:
    if B <= 0:
        return 0.0 if K >= 0 else p.F
    if K <= 0:
        return p.F
    return p.F * min(1.0, ((1 - p.alpha) * p.T * B / (p.F * K)) ** (1.0 / p.alpha))


def _closed_form(p: TierParams) -> tuple[float, float, float]:
    K = p.storage_coefficients()
    blocks = []  # each: [K, B, members, fixed_at_zero]
    for i in (1, 2, 3):
        if i in p.enabled_tiers:
            blocks.append([K[i - 1], p.b[i - 1], [i], False])
        elif blocks:
            blocks[-1][0] += K[i - 1]
            blocks[-1][1] += p.b[i - 1]
            blocks[-1][2].append(i)
        else:
            blocks.append([K[i - 1], p.b[i - 1], [i], True])
    stack = []  # (block, X)
    for blk in blocks:
        x = 0.0 if blk[3] else _block_optimum(p, blk[0], blk[1])
        while stack and stack[-1][1] > x:
            top, _ = stack.pop()
            blk = [top[0] + blk[0], top[1] + blk[1], top[2] + blk[2], top[3] or blk[3]]
            x = 0.0 if blk[3] else _block_optimum(p, blk[0], blk[1])
        stack.append((blk, x))
    X = {}
    for blk, x in stack:
        for i in blk[2]:
            X[i] = x
    return X[1], X[2] - X[1], X[3] - X[2]


def _solution(p: TierParams, C, degenerate=False) -> TierSolution:
    c1, c2, c3 = (float(max(0.0, c)) for c in C)
    total = float(network_cost(p, c1, c2, c3))
    baseline = p.T * float(sum(p.b))
    saving = 0.0 if baseline == 0 else 1.0 - total / baseline
    return TierSolution(c1, c2, c3, total, baseline, saving, degenerate)


def _degenerate(p: TierParams) -> bool:
    K = p.storage_coefficients()
    return any(K[i - 1] <= 0 for i in p.enabled_tiers)


def optimal_tier_sizes(p: TierParams, allow_degenerate: bool = False) -> TierSolution:
    """Optimal tier cache sizes in closed form.

    Raises :class:`DegeneratePricingError` when a storage coefficient is not
    positive, unless ``allow_degenerate`` is set, in which case the numerical
    minimiser is used and the solution is flagged.
    """
    if not p.enabled_tiers:
        raise TradeoffError("at least one tier must be enabled")
    if _degenerate(p):
        if not allow_degenerate:
            raise DegeneratePricingError(
                f"storage coefficients {p.storage_coefficients()} not all positive")
        return numerical_tier_sizes(p, degenerate=True)
    return _solution(p, _closed_form(p))


def optimal_subset_tiers(p: TierParams, allow_degenerate: bool = False) -> TierSolution:
    if not p.enabled_tiers:
        raise TradeoffError("at least one tier must be enabled")
    return optimal_tier_sizes(p, allow_degenerate)


def _golden(f, lo, hi, tol):
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    cand = [(f(x), x) for x in (lo, a, (a + b) / 2, b, hi)]
    return min(cand)[1]


def numerical_tier_sizes(p: TierParams, degenerate: bool = False, sweeps: int = 200,
                         rel_tol: float = 1e-6) -> TierSolution:
    """Direct minimisation of :func:`network_cost` (independent of the closed form).

    A log-spaced grid over the enabled sizes seeds a coordinate descent that
    alternates single-size moves and pairwise transfers between tiers, each
    solved by golden-section search.
    """
    tiers = sorted(p.enabled_tiers)
    if not tiers:
        raise TradeoffError("at least one tier must be enabled")
    levels = np.concatenate([[0.0], p.F * np.logspace(-9, 0, 37)])
    axes = [levels if i in p.enabled_tiers else np.zeros(1) for i in (1, 2, 3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = grid[grid.sum(axis=1) <= p.F * (1 + 1e-12)]
    C = grid[int(np.argmin(_fast_cost(p, grid)))].copy()

    def cost(c):
        return float(_fast_cost(p, c[None, :])[0])

    best = cost(C)
    tol = p.F * 1e-13
    for _ in range(sweeps):
        before = best
        for i in tiers:
            room = p.F - (C.sum() - C[i - 1])

            def along(x, i=i):
                trial = C.copy()
                trial[i - 1] = x
                return cost(trial)
            C[i - 1] = _golden(along, 0.0, max(room, 0.0), tol)
        for i, j in ((a, b) for a in tiers for b in tiers if a < b):
            lo, hi = -C[i - 1], C[j - 1]

            def shift(t, i=i, j=j):
                trial = C.copy()
                trial[i - 1] += t
                trial[j - 1] -= t
                return cost(trial)
            t = _golden(shift, lo, hi, tol)
            C[i - 1] += t
            C[j - 1] -= t
        C = np.clip(C, 0.0, None)
        best = cost(C)
        if before - best <= rel_tol * 1e-3 * abs(best):
            break
    return _solution(p, C, degenerate)


def savings_curve(p: TierParams, gamma_grid: Iterable[float],
                  subsets=DEFAULT_SUBSETS, allow_degenerate: bool = True) -> list[dict]:
    """Savings of each tier subset as the cost factor varies (``T`` rescaled)."""
    rows = []
    for gamma in gamma_grid:
        if not gamma > 0:
            raise TradeoffError("gamma values must be > 0")
        base = p.with_gamma(gamma)
        for subset in subsets:
            sol = optimal_subset_tiers(replace(base, enabled_tiers=frozenset(subset)),
                                       allow_degenerate=allow_degenerate)
            rows.append({"gamma": float(gamma), "subset": subset_label(subset),
                         "saving_fraction": sol.saving_fraction,
                         "C1": sol.C1, "C2": sol.C2, "C3": sol.C3})
    return rows


def subset_label(subset) -> str:
    return "+".join(str(i) for i in sorted(subset))


def parse_subset(label: str) -> frozenset:
    try:
        tiers = frozenset(int(x) for x in label.split("+"))
    except ValueError as exc:
        raise TradeoffError(f"bad tier subset {label!r}") from exc
    if not tiers or not tiers <= ALL_TIERS:
        raise TradeoffError(f"bad tier subset {label!r}")
    return tiers
