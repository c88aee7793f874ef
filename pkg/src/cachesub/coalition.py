"""Sharing the value of a per-CP cache at the central office among ANOs.

Demand is ``lam[a, f]`` (ANO a, file f) in units of peak traffic; ``s`` is the
storage price per content and ``b`` the transit price per unit traffic.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .demand import zipf_weights

CP = "CP"
SHAPLEY_MAX_PLAYERS = 8


class CoalitionError(ValueError):
    pass


@dataclass(frozen=True)
class CoGameInstance:
    lam: np.ndarray           # (n_anos, F)
    s: float
    b: float
    shares: np.ndarray = None  # r_a, defaults to 0.5 each

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lam, dtype=np.float64))
        if np.any(lam < 0):
            raise CoalitionError("demand must be >= 0")
        if self.s < 0:
            raise CoalitionError("storage price must be >= 0")
        if self.b < 0:
            raise CoalitionError("bandwidth price must be >= 0")
        shares = np.full(lam.shape[0], 0.5) if self.shares is None else \
            np.asarray(self.shares, dtype=np.float64)
        if shares.shape != (lam.shape[0],) or np.any(shares < 0) or np.any(shares > 1):
            raise CoalitionError("one share in [0, 1] per ANO required")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "shares", shares)

    @property
    def n_anos(self) -> int:
        return self.lam.shape[0]

    def restrict(self, members: Sequence[int]) -> "CoGameInstance":
        idx = list(members)
        return CoGameInstance(self.lam[idx], self.s, self.b, self.shares[idx])


@dataclass
class ValueLedger:
    cached: np.ndarray          # file indices in the cached set
    total_saving: float
    phi: np.ndarray             # per-ANO value
    subsidy: np.ndarray         # per-ANO subsidy r_a * phi_a
    eta: Optional[np.ndarray] = None   # (n_anos, len(cached)) per-file shares
    zeta: Optional[np.ndarray] = None  # per-ANO CO-cost shares

    @property
    def subsidy_total(self) -> float:
        return math.fsum(self.subsidy)


def _as_index(g: CoGameInstance, C) -> np.ndarray:
    C = np.asarray(C)
    if C.dtype == bool:
        if C.shape != (g.lam.shape[1],):
            raise CoalitionError("content mask has wrong length")
        return np.nonzero(C)[0]
    return np.unique(C.astype(np.int64))


def optimal_set(g: CoGameInstance) -> np.ndarray:
    """Files whose aggregate demand strictly exceeds ``s / b``."""
    if g.b == 0:
        raise CoalitionError("bandwidth price must be > 0")
    return np.nonzero(g.lam.sum(axis=0) > g.s / g.b)[0]


def savings(g: CoGameInstance, C) -> float:
    """Net saving ``sum over cached f of (b * sum_a lam[a, f] - s)``."""
    idx = _as_index(g, C)
    if idx.size == 0:
        return 0.0
    return math.fsum(g.b * g.lam[:, idx].sum(axis=0) - g.s)


def value(g: CoGameInstance, members: Sequence[int]) -> float:
    """Coalition value: best saving the member ANOs achieve on their own."""
    if not len(members):
        return 0.0
    sub = g.restrict(members)
    return savings(sub, optimal_set(sub))


def eta_distribution(g: CoGameInstance, C) -> ValueLedger:
    """Per-file demand-proportional sharing of the storage cost."""
    idx = _as_index(g, C)
    lam = g.lam[:, idx]
    tot = lam.sum(axis=0)
    if np.any(tot <= 0):
        raise CoalitionError("cached file with zero aggregate demand")
    eta = lam / tot
    phi = np.array([math.fsum(row) for row in lam * g.b - eta * g.s])
    return ValueLedger(idx, savings(g, idx), phi, g.shares * phi, eta=eta)


def zeta_distribution(g: CoGameInstance, C) -> ValueLedger:
    """Per-ANO hit-traffic-proportional sharing of the storage cost."""
    idx = _as_index(g, C)
    hits = np.array([math.fsum(row) for row in g.lam[:, idx]])  # T_a h_a(C)
    total = math.fsum(hits)
    if total <= 0:
        raise CoalitionError("zero total hit traffic")
    zeta = hits / total
    phi = hits * g.b - zeta * idx.size * g.s
    return ValueLedger(idx, savings(g, idx), phi, g.shares * phi, zeta=zeta)


def zeta_subsidy_total(g: CoGameInstance, C) -> float:
    """Total subsidy in pre-factor form: weighted hit share times the overall saving."""
    idx = _as_index(g, C)
    hits = np.array([math.fsum(row) for row in g.lam[:, idx]])
    pre = math.fsum(g.shares * hits) / math.fsum(hits)
    return pre * (math.fsum(hits) * g.b - idx.size * g.s)


def subsidy_maximizing_set(g: CoGameInstance, shares: np.ndarray, eta_over=None) -> np.ndarray:
    """Files a CP would cache to maximise its subsidy under per-file eta shares.

    ``eta_over`` selects the coalition the shares are computed over (default: all).
    """
    shares = np.asarray(shares, dtype=np.float64)
    lam = g.lam if eta_over is None else g.lam[list(eta_over)]
    r = shares if eta_over is None else shares[list(eta_over)]
    tot = lam.sum(axis=0)
    eta = np.divide(lam, tot, out=np.zeros_like(lam), where=tot > 0)
    gain = (r[:, None] * lam).sum(axis=0) * g.b - (r[:, None] * eta).sum(axis=0) * g.s
    return np.nonzero(gain > 0)[0]


def in_core(g: CoGameInstance, phi: np.ndarray, rel_tol: float = 1e-12) -> bool:
    """No sub-coalition of ANOs can obtain more on its own than it is allotted."""
    n = g.n_anos
    for r in range(1, n + 1):
        for members in itertools.combinations(range(n), r):
            v = value(g, members)
            alloc = math.fsum(phi[list(members)])
            if v > alloc + rel_tol * max(1.0, abs(v)):
                return False
    return True


def shapley_oracle(g: CoGameInstance) -> dict:
    """Exact Shapley value of the game between the CP and the ANOs.

    Coalitions without the CP are worth nothing; with the CP they are worth
    the optimal saving of their ANOs. Computed by averaging marginal
    contributions over all player orderings.
    """
    players = [CP] + list(range(g.n_anos))
    if len(players) > SHAPLEY_MAX_PLAYERS:
        raise CoalitionError(f"Shapley enumeration refuses {len(players)} players")
    cache: dict = {}

    def v(coalition: frozenset) -> float:
        if coalition not in cache:
            cache[coalition] = 0.0 if CP not in coalition else \
                value(g, sorted(p for p in coalition if p != CP))
        return cache[coalition]

    totals = {p: [] for p in players}
    for perm in itertools.permutations(players):
        seen = frozenset()
        for p in perm:
            with_p = seen | {p}
            totals[p].append(v(with_p) - v(seen))
            seen = with_p
    count = math.factorial(len(players))
    return {p: math.fsum(vals) / count for p, vals in totals.items()}


def shapley_subset_formula(g: CoGameInstance) -> dict:
    """Shapley value from the weighted sum over coalitions not containing each player."""
    players = [CP] + list(range(g.n_anos))
    n = len(players)
    if n > SHAPLEY_MAX_PLAYERS:
        raise CoalitionError(f"Shapley enumeration refuses {n} players")

    def v(coalition) -> float:
        return value(g, sorted(p for p in coalition if p != CP)) if CP in coalition else 0.0

    out = {}
    for p in players:
        others = [q for q in players if q != p]
        terms = []
        for r in range(n):
            w = math.factorial(r) * math.factorial(n - r - 1) / math.factorial(n)
            for sub in itertools.combinations(others, r):
                terms.append(w * (v(set(sub) | {p}) - v(sub)))
        out[p] = math.fsum(terms)
    return out


@dataclass(frozen=True)
class VerificationParams:
    F: int = 10**7
    alpha: float = 0.8
    T: tuple = (160.0, 80.0)
    s: float = 3e-5
    b: float = 4.0
    r2: float = 0.5
    r1_grid: tuple = tuple(round(0.1 * i, 1) for i in range(1, 10))
    seeds: tuple = tuple(range(10))


def permuted_zipf_game(F: int, alpha: float, T: Sequence[float], s: float, b: float,
                       seed: int, q: Optional[np.ndarray] = None) -> CoGameInstance:
    """ANO 0 ranks files in catalog order; every other ANO uses an independent permutation."""
    q = zipf_weights(F, alpha) if q is None else q
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = [T[0] * q]
    for t in T[1:]:
        rows.append(t * q[rng.permutation(F)])
    return CoGameInstance(np.vstack(rows), s, b)


def verification_ledgers(g: CoGameInstance) -> tuple[ValueLedger, ValueLedger]:
    """Eta and zeta ledgers over the optimal set; subsidies use ``g.shares``."""
    C = optimal_set(g)
    return eta_distribution(g, C), zeta_distribution(g, C)


def errors_from_ledgers(eta: ValueLedger, zeta: ValueLedger, shares: np.ndarray) -> dict:
    """Percentage gap between zeta-estimated and eta-due subsidies for given shares."""
    shares = np.asarray(shares, dtype=np.float64)
    sub_eta = shares * eta.phi
    sub_zeta = shares * zeta.phi
    out = {}
    for a in range(shares.size):
        out[f"err{a + 1}"] = (sub_zeta[a] - sub_eta[a]) / sub_eta[a] * 100
    tot_eta = math.fsum(sub_eta)
    # pre-factor form: (sum_a r_a zeta_a) * E
    tot_zeta = math.fsum(shares * zeta.zeta) * zeta.total_saving
    out["err_tot"] = (tot_zeta - tot_eta) / tot_eta * 100
    return out


def verification_errors(g: CoGameInstance) -> dict:
    eta, zeta = verification_ledgers(g)
    return errors_from_ledgers(eta, zeta, g.shares)


def verification_error_experiment(params: VerificationParams = VerificationParams(),
                                  per_seed: Optional[list] = None) -> list[dict]:
    """Errors of zeta-based verification against eta-based subsidies, averaged over seeds.

    Returns one row per ``r1`` with mean ``err1``, ``err2``, ... and ``err_tot``
    (percent). If ``per_seed`` is a list, one record per (seed, r1) is appended
    with the errors and both ledgers.
    """
    q = zipf_weights(params.F, params.alpha)
    ledgers = []
    for seed in params.seeds:
        g = permuted_zipf_game(params.F, params.alpha, params.T, params.s, params.b, seed, q)
        ledgers.append((seed, *verification_ledgers(g)))
    keys = [f"err{a + 1}" for a in range(len(params.T))] + ["err_tot"]
    rows = []
    for r1 in params.r1_grid:
        shares = np.array([r1] + [params.r2] * (len(params.T) - 1))
        errs = []
        for seed, eta, zeta in ledgers:
            e = errors_from_ledgers(eta, zeta, shares)
            errs.append(e)
            if per_seed is not None:
                per_seed.append({"seed": seed, "r1": float(r1), **e,
                                 "ledger_eta": eta, "ledger_zeta": zeta})
        row = {"r1": float(r1)}
        for key in keys:
            row[key] = math.fsum(e[key] for e in errs) / len(errs)
        rows.append(row)
    return rows
