"""Capacity-constrained placement by Lagrangian relaxation.

Storage limits (in GB, filled by whole contents) and uplink limits (in Mb/s)
are relaxed with non-negative shadow prices: ``sigma[n]`` in $ per GB and
``beta[n]`` in $ per Mb/s. Given prices, every CP places each of its contents by the
tree UFL solver; ANOs move prices along the subgradient with a Polyak step
chosen by an orchestrator, which also keeps the bounds and the best
feasible placement.

The round logic lives in three small cores (:class:`CpCore`,
:func:`ano_update`, :class:`OrchestratorCore`) shared by :func:`orchestrate`
and the message-passing simulation, so both produce identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .demand import DemandModel
from .network import ROOT, TreeNetwork
from .placement import CpPlacement, CpReport, Placement, make_report
from .projection import (STORAGE_RULES, Capacities, Quota, bandwidth_quotas, capability,
                         project_cp, storage_quotas)
from .ufl import effective_prices, place_catalog

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max-iterations"
STATUS_NO_FEASIBLE = "no-feasible-solution-found"


class OptimizationError(ValueError):
    pass


class ZeroSubgradient(Exception):
    """Every priced constraint is exactly tight: the current duals are optimal."""


@dataclass(frozen=True)
class AlgoParams:
    gamma: float = 1.0        # Polyak scale factor
    eps_rel: float = 1e-3     # stopping gap relative to the initial upper bound
    tau_max: int = 500
    patience: int = 10        # halve gamma after this many rounds without a better UB
    early_stop: bool = False  # skip dominated contents in the per-CP UFL pass

    def __post_init__(self):
        if self.gamma < 0 or self.eps_rel < 0:
            raise OptimizationError("gamma and eps_rel must be >= 0")
        if self.tau_max < 1 or self.patience < 1:
            raise OptimizationError("tau_max and patience must be >= 1")


@dataclass
class DualState:
    """Shadow prices plus the orchestrator's bookkeeping."""

    beta: np.ndarray
    sigma: np.ndarray
    LB: float = 0.0
    UB: float = math.inf
    gamma: float = 1.0
    iteration: int = 0
    eps: float = 0.0
    tau_max: int = 500
    best_feasible: Optional[Placement] = None

    @classmethod
    def zeros(cls, net: TreeNetwork, params: AlgoParams = AlgoParams()) -> "DualState":
        return cls(np.zeros(net.n_nodes), np.zeros(net.n_nodes), gamma=params.gamma,
                   tau_max=params.tau_max)


def check_capacities(net: TreeNetwork) -> None:
    if net.storage_cap[ROOT] is not None or net.uplink_cap[ROOT] is not None:
        raise OptimizationError("the central office must have elastic storage and transit")


def _check_duals(beta: np.ndarray, sigma: np.ndarray) -> None:
    if np.any(beta < 0) or np.any(sigma < 0):
        raise OptimizationError("shadow prices must be >= 0")


# -- per-round quantities --------------------------------------------------

def primal_update(cp: int, beta: np.ndarray, sigma: np.ndarray, net: TreeNetwork,
                  demand: DemandModel, early_stop: bool = False) -> tuple[CpPlacement, CpReport]:
    """Best placement of one CP's catalog at the given shadow prices, and its summary."""
    _check_duals(beta, sigma)
    prices = effective_prices(net, demand.file_size, sigma=sigma, beta=beta)
    part = place_catalog(net, demand, cp, prices, early_stop=early_stop)
    return part, make_report(net, demand, part)


def totals(reports: Mapping[int, CpReport]) -> tuple[np.ndarray, np.ndarray]:
    """Cache slots and residual traffic per node, summed over CPs in id order."""
    cps = sorted(reports)
    cache = np.zeros(reports[cps[0]].cache.size)
    resid = np.zeros_like(cache)
    for cp in cps:
        cache = cache + reports[cp].cache
        resid = resid + reports[cp].residual
    return cache, resid


def subgradients(caps: Capacities, reports: Mapping[int, CpReport]) -> tuple[np.ndarray, np.ndarray]:
    """``(grad_B, grad_S)`` in Mb/s and GB; zero for resources without a capacity."""
    cache, resid = totals(reports)
    g_b = np.where(caps.uplink_mask, resid - np.where(caps.uplink_mask, caps.uplink, 0.0), 0.0)
    over = cache - np.where(caps.storage_mask, caps.storage, 0.0)
    g_s = np.where(caps.storage_mask, over * caps.file_size, 0.0)
    return g_b, g_s


def is_feasible(caps: Capacities, reports: Mapping[int, CpReport]) -> bool:
    cache, resid = totals(reports)
    return bool(np.all(cache <= caps.storage) and np.all(resid <= caps.uplink))


def utility_from_reports(reports: Mapping[int, CpReport]) -> float:
    return math.fsum(float(u) for cp in sorted(reports) for u in reports[cp].utility)


def lagrangian_from_reports(caps: Capacities, reports: Mapping[int, CpReport],
                            beta: np.ndarray, sigma: np.ndarray) -> float:
    g_b, g_s = subgradients(caps, reports)
    return utility_from_reports(reports) - float(sigma @ g_s) - float(beta @ g_b)


def lagrangian(placement: Placement, beta: np.ndarray, sigma: np.ndarray,
               net: TreeNetwork, demand: DemandModel) -> float:
    """Utility minus priced capacity violations (negative violations are slack)."""
    _check_duals(beta, sigma)
    caps = Capacities.of(net, demand.file_size)
    reports = {cp: make_report(net, demand, placement[cp]) for cp in placement.cps}
    return lagrangian_from_reports(caps, reports, beta, sigma)


def polyak_step(gamma: float, L_now: float, LB: float, grad_norm2: float) -> float:
    """``gamma * |L - LB| / ||grad||^2``; raises :class:`ZeroSubgradient` if the norm is 0."""
    if grad_norm2 <= 0:
        raise ZeroSubgradient()
    return gamma * abs(L_now - LB) / grad_norm2


def ano_update(ano: int, net: TreeNetwork, caps: Capacities, beta: np.ndarray,
               sigma: np.ndarray, reports: Mapping[int, CpReport], delta: float
               ) -> tuple[np.ndarray, np.ndarray]:
    """Projected subgradient step on the prices of one ANO's nodes (others untouched)."""
    if delta < 0:
        raise OptimizationError("step size must be >= 0")
    g_b, g_s = subgradients(caps, reports)
    own = np.array(net.nodes_of(ano), dtype=np.int64)
    beta, sigma = beta.copy(), sigma.copy()
    mb = own[caps.uplink_mask[own]]
    ms = own[caps.storage_mask[own]]
    beta[mb] = np.maximum(beta[mb] + delta * g_b[mb], 0.0)
    sigma[ms] = np.maximum(sigma[ms] + delta * g_s[ms], 0.0)
    return beta, sigma


def dual_update(net: TreeNetwork, caps: Capacities, beta: np.ndarray, sigma: np.ndarray,
                reports: Mapping[int, CpReport], delta: float) -> tuple[np.ndarray, np.ndarray]:
    """All ANOs' updates; they touch disjoint node sets."""
    for a in net.anos:
        beta, sigma = ano_update(a, net, caps, beta, sigma, reports, delta)
    return beta, sigma


# -- the three roles -------------------------------------------------------

class CpCore:
    """What a CP computes; holds the private demand."""

    def __init__(self, cp: int, net: TreeNetwork, demand: DemandModel, early_stop: bool = False):
        self.cp, self.net, self.demand, self.early_stop = cp, net, demand, early_stop
        self.current: Optional[CpPlacement] = None
        self.candidate: Optional[CpPlacement] = None
        self.kept: Optional[CpPlacement] = None
        self.kept_report: Optional[CpReport] = None
        self._prices = None

    def respond(self, beta: np.ndarray, sigma: np.ndarray) -> CpReport:
        self._prices = (beta, sigma)
        self.current, report = primal_update(self.cp, beta, sigma, self.net, self.demand,
                                             self.early_stop)
        self.candidate, self._candidate_report = self.current, report
        return report

    def capability(self, storage_quota: np.ndarray) -> np.ndarray:
        return capability(self.net, self.demand.leaf_rates(self.cp), self.current, storage_quota)

    def project(self, quota: Quota) -> Optional[CpReport]:
        beta, _ = self._prices
        fixed = effective_prices(self.net, self.demand.file_size)
        part = project_cp(self.net, self.demand.leaf_rates(self.cp), self.current, quota,
                          np.asarray(self.net.uplink_price) + beta, fixed.open_cost)
        if part is None:
            self.candidate = None
            return None
        self.candidate = part
        self._candidate_report = make_report(self.net, self.demand, part)
        return self._candidate_report

    def retain(self) -> None:
        self.kept, self.kept_report = self.candidate, self._candidate_report


@dataclass
class IterationRecord:
    tau: int
    L: float
    U: float                  # utility of the raw iterate
    feasible: bool
    U_projected: float        # nan when no projection was needed or it failed
    LB: float
    UB: float
    delta: float
    gamma: float
    grad_norm2: float
    beta: np.ndarray          # duals the iterate was computed at
    sigma: np.ndarray


@dataclass
class Verdict:
    retain: bool
    stop: bool
    reason: str = ""
    delta: float = 0.0


class OrchestratorCore:
    """Bound and step-size bookkeeping plus the stopping rule; sees only aggregate reports."""

    def __init__(self, net: TreeNetwork, caps: Capacities, params: AlgoParams):
        self.net, self.caps, self.params = net, caps, params
        self.state = DualState.zeros(net, params)
        self.best_utility = -math.inf
        self.best_duals = None
        self.trace: list[IterationRecord] = []
        self.ub_init = math.nan
        self.ub_duals = None  # duals at which the best upper bound was reached
        self._stale = 0

    def _init_bounds(self, reports: Mapping[int, CpReport]) -> None:
        pp = self.net.path_prices
        leaves = list(self.net.leaves)
        demand = math.fsum(float(pp[leaves] @ (r.residual[leaves] + r.served[leaves]))
                           for _, r in sorted(reports.items()))
        self.ub_init = demand
        self.state.UB = demand
        self.state.eps = self.params.eps_rel * demand

    def assess(self, reports: Mapping[int, CpReport], beta: np.ndarray, sigma: np.ndarray) -> bool:
        """Record the raw iterate; returns True when a projection is needed."""
        st = self.state
        st.iteration += 1
        if st.iteration == 1:
            self._init_bounds(reports)
            self.ub_duals = (beta.copy(), sigma.copy())
        self._beta, self._sigma = beta, sigma
        self._L = lagrangian_from_reports(self.caps, reports, beta, sigma)
        self._U = utility_from_reports(reports)
        self._feasible = is_feasible(self.caps, reports)
        g_b, g_s = subgradients(self.caps, reports)
        self._g2 = float(g_b @ g_b + g_s @ g_s)
        self._Up = math.nan
        if self._L < st.UB:
            st.UB = self._L
            self.ub_duals = (beta.copy(), sigma.copy())
            self._stale = 0
        else:
            self._stale += 1
        self._cand = self._U if self._feasible else None
        return not self._feasible

    def storage_quotas(self, reports: Mapping[int, CpReport], rule: str) -> dict[int, np.ndarray]:
        return storage_quotas(self.caps, reports, rule)

    def bandwidth_quotas(self, reports: Mapping[int, CpReport],
                         floors: Mapping[int, np.ndarray]) -> Optional[dict[int, np.ndarray]]:
        return bandwidth_quotas(self.caps, reports, floors)

    def judge_projection(self, reports: Mapping[int, Optional[CpReport]]) -> bool:
        """Accept a projected placement if every CP succeeded and it is feasible."""
        if any(r is None for r in reports.values()) or not is_feasible(self.caps, reports):
            return False
        self._Up = utility_from_reports(reports)
        self._cand = self._Up
        return True

    def conclude(self) -> Verdict:
        st, p = self.state, self.params
        retain = self._cand is not None and self._cand > self.best_utility
        if retain:
            self.best_utility = self._cand
            self.best_duals = (self._beta.copy(), self._sigma.copy())
            st.LB = max(st.LB, self._cand)
        verdict = Verdict(retain, False)
        if self.best_duals is not None and st.UB - st.LB <= st.eps:
            verdict.stop, verdict.reason = True, "gap"
        else:
            try:
                verdict.delta = polyak_step(st.gamma, self._L, st.LB, self._g2)
            except ZeroSubgradient:
                verdict.stop, verdict.reason = True, "zero-subgradient"
            if not verdict.stop and st.iteration >= st.tau_max:
                verdict.stop, verdict.reason = True, "max-iterations"
        self.trace.append(IterationRecord(
            st.iteration, self._L, self._U, self._feasible, self._Up, st.LB, st.UB,
            verdict.delta, st.gamma, self._g2, self._beta.copy(), self._sigma.copy()))
        if self._stale >= p.patience:
            st.gamma /= 2
            self._stale = 0
        return verdict

    def status(self, reason: str) -> str:
        if self.best_duals is None:
            return STATUS_NO_FEASIBLE
        return STATUS_MAX_ITER if reason == "max-iterations" else STATUS_CONVERGED


@dataclass
class OptimizationResult:
    status: str
    stop_reason: str
    placement: Optional[Placement]
    reports: Optional[dict]          # reports of the best feasible placement
    utility: float                   # its utility (LB)
    LB: float
    UB: float
    beta: np.ndarray                 # final duals
    sigma: np.ndarray
    best_beta: Optional[np.ndarray]  # duals at which the best placement was found
    best_sigma: Optional[np.ndarray]
    trace: list = field(default_factory=list)
    ub_init: float = math.nan
    eps: float = math.nan
    # duals of the lowest Lagrangian seen: the best estimate of the dual optimum
    ub_beta: Optional[np.ndarray] = None
    ub_sigma: Optional[np.ndarray] = None

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def gap(self) -> float:
        return self.UB - self.LB


def collect_result(orch: OrchestratorCore, cps: Mapping[int, CpCore], reason: str,
                   beta: np.ndarray, sigma: np.ndarray) -> OptimizationResult:
    st = orch.state
    found = orch.best_duals is not None
    placement = Placement({cp: cps[cp].kept for cp in sorted(cps)}) if found else None
    reports = {cp: cps[cp].kept_report for cp in sorted(cps)} if found else None
    bb, bs = orch.best_duals if found else (None, None)
    return OptimizationResult(orch.status(reason), reason, placement, reports,
                              orch.best_utility if found else math.nan, st.LB, st.UB,
                              beta, sigma, bb, bs, orch.trace, orch.ub_init, st.eps,
                              *orch.ub_duals)


def orchestrate(net: TreeNetwork, demand: DemandModel,
                params: AlgoParams = AlgoParams()) -> OptimizationResult:
    """Run the primal/dual rounds to a small gap or the iteration limit."""
    check_capacities(net)
    caps = Capacities.of(net, demand.file_size)
    orch = OrchestratorCore(net, caps, params)
    cps = {cp: CpCore(cp, net, demand, params.early_stop) for cp in demand.cps}
    beta, sigma = orch.state.beta, orch.state.sigma
    while True:
        reports = {cp: cps[cp].respond(beta, sigma) for cp in sorted(cps)}
        if orch.assess(reports, beta, sigma):
            for rule in STORAGE_RULES:
                sq = orch.storage_quotas(reports, rule)
                floors = {cp: cps[cp].capability(sq[cp]) for cp in sorted(cps)}
                bq = orch.bandwidth_quotas(reports, floors)
                if bq is None:
                    continue
                projected = {cp: cps[cp].project(Quota(cp, sq[cp], bq[cp])) for cp in sorted(cps)}
                if orch.judge_projection(projected):
                    break
        verdict = orch.conclude()
        if verdict.retain:
            for cp in sorted(cps):
                cps[cp].retain()
        if verdict.stop:
            return collect_result(orch, cps, verdict.reason, beta, sigma)
        beta, sigma = dual_update(net, caps, beta, sigma, reports, verdict.delta)
        orch.state.beta, orch.state.sigma = beta, sigma


def project_to_feasible(net: TreeNetwork, demand: DemandModel, placement: Placement,
                        beta: Optional[np.ndarray] = None) -> Optional[Placement]:
    """Fair repair of a whole placement; unchanged if already feasible, ``None`` on failure."""
    caps = Capacities.of(net, demand.file_size)
    reports = {cp: make_report(net, demand, placement[cp]) for cp in placement.cps}
    if is_feasible(caps, reports):
        return placement
    beta = np.zeros(net.n_nodes) if beta is None else beta
    eff_link = np.asarray(net.uplink_price) + beta
    fixed = effective_prices(net, demand.file_size)
    for rule in STORAGE_RULES:
        sq = storage_quotas(caps, reports, rule)
        floors = {cp: capability(net, demand.leaf_rates(cp), placement[cp], sq[cp])
                  for cp in placement.cps}
        bq = bandwidth_quotas(caps, reports, floors)
        if bq is None:
            continue
        parts = {}
        for cp in placement.cps:
            part = project_cp(net, demand.leaf_rates(cp), placement[cp], Quota(cp, sq[cp], bq[cp]),
                              eff_link, fixed.open_cost)
            if part is None:
                break
            parts[cp] = part
        else:
            out = Placement(parts)
            if is_feasible(caps, {cp: make_report(net, demand, out[cp]) for cp in out.cps}):
                return out
    return None


# -- settlements -----------------------------------------------------------

@dataclass(frozen=True)
class Measurement:
    """Measured busy-period traffic per CP: leaf totals, uplink residuals, per-ANO transit."""

    leaf_totals: Mapping[int, np.ndarray]
    residual: Mapping[int, np.ndarray]
    transit: Mapping[int, np.ndarray]

    @classmethod
    def from_reports(cls, net: TreeNetwork, reports: Mapping[int, CpReport]) -> "Measurement":
        leaves = list(net.leaves)
        return cls({cp: r.residual[leaves] + r.served[leaves] for cp, r in reports.items()},
                   {cp: r.residual.copy() for cp, r in reports.items()},
                   {cp: r.transit.copy() for cp, r in reports.items()})


@dataclass
class SettlementRow:
    ano: int
    cp: int
    share: float
    saving: float            # bracketed saving before the share is applied
    subsidy: float
    storage_payment: float   # elastic storage in the ANO's own nodes
    co_payment: float        # ANO share of the CP's CO cache
    transit_payment: float


@dataclass
class Settlement:
    rows: list

    def subsidy_by_cp(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for r in self.rows:
            out[r.cp] = out.get(r.cp, 0.0) + r.subsidy
        return out

    def row(self, ano: int, cp: int) -> SettlementRow:
        return next(r for r in self.rows if r.ano == ano and r.cp == cp)


def settle(net: TreeNetwork, file_size: float, reports: Mapping[int, CpReport],
           beta: np.ndarray, sigma: np.ndarray, shares: Mapping[tuple[int, int], float],
           measured: Optional[Measurement] = None) -> Settlement:
    """Subsidies owed by each ANO to each CP, from reserved caches and measured traffic.

    The saving of ANO a from CP k is the traffic its caches kept off every
    link it owns (priced at fixed plus shadow price) and off transit, less the
    cost of the storage it reserves (fixed plus shadow price per GB) and its
    share of the CP's CO cache. ``shares[(a, k)]`` is the subsidy fraction.
    """
    _check_duals(beta, sigma)
    measured = Measurement.from_reports(net, reports) if measured is None else measured
    b = np.asarray(net.uplink_price)
    s = np.asarray(net.storage_price) * file_size
    rows = []
    for cp in sorted(reports):
        rep = reports[cp]
        t_leaf = np.asarray(measured.leaf_totals[cp], dtype=np.float64)
        resid = np.asarray(measured.residual[cp], dtype=np.float64)
        transit = np.asarray(measured.transit[cp], dtype=np.float64)
        if np.any(t_leaf < 0) or np.any(resid < 0) or np.any(transit < 0):
            raise OptimizationError("measured traffic must be >= 0")
        below = np.array([t_leaf[list(net.leaves_under[n])].sum() for n in range(net.n_nodes)])
        for j, a in enumerate(net.anos):
            own = np.array(net.nodes_of(a), dtype=np.int64)
            a_total = t_leaf[[net.leaf_index[l] for l in net.leaves_of(a)]].sum()
            co = rep.zeta[j] * rep.cache[ROOT] * s[ROOT]
            storage = float(rep.cache[own] @ s[own])
            saving = math.fsum([
                float((below[own] - resid[own]) @ (b[own] + beta[own])),
                (a_total - transit[j]) * b[ROOT],
                -float(rep.cache[own] @ sigma[own]) * file_size, -storage, -co])
            r = float(shares.get((a, cp), 0.0))
            if not 0 <= r <= 1:
                raise OptimizationError(f"share for ANO {a}, CP {cp} outside [0, 1]")
            rows.append(SettlementRow(a, cp, r, saving, r * saving, storage, co,
                                      transit[j] * b[ROOT]))
    return Settlement(rows)
