"""Message-passing simulation of the distributed placement protocol.

CP agents (holding private demand), ANO agents (holding the shadow prices of
their own nodes) and an orchestrator (holding bounds and the step state)
exchange messages over an in-process bus. Each round runs in phases; the bus
holds every message posted in a phase and delivers them together at the
phase barrier, sorted by (sender role, sender id, receiver role, receiver
id), so the transcript does not depend on the order agents happen to run in.
A seed shuffles that order to show it.

The agents reuse the cores of :mod:`cachesub.lagrangian`, so a run ends with
exactly the result :func:`cachesub.lagrangian.orchestrate` returns.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .demand import DemandModel
from .lagrangian import (STORAGE_RULES, AlgoParams, CpCore,
                         OptimizationResult, OrchestratorCore, ano_update, check_capacities,
                         collect_result)
from .network import TreeNetwork
from .placement import CpReport
from .projection import Capacities, Quota

ORCH, ANO, CP = "orchestrator", "ano", "cp"
ROLE_ORDER = {ORCH: 0, ANO: 1, CP: 2}
STOP_MISSING = "missing-report"

# payload keys each message kind may carry; anything else is a leak
ALLOWED_KEYS = {
    "PricesAnnounce": {"nodes", "beta", "sigma"},
    "PrimalReport": {"kind", "cache", "residual", "transit", "zeta", "utility", "served"},
    "StorageQuota": {"rule", "storage"},
    "CapabilityReport": {"rule", "uplink_floor"},
    "QuotaAssign": {"rule", "storage", "uplink"},
    "StepAnnounce": {"delta", "LB", "UB", "retain"},
    "Stop": {"reason", "retain", "LB", "UB"},
    "PlacementInstruction": {"stored"},
}
NODE_KEYS = {"beta", "sigma", "cache", "residual", "served", "storage", "uplink", "uplink_floor"}
ANO_KEYS = {"transit", "zeta", "utility"}


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class Agent:
    role: str
    id: int

    def key(self):
        return ROLE_ORDER[self.role], self.id

    def __str__(self):
        return f"{self.role}:{self.id}"


ORCHESTRATOR = Agent(ORCH, 0)


@dataclass
class Message:
    msg_id: int
    round: int
    phase: str
    kind: str
    sender: Agent
    receiver: Agent
    payload: dict

    def record(self) -> dict:
        return {"id": self.msg_id, "round": self.round, "phase": self.phase, "kind": self.kind,
                "sender": str(self.sender), "receiver": str(self.receiver),
                "payload": {k: _plain(v) for k, v in sorted(self.payload.items())}}


def _plain(v):
    """JSON-ready copy; non-finite numbers (unlimited capacity) become null."""
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class Transcript:
    n_nodes: int
    n_anos: int
    messages: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [json.dumps(m.record(), sort_keys=True) for m in self.messages]
        lines += [json.dumps({"error": e}, sort_keys=True) for e in self.errors]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


class Bus:
    """Collects posted messages and delivers them sorted at each phase barrier."""

    def __init__(self, transcript: Transcript):
        self.transcript = transcript
        self.round, self.phase = 0, ""
        self._pending: list = []
        self._inbox: dict = {}

    def open(self, round_: int, phase: str) -> None:
        self.round, self.phase = round_, phase
        self._pending = []

    def post(self, sender: Agent, receiver: Agent, kind: str, payload: dict,
             round_: Optional[int] = None) -> None:
        r = self.round if round_ is None else round_
        if r != self.round:
            self.transcript.errors.append(
                f"out-of-round message {kind} from {sender} for round {r} during round {self.round}")
            raise ProtocolError(self.transcript.errors[-1])
        self._pending.append((sender, receiver, kind, payload))

    def barrier(self) -> None:
        self._pending.sort(key=lambda m: (m[0].key(), m[1].key()))
        self._inbox = {}
        for sender, receiver, kind, payload in self._pending:
            msg = Message(len(self.transcript.messages), self.round, self.phase, kind,
                          sender, receiver, payload)
            self.transcript.messages.append(msg)
            self._inbox.setdefault(receiver, []).append(msg)
        self._pending = []

    def inbox(self, agent: Agent, kind: Optional[str] = None) -> list:
        return [m for m in self._inbox.get(agent, []) if kind is None or m.kind == kind]


def _report_payload(rep: CpReport, kind: str) -> dict:
    return {"kind": kind, "cache": rep.cache, "residual": rep.residual, "transit": rep.transit,
            "zeta": rep.zeta, "utility": rep.utility, "served": rep.served}


def _report_from(msg: Message) -> CpReport:
    p = msg.payload
    return CpReport(msg.sender.id, p["cache"], p["residual"], p["transit"], p["zeta"],
                    p["utility"], p["served"])


# -- agents ------------------------------------------------------------------

class CpAgent:
    def __init__(self, cp: int, net: TreeNetwork, demand: DemandModel, params: AlgoParams,
                 bus: Bus):
        self.me = Agent(CP, cp)
        self.core = CpCore(cp, net, demand, params.early_stop)
        self.net, self.bus = net, bus
        self.leaky = False  # test hook: attach private per-file demand to reports

    def _prices(self):
        beta, sigma = np.zeros(self.net.n_nodes), np.zeros(self.net.n_nodes)
        for m in self.bus.inbox(self.me, "PricesAnnounce"):
            nodes = np.asarray(m.payload["nodes"], dtype=np.int64)
            beta[nodes] = m.payload["beta"]
            sigma[nodes] = m.payload["sigma"]
        return beta, sigma

    def _send_report(self, rep: CpReport, kind: str, anos) -> None:
        payload = _report_payload(rep, kind)
        if self.leaky:
            payload["demand"] = self.core.demand.leaf_rates(self.me.id).sum(axis=0)
        self.bus.post(self.me, ORCHESTRATOR, "PrimalReport", payload)
        if kind == "primal":
            for a in anos:
                self.bus.post(self.me, Agent(ANO, a), "PrimalReport", payload)

    def respond(self) -> None:
        rep = self.core.respond(*self._prices())
        self._send_report(rep, "primal", self.net.anos)

    def capability(self) -> None:
        (m,) = self.bus.inbox(self.me, "StorageQuota")
        floor = self.core.capability(m.payload["storage"])
        self.bus.post(self.me, ORCHESTRATOR, "CapabilityReport",
                      {"rule": m.payload["rule"], "uplink_floor": floor})

    def project(self) -> None:
        (m,) = self.bus.inbox(self.me, "QuotaAssign")
        rep = self.core.project(Quota(self.me.id, m.payload["storage"], m.payload["uplink"]))
        if rep is None:
            self.bus.post(self.me, ORCHESTRATOR, "PrimalReport", {"kind": "projection-failed"})
        else:
            self._send_report(rep, "projected", ())

    def on_decision(self) -> None:
        msgs = self.bus.inbox(self.me, "StepAnnounce") + self.bus.inbox(self.me, "Stop")
        (m,) = msgs
        if m.payload["retain"]:
            self.core.retain()
        if m.kind == "Stop" and self.core.kept is not None:
            stored = np.argwhere(self.core.kept.stored)
            for a in self.net.anos:
                own = set(self.net.nodes_of(a))
                pairs = [[int(n), int(f)] for n, f in stored if int(n) in own]
                self.bus.post(self.me, Agent(ANO, a), "PlacementInstruction", {"stored": pairs})


class AnoAgent:
    def __init__(self, ano: int, net: TreeNetwork, caps: Capacities, bus: Bus):
        self.me = Agent(ANO, ano)
        self.net, self.caps, self.bus = net, caps, bus
        self.nodes = np.array(net.nodes_of(ano), dtype=np.int64)
        # full-length arrays; only this ANO's entries are ever set
        self.beta = np.zeros(net.n_nodes)
        self.sigma = np.zeros(net.n_nodes)
        self.placement: dict = {}

    def announce(self, cps) -> None:
        payload = {"nodes": self.nodes, "beta": self.beta[self.nodes],
                   "sigma": self.sigma[self.nodes]}
        self.bus.post(self.me, ORCHESTRATOR, "PricesAnnounce", payload)
        for cp in cps:
            self.bus.post(self.me, Agent(CP, cp), "PricesAnnounce", payload)

    def remember_reports(self) -> None:
        self._reports = {m.sender.id: _report_from(m)
                         for m in self.bus.inbox(self.me, "PrimalReport")}

    def update(self) -> None:
        (m,) = self.bus.inbox(self.me, "StepAnnounce")
        self.beta, self.sigma = ano_update(self.me.id, self.net, self.caps, self.beta, self.sigma,
                                           self._reports, m.payload["delta"])

    def on_stop(self) -> None:
        for m in self.bus.inbox(self.me, "PlacementInstruction"):
            self.placement[m.sender.id] = m.payload["stored"]


class OrchestratorAgent:
    def __init__(self, net: TreeNetwork, caps: Capacities, params: AlgoParams, bus: Bus,
                 cps, anos):
        self.core = OrchestratorCore(net, caps, params)
        self.net, self.bus, self.cps, self.anos = net, bus, tuple(cps), tuple(anos)
        self.verdict = None

    def receive_prices(self) -> None:
        beta, sigma = np.zeros(self.net.n_nodes), np.zeros(self.net.n_nodes)
        for m in self.bus.inbox(ORCHESTRATOR, "PricesAnnounce"):
            nodes = np.asarray(m.payload["nodes"], dtype=np.int64)
            beta[nodes] = m.payload["beta"]
            sigma[nodes] = m.payload["sigma"]
        self.prices = beta, sigma

    def _reports(self, kind: str) -> dict:
        return {m.sender.id: (_report_from(m) if m.payload["kind"] == kind else None)
                for m in self.bus.inbox(ORCHESTRATOR, "PrimalReport")}

    def receive_primal(self) -> Optional[bool]:
        """Assess the round; ``None`` when a CP failed to report."""
        self.reports = self._reports("primal")
        if set(self.reports) != set(self.cps):
            return None
        return self.core.assess(self.reports, *self.prices)

    def send_storage_quotas(self, rule: str) -> None:
        self.rule = rule
        self.sq = self.core.storage_quotas(self.reports, rule)
        for cp in self.cps:
            self.bus.post(ORCHESTRATOR, Agent(CP, cp), "StorageQuota",
                          {"rule": rule, "storage": self.sq[cp]})

    def send_full_quotas(self) -> bool:
        floors = {m.sender.id: m.payload["uplink_floor"]
                  for m in self.bus.inbox(ORCHESTRATOR, "CapabilityReport")}
        bq = self.core.bandwidth_quotas(self.reports, floors)
        if bq is None:
            return False
        for cp in self.cps:
            self.bus.post(ORCHESTRATOR, Agent(CP, cp), "QuotaAssign",
                          {"rule": self.rule, "storage": self.sq[cp], "uplink": bq[cp]})
        return True

    def judge(self) -> bool:
        projected = self._reports("projected")
        return self.core.judge_projection({cp: projected.get(cp) for cp in self.cps})

    def decide(self) -> None:
        v = self.verdict = self.core.conclude()
        st = self.core.state
        for a in self.anos:
            if not v.stop:
                self.bus.post(ORCHESTRATOR, Agent(ANO, a), "StepAnnounce",
                              {"delta": v.delta, "LB": st.LB, "UB": st.UB, "retain": v.retain})
        for cp in self.cps:
            if v.stop:
                self.bus.post(ORCHESTRATOR, Agent(CP, cp), "Stop",
                              {"reason": v.reason, "retain": v.retain, "LB": st.LB, "UB": st.UB})
            else:
                self.bus.post(ORCHESTRATOR, Agent(CP, cp), "StepAnnounce",
                              {"delta": v.delta, "LB": st.LB, "UB": st.UB, "retain": v.retain})
        if v.stop:
            for a in self.anos:
                self.bus.post(ORCHESTRATOR, Agent(ANO, a), "Stop",
                              {"reason": v.reason, "retain": v.retain, "LB": st.LB, "UB": st.UB})

    def abort(self, reason: str) -> None:
        st = self.core.state
        for agent in [Agent(ANO, a) for a in self.anos] + [Agent(CP, cp) for cp in self.cps]:
            self.bus.post(ORCHESTRATOR, agent, "Stop",
                          {"reason": reason, "retain": False, "LB": st.LB, "UB": st.UB})


# -- driver ------------------------------------------------------------------

@dataclass
class ProtocolRun:
    transcript: Transcript
    result: Optional[OptimizationResult]  # None when the run was aborted
    stop_reason: str
    placements_at_anos: dict = field(default_factory=dict)


def run_protocol(net: TreeNetwork, demand: DemandModel, params: AlgoParams = AlgoParams(),
                 seed: int = 0, drop_cp: Optional[tuple[int, int]] = None,
                 leaky_cp: Optional[int] = None) -> ProtocolRun:
    """Simulate the rounds until the orchestrator stops them.

    ``seed`` shuffles the order agents run in within each phase (the
    transcript and result do not depend on it). ``drop_cp = (cp, round)``
    silences a CP's primal report in that round; ``leaky_cp`` makes a CP
    attach its per-file demand to its reports (for testing the audit).
    """
    check_capacities(net)
    caps = Capacities.of(net, demand.file_size)
    transcript = Transcript(net.n_nodes, len(net.anos))
    bus = Bus(transcript)
    rng = np.random.Generator(np.random.PCG64(seed))
    cps = {cp: CpAgent(cp, net, demand, params, bus) for cp in demand.cps}
    if leaky_cp is not None:
        cps[leaky_cp].leaky = True
    anos = {a: AnoAgent(a, net, caps, bus) for a in net.anos}
    orch = OrchestratorAgent(net, caps, params, bus, sorted(cps), sorted(anos))

    def each(agents, fn):
        for i in rng.permutation(len(agents)):
            fn(agents[int(i)])

    cp_list = [cps[k] for k in sorted(cps)]
    ano_list = [anos[a] for a in sorted(anos)]
    tau = 0
    while True:
        tau += 1
        bus.open(tau, "prices")
        each(ano_list, lambda a: a.announce(sorted(cps)))
        bus.barrier()
        orch.receive_prices()

        bus.open(tau, "primal")
        silent = drop_cp[0] if drop_cp is not None and drop_cp[1] == tau else None
        each([c for c in cp_list if c.me.id != silent], lambda c: c.respond())
        bus.barrier()
        each(ano_list, lambda a: a.remember_reports())
        need = orch.receive_primal()
        if need is None:
            bus.open(tau, "decision")
            orch.abort(STOP_MISSING)
            bus.barrier()
            transcript.errors.append(f"round {tau}: missing primal report")
            return ProtocolRun(transcript, None, STOP_MISSING)

        if need:
            for rule in STORAGE_RULES:
                bus.open(tau, f"quota-{rule}")
                orch.send_storage_quotas(rule)
                bus.barrier()
                bus.open(tau, f"capability-{rule}")
                each(cp_list, lambda c: c.capability())
                bus.barrier()
                bus.open(tau, f"assign-{rule}")
                sent = orch.send_full_quotas()
                bus.barrier()
                if not sent:
                    continue
                bus.open(tau, f"projection-{rule}")
                each(cp_list, lambda c: c.project())
                bus.barrier()
                if orch.judge():
                    break

        bus.open(tau, "decision")
        orch.decide()
        bus.barrier()
        v = orch.verdict
        bus.open(tau, "update")
        each(cp_list, lambda c: c.on_decision())
        if not v.stop:
            each(ano_list, lambda a: a.update())
        bus.barrier()
        if v.stop:
            each(ano_list, lambda a: a.on_stop())
            beta = np.zeros(net.n_nodes)
            sigma = np.zeros(net.n_nodes)
            for a in ano_list:
                beta[a.nodes], sigma[a.nodes] = a.beta[a.nodes], a.sigma[a.nodes]
            result = collect_result(orch.core, {k: c.core for k, c in cps.items()},
                                    v.reason, beta, sigma)
            return ProtocolRun(transcript, result, v.reason,
                               {a.me.id: a.placement for a in ano_list})


# -- privacy audit -----------------------------------------------------------

@dataclass
class AuditResult:
    ok: bool
    leaks: list  # (msg_id, reason)


def audit_privacy(transcript: Transcript) -> AuditResult:
    """Check that no message carries per-file demand.

    Every payload key must be on the whitelist of its message kind, node- or
    ANO-indexed vectors must have the matching length, and placement
    instructions may only hold integer (node, file) pairs.
    """
    leaks = []
    lengths = {**{k: transcript.n_nodes for k in NODE_KEYS},
               **{k: transcript.n_anos for k in ANO_KEYS}}
    for m in transcript.messages:
        allowed = ALLOWED_KEYS.get(m.kind)
        if allowed is None:
            leaks.append((m.msg_id, f"unknown message kind {m.kind}"))
            continue
        for key, val in m.payload.items():
            if key not in allowed:
                leaks.append((m.msg_id, f"{m.kind} carries unexpected field {key!r}"))
            elif key in lengths and m.kind != "PricesAnnounce":
                if np.ndim(val) != 1 or len(val) != lengths[key]:
                    leaks.append((m.msg_id, f"{m.kind}.{key} is not a per-node/per-ANO aggregate"))
            elif key == "stored":
                if any(len(p) != 2 or not all(isinstance(x, (int, np.integer)) for x in p)
                       for p in val):
                    leaks.append((m.msg_id, "placement instruction with non-integer entries"))
        if m.kind == "PricesAnnounce" and len(m.payload.get("beta", ())) != len(m.payload.get("nodes", ())):
            leaks.append((m.msg_id, "price vector does not match announced nodes"))
    return AuditResult(not leaks, leaks)


def same_result(a: OptimizationResult, b: OptimizationResult) -> bool:
    """Bit-for-bit equality of status, bounds, duals, traces and placements."""
    if (a.status, a.stop_reason, a.iterations) != (b.status, b.stop_reason, b.iterations):
        return False
    arrays = [(a.beta, b.beta), (a.sigma, b.sigma), (a.ub_beta, b.ub_beta), (a.ub_sigma, b.ub_sigma)]
    for ra, rb in zip(a.trace, b.trace):
        if (ra.LB, ra.UB, ra.delta, ra.feasible) != (rb.LB, rb.UB, rb.delta, rb.feasible):
            return False
        if not (_same_float(ra.L, rb.L) and _same_float(ra.U_projected, rb.U_projected)):
            return False
        arrays += [(ra.beta, rb.beta), (ra.sigma, rb.sigma)]
    if not all(np.array_equal(x, y) for x, y in arrays):
        return False
    if (a.placement is None) != (b.placement is None):
        return False
    return a.placement is None or a.placement.same_as(b.placement)


def _same_float(x: float, y: float) -> bool:
    return x == y or (math.isnan(x) and math.isnan(y))
