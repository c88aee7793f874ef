"""Repairing capacity violations of a relaxed placement.

The orchestrator splits every capacity-limited resource into per-CP quotas
from aggregate reports only. Storage is split first (by one of a few fixed
rules); each CP answers with the lowest uplink traffic it could reach with
that storage, and bandwidth is split as these floors plus a share of what is
left. Each CP then brings its own placement within its quotas using only its
private demand:

* storage overflow at a node: evict the files whose copy there is worth least
  at the current effective prices;
* uplink overflow: store the files with the most traffic crossing the link at
  the node itself, or swap them for less useful copies when its storage is
  full.

Nodes are repaired bottom-up, so fixing a link never disturbs a link below
it. A greedy pass then spends any unused quota where it raises utility at
fixed prices, and drops copies that cost more than they save.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import ROOT, TreeNetwork
from .placement import ORIGIN, CpPlacement, CpReport, residual_traffic

_SHRINK = 1e-12  # keeps quota sums strictly inside float capacity


@dataclass(frozen=True)
class Capacities:
    """Capacities as arrays: storage in content slots, uplinks in Mb/s; ``inf`` if elastic.

    ``file_size`` (GB per slot) converts storage back to GB where prices need it.
    """

    storage: np.ndarray
    uplink: np.ndarray
    file_size: float = 1.0

    @classmethod
    def of(cls, net: TreeNetwork, file_size: float) -> "Capacities":
        slots = net.storage_cap_files(file_size)
        storage = np.array([np.inf if c is None else float(c) for c in slots])
        uplink = np.array([np.inf if c is None else float(c) for c in net.uplink_cap])
        return cls(storage, uplink, float(file_size))

    @property
    def storage_mask(self) -> np.ndarray:
        return np.isfinite(self.storage)

    @property
    def uplink_mask(self) -> np.ndarray:
        return np.isfinite(self.uplink)


@dataclass(frozen=True)
class Quota:
    cp: int
    storage: np.ndarray  # slots this CP may use per node (inf if elastic)
    uplink: np.ndarray   # Mb/s this CP may send per uplink (inf if elastic)


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights``; ties go to the lower index."""
    k = weights.size
    if weights.sum() <= 0:
        weights = np.ones(k)
    exact = total * weights / weights.sum()
    base = np.floor(exact).astype(np.int64)
    left = int(total - base.sum())
    order = np.lexsort((np.arange(k), -(exact - base)))
    base[order[:left]] += 1
    return base


STORAGE_RULES = ("requested", "demand", "equal")


def storage_quotas(caps: Capacities, reports: dict[int, CpReport], rule: str) -> dict[int, np.ndarray]:
    """Per-CP slots at every storage-limited node (``inf`` where storage is elastic).

    ``requested`` splits in proportion to the slots each CP asked for,
    ``demand`` in proportion to the CP traffic below the node, ``equal`` evenly.
    """
    if rule not in STORAGE_RULES:
        raise ValueError(f"unknown storage rule {rule!r}")
    cps = sorted(reports)
    out = {cp: np.full(caps.storage.size, np.inf) for cp in cps}
    for node in np.nonzero(caps.storage_mask)[0]:
        if rule == "requested":
            w = np.array([reports[cp].cache[node] for cp in cps], dtype=np.float64)
        elif rule == "demand":
            w = np.array([reports[cp].residual[node] + reports[cp].served[node] for cp in cps])
        else:
            w = np.ones(len(cps))
        for cp, q in zip(cps, _largest_remainder(int(caps.storage[node]), w)):
            out[cp][node] = float(q)
    return out


def bandwidth_quotas(caps: Capacities, reports: dict[int, CpReport],
                     floors: dict[int, np.ndarray]) -> Optional[dict[int, np.ndarray]]:
    """Per-CP traffic allowed on every limited uplink, or ``None`` if the floors do not fit.

    Each CP gets the lowest residual it said it can reach plus a share of the
    remaining capacity proportional to how far above that floor it now is.
    """
    cps = sorted(reports)
    out = {cp: np.full(caps.uplink.size, np.inf) for cp in cps}
    for node in np.nonzero(caps.uplink_mask)[0]:
        low = np.array([floors[cp][node] for cp in cps])
        slack = caps.uplink[node] - low.sum()
        if slack < 0:
            return None
        want = np.maximum(np.array([reports[cp].residual[node] for cp in cps]) - low, 0.0)
        w = want / want.sum() if want.sum() > 0 else np.full(len(cps), 1.0 / len(cps))
        for cp, q in zip(cps, low + slack * w * (1 - _SHRINK * len(cps))):
            out[cp][node] = float(q)
    return out


class _CpRepair:
    """Mutable view of one CP placement with incremental cache and traffic counts."""

    def __init__(self, net: TreeNetwork, rates: np.ndarray, part: CpPlacement):
        self.net = net
        self.rates = rates
        self.stored = part.stored.copy()
        self.server = part.server.copy()
        self.cp = part.cp
        self.cache = self.stored.sum(axis=1).astype(np.float64)
        self.resid = residual_traffic(net, part, rates)
        self.depth_ext = np.append(net.depth, -1)  # index ORIGIN -> -1

    def upper_server(self, n: int) -> np.ndarray:
        """Nearest storing strict ancestor of ``n`` for every file, else ORIGIN."""
        up = np.full(self.stored.shape[1], ORIGIN, dtype=np.int64)
        for a in reversed(self.net.ancestors(n)):
            up = np.where(self.stored[a], a, up)
        return up

    def _under(self, n: int) -> list:
        return list(self.net.leaves_under[n])

    def through(self, n: int) -> np.ndarray:
        """Per-file traffic on uplink ``n``."""
        under = self._under(n)
        if not under:
            return np.zeros(self.stored.shape[1])
        above = self.depth_ext[self.server[under]] < self.net.depth[n]
        return np.where(above, self.rates[under], 0.0).sum(axis=0)

    def served_at(self, n: int) -> np.ndarray:
        under = self._under(n)
        if not under:
            return np.zeros(self.stored.shape[1])
        return np.where(self.server[under] == n, self.rates[under], 0.0).sum(axis=0)

    def _shift(self, n: int, files: np.ndarray, amount: np.ndarray, up: np.ndarray, sign: float):
        for a in self.net.path_to_root(n):
            hit = self.depth_ext[up] < self.net.depth[a]
            if hit.any():
                self.resid[a] += sign * float(amount[hit].sum())

    def store(self, n: int, files: np.ndarray) -> None:
        if files.size == 0:
            return
        t = self.through(n)[files]
        up = self.upper_server(n)[files]
        under = self._under(n)
        sub = self.server[np.ix_(under, files)]
        above = self.depth_ext[sub] < self.net.depth[n]
        self.server[np.ix_(under, files)] = np.where(above, n, sub)
        self.stored[n, files] = True
        self.cache[n] += files.size
        self._shift(n, files, t, up, -1.0)

    def evict(self, n: int, files: np.ndarray, served: Optional[np.ndarray] = None,
              up: Optional[np.ndarray] = None) -> None:
        """Drop ``files`` at ``n``; ``served``/``up`` may be passed if already known."""
        if files.size == 0:
            return
        t = self.served_at(n)[files] if served is None else served
        up = self.upper_server(n)[files] if up is None else up
        under = self._under(n)
        sub = self.server[np.ix_(under, files)]
        self.server[np.ix_(under, files)] = np.where(sub == n, up[None, :], sub)
        self.stored[n, files] = False
        self.cache[n] -= files.size
        self._shift(n, files, t, up, +1.0)

    def part(self) -> CpPlacement:
        return CpPlacement(self.cp, self.stored, self.server)


def capability(net: TreeNetwork, rates: np.ndarray, part: CpPlacement,
               storage_quota: np.ndarray) -> np.ndarray:
    """Lowest uplink traffic one CP can reach within ``storage_quota``.

    Bottom-up, every storage-limited node keeps the files with the most
    traffic crossing its uplink; elastic nodes store whatever crosses theirs.
    """
    w = _CpRepair(net, rates, part)
    for n in reversed(net.order):
        if np.isfinite(storage_quota[n]):
            w.evict(n, np.nonzero(w.stored[n])[0])
            t = w.through(n)
            cand = np.nonzero(t > 0)[0]
            cand = cand[np.lexsort((cand, -t[cand]))][:int(storage_quota[n])]
            w.store(n, cand)
        else:
            w.store(n, np.nonzero(w.through(n) > 0)[0])
    return w.resid


def _path_value(pp_ext: np.ndarray, n: int, up: np.ndarray) -> np.ndarray:
    return pp_ext[n] - pp_ext[up]


def project_cp(net: TreeNetwork, rates: np.ndarray, part: CpPlacement, quota: Quota,
               eff_link: np.ndarray, fixed_open: np.ndarray, improve: bool = True
               ) -> Optional[CpPlacement]:
    """Bring one CP placement within its quotas; ``None`` if that is impossible.

    ``eff_link`` are link prices including shadow prices (used to rank
    evictions); ``fixed_open`` are per-content storage costs at fixed prices
    (used, with the fixed link prices, by the improvement pass).
    """
    w = _CpRepair(net, rates, part)
    eff_pp = np.append(_path_prices(net, eff_link), 0.0)
    for n in reversed(net.order):
        over = int(w.cache[n] - quota.storage[n]) if np.isfinite(quota.storage[n]) else 0
        if over > 0:
            files = np.nonzero(w.stored[n])[0]
            keep_value = w.served_at(n)[files] * _path_value(eff_pp, n, w.upper_server(n)[files])
            order = np.lexsort((files, keep_value))
            w.evict(n, files[order[:over]])
        if w.resid[n] > quota.uplink[n] and not _relieve(w, n, quota):
            return None
    if improve:
        _improve(w, quota, np.append(net.path_prices, 0.0), fixed_open)
    return w.part()


def _path_prices(net: TreeNetwork, link: np.ndarray) -> np.ndarray:
    pp = np.zeros(net.n_nodes)
    for n in net.order:
        pp[n] = link[n] + (0.0 if n == ROOT else pp[net.parent[n]])
    return pp


def _relieve(w: _CpRepair, n: int, quota: Quota) -> bool:
    deficit = w.resid[n] - quota.uplink[n]
    t = w.through(n)
    cand = np.nonzero((~w.stored[n]) & (t > 0))[0]
    cand = cand[np.lexsort((cand, -t[cand]))]
    room = quota.storage[n] - w.cache[n]
    if room > 0 and cand.size:
        k = int(min(room, cand.size))
        gain = np.cumsum(t[cand[:k]])
        need = int(np.searchsorted(gain, deficit, side="left")) + 1
        take = cand[:min(need, k)]
        w.store(n, take)
        cand = cand[take.size:]
        deficit = w.resid[n] - quota.uplink[n]
    if deficit > 0 and cand.size and np.isfinite(quota.storage[n]):
        held = np.nonzero(w.stored[n])[0]
        t_held = w.served_at(n)[held]
        held = held[np.lexsort((held, t_held))]
        m = min(held.size, cand.size)
        gain = t[cand[:m]] - w.served_at(n)[held[:m]]
        pos = int(np.sum(gain > 0))
        if pos:
            need = int(np.searchsorted(np.cumsum(gain[:pos]), deficit, side="left")) + 1
            k = min(need, pos)
            w.evict(n, held[:k])
            w.store(n, cand[:k])
    return bool(w.resid[n] <= quota.uplink[n])


def _slack_ok(w: _CpRepair, quota: Quota, n: int, up: int, amount: float,
              extra: Optional[dict] = None) -> bool:
    """Would ``amount`` more traffic on the links from ``n`` up to ``up`` stay within quota?

    ``extra`` holds traffic already committed to links but not yet applied.
    """
    for a in w.net.path_to_root(n):
        if w.depth_ext[up] >= w.net.depth[a]:
            break
        pending = 0.0 if extra is None else extra.get(a, 0.0)
        if w.resid[a] + pending + amount > quota.uplink[a]:
            return False
    return True


def _improve(w: _CpRepair, quota: Quota, pp_ext: np.ndarray, open_cost: np.ndarray,
             passes: int = 2) -> None:
    net = w.net
    for _ in range(passes):
        changed = False
        for n in net.order:
            room = quota.storage[n] - w.cache[n]
            if room <= 0:
                continue
            files = np.nonzero(~w.stored[n])[0]
            gain = w.through(n)[files] * _path_value(pp_ext, n, w.upper_server(n)[files]) - open_cost[n]
            good = gain > 0
            if not good.any():
                continue
            files, gain = files[good], gain[good]
            take = files[np.lexsort((files, -gain))][:int(min(room, files.size))]
            w.store(n, take)
            changed = True
        for n in reversed(net.order):
            files = np.nonzero(w.stored[n])[0]
            if files.size == 0:
                continue
            served = w.served_at(n)[files]
            up = w.upper_server(n)[files]
            keep = served * _path_value(pp_ext, n, up) - open_cost[n]
            # evicting one file leaves the others' traffic at n unchanged, so
            # choose greedily against the committed extra load, then evict at once
            extra: dict = {}
            chosen = []
            for i in np.lexsort((files, keep)):
                if keep[i] >= 0:
                    break
                if _slack_ok(w, quota, n, int(up[i]), float(served[i]), extra):
                    chosen.append(i)
                    for a in net.path_to_root(n):
                        if w.depth_ext[up[i]] >= net.depth[a]:
                            break
                        extra[a] = extra.get(a, 0.0) + float(served[i])
            if chosen:
                idx = np.array(chosen)
                w.evict(n, files[idx], served[idx], up[idx])
                changed = True
        if not changed:
            break
