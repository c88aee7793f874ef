"""Tree-shaped access network: topology, prices, capacities and ANO ownership.

Node 0 is the central office (CO). ``uplink_price[n]`` is the price of the
link from ``n`` towards its parent; for the root it is the transit price.
Capacities are ``None`` when unbounded.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ROOT = 0


class NetworkError(ValueError):
    """Raised for malformed networks or invalid node references."""


@dataclass(frozen=True)
class TreeNetwork:
    parent: tuple[int, ...]
    storage_price: tuple[float, ...]
    uplink_price: tuple[float, ...]
    storage_cap: tuple[Optional[float], ...]
    uplink_cap: tuple[Optional[float], ...]
    ano_of: tuple[Optional[int], ...]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.parent)
        for name in ("storage_price", "uplink_price", "storage_cap", "uplink_cap", "ano_of"):
            if len(getattr(self, name)) != n:
                raise NetworkError(f"{name} has length {len(getattr(self, name))}, expected {n}")

    @classmethod
    def from_lists(cls, parent, storage_price, uplink_price, storage_cap=None,
                   uplink_cap=None, ano_of=None) -> "TreeNetwork":
        n = len(parent)
        storage_cap = [None] * n if storage_cap is None else storage_cap
        uplink_cap = [None] * n if uplink_cap is None else uplink_cap
        if ano_of is None:
            ano_of = [None] + [0] * (n - 1)
        return cls(tuple(int(p) for p in parent),
                   tuple(float(s) for s in storage_price),
                   tuple(float(b) for b in uplink_price),
                   tuple(None if c is None else float(c) for c in storage_cap),
                   tuple(None if c is None else float(c) for c in uplink_cap),
                   tuple(None if a is None else int(a) for a in ano_of))

    # -- structure ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def children(self) -> tuple[tuple[int, ...], ...]:
        def build():
            kids = [[] for _ in range(self.n_nodes)]
            for n, p in enumerate(self.parent):
                if n != ROOT:
                    kids[p].append(n)
            return tuple(tuple(k) for k in kids)
        return self._memo("children", build)

    @property
    def order(self) -> tuple[int, ...]:
        """Breadth-first order from the root; parents precede children."""
        def build():
            seen, out, queue = {ROOT}, [], deque([ROOT])
            while queue:
                n = queue.popleft()
                out.append(n)
                for c in self.children[n]:
                    if c in seen:
                        raise NetworkError("not a tree")
                    seen.add(c)
                    queue.append(c)
            if len(out) != self.n_nodes:
                raise NetworkError("not a tree")
            return tuple(out)
        return self._memo("order", build)

    @property
    def depth(self) -> np.ndarray:
        def build():
            d = np.zeros(self.n_nodes, dtype=np.int64)
            for n in self.order[1:]:
                d[n] = d[self.parent[n]] + 1
            return d
        return self._memo("depth", build)

    @property
    def leaves(self) -> tuple[int, ...]:
        return self._memo("leaves", lambda: tuple(
            n for n in range(self.n_nodes) if not self.children[n]))

    @property
    def leaf_index(self) -> dict[int, int]:
        return self._memo("leaf_index", lambda: {l: i for i, l in enumerate(self.leaves)})

    def ancestors(self, n: int) -> tuple[int, ...]:
        """Strict ancestors of ``n``, nearest first."""
        self._check(n)
        out = []
        while n != ROOT:
            n = self.parent[n]
            out.append(n)
        return tuple(out)

    def path_to_root(self, n: int) -> tuple[int, ...]:
        return (n,) + self.ancestors(n)

    @property
    def leaves_under(self) -> tuple[tuple[int, ...], ...]:
        """Leaf positions (indices into ``leaves``) in the subtree of each node."""
        def build():
            under = [[] for _ in range(self.n_nodes)]
            for i, l in enumerate(self.leaves):
                for m in self.path_to_root(l):
                    under[m].append(i)
            return tuple(tuple(u) for u in under)
        return self._memo("leaves_under", build)

    @property
    def anos(self) -> tuple[int, ...]:
        return tuple(sorted({a for a in self.ano_of if a is not None}))

    def nodes_of(self, ano: int) -> tuple[int, ...]:
        return tuple(n for n in range(self.n_nodes) if self.ano_of[n] == ano)

    def leaves_of(self, ano: int) -> tuple[int, ...]:
        return tuple(l for l in self.leaves if self.ano_of[l] == ano)

    def _check(self, n: int) -> None:
        if not (isinstance(n, (int, np.integer)) and 0 <= n < self.n_nodes):
            raise NetworkError(f"unknown node {n!r}")

    # -- prices ------------------------------------------------------------

    @property
    def path_prices(self) -> np.ndarray:
        def build():
            pp = np.zeros(self.n_nodes)
            for n in self.order:
                up = 0.0 if n == ROOT else pp[self.parent[n]]
                pp[n] = self.uplink_price[n] + up
            return pp
        return self._memo("path_prices", build)

    def storage_cap_files(self, file_size: float) -> list[Optional[int]]:
        """Storage limits converted to whole content slots."""
        return [None if c is None else int(np.floor(c / file_size + 1e-9))
                for c in self.storage_cap]

    @property
    def storage_capped(self) -> np.ndarray:
        return np.array([c is not None for c in self.storage_cap])

    @property
    def uplink_capped(self) -> np.ndarray:
        return np.array([c is not None for c in self.uplink_cap])


def path_price(net: TreeNetwork, n: int) -> float:
    """Sum of uplink prices from ``n`` up to and including the transit link."""
    net._check(n)
    total = 0.0
    for m in net.path_to_root(n):
        total += net.uplink_price[m]
    return total


def validate(net: TreeNetwork) -> list[str]:
    """Return every invariant violation found in ``net``; empty means ok."""
    problems = []
    n = net.n_nodes
    if n == 0:
        return ["network has no nodes"]
    if net.parent[ROOT] != -1:
        problems.append("node 0: root must have parent -1")
    for v in range(1, n):
        p = net.parent[v]
        if not 0 <= p < n or p == v:
            problems.append(f"node {v}: invalid parent {p}")
    # walk up from each node; a cycle never reaches the root
    if not problems:
        for v in range(n):
            seen, cur = set(), v
            while cur != ROOT:
                if cur in seen:
                    problems.append(f"node {v}: not a tree (parent cycle)")
                    break
                seen.add(cur)
                cur = net.parent[cur]
    for v in range(n):
        if net.storage_price[v] < 0 or not np.isfinite(net.storage_price[v]):
            problems.append(f"node {v}: storage price must be finite and >= 0")
        if net.uplink_price[v] < 0 or not np.isfinite(net.uplink_price[v]):
            problems.append(f"node {v}: uplink price must be finite and >= 0")
        for name, cap in (("storage", net.storage_cap[v]), ("uplink", net.uplink_cap[v])):
            if cap is not None and not cap > 0:
                problems.append(f"node {v}: {name} capacity must be > 0 or unbounded")
        if v != ROOT and net.ano_of[v] is None:
            problems.append(f"node {v}: missing ANO owner")
    if any("not a tree" in p or "invalid parent" in p for p in problems):
        return problems
    for v in range(1, n):
        p = net.parent[v]
        if p != ROOT and net.ano_of[p] is not None and net.ano_of[v] != net.ano_of[p]:
            problems.append(f"node {v}: ownership not subtree-consistent "
                            f"(ANO {net.ano_of[v]} under ANO {net.ano_of[p]})")
    return problems


@dataclass(frozen=True)
class TierSpec:
    """Per-tier parameters, tier 1 = leaves, 2 = intermediate, 3 = root (CO)."""

    storage_price: Sequence[float] = (0.03, 0.03, 0.03)
    uplink_price: Sequence[float] = (4.0, 4.0, 4.0)
    storage_cap: Sequence[Optional[float]] = (None, None, None)
    uplink_cap: Sequence[Optional[float]] = (None, None, None)


def build_symmetric_3tier(e1: int, e2: int, params: TierSpec = TierSpec(),
                          n_anos: int = 1) -> TreeNetwork:
    """Root with ``n_anos * e2`` intermediate children, each with ``e1`` leaves.

    Intermediates ``1 .. n_anos*e2`` come first, then leaves grouped by parent.
    """
    if e1 < 1 or e2 < 1 or n_anos < 1:
        raise NetworkError("fanouts and ANO count must be >= 1")
    n_int = n_anos * e2
    parent, ano, tier = [-1], [None], [3]
    for i in range(n_int):
        parent.append(ROOT)
        ano.append(i // e2)
        tier.append(2)
    for i in range(n_int):
        for _ in range(e1):
            parent.append(1 + i)
            ano.append(i // e2)
            tier.append(1)
    pick = lambda seq: [seq[t - 1] for t in tier]
    return TreeNetwork.from_lists(parent, pick(params.storage_price), pick(params.uplink_price),
                                  pick(params.storage_cap), pick(params.uplink_cap), ano)
