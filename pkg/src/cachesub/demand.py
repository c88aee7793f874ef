"""Content catalogs with per-leaf demand; hit probabilities.

Synthetic Zipf demand is kept implicit (per-ANO total, exponent, ranking) and
only materialised into per-leaf rate tables on request. Rankings for ANOs
other than the first are drawn with ``numpy.random.Generator(PCG64(seed))``:
one ``permutation(F)`` call per ANO in increasing ANO order, one generator per
CP seeded with ``[seed, cp]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .network import TreeNetwork

MEGABYTE_GB = 1e-3


class DemandError(ValueError):
    pass


def zipf_weights(F: int, alpha: float) -> np.ndarray:
    """Normalised truncated Zipf law ``q[f-1] = f**-alpha / H``."""
    if F < 1:
        raise DemandError("catalog size must be >= 1")
    if alpha < 0:
        raise DemandError("alpha must be >= 0")
    w = np.arange(1, F + 1, dtype=np.float64) ** -float(alpha)
    return w / np.sum(w)


def hit_prob_exact(weights: np.ndarray, C: int) -> float:
    """Hit probability of an ideal cache holding the ``C`` heaviest items."""
    weights = np.asarray(weights, dtype=np.float64)
    if C < 0 or C > weights.size:
        raise DemandError(f"cache size {C} outside [0, {weights.size}]")
    if C == 0:
        return 0.0
    ordered = weights if np.all(np.diff(weights) <= 0) else np.sort(weights)[::-1]
    return float(np.sum(ordered[:C]))


def hit_prob_continuous(C: float, F: float, alpha: float) -> float:
    """Integral approximation ``min(1, (C/F)**(1-alpha))`` of the Zipf hit curve."""
    if F <= 0:
        raise DemandError("catalog volume must be > 0")
    if C <= 0:
        return 0.0
    return min(1.0, (C / F) ** (1.0 - alpha))


@dataclass(frozen=True)
class Catalog:
    cp: int
    size_files: int
    file_size: float = MEGABYTE_GB

    def __post_init__(self):
        if self.size_files < 1:
            raise DemandError(f"CP {self.cp}: catalog must hold at least one file")
        if not self.file_size > 0:
            raise DemandError(f"CP {self.cp}: file size must be > 0")


@dataclass(frozen=True)
class ZipfSpec:
    """Implicit Zipf demand of one CP."""

    alpha: float
    per_ano_total: Mapping[int, float]
    # rank_of[a][f] is the 0-based popularity rank of file f for ANO a; None = identity
    rank_of: Mapping[int, Optional[np.ndarray]]


@dataclass
class DemandModel:
    """Per-CP demand over the leaves of a network.

    Each CP is either explicit (``tables[cp]`` of shape ``(n_leaves, F_k)``) or
    Zipf (``zipf[cp]``); leaves of an ANO split its total evenly.
    """

    net: TreeNetwork
    catalogs: dict[int, Catalog]
    tables: dict[int, np.ndarray] = field(default_factory=dict)
    zipf: dict[int, ZipfSpec] = field(default_factory=dict)
    _leaf_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        sizes = {c.file_size for c in self.catalogs.values()}
        if len(sizes) > 1:
            raise DemandError("all catalogs must share one file size")
        for cp in self.catalogs:
            if (cp in self.tables) == (cp in self.zipf):
                raise DemandError(f"CP {cp}: exactly one of table/zipf demand required")
        for cp, t in self.tables.items():
            want = (len(self.net.leaves), self.catalogs[cp].size_files)
            if t.shape != want:
                raise DemandError(f"CP {cp}: demand table shape {t.shape}, expected {want}")
            if np.any(t < 0) or not np.all(np.isfinite(t)):
                raise DemandError(f"CP {cp}: demand rates must be finite and >= 0")

    @property
    def cps(self) -> tuple[int, ...]:
        return tuple(sorted(self.catalogs))

    @property
    def file_size(self) -> float:
        return next(iter(self.catalogs.values())).file_size if self.catalogs else MEGABYTE_GB

    def _weights(self, cp: int) -> np.ndarray:
        key = ("q", cp)
        if key not in self._leaf_cache:
            spec = self.zipf[cp]
            self._leaf_cache[key] = zipf_weights(self.catalogs[cp].size_files, spec.alpha)
        return self._leaf_cache[key]

    def ano_profile(self, cp: int, ano: int) -> np.ndarray:
        """Per-file demand ``T_a * q_a`` of one ANO (sum over its leaves)."""
        if cp in self.tables:
            idx = [self.net.leaf_index[l] for l in self.net.leaves_of(ano)]
            return self.tables[cp][idx].sum(axis=0)
        spec = self.zipf[cp]
        q = self._weights(cp)
        rank = spec.rank_of.get(ano)
        q = q if rank is None else q[rank]
        return spec.per_ano_total.get(ano, 0.0) * q

    def ano_matrix(self, cp: int) -> np.ndarray:
        """``(n_anos, F_k)`` per-ANO per-file demand."""
        return np.vstack([self.ano_profile(cp, a) for a in self.net.anos])

    def leaf_rates(self, cp: int) -> np.ndarray:
        """``(n_leaves, F_k)`` table of per-leaf per-file rates (materialised once)."""
        if cp in self.tables:
            return self.tables[cp]
        key = ("leaf", cp)
        if key not in self._leaf_cache:
            net = self.net
            out = np.zeros((len(net.leaves), self.catalogs[cp].size_files))
            for a in net.anos:
                leaves = net.leaves_of(a)
                if not leaves:
                    continue
                row = self.ano_profile(cp, a) / len(leaves)
                for l in leaves:
                    out[net.leaf_index[l]] = row
            out.setflags(write=False)
            self._leaf_cache[key] = out
        return self._leaf_cache[key]

    def leaf_totals(self, cp: int) -> np.ndarray:
        """``T_l^k`` for every leaf, in ``net.leaves`` order."""
        if cp in self.tables:
            return self.tables[cp].sum(axis=1)
        spec = self.zipf[cp]
        out = np.zeros(len(self.net.leaves))
        for a in self.net.anos:
            leaves = self.net.leaves_of(a)
            for l in leaves:
                out[self.net.leaf_index[l]] = spec.per_ano_total.get(a, 0.0) / len(leaves)
        return out


def synthesize_zipf_demand(net: TreeNetwork, catalog: Catalog, per_ano_totals: Mapping[int, float],
                           alpha: float, permute_per_ano: bool, seed: int) -> DemandModel:
    """Zipf demand for a single CP; see :func:`zipf_spec` for the ranking draw."""
    spec = zipf_spec(net, catalog, per_ano_totals, alpha, permute_per_ano, seed)
    return DemandModel(net, {catalog.cp: catalog}, zipf={catalog.cp: spec})


def zipf_spec(net: TreeNetwork, catalog: Catalog, per_ano_totals: Mapping[int, float],
              alpha: float, permute_per_ano: bool, seed: int) -> ZipfSpec:
    anos = net.anos
    for a, t in per_ano_totals.items():
        if a not in anos:
            raise DemandError(f"unknown ANO {a}")
        if t < 0:
            raise DemandError(f"ANO {a}: total demand must be >= 0")
    if alpha < 0:
        raise DemandError("alpha must be >= 0")
    rank_of: dict[int, Optional[np.ndarray]] = {}
    rng = np.random.Generator(np.random.PCG64([seed, catalog.cp]))
    for i, a in enumerate(anos):
        if permute_per_ano and i > 0:
            rank_of[a] = rng.permutation(catalog.size_files)
        else:
            rank_of[a] = None
    totals = {a: float(per_ano_totals.get(a, 0.0)) for a in anos}
    return ZipfSpec(float(alpha), totals, rank_of)


def explicit_demand(net: TreeNetwork, catalogs: Mapping[int, Catalog],
                    rows) -> DemandModel:
    """Build a model from ``(leaf, cp, file, rate)`` rows; ``file`` is 0-based."""
    tables = {cp: np.zeros((len(net.leaves), c.size_files)) for cp, c in catalogs.items()}
    for leaf, cp, f, rate in rows:
        if cp not in tables:
            raise DemandError(f"unknown CP {cp}")
        if leaf not in net.leaf_index:
            raise DemandError(f"node {leaf} is not a leaf")
        if not 0 <= f < catalogs[cp].size_files:
            raise DemandError(f"CP {cp}: file {f} outside catalog")
        tables[cp][net.leaf_index[leaf], f] += rate
    return DemandModel(net, dict(catalogs), tables=tables)


def merge(models) -> DemandModel:
    """Combine single-CP models over the same network."""
    models = list(models)
    net = models[0].net
    catalogs, tables, zipf = {}, {}, {}
    for m in models:
        if m.net is not net:
            raise DemandError("models must share a network")
        for cp in m.catalogs:
            if cp in catalogs:
                raise DemandError(f"CP {cp} defined twice")
        catalogs.update(m.catalogs)
        tables.update(m.tables)
        zipf.update(m.zipf)
    return DemandModel(net, catalogs, tables=tables, zipf=zipf)
