"""Blocking pair / blocking group detection and the stability metric suite.

A participant abandons its current match only when the new option beats its
current utility by the factor ``1 + s`` (``s`` is the switching cost);
unmatched participants hold utility 0, so any positive gain tempts them.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, fields, replace

from .core import Contract, Matching, windowed_feasible
from .matching import CombinedEdge, CombinedGraph, ContractGraph, choice, enumerate_combined

_TOL = 1e-12


@dataclass(frozen=True)
class BlockingPair:
    contract: Contract
    order_gain: float
    supplier_gain: float
    order_unmatched: bool
    supplier_underutilized: bool

    @property
    def available(self) -> bool:
        return self.order_unmatched and self.supplier_underutilized


@dataclass(frozen=True)
class BlockingGroup:
    edge: CombinedEdge
    order_gains: tuple[float, ...]
    supplier_gain: float
    order_unmatched: bool
    supplier_underutilized: bool

    @property
    def available(self) -> bool:
        return self.order_unmatched and self.supplier_underutilized

    @property
    def size(self) -> int:
        """Orders plus the supplier."""
        return len(self.edge) + 1


@dataclass
class BlockingReport:
    pairs: list[BlockingPair] = field(default_factory=list)
    groups: list[BlockingGroup] = field(default_factory=list)

    @property
    def available_pairs(self) -> int:
        return sum(p.available for p in self.pairs)

    @property
    def available_groups(self) -> int:
        return sum(g.available for g in self.groups)


def _order_tempted(contract: Contract, held: Contract | None, s: float) -> bool:
    return held is None or contract.order_utility > (1 + s) * held.order_utility + _TOL


def find_blocking_pairs(matching: Matching, graph: ContractGraph, switching_cost: float = 0.0) -> list[BlockingPair]:
    s = switching_cost
    out = []
    held_by_supplier = matching.by_supplier
    for sid in graph.supplier_ids:
        current = held_by_supplier.get(sid, [])
        total = sum(c.supplier_utility for c in current)
        for c in graph.by_supplier[sid]:
            held = matching.contract_for(c.order_id)
            if held is not None and held.key == c.key:
                continue
            if not _order_tempted(c, held, s):
                continue
            base = [x for x in current if x.order_id != c.order_id]
            best = choice(base + [c], graph.capacities[sid], release=graph.release, force=c)
            value = sum(x.supplier_utility for x in best)
            if not best or not value > (1 + s) * total + _TOL:
                continue
            out.append(
                BlockingPair(
                    c,
                    c.order_utility - (held.order_utility if held else 0.0),
                    value - total,
                    held is None,
                    len(base) == len(current) and graph.feasible(sid, base + [c]),
                )
            )
    return out


def find_blocking_groups(
    matching: Matching, combined: CombinedGraph, switching_cost: float = 0.0
) -> list[BlockingGroup]:
    """Edges (I, j, C) where j strictly gains, every order weakly gains and one strictly does.

    Orders whose contract is already held by j are indifferent members.
    """
    s = switching_cost
    by_supplier = matching.by_supplier
    totals = {sid: sum(c.supplier_utility for c in cs) for sid, cs in by_supplier.items()}
    out = []
    for e in combined.edges:
        total = totals.get(e.supplier_id, 0.0)
        if not e.supplier_utility > (1 + s) * total + _TOL:
            continue
        gains = []
        weak, strict, new_unmatched = True, False, True
        for c in e.contracts:
            held = matching.contract_for(c.order_id)
            if held is None:
                strict = True
                gains.append(c.order_utility)
                continue
            gains.append(c.order_utility - held.order_utility)
            if held.key == c.key:
                continue
            new_unmatched = False
            if c.order_utility < (1 + s) * held.order_utility - _TOL:
                weak = False
                break
            if c.order_utility > (1 + s) * held.order_utility + _TOL:
                strict = True
        if not (weak and strict):
            continue
        keys = {c.key for c in e.contracts}
        underutilized = all(c.key in keys for c in by_supplier.get(e.supplier_id, []))
        out.append(BlockingGroup(e, tuple(gains), e.supplier_utility - total, new_unmatched, underutilized))
    return out


def audit(
    matching: Matching,
    graph: ContractGraph,
    combined: CombinedGraph | None = None,
    switching_cost: float = 0.0,
    groups: bool = True,
) -> BlockingReport:
    report = BlockingReport(find_blocking_pairs(matching, graph, switching_cost))
    if groups:
        combined = combined or enumerate_combined(graph)
        report.groups = find_blocking_groups(matching, combined, switching_cost)
    return report


def posterior_graph(
    current: ContractGraph,
    following: ContractGraph,
    extension: Mapping[str, float],
) -> ContractGraph:
    """Two-period graph on the current period's timeline extended by one period.

    Orders first seen in ``following`` may only use capacity from the second
    period on; their due periods shift by one onto the extended timeline.
    ``extension`` gives each supplier's capacity for the added last period.
    """
    late = [o for o in following.order_ids if o not in set(current.order_ids)]
    late_set = set(late)
    contracts = list(current.contracts)
    for c in following.contracts:
        if c.order_id in late_set and c.supplier_id in current.capacities:
            terms = replace(c.terms, due_period=c.due_period + 1)
            contracts.append(replace(c, terms=terms))
    caps = {sid: tuple(cap) + (float(extension.get(sid, 0.0)),) for sid, cap in current.capacities.items()}
    release = {o: 2 for o in late}
    # a late contract must fit its own window
    contracts = [
        c for c in contracts
        if windowed_feasible(caps[c.supplier_id], [(c.hours, c.due_period, release.get(c.order_id, 1))])
    ]
    return ContractGraph(contracts, caps, current.order_ids + late, release)


def posterior_audit(
    matching: Matching,
    current: ContractGraph,
    following: ContractGraph,
    extension: Mapping[str, float],
    switching_cost: float = 0.0,
    groups: bool = True,
) -> BlockingReport:
    """Blocking pairs/groups of the period's matching once the next arrivals are known."""
    return audit(matching, posterior_graph(current, following, extension), None, switching_cost, groups)


# -- metrics ------------------------------------------------------------------------

@dataclass
class StabilityMetrics:
    impact_of_stability: float = math.nan
    total_utility: float = 0.0
    avg_order_utility: float = 0.0
    avg_supplier_utility: float = 0.0
    matched_orders: float = 0.0
    matched_suppliers: float = 0.0
    avg_order_rank: float = 0.0
    avg_supplier_rank: float = 0.0
    participants_in_bp: float = 0.0
    participants_in_bg: float = 0.0
    bp_per_order: float = 0.0
    bg_per_order: float = 0.0
    bp_count: int = 0
    bg_count: int = 0
    unmatched_in_bp: float = 0.0
    available_bp: float = 0.0
    avg_order_gain: float = 0.0
    avg_supplier_gain: float = 0.0
    avg_group_size: float = 0.0

    def as_row(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _mean(xs: Sequence[float]) -> float:
    return float(sum(xs) / len(xs)) if xs else 0.0


def percentile_rank(contract: Contract, ranked: Sequence[Contract]) -> float:
    """0 for the participant's top contract, approaching 1 for its last."""
    keys = [c.key for c in ranked]
    return keys.index(contract.key) / len(keys)


def compute_metrics(matching: Matching, graph: ContractGraph, report: BlockingReport | None = None) -> StabilityMetrics:
    m = StabilityMetrics()
    contracts = matching.contracts()
    orders = [o for o in graph.order_ids if graph.by_order[o]]
    suppliers = [s for s in graph.supplier_ids if graph.by_supplier[s]]
    groups = matching.by_supplier
    m.total_utility = matching.total_utility()
    m.avg_order_utility = _mean([c.order_utility for c in contracts])
    m.avg_supplier_utility = _mean([sum(c.supplier_utility for c in cs) for cs in groups.values()])
    m.matched_orders = len(contracts) / len(orders) if orders else 0.0
    m.matched_suppliers = len(groups) / len(suppliers) if suppliers else 0.0
    m.avg_order_rank = _mean([percentile_rank(c, graph.order_ranking(c.order_id)) for c in contracts])
    m.avg_supplier_rank = _mean([percentile_rank(c, graph.supplier_ranking(c.supplier_id)) for c in contracts])
    if report is None:
        return m
    participants = len(orders) + len(suppliers)
    in_bp = {p.contract.order_id for p in report.pairs} | {"s:" + p.contract.supplier_id for p in report.pairs}
    in_bg = set()
    for g in report.groups:
        in_bg.update(g.edge.order_ids)
        in_bg.add("s:" + g.edge.supplier_id)
    m.participants_in_bp = len(in_bp) / participants if participants else 0.0
    m.participants_in_bg = len(in_bg) / participants if participants else 0.0
    m.bp_count = len(report.pairs)
    m.bg_count = len(report.groups)
    m.bp_per_order = m.bp_count / len(orders) if orders else 0.0
    m.bg_per_order = m.bg_count / len(orders) if orders else 0.0
    m.unmatched_in_bp = _mean([float(p.order_unmatched) for p in report.pairs])
    m.available_bp = _mean([float(p.available) for p in report.pairs])
    m.avg_order_gain = _mean([p.order_gain for p in report.pairs])
    m.avg_supplier_gain = _mean([p.supplier_gain for p in report.pairs])
    m.avg_group_size = _mean([g.size for g in report.groups])
    return m


def impact_of_stability(utility: float, reference: float) -> float:
    """Utility relative to the maximum-weight reference (1 when both are empty)."""
    if reference <= 0:
        return 1.0
    return utility / reference
