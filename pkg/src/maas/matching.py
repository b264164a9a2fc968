"""Contract graphs and the three allocation mechanisms.

* ``solve_mw``   - maximum-weight (socially optimal) matching.
* ``solve_mwas`` - two-stage program: minimize blocking groups, then optimize
  weight / cardinality among matchings reaching that minimum.
* ``solve_as``   - cumulative offer process with a capacity-aware choice function.

All due periods inside a graph are relative to the matching period (1-based)
and capacities are per-period hours over the supplier's commitment horizon.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from itertools import accumulate, product
from typing import Literal, Protocol

from .core import (
    Contract,
    Matching,
    Order,
    Supplier,
    capability_match,
    cumulative_capacity,
    cumulative_feasible,
    windowed_feasible,
)
from .errors import BudgetError
from .optimizer import BinaryProgram, Method, solve, solve_lexicographic
from .utility import ContractTerms, contract_utility, haversine_miles, rank_contracts

Flavor = Literal["max", "min", "card"]

DEFAULT_EDGE_BUDGET = 10**6


# -- graph construction -----------------------------------------------------------

class Quantifier(Protocol):
    def __call__(self, order: Order, supplier: Supplier, due: int, hours: float) -> list[tuple[ContractTerms, float, float]]:
        ...


@dataclass
class ProfileQuantifier:
    """Contracts at the machine's band endpoints, scored with both sides' profiles.

    The order side sees distance, supplier size, rating and price; the supplier
    side sees material, urgency (periods remaining) and revenue.
    """

    max_contracts: int = 2

    def prices(self, order: Order, supplier: Supplier) -> list[float]:
        a, b = supplier.machine.unit_threshold_band
        points = sorted({round(a * order.part_volume, 2), round(b * order.part_volume, 2)})
        return points[: self.max_contracts]

    def __call__(self, order: Order, supplier: Supplier, due: int, hours: float) -> list[tuple[ContractTerms, float, float]]:
        if order.profile is None or supplier.profile is None:
            raise ValueError(f"order {order.id} and supplier {supplier.id} need utility profiles")
        distance = haversine_miles(order.location, supplier.location)
        out = []
        for price in self.prices(order, supplier):
            terms = ContractTerms(
                order.id, supplier.id, price, due, order.material, order.process.value, order.resolution
            )
            u_order = contract_utility(
                order.profile, terms,
                {"distance": distance, "size": supplier.size_class.value, "rating": supplier.rating},
            )
            u_supplier = contract_utility(
                supplier.profile, terms,
                {"urgency": due, "revenue": price, "material": order.material},
            )
            out.append((terms, u_order, u_supplier))
        return out


@dataclass
class ContractGraph:
    """Feasible contracts plus supplier capacity timelines.

    ``release`` maps order ids to the first period whose capacity they may use
    (default 1); only the two-period posterior audit sets it.
    """

    contracts: list[Contract]
    capacities: dict[str, tuple[float, ...]]
    order_ids: list[str] = field(default_factory=list)
    release: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.contracts = sorted(self.contracts, key=lambda c: c.key)
        seen = set(self.order_ids)
        self.order_ids = sorted(seen | {c.order_id for c in self.contracts})
        self.by_order: dict[str, list[Contract]] = {o: [] for o in self.order_ids}
        self.by_supplier: dict[str, list[Contract]] = {s: [] for s in sorted(self.capacities)}
        for c in self.contracts:
            self.by_order[c.order_id].append(c)
            self.by_supplier.setdefault(c.supplier_id, []).append(c)

    @property
    def supplier_ids(self) -> list[str]:
        return sorted(self.by_supplier)

    def release_of(self, order_id: str) -> int:
        return self.release.get(order_id, 1)

    def jobs(self, contracts: Iterable[Contract]) -> list[tuple[float, int, int]]:
        return [(c.hours, c.due_period, self.release_of(c.order_id)) for c in contracts]

    def feasible(self, supplier_id: str, contracts: Iterable[Contract]) -> bool:
        contracts = list(contracts)
        if not self.release:
            return cumulative_feasible(self.capacities[supplier_id], [(c.hours, c.due_period) for c in contracts])
        return windowed_feasible(self.capacities[supplier_id], self.jobs(contracts))

    def order_ranking(self, order_id: str) -> list[Contract]:
        return rank_contracts([(c, c.order_utility) for c in self.by_order[order_id]], key=lambda c: c.key)

    def supplier_ranking(self, supplier_id: str) -> list[Contract]:
        return rank_contracts([(c, c.supplier_utility) for c in self.by_supplier[supplier_id]], key=lambda c: c.key)

    def components(self) -> list[ContractGraph]:
        """Connected components of the order-supplier graph (isolated nodes dropped)."""
        parent: dict[str, str] = {}

        def find(x: str) -> str:
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for c in self.contracts:
            a, b = find("o:" + c.order_id), find("s:" + c.supplier_id)
            if a != b:
                parent[max(a, b)] = min(a, b)
        groups: dict[str, list[Contract]] = {}
        for c in self.contracts:
            groups.setdefault(find("s:" + c.supplier_id), []).append(c)
        out = []
        for root in sorted(groups):
            cs = groups[root]
            sups = {c.supplier_id for c in cs}
            rel = {c.order_id: self.release[c.order_id] for c in cs if c.order_id in self.release}
            out.append(ContractGraph(cs, {s: self.capacities[s] for s in sups}, release=rel))
        return out


def relative_due(order: Order, period: int, horizon: int) -> int:
    """Usable periods before the order is due, capped at the commitment horizon."""
    return min(order.due_period - period, horizon)


def build_graph(
    orders: Iterable[Order],
    suppliers: Iterable[Supplier],
    quantifier: Quantifier | None = None,
    period: int = 0,
    capacities: Mapping[str, Sequence[float]] | None = None,
) -> ContractGraph:
    """Edges are exactly the capability- and capacity-feasible contracts.

    ``capacities`` overrides the machines' nominal timelines, e.g. with the
    residual hours left after earlier commitments.
    """
    quantifier = quantifier or ProfileQuantifier()
    suppliers = list(suppliers)
    orders = list(orders)
    contracts: list[Contract] = []
    caps = {
        s.id: tuple(capacities[s.id]) if capacities is not None else s.machine.capacity_by_period
        for s in suppliers
    }
    for order in orders:
        for supplier in suppliers:
            machine = supplier.machine
            due = relative_due(order, period, len(caps[supplier.id]))
            if due < 1 or not capability_match(order, machine):
                continue
            hours = order.production_time(machine.process)
            if hours > cumulative_capacity(caps[supplier.id], due) + 1e-9:
                continue
            for k, (terms, u_i, u_j) in enumerate(quantifier(order, supplier, due, hours)):
                contracts.append(Contract(terms, hours, u_i, u_j, k))
    return ContractGraph(contracts, caps, [o.id for o in orders])


# -- capacity programs -----------------------------------------------------------

def _capacity_rows(
    bp: BinaryProgram,
    jobs: Sequence[tuple[int, float, int]] | Sequence[tuple[int, float, int, int]],
    caps: Sequence[float],
) -> None:
    """Cumulative rows per (release, due) window; jobs are (var, hours, due[, release])."""
    prefix = list(accumulate(caps, initial=0.0))
    full = [(j[0], j[1], j[2], j[3] if len(j) > 3 else 1) for j in jobs]
    for r in sorted({rel for *_, rel in full}):
        for q in sorted({d for _, _, d, rel in full if rel >= r}):
            row = {}
            for var, hours, due, rel in full:
                if rel >= r and due <= q:
                    row[var] = row.get(var, 0.0) + hours
            bp.add_constraint(row, "<=", prefix[q] - prefix[r - 1])


def supplier_order_bound(
    caps: Sequence[float],
    candidates: Sequence[tuple[float, int]] | Sequence[tuple[float, int, int]],
) -> int:
    """Largest number of candidate jobs (hours, due[, release]) the supplier can serve on time."""
    if not candidates:
        return 0
    bp = BinaryProgram([1.0] * len(candidates), "max")
    _capacity_rows(bp, [(k, *job) for k, job in enumerate(candidates)], caps)
    return int(round(solve(bp).value))


def choice(
    offered: Sequence[Contract],
    caps: Sequence[float],
    method: Method = "auto",
    release: Mapping[str, int] | None = None,
    force: Contract | None = None,
) -> list[Contract]:
    """Utility-maximizing capacity-feasible subset of a supplier's offers.

    With ``force`` the subset must contain that contract; an empty list then
    means it cannot be accepted at all.
    """
    if not offered:
        return []
    orders = [c.order_id for c in offered]
    if len(set(orders)) != len(orders):
        raise ValueError("offered contracts must have distinct orders")
    offered = sorted(offered, key=lambda c: c.key)
    release = release or {}
    bp = BinaryProgram([c.supplier_utility for c in offered], "max")
    _capacity_rows(
        bp, [(k, c.hours, c.due_period, release.get(c.order_id, 1)) for k, c in enumerate(offered)], caps
    )
    if force is not None:
        bp.add_constraint({offered.index(force): 1.0}, "=", 1.0)
    sol = solve(bp, method)
    if not sol.optimal:
        return []
    return [c for c, x in zip(offered, sol.assignment) if x]


# -- maximum weight ------------------------------------------------------------------

def _assert_valid(matching: Matching, graph: ContractGraph) -> Matching:
    for sid, group in matching.by_supplier.items():
        assert graph.feasible(sid, group), f"supplier {sid} over capacity"
    return matching


def solve_mw(graph: ContractGraph, method: Method = "auto") -> Matching:
    # components share no order or supplier, so their optima add up
    matching = Matching()
    for component in graph.components():
        for c in _solve_mw_component(component, method):
            matching.add(c)
    return _assert_valid(matching, graph)


def _solve_mw_component(graph: ContractGraph, method: Method) -> list[Contract]:
    # contracts of one order-supplier pair use the same hours and window, so only the best can be optimal
    best: dict[tuple[str, str], Contract] = {}
    for c in graph.contracts:
        k = (c.order_id, c.supplier_id)
        if k not in best or c.utility > best[k].utility:
            best[k] = c
    contracts = sorted(best.values(), key=lambda c: c.key)
    if not contracts:
        return []
    bp = BinaryProgram([c.utility for c in contracts], "max")
    index = {c.key: k for k, c in enumerate(contracts)}
    for oid in graph.order_ids:
        cs = [c for c in graph.by_order[oid] if c.key in index]
        if len(cs) > 1:
            bp.add_constraint({index[c.key]: 1.0 for c in cs}, "<=", 1)
    for sid in graph.supplier_ids:
        cs = [c for c in graph.by_supplier[sid] if c.key in index]
        jobs = [(index[c.key], c.hours, c.due_period, graph.release_of(c.order_id)) for c in cs]
        _capacity_rows(bp, jobs, graph.capacities[sid])
    sol = solve(bp, method)
    return [c for c, x in zip(contracts, sol.assignment) if x]


# -- combined graph ------------------------------------------------------------------

@dataclass(frozen=True)
class CombinedEdge:
    supplier_id: str
    contracts: tuple[Contract, ...]

    @property
    def order_ids(self) -> tuple[str, ...]:
        return tuple(c.order_id for c in self.contracts)

    @property
    def supplier_utility(self) -> float:
        return sum(c.supplier_utility for c in self.contracts)

    @property
    def utility(self) -> float:
        return sum(c.utility for c in self.contracts)

    def __len__(self) -> int:
        return len(self.contracts)


@dataclass
class CombinedGraph:
    edges: list[CombinedEdge]
    graph: ContractGraph

    def __post_init__(self) -> None:
        self.by_order: dict[str, list[int]] = {o: [] for o in self.graph.order_ids}
        self.by_supplier: dict[str, list[int]] = {s: [] for s in self.graph.supplier_ids}
        for k, e in enumerate(self.edges):
            self.by_supplier[e.supplier_id].append(k)
            for oid in e.order_ids:
                self.by_order[oid].append(k)

    @property
    def vertices(self) -> set[tuple[str, ...]]:
        return {e.order_ids for e in self.edges}


def _feasible_order_subsets(
    per_order: Mapping[str, list[Contract]],
    graph: ContractGraph,
    supplier_id: str,
    max_size: int,
) -> list[tuple[str, ...]]:
    # hours and due period are shared by every contract of an (order, supplier) pair
    first = {o: cs[0] for o, cs in per_order.items()}
    orders = sorted(per_order)
    out: list[tuple[str, ...]] = []

    def extend(start: int, chosen: list[str]) -> None:
        for k in range(start, len(orders)):
            nxt = chosen + [orders[k]]
            if not graph.feasible(supplier_id, [first[o] for o in nxt]):
                continue
            out.append(tuple(nxt))
            if len(nxt) < max_size:
                extend(k + 1, nxt)

    extend(0, [])
    return out


def enumerate_combined(graph: ContractGraph, budget: int = DEFAULT_EDGE_BUDGET) -> CombinedGraph:
    edges: list[CombinedEdge] = []
    for sid in graph.supplier_ids:
        cs = graph.by_supplier[sid]
        if not cs:
            continue
        per_order: dict[str, list[Contract]] = {}
        for c in cs:
            per_order.setdefault(c.order_id, []).append(c)
        bound = supplier_order_bound(
            graph.capacities[sid],
            [(v[0].hours, v[0].due_period, graph.release_of(o)) for o, v in per_order.items()],
        )
        for subset in _feasible_order_subsets(per_order, graph, sid, bound):
            for pick in product(*(per_order[o] for o in subset)):
                edges.append(CombinedEdge(sid, tuple(pick)))
                if len(edges) > budget:
                    raise BudgetError(f"combined graph exceeds {budget} edges")
    return CombinedGraph(edges, graph)


# -- maximum weight approximately stable -------------------------------------------

@dataclass(frozen=True)
class MwasResult:
    matching: Matching
    lower_bound: int
    flavor: Flavor


def _q(u: float) -> float:
    # sums of the same utilities in different orders may differ in the last bit
    return round(u, 12)


def _levels(values: Sequence[float]) -> list[float]:
    return sorted(set(values), reverse=True)


def _mwas_program(combined: CombinedGraph) -> tuple[BinaryProgram, int]:
    """Stage-one program; variables are X (edges), Y (edges), Z (edges), then prefix aggregates.

    An edge (I, j, C) counts as blocking (Y = 1) unless j's selected edge is
    worth at least as much to j, some member holds a contract it strictly
    prefers, or no member would strictly gain (Z = 1, every member already
    holds something at least as good). The preference sums are prefix sums
    over each participant's edges sorted by its own utility. Every order and
    every supplier holds at most one edge, so each prefix sum is itself 0/1.
    """
    edges = combined.edges
    n = len(edges)
    next_var = 3 * n
    sup_prefix: dict[tuple[str, float], int] = {}
    weak: dict[tuple[str, float], int] = {}
    strict: dict[tuple[str, float], int | None] = {}
    rows: list[tuple[dict[int, float], str, float]] = []

    def prefix_chain(ks: list[int], value: dict[int, float]) -> list[tuple[float, int, int | None]]:
        nonlocal next_var
        chain = []
        prev = None
        for level in _levels(list(value.values())):
            var = next_var
            next_var += 1
            row = {var: 1.0}
            if prev is not None:
                row[prev] = -1.0
            for k in ks:
                if value[k] == level:
                    row[k] = row.get(k, 0.0) - 1.0
            rows.append((row, "=", 0.0))
            chain.append((level, var, prev))
            prev = var
        rows.append(({k: 1.0 for k in ks}, "<=", 1.0))
        return chain

    for sid, ks in combined.by_supplier.items():
        if ks:
            for level, var, _ in prefix_chain(ks, {k: _q(edges[k].supplier_utility) for k in ks}):
                sup_prefix[(sid, level)] = var

    for oid, ks in combined.by_order.items():
        if ks:
            own = {k: _q(next(c for c in edges[k].contracts if c.order_id == oid).order_utility) for k in ks}
            for level, var, prev in prefix_chain(ks, own):
                weak[(oid, level)] = var
                strict[(oid, level)] = prev

    for k, e in enumerate(edges):
        z = 2 * n + k
        row = {n + k: -1.0, z: -1.0}
        var = sup_prefix[(e.supplier_id, _q(e.supplier_utility))]
        row[var] = row.get(var, 0.0) - 1.0
        for c in e.contracts:
            better = strict[(c.order_id, _q(c.order_utility))]
            if better is not None:
                row[better] = row.get(better, 0.0) - 1.0
            rows.append(({z: 1.0, weak[(c.order_id, _q(c.order_utility))]: -1.0}, "<=", 0.0))
        rows.append((row, "<=", -1.0))

    objective = [0.0] * n + [1.0] * n + [0.0] * (next_var - 2 * n)
    bp = BinaryProgram(objective, "min")
    for row, rel, rhs in rows:
        bp.add_constraint(row, rel, rhs)  # type: ignore[arg-type]
    return bp, n


def solve_mwas(
    combined: CombinedGraph,
    flavor: Flavor = "max",
    method: Method = "highs",
) -> MwasResult:
    """Minimize blocking groups, then optimize ``flavor`` subject to that minimum.

    Defaults to HiGHS: the covering rows give the knapsack bound of the native
    branch-and-bound nothing to prune on.

    Solved per connected component; the global optimum decomposes because the
    lower bound is the sum of the component bounds.
    """
    matching = Matching()
    total_lb = 0
    for component in combined.graph.components():
        oids = set(component.order_ids)
        sub = CombinedGraph(
            [e for e in combined.edges if e.supplier_id in component.capacities and oids.issuperset(e.order_ids)],
            component,
        )
        if not sub.edges:
            continue
        bp, n = _mwas_program(sub)
        if flavor == "max":
            second, direction = [e.utility for e in sub.edges], "max"
        elif flavor == "min":
            second, direction = [e.utility for e in sub.edges], "min"
        elif flavor == "card":
            second, direction = [float(len(e)) for e in sub.edges], "max"
        else:
            raise ValueError(f"unknown flavor {flavor!r}")
        second = second + [0.0] * (bp.n_vars - n)
        lex = solve_lexicographic(bp, second, direction, method)  # type: ignore[arg-type]
        total_lb += int(round(lex.first_value))
        for k in range(n):
            if lex.assignment[k]:
                for c in sub.edges[k].contracts:
                    matching.add(c)
    return MwasResult(_assert_valid(matching, combined.graph), total_lb, flavor)


def count_min_blocking(matching: Matching, combined: CombinedGraph) -> int:
    """Blocking combined edges, the quantity the first MWAS stage minimizes.

    The supplier must strictly gain, no member may hold a strictly better
    contract, and at least one member must strictly gain (or be unmatched).
    """
    sup_util: dict[str, float] = {}
    for c in matching.accepted.values():
        sup_util[c.supplier_id] = sup_util.get(c.supplier_id, 0.0) + c.supplier_utility
    count = 0
    for e in combined.edges:
        if _q(sup_util.get(e.supplier_id, 0.0)) >= _q(e.supplier_utility):
            continue
        vetoed, gains = False, False
        for c in e.contracts:
            held = matching.contract_for(c.order_id)
            if held is None or _q(held.order_utility) < _q(c.order_utility):
                gains = True
            elif _q(held.order_utility) > _q(c.order_utility):
                vetoed = True
                break
        count += gains and not vetoed
    return count


# -- approximately stable (cumulative offer) --------------------------------------------

@dataclass
class AsTrace:
    rounds: int = 0
    proposals: int = 0


def solve_as(
    graph: ContractGraph,
    trace: AsTrace | None = None,
    choose: Callable[..., list[Contract]] = choice,
) -> Matching:
    lists = {o: graph.order_ranking(o) for o in graph.order_ids}
    held: dict[str, list[Contract]] = {s: [] for s in graph.supplier_ids}
    rejected = [o for o in graph.order_ids]
    trace = trace if trace is not None else AsTrace()
    while rejected:
        proposers = [o for o in rejected if lists[o]]
        if not proposers:
            break
        trace.rounds += 1
        for o in proposers:
            c = lists[o].pop(0)
            held[c.supplier_id].append(c)
            trace.proposals += 1
        rejected = [o for o in rejected if o not in set(proposers)]
        for sid in graph.supplier_ids:
            if not held[sid]:
                continue
            kept = choose(held[sid], graph.capacities[sid], release=graph.release)
            kept_keys = {c.key for c in kept}
            for c in held[sid]:
                if c.key not in kept_keys:
                    rejected.append(c.order_id)
            held[sid] = kept
        rejected = sorted(set(rejected))
    matching = Matching.of(c for sid in graph.supplier_ids for c in held[sid])
    return _assert_valid(matching, graph)
