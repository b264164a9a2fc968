"""Market scenarios, the periodic matching loop, auction campaigns and the defection experiment.

Every random quantity is drawn from its own stream keyed by
(master seed, stream kind, entity, period), so entities are reproducible
regardless of the order in which they are generated.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from . import __version__
from .auction import (
    BidRequest,
    IncrementPolicy,
    QualifiedSet,
    competitive_allocate,
    filter_suppliers,
    recommend_bid,
    rebid_loop,
)
from .core import Machine, Matching, Order, Process, SizeClass, Supplier, check_matching, cumulative_feasible
from .errors import ConfigError, MaasError
from .matching import (
    DEFAULT_EDGE_BUDGET,
    ContractGraph,
    ProfileQuantifier,
    build_graph,
    choice,
    enumerate_combined,
    solve_as,
    solve_mw,
    solve_mwas,
)
from .stability import audit, compute_metrics, impact_of_stability, posterior_graph
from .utility import (
    ORDER_DISTANCE_CURVE,
    ORDER_PRICE_CURVE,
    ORDER_RATING_CURVE,
    SUPPLIER_REVENUE_CURVE,
    SUPPLIER_URGENCY_CURVE,
    UtilityCurve,
    UtilityProfile,
)

# stream kinds
SUPPLIER_STREAM, ARRIVAL_STREAM, ORDER_STREAM, CAPACITY_STREAM = 0, 1, 2, 3
CAMPAIGN_STREAM, AUCTION_STREAM = 4, 5

MACHINE_MIX = {
    Process.FDM.value: 0.5,
    Process.SLA.value: 0.15,
    Process.MATERIAL_JETTING.value: 0.15,
    Process.SLS_POLYMER.value: 0.15,
    Process.SLS_METAL.value: 0.05,
}
PROCESS_MATERIALS = {
    Process.FDM.value: ("pla", "abs", "petg", "nylon", "tpu"),
    Process.SLA.value: ("standard-resin", "tough-resin", "castable-resin"),
    Process.MATERIAL_JETTING.value: ("vero", "agilus"),
    Process.SLS_POLYMER.value: ("pa12", "pa11", "tpu"),
    Process.SLS_METAL.value: ("aluminum", "titanium", "steel"),
}
# layer resolution in microns
PROCESS_RESOLUTION = {
    Process.FDM.value: (100.0, 300.0),
    Process.SLA.value: (25.0, 100.0),
    Process.MATERIAL_JETTING.value: (16.0, 32.0),
    Process.SLS_POLYMER.value: (80.0, 120.0),
    Process.SLS_METAL.value: (20.0, 60.0),
}
MATERIAL_PREFERENCES = (1.0, 0.7, 0.3)
REGION = ((30.0, 45.0), (-120.0, -75.0))
PMF_TOL = 1e-9


def stream(seed: int, kind: int, entity: int = 0, period: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), kind, int(entity), int(period)]))


def _check_pmf(name: str, pmf: Iterable[float]) -> None:
    p = list(pmf)
    if not p or any(x < 0 for x in p) or abs(sum(p) - 1.0) > PMF_TOL:
        raise ConfigError(f"{name} must be a probability vector, got {p}")


def _pick(rng: np.random.Generator, pmf: Mapping[str, float]) -> str:
    keys = list(pmf)
    p = np.array([pmf[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


@dataclass(frozen=True)
class MarketScenario:
    """Desk-scale defaults; the full-size market is 100 suppliers and 100 orders per period."""

    n_suppliers: int = 20
    machine_mix: Mapping[str, float] = field(default_factory=lambda: dict(MACHINE_MIX))
    order_rate: float = 20.0
    capacity_rate: float = 5.0
    capacity_cap: float = 6.0
    due_offsets: tuple[int, ...] = (3, 4, 5, 6, 7)
    due_pmf: tuple[float, ...] = (0.10, 0.15, 0.25, 0.25, 0.25)
    process_pmf: Mapping[str, float] = field(default_factory=lambda: dict(MACHINE_MIX))
    material_pmf: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    mean_hours: float = 5.35
    min_hours: float = 2.0
    periods: int = 15
    commitment: int = 4
    max_contracts: int = 2
    n_clients: int = 40
    seed: int = 0

    def __post_init__(self) -> None:
        _check_pmf("machine_mix", self.machine_mix.values())
        _check_pmf("process_pmf", self.process_pmf.values())
        _check_pmf("due_pmf", self.due_pmf)
        for proc, pmf in self.material_pmf.items():
            _check_pmf(f"material_pmf[{proc}]", pmf.values())
        for key in list(self.machine_mix) + list(self.process_pmf):
            if key not in PROCESS_MATERIALS:
                raise ConfigError(f"unknown process {key!r}")
        if len(self.due_offsets) != len(self.due_pmf) or min(self.due_offsets) < 2:
            raise ConfigError("due offsets must match the due pmf and leave at least one period")
        if not (self.order_rate > 0 and self.capacity_rate > 0 and self.capacity_cap > 0):
            raise ConfigError("arrival and capacity rates must be positive")
        if self.periods < 1 or self.commitment < 1 or self.n_suppliers < 1 or self.n_clients < 1:
            raise ConfigError("periods, commitment, suppliers and clients must be at least 1")
        if not self.mean_hours > self.min_hours > 0:
            raise ConfigError("mean production time must exceed the minimum")

    @property
    def max_hours(self) -> float:
        return 2 * self.mean_hours - self.min_hours

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> MarketScenario:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        kw = dict(doc)
        for key in ("due_offsets", "due_pmf"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["machine_mix"] = dict(self.machine_mix)
        doc["process_pmf"] = dict(self.process_pmf)
        doc["material_pmf"] = {k: dict(v) for k, v in self.material_pmf.items()}
        doc["due_offsets"] = list(self.due_offsets)
        doc["due_pmf"] = list(self.due_pmf)
        return doc


def _dirichlet_weights(rng: np.random.Generator, base: Sequence[float], concentration: float = 40.0) -> list[float]:
    w = rng.dirichlet(np.asarray(base) * concentration)
    w = np.round(w, 6)
    w[-1] = round(1.0 - float(w[:-1].sum()), 6)
    return [float(x) for x in w]


def _location(rng: np.random.Generator) -> tuple[float, float]:
    (a, b), (c, d) = REGION
    return (round(float(rng.uniform(a, b)), 4), round(float(rng.uniform(c, d)), 4))


class Market:
    """Lazily generated, cached suppliers, orders and capacity arrivals of one scenario and seed."""

    def __init__(self, scenario: MarketScenario, seed: int | None = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self._orders: dict[int, list[Order]] = {}
        self._clients: dict[str, int] = {}
        self._capacity: dict[tuple[int, int], float] = {}

    @cached_property
    def suppliers(self) -> list[Supplier]:
        return [self._supplier(j) for j in range(self.scenario.n_suppliers)]

    @cached_property
    def capacity_rates(self) -> list[float]:
        return [self.scenario.capacity_rate * float(stream(self.seed, SUPPLIER_STREAM, j, 1).uniform(0.8, 1.2))
                for j in range(self.scenario.n_suppliers)]

    def _supplier(self, j: int) -> Supplier:
        sc = self.scenario
        rng = stream(self.seed, SUPPLIER_STREAM, j, 0)
        proc = _pick(rng, sc.machine_mix)
        mats = [m for m in PROCESS_MATERIALS[proc] if rng.random() < 0.6]
        if not mats:
            mats = [PROCESS_MATERIALS[proc][int(rng.integers(len(PROCESS_MATERIALS[proc])))]]
        lo, hi = PROCESS_RESOLUTION[proc]
        span = hi - lo
        res = (round(lo + span * float(rng.uniform(0, 0.3)), 3), round(hi - span * float(rng.uniform(0, 0.3)), 3))
        a = round(float(rng.uniform(8.0, 12.0)), 3)
        band = (a, round(a * float(rng.uniform(1.2, 1.5)), 3))
        caps = tuple(self.capacity(j, p) for p in range(sc.commitment))
        machine = Machine(f"m{j:03d}", Process(proc), frozenset(mats), res, caps, band)
        w = _dirichlet_weights(rng, (0.2, 0.3, 0.5))
        prefs = {m: float(rng.choice(MATERIAL_PREFERENCES)) for ms in PROCESS_MATERIALS.values() for m in ms}
        profile = UtilityProfile((
            (w[0], UtilityCurve.categorical(prefs), "material"),
            (w[1], SUPPLIER_URGENCY_CURVE, "urgency"),
            (w[2], SUPPLIER_REVENUE_CURVE, "revenue"),
        ))
        rating = round(float(rng.uniform(3.0, 5.0)), 1)
        size = list(SizeClass)[int(rng.integers(3))]
        return Supplier(f"s{j:03d}", rating, (machine,), size, _location(rng), profile=profile)

    def capacity(self, j: int, period: int) -> float:
        """Hours supplier ``j`` makes available for ``period``."""
        key = (j, period)
        if key not in self._capacity:
            rng = stream(self.seed, CAPACITY_STREAM, j, period)
            self._capacity[key] = float(min(rng.poisson(self.capacity_rates[j]), self.scenario.capacity_cap))
        return self._capacity[key]

    def arrivals(self, period: int) -> list[Order]:
        if period not in self._orders:
            n = int(stream(self.seed, ARRIVAL_STREAM, 0, period).poisson(self.scenario.order_rate))
            self._orders[period] = [self._order(period, k) for k in range(n)]
        return self._orders[period]

    def client_of(self, order_id: str) -> int:
        return self._clients[order_id]

    def _order(self, period: int, k: int) -> Order:
        sc = self.scenario
        rng = stream(self.seed, ORDER_STREAM, k, period)
        proc = _pick(rng, sc.process_pmf)
        mats = sc.material_pmf.get(proc) or {m: 1.0 for m in PROCESS_MATERIALS[proc]}
        material = _pick(rng, mats)
        lo, hi = PROCESS_RESOLUTION[proc]
        resolution = round(float(rng.uniform(lo, hi)), 3)
        hours = round(float(rng.uniform(sc.min_hours, sc.max_hours)), 3)
        volume = round(10.0 * hours * float(rng.uniform(0.8, 1.2)), 3)
        due = period + int(sc.due_offsets[int(rng.choice(len(sc.due_pmf), p=np.asarray(sc.due_pmf)))])
        w = _dirichlet_weights(rng, (0.2, 0.1, 0.3, 0.4))
        sizes = [1.0, 0.6, 0.3]
        rng.shuffle(sizes)
        profile = UtilityProfile((
            (w[0], ORDER_DISTANCE_CURVE, "distance"),
            (w[1], UtilityCurve.categorical(dict(zip(("large", "medium", "small"), sizes))), "size"),
            (w[2], ORDER_RATING_CURVE, "rating"),
            (w[3], replace(ORDER_PRICE_CURVE, input_range=(round(8.0 * volume, 3), round(18.0 * volume, 3))), "price"),
        ))
        oid = f"o{period:03d}-{k:03d}"
        self._clients[oid] = int(rng.integers(sc.n_clients))
        return Order(oid, volume, {proc: hours}, material, Process(proc), resolution, period, due,
                     _location(rng), profile=profile)


def generate_scenario(config: MarketScenario | Mapping[str, Any], seed: int | None = None) -> Market:
    scenario = config if isinstance(config, MarketScenario) else MarketScenario.from_dict(config)
    return Market(scenario, seed)


# -- capacity ledger ------------------------------------------------------------------

@dataclass
class CapacityLedger:
    """Committed jobs per supplier; residual capacity leaves every commitment schedulable.

    Residual hours come from placing committed work as late as its due date
    allows, so any new set that fits the residual also fits jointly.
    Production is earliest-due-first on each period's capacity.
    """

    market: Market
    period: int = 0
    jobs: dict[str, list[list[float]]] = field(default_factory=dict)  # sid -> [[hours, absolute due]]

    def window(self, j: int) -> list[float]:
        return [self.market.capacity(j, self.period + p) for p in range(self.market.scenario.commitment)]

    def residual(self) -> dict[str, tuple[float, ...]]:
        out = {}
        for j, s in enumerate(self.market.suppliers):
            caps = self.window(j)
            for hours, due in sorted(self.jobs.get(s.id, []), key=lambda x: -x[1]):
                left = hours
                for p in range(int(due) - self.period - 1, -1, -1):
                    take = min(left, caps[p])
                    caps[p] -= take
                    left -= take
                    if left <= 1e-9:
                        break
                if left > 1e-6:
                    raise AssertionError(f"supplier {s.id} over-committed at period {self.period}")
            out[s.id] = tuple(round(c, 9) for c in caps)
        return out

    def commit(self, matching: Matching) -> None:
        for c in matching.contracts():
            self.jobs.setdefault(c.supplier_id, []).append([c.hours, self.period + c.due_period])
        self.check()

    def check(self) -> None:
        """Global check that no capacity is double-booked."""
        for j, s in enumerate(self.market.suppliers):
            jobs = [(h, int(d) - self.period) for h, d in self.jobs.get(s.id, []) if h > 1e-9]
            if not cumulative_feasible(self.window(j), jobs):
                raise AssertionError(f"supplier {s.id} double-booked at period {self.period}")

    def advance(self) -> float:
        """Produce the current period's work and move on; returns idle hours."""
        idle = 0.0
        for j, s in enumerate(self.market.suppliers):
            cap = self.market.capacity(j, self.period)
            jobs = sorted(self.jobs.get(s.id, []), key=lambda x: x[1])
            for job in jobs:
                take = min(job[0], cap)
                job[0] -= take
                cap -= take
            idle += cap
            late = [job for job in jobs if job[1] <= self.period + 1 and job[0] > 1e-6]
            if late:
                raise AssertionError(f"supplier {s.id} missed a due date at period {self.period}")
            self.jobs[s.id] = [job for job in jobs if job[0] > 1e-9]
        self.period += 1
        return idle


# -- run report -------------------------------------------------------------------------

def config_hash(doc: Mapping[str, Any]) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def mean_ci(values: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t half width over instance means (nan half width below two instances)."""
    xs = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if len(xs) == 0:
        return math.nan, math.nan
    mean = float(xs.mean())
    if len(xs) < 2:
        return mean, math.nan
    half = float(stats.t.ppf(0.5 + level / 2, len(xs) - 1) * xs.std(ddof=1) / math.sqrt(len(xs)))
    return mean, half


def _fmt(v: Any) -> Any:
    if isinstance(v, float):
        return repr(round(v, 10))
    return v


@dataclass
class RunReport:
    kind: str
    rows: list[dict[str, Any]] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)

    def add(self, row: Mapping[str, Any]) -> None:
        self.rows.append(dict(row))

    def extend(self, other: RunReport) -> None:
        self.rows.extend(dict(r) for r in other.rows)

    def metric_names(self, keys: Sequence[str]) -> list[str]:
        if not self.rows:
            return []
        return [k for k, v in self.rows[0].items()
                if k not in keys and k != "instance" and isinstance(v, (int, float)) and not isinstance(v, bool)]

    def aggregate(self, by: Sequence[str] = ("solver",), instance: str = "instance") -> list[dict[str, Any]]:
        """Per group: mean over instances of each instance's per-row mean, with a 95% CI half width."""
        metrics = self.metric_names([*by, "period"])
        groups: dict[tuple, dict[Any, list[dict[str, Any]]]] = {}
        for r in self.rows:
            groups.setdefault(tuple(r[k] for k in by), {}).setdefault(r.get(instance, 0), []).append(r)
        out = []
        for key in sorted(groups, key=str):
            per_inst = groups[key]
            row: dict[str, Any] = dict(zip(by, key))
            row["instances"] = len(per_inst)
            for m in metrics:
                inst_means = [float(np.mean([r[m] for r in rs])) for _, rs in sorted(per_inst.items())]
                row[m], row[f"{m}_ci95"] = mean_ci(inst_means)
            out.append(row)
        return out

    def write(self, out_dir: str | Path, stem: str | None = None, by: Sequence[str] | None = None) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        paths = [out / f"{stem}.csv"]
        write_csv(paths[0], self.rows)
        if by is not None and self.rows:
            paths.append(out / f"{stem}_summary.csv")
            write_csv(paths[1], self.aggregate(by))
        paths.append(out / f"{stem}.json")
        paths[-1].write_text(json.dumps({"kind": self.kind, "provenance": self.provenance}, indent=2, sort_keys=True) + "\n")
        return paths


def write_csv(path: Path, rows: Sequence[Mapping[str, Any]]) -> None:
    names: list[str] = []
    for r in rows:
        names.extend(k for k in r if k not in names)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in names})


def provenance(seed: int, config: Mapping[str, Any]) -> dict[str, Any]:
    return {"seed": int(seed), "config_sha256": config_hash(config), "version": f"maas-{__version__}"}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MAAS_THREADS", "1")))
    except ValueError as exc:
        raise ConfigError("MAAS_THREADS must be an integer") from exc


def run_instances(fn: Callable[..., RunReport], seeds: Sequence[int], *args: Any) -> list[RunReport]:
    """One report per seed, in seed order; seeds run in worker processes when MAAS_THREADS > 1."""
    n = min(_threads(), len(seeds))
    if n <= 1:
        return [fn(*args, seed) for seed in seeds]
    with ProcessPoolExecutor(n) as pool:
        return list(pool.map(fn, *[[a] * len(seeds) for a in args], seeds))


# -- periodic matching ---------------------------------------------------------------

SOLVERS = ("mw", "as", "mwas", "mwas-min", "mwas-card")


def solve_period(graph: ContractGraph, solver: str, combined=None, budget: int = DEFAULT_EDGE_BUDGET) -> Matching:
    if solver == "mw":
        return solve_mw(graph)
    if solver == "as":
        return solve_as(graph)
    if solver.startswith("mwas"):
        flavor = solver.partition("-")[2] or "max"
        return solve_mwas(combined or enumerate_combined(graph, budget), flavor).matching  # type: ignore[arg-type]
    raise ConfigError(f"unknown solver {solver!r}")


@dataclass(frozen=True)
class MatchingOptions:
    groups: bool = True
    posterior: bool = True
    posterior_groups: bool = True
    budget: int = DEFAULT_EDGE_BUDGET
    switching_costs: tuple[float, ...] = ()


@dataclass
class PeriodRecord:
    """What a period's audit needs, kept for sweeps that re-audit the same matchings."""

    period: int
    graph: ContractGraph
    matching: Matching


def _prefixed(prefix: str, row: Mapping[str, Any]) -> dict[str, Any]:
    return {f"{prefix}{k}": v for k, v in row.items()}


def run_periodic_matching(
    scenario: MarketScenario,
    solver: str,
    periods: int | None = None,
    seed: int | None = None,
    options: MatchingOptions = MatchingOptions(),
    market: Market | None = None,
    records: list[PeriodRecord] | None = None,
) -> RunReport:
    """Carry unmatched orders until one period before their due date; one row per period."""
    market = market or Market(scenario, seed)
    seed = market.seed
    periods = scenario.periods if periods is None else periods
    quantifier = ProfileQuantifier(scenario.max_contracts)
    ledger = CapacityLedger(market)
    report = RunReport("match", provenance=provenance(seed, {"scenario": scenario.to_dict(), "solver": solver}))
    pool: list[Order] = []
    q = scenario.commitment
    for t in range(periods):
        pool = [o for o in pool if o.due_period - t >= 1] + list(market.arrivals(t))
        assert all(o.arrival_period <= t <= o.due_period - 1 for o in pool)
        caps = ledger.residual()
        try:
            graph = build_graph(pool, market.suppliers, quantifier, t, caps)
            need_combined = options.groups or solver.startswith("mwas")
            combined = enumerate_combined(graph, options.budget) if need_combined and graph.contracts else None
            matching = solve_period(graph, solver, combined, options.budget)
            reference = matching if solver == "mw" else solve_mw(graph)
        except MaasError as exc:
            raise type(exc)(f"period {t}: {exc}") from exc
        check_matching(matching, caps)
        rep = audit(matching, graph, combined, 0.0, options.groups and combined is not None)
        metrics = compute_metrics(matching, graph, rep)
        metrics.impact_of_stability = impact_of_stability(matching.total_utility(), reference.total_utility())
        row: dict[str, Any] = {"instance": seed, "solver": solver, "period": t, "pool": len(pool),
                               "arrivals": len(market.arrivals(t)), "mw_utility": reference.total_utility(),
                               "available_bg": sum(g.available for g in rep.groups)}
        row.update(metrics.as_row())
        if options.posterior:
            following = build_graph(market.arrivals(t + 1), market.suppliers, quantifier, t + 1,
                                    {sid: cap[1:] + (market.capacity(j, t + q),)
                                     for j, (sid, cap) in enumerate(sorted(caps.items()))})
            extension = {s.id: market.capacity(j, t + q) for j, s in enumerate(market.suppliers)}
            post = posterior_graph(graph, following, extension)
            post_rep = audit(matching, post, None, 0.0, options.posterior_groups)
            pm = compute_metrics(matching, post, post_rep)
            row.update(_prefixed("post_", {k: getattr(pm, k) for k in
                                           ("bp_count", "bg_count", "bp_per_order", "bg_per_order", "participants_in_bp")}))
        for s in options.switching_costs:
            srep = audit(matching, graph, combined, s, options.groups and combined is not None)
            row[f"bp_s{s:g}"] = len(srep.pairs)
            row[f"bg_s{s:g}"] = len(srep.groups)
        report.add(row)
        if records is not None:
            records.append(PeriodRecord(t, graph, matching))
        ledger.commit(matching)
        matched = set(matching.accepted)
        pool = [o for o in pool if o.id not in matched]
        ledger.advance()
    return report


def run_matching_instances(
    scenario: MarketScenario,
    solvers: Sequence[str],
    seeds: Sequence[int],
    options: MatchingOptions = MatchingOptions(),
) -> RunReport:
    report = RunReport("match", provenance=provenance(seeds[0] if seeds else 0,
                                                      {"scenario": scenario.to_dict(), "solvers": list(solvers),
                                                       "seeds": list(seeds)}))
    for solver in solvers:
        for r in run_instances(_matching_instance, seeds, scenario, solver, options):
            report.extend(r)
    return report


def _matching_instance(scenario: MarketScenario, solver: str, options: MatchingOptions, seed: int) -> RunReport:
    return run_periodic_matching(scenario, solver, None, seed, options)


def instance_impact(report: RunReport, solver: str) -> dict[int, float]:
    """Total utility over total maximum-weight utility, per instance."""
    num: dict[int, float] = {}
    den: dict[int, float] = {}
    for r in report.rows:
        if r["solver"] == solver:
            num[r["instance"]] = num.get(r["instance"], 0.0) + r["total_utility"]
            den[r["instance"]] = den.get(r["instance"], 0.0) + r["mw_utility"]
    return {k: impact_of_stability(num[k], den[k]) for k in sorted(num)}


def instance_totals(report: RunReport, solver: str, metric: str) -> dict[int, float]:
    out: dict[int, float] = {}
    for r in report.rows:
        if r["solver"] == solver:
            out[r["instance"]] = out.get(r["instance"], 0.0) + r[metric]
    return out


def switching_cost_sweep(
    scenario: MarketScenario,
    seeds: Sequence[int],
    costs: Sequence[float] = tuple(round(0.1 * k, 1) for k in range(11)),
    solver: str = "mw",
) -> RunReport:
    """Blocking pairs and groups of each period's matching as the switching cost grows."""
    report = RunReport("switching", provenance=provenance(seeds[0] if seeds else 0,
                                                          {"scenario": scenario.to_dict(), "costs": list(costs)}))
    for seed in seeds:
        records: list[PeriodRecord] = []
        run_periodic_matching(scenario, solver, None, seed, MatchingOptions(groups=False, posterior=False),
                              records=records)
        for rec in records:
            combined = enumerate_combined(rec.graph) if rec.graph.contracts else None
            for s in costs:
                rep = audit(rec.matching, rec.graph, combined, s, combined is not None)
                report.add({"instance": seed, "solver": solver, "period": rec.period, "s": s,
                            "bp_count": len(rep.pairs), "bg_count": len(rep.groups)})
    return report


def sweep_knee(report: RunReport, metric: str = "bp_count") -> float:
    """Smallest switching cost that removes at least half of the zero-cost blocking count."""
    totals: dict[float, float] = {}
    for r in report.rows:
        totals[r["s"]] = totals.get(r["s"], 0.0) + r[metric]
    base = totals.get(0.0, 0.0)
    for s in sorted(totals):
        if totals[s] <= base / 2:
            return s
    return math.nan


# -- auction campaign ---------------------------------------------------------------

@dataclass(frozen=True)
class CampaignScenario:
    n_suppliers: int = 20
    min_machines: int = 1
    max_machines: int = 8
    attempts: int = 5000
    days: int = 7
    hours_per_day: tuple[float, float] = (2.0, 16.0)
    unit_band: tuple[float, float] = (0.3, 0.8)
    volume_range: tuple[float, float] = (20.0, 200.0)
    greediness: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    opening_discount: tuple[float, float] = (0.6, 1.0)
    max_rebids: int = 5
    fair_game_cap: int = 20000
    # empty: the coalition_size highest-rated suppliers collude
    coalition: tuple[int, ...] = ()
    coalition_size: int = 3
    entrant_machines: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_suppliers < 2 or not 1 <= self.min_machines <= self.max_machines:
            raise ConfigError("campaign needs >= 2 suppliers and a valid machine count range")
        if self.attempts < 1 or self.max_rebids < 1:
            raise ConfigError("attempts and rebids must be positive")
        if any(not 0 <= g <= 1 for g in self.greediness):
            raise ConfigError("greediness values must lie in [0, 1]")
        if self.coalition:
            if len(set(self.coalition)) < 2 or max(self.coalition) >= self.n_suppliers or min(self.coalition) < 0:
                raise ConfigError("coalition needs at least two distinct existing suppliers")
        elif not 2 <= self.coalition_size <= self.n_suppliers:
            raise ConfigError("coalition size must lie in [2, n_suppliers]")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> CampaignScenario:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown campaign keys {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


CAMPAIGN_PROCESSES = (Process.FDM, Process.SLA, Process.SLS_POLYMER)


def _campaign_machine(rng: np.random.Generator, mid: str, cs: CampaignScenario) -> Machine:
    proc = CAMPAIGN_PROCESSES[int(rng.choice(3, p=[0.6, 0.25, 0.15]))]
    mats = [m for m in PROCESS_MATERIALS[proc.value] if rng.random() < 0.6] or [PROCESS_MATERIALS[proc.value][0]]
    lo, hi = PROCESS_RESOLUTION[proc.value]
    avail = tuple(round(float(rng.uniform(*cs.hours_per_day)), 2) for _ in range(cs.days))
    a = round(float(rng.uniform(*cs.unit_band)), 4)
    band = (a, round(a * 1.25, 4))
    return Machine(mid, proc, frozenset(mats), (lo, hi), avail, band)


def campaign_suppliers(cs: CampaignScenario, seed: int) -> list[Supplier]:
    out = []
    for j in range(cs.n_suppliers):
        rng = stream(seed, CAMPAIGN_STREAM, j, 0)
        n = int(rng.integers(cs.min_machines, cs.max_machines + 1))
        machines = tuple(_campaign_machine(rng, f"s{j:02d}-m{k}", cs) for k in range(n))
        out.append(Supplier(f"s{j:02d}", round(float(rng.uniform(3.5, 5.0)), 1), machines))
    return out


def entrant(cs: CampaignScenario, seed: int) -> Supplier:
    rng = stream(seed, CAMPAIGN_STREAM, cs.n_suppliers, 0)
    machines = tuple(_campaign_machine(rng, f"big-m{k}", cs) for k in range(cs.entrant_machines))
    return Supplier("big", 5.0, machines)


def coalition_members(cs: CampaignScenario, suppliers: Sequence[Supplier]) -> tuple[int, ...]:
    if cs.coalition:
        return cs.coalition
    ranked = sorted(range(len(suppliers)), key=lambda k: (-suppliers[k].rating, suppliers[k].id))
    return tuple(sorted(ranked[: cs.coalition_size]))


def merge_coalition(suppliers: Sequence[Supplier], members: Sequence[int]) -> list[Supplier]:
    """Members register as the highest-rated member with all their machines."""
    group = [suppliers[k] for k in members]
    head = max(group, key=lambda s: (s.rating, s.id))
    merged = Supplier(head.id, head.rating, tuple(m for s in group for m in s.machines))
    return [merged if s is head else s for s in suppliers if s not in group or s is head]


@dataclass(frozen=True)
class Attempt:
    request: BidRequest
    discount: float
    greediness: float


def campaign_attempt(cs: CampaignScenario, seed: int, k: int) -> Attempt:
    rng = stream(seed, CAMPAIGN_STREAM, k, 1)
    proc = CAMPAIGN_PROCESSES[int(rng.choice(3, p=[0.6, 0.25, 0.15]))]
    mats = PROCESS_MATERIALS[proc.value]
    lo, hi = PROCESS_RESOLUTION[proc.value]
    volume = round(float(rng.uniform(*cs.volume_range)), 2)
    hours = round(volume / 10.0, 2)
    order = Order(f"a{k:05d}", volume, {proc.value: hours}, mats[int(rng.integers(len(mats)))], proc,
                  round(float(rng.uniform(lo, hi)), 2), 0, 7)
    req = BidRequest(order, round(float(rng.uniform(3.0, 4.5)), 1), None, cs.max_rebids, int(rng.integers(2, 8)))
    return Attempt(req, float(rng.uniform(*cs.opening_discount)), float(rng.uniform(0, 1)))


def _play(
    attempt: Attempt, suppliers: Sequence[Supplier], greediness: float, rng: np.random.Generator,
) -> tuple[QualifiedSet, Any]:
    qs = filter_suppliers(attempt.request, suppliers)
    if qs.n == 0:
        return qs, None
    bid = attempt.discount * recommend_bid(qs, greediness)
    return qs, rebid_loop(attempt.request.with_bid(max(bid, 1e-6)), qs, IncrementPolicy(0.1), rng)


def _fresh(suppliers: Sequence[Supplier]) -> list[Supplier]:
    return [Supplier(s.id, s.rating, s.machines, s.size_class, s.location) for s in suppliers]


def simulate_campaign(
    cs: CampaignScenario, suppliers: Sequence[Supplier], seed: int, greediness: float | None = None,
) -> dict[str, Any]:
    """Stream ``cs.attempts`` bid attempts; ``greediness`` None uses each designer's own index."""
    suppliers = _fresh(suppliers)
    rng = stream(seed, AUCTION_STREAM, 0, 0)
    wins = {s.id: 0 for s in suppliers}
    first = {s.id: 0 for s in suppliers}
    expected = {s.id: 0.0 for s in suppliers}
    variance = {s.id: 0.0 for s in suppliers}
    delight, margins, successes, qualified = [], [], 0, 0
    for k in range(cs.attempts):
        att = campaign_attempt(cs, seed, k)
        g = att.greediness if greediness is None else greediness
        qs, out = _play(att, suppliers, g, rng)
        if out is None:
            continue
        qualified += 1
        p = 1.0 / qs.n
        for s, _ in qs.entries:
            expected[s.id] += p
            variance[s.id] += p * (1 - p)
        if out.first_supplier_id is not None:
            first[out.first_supplier_id] += 1
        if out.won:
            successes += 1
            wins[out.supplier_id] += 1
            delight.append(out.designer_delight)
            margins.append(out.margin)
    return {
        "attempts": cs.attempts,
        "qualified": qualified,
        "success_rate": successes / cs.attempts,
        "designer_delight": float(np.mean(delight)) if delight else math.nan,
        "platform_margin": float(np.mean(margins)) if margins else math.nan,
        "wins": wins,
        "first_round": first,
        "first_round_expected": expected,
        "first_round_variance": variance,
    }


def fair_game_attempts(cs: CampaignScenario, suppliers: Sequence[Supplier], seed: int, competitive: bool) -> int:
    """Attempts until every supplier has won an order (capped at ``cs.fair_game_cap``)."""
    suppliers = _fresh(suppliers)
    rng = stream(seed, AUCTION_STREAM, 1, int(competitive))
    pending = {s.id for s in suppliers}
    for k in range(cs.fair_game_cap):
        att = campaign_attempt(cs, seed, k)
        qs = filter_suppliers(att.request, suppliers)
        if qs.n == 0:
            continue
        bid = att.discount * recommend_bid(qs, att.greediness)
        if competitive:
            out = competitive_allocate(qs, bid)
            bid_out = out
            for _ in range(cs.max_rebids - 1):
                if bid_out.won:
                    break
                bid = IncrementPolicy(0.1)(0, bid, qs)
                bid_out = competitive_allocate(qs, bid)
            out = bid_out
        else:
            out = rebid_loop(att.request.with_bid(max(bid, 1e-6)), qs, IncrementPolicy(0.1), rng)
        if out.won:
            pending.discard(out.supplier_id)
            if not pending:
                return k + 1
    return cs.fair_game_cap


def run_auction_campaign(cs: CampaignScenario, seeds: Sequence[int] | None = None) -> RunReport:
    """Rows per seed and experiment: base market, greediness sweep, entrant, coalition, fair game."""
    seeds = list(seeds) if seeds is not None else [cs.seed]
    report = RunReport("auction", provenance=provenance(seeds[0], {"campaign": cs.to_dict(), "seeds": seeds}))
    for seed in seeds:
        suppliers = campaign_suppliers(cs, seed)
        base = simulate_campaign(cs, suppliers, seed)
        sd = {k: math.sqrt(v) for k, v in base["first_round_variance"].items()}
        worst = max(
            (abs(base["first_round"][s] - base["first_round_expected"][s]) / sd[s] if sd[s] > 0 else 0.0)
            for s in base["first_round"]
        )
        report.add({"instance": seed, "experiment": "base", "value": math.nan,
                    "success_rate": base["success_rate"], "designer_delight": base["designer_delight"],
                    "platform_margin": base["platform_margin"], "uniformity_max_z": worst,
                    "share": math.nan, "attempts_to_fair": math.nan})
        for g in cs.greediness:
            res = simulate_campaign(cs, suppliers, seed, g)
            report.add({"instance": seed, "experiment": "greediness", "value": g,
                        "success_rate": res["success_rate"], "designer_delight": res["designer_delight"],
                        "platform_margin": res["platform_margin"], "uniformity_max_z": math.nan,
                        "share": math.nan, "attempts_to_fair": math.nan})
        res = simulate_campaign(cs, [*suppliers, entrant(cs, seed)], seed)
        report.add({"instance": seed, "experiment": "entrant", "value": float(cs.entrant_machines),
                    "success_rate": res["success_rate"], "designer_delight": res["designer_delight"],
                    "platform_margin": res["platform_margin"], "uniformity_max_z": math.nan,
                    "share": res["wins"]["big"] / max(sum(res["wins"].values()), 1), "attempts_to_fair": math.nan})
        total = max(sum(base["wins"].values()), 1)
        members = coalition_members(cs, suppliers)
        before = sum(base["wins"][suppliers[k].id] for k in members) / total
        merged = merge_coalition(suppliers, members)
        head = max((suppliers[k] for k in members), key=lambda s: (s.rating, s.id)).id
        res = simulate_campaign(cs, merged, seed)
        after = res["wins"][head] / max(sum(res["wins"].values()), 1)
        for label, share in (("coalition_before", before), ("coalition_after", after)):
            report.add({"instance": seed, "experiment": label, "value": float(len(members)),
                        "success_rate": math.nan, "designer_delight": math.nan, "platform_margin": math.nan,
                        "uniformity_max_z": math.nan, "share": share, "attempts_to_fair": math.nan})
        for label, comp in (("fair_game_auction", False), ("fair_game_competitive", True)):
            report.add({"instance": seed, "experiment": label, "value": math.nan,
                        "success_rate": math.nan, "designer_delight": math.nan, "platform_margin": math.nan,
                        "uniformity_max_z": math.nan, "share": math.nan,
                        "attempts_to_fair": float(fair_game_attempts(cs, suppliers, seed, comp))})
    return report


# -- defection -------------------------------------------------------------------

def defection_round(
    graph: ContractGraph, matching: Matching, known: Callable[[str], set[str] | None],
) -> tuple[Matching, set[str]]:
    """One final proposal round on top of ``matching``.

    Each order proposes its best known contract that strictly beats what it
    holds; suppliers keep their choice among held and proposed contracts.
    ``known(order_id)`` gives the suppliers an order may approach (None = all).
    """
    proposals: dict[str, list] = {}
    for oid in graph.order_ids:
        held = matching.contract_for(oid)
        allowed = known(oid)
        for c in graph.order_ranking(oid):
            if held is not None and not c.order_utility > held.order_utility:
                break
            if allowed is not None and c.supplier_id not in allowed:
                continue
            if held is not None and c.supplier_id == held.supplier_id:
                continue
            proposals.setdefault(c.supplier_id, []).append(c)
            break
    offered = {c.key for cs in proposals.values() for c in cs}
    kept = {}
    for sid in graph.supplier_ids:
        held = matching.supplier_contracts(sid)
        kept[sid] = choice(held + proposals[sid], graph.capacities[sid]) if sid in proposals else held
    defectors = {c.order_id for cs in kept.values() for c in cs if c.key in offered}
    final = Matching()
    for sid in graph.supplier_ids:
        for c in kept[sid]:
            # a defecting order walks away from its original contract
            if c.order_id in defectors and c.key not in offered:
                continue
            final.add(c)
    return final, defectors


def run_defection_experiment(
    scenario: MarketScenario, access: str, periods: int | None = None, seed: int | None = None,
) -> RunReport:
    """Maximum-weight allocation each period, followed by one defection round under ``access``."""
    if access not in ("complete", "restricted"):
        raise ConfigError(f"access must be complete or restricted, got {access!r}")
    market = Market(scenario, seed)
    seed = market.seed
    periods = scenario.periods if periods is None else periods
    quantifier = ProfileQuantifier(scenario.max_contracts)
    ledger = CapacityLedger(market)
    history: dict[int, set[str]] = {}
    report = RunReport("defect", provenance=provenance(seed, {"scenario": scenario.to_dict(), "access": access}))
    pool: list[Order] = []
    for t in range(periods):
        pool = [o for o in pool if o.due_period - t >= 1] + list(market.arrivals(t))
        caps = ledger.residual()
        graph = build_graph(pool, market.suppliers, quantifier, t, caps)
        mw = solve_mw(graph)

        def known(oid: str) -> set[str] | None:
            return None if access == "complete" else history.get(market.client_of(oid), set())

        realized, defectors = defection_round(graph, mw, known)
        check_matching(realized, caps)
        report.add({"instance": seed, "access": access, "period": t, "pool": len(pool),
                    "mw_utility": mw.total_utility(), "realized_utility": realized.total_utility(),
                    "utility_ratio": impact_of_stability(realized.total_utility(), mw.total_utility()),
                    "defectors": len(defectors), "matched_mw": len(mw),
                    "defector_fraction": len(defectors) / len(mw) if len(mw) else 0.0})
        ledger.commit(realized)
        for c in realized.contracts():
            history.setdefault(market.client_of(c.order_id), set()).add(c.supplier_id)
        matched = set(realized.accepted)
        pool = [o for o in pool if o.id not in matched]
        ledger.advance()
    return report


def realized_ratio(report: RunReport, key: str = "realized_utility", reference: str = "mw_utility") -> float:
    num = sum(r[key] for r in report.rows)
    den = sum(r[reference] for r in report.rows)
    return impact_of_stability(num, den)
