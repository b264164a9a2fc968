"""Market entities, capability matching and cumulative-capacity accounting.

Capacity is tracked in 12-hour periods. Period indices passed to the
capacity helpers are 1-based and relative to the current period, so a job
with ``due_period=2`` may use the capacity of the first two periods.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from itertools import accumulate
from typing import Any

from .errors import ConfigError, HorizonError
from .utility import ContractTerms, UtilityProfile

PERIOD_HOURS = 12.0


class Process(str, Enum):
    FDM = "FDM"
    SLA = "SLA"
    SLS_POLYMER = "SLS-polymer"
    SLS_METAL = "SLS-metal"
    MATERIAL_JETTING = "MaterialJetting"
    DLP = "DLP"
    MJP = "MJP"


class SizeClass(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


@dataclass(frozen=True)
class Machine:
    id: str
    process: Process
    materials: frozenset[str]
    resolution_range: tuple[float, float]
    capacity_by_period: tuple[float, ...]
    unit_threshold_band: tuple[float, float] = (1.0, 1.0)
    min_order_price: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "process", Process(self.process))
        object.__setattr__(self, "materials", frozenset(self.materials))
        object.__setattr__(self, "capacity_by_period", tuple(float(c) for c in self.capacity_by_period))
        lo, hi = self.resolution_range
        if lo > hi:
            raise ConfigError(f"machine {self.id}: resolution min {lo} > max {hi}")
        a, b = self.unit_threshold_band
        if a > b:
            raise ConfigError(f"machine {self.id}: threshold band lower {a} > upper {b}")
        if any(c < 0 for c in self.capacity_by_period):
            raise ConfigError(f"machine {self.id}: negative capacity")

    @property
    def horizon(self) -> int:
        return len(self.capacity_by_period)


@dataclass
class SuccessCounters:
    first_round_selections: int = 0
    first_round_wins: int = 0

    def rate(self) -> float:
        # Laplace prior keeps never-selected suppliers at an equal 0.5.
        return (self.first_round_wins + 1) / (self.first_round_selections + 2)


@dataclass
class Supplier:
    id: str
    rating: float
    machines: tuple[Machine, ...]
    size_class: SizeClass = SizeClass.MEDIUM
    location: tuple[float, float] = (0.0, 0.0)
    success_counters: SuccessCounters = field(default_factory=SuccessCounters)
    profile: UtilityProfile | None = None

    def __post_init__(self) -> None:
        self.machines = tuple(self.machines)
        self.size_class = SizeClass(self.size_class)
        if not 1.0 <= self.rating <= 5.0:
            raise ConfigError(f"supplier {self.id}: rating {self.rating} outside [1, 5]")
        if not self.machines:
            raise ConfigError(f"supplier {self.id}: needs at least one machine")
        c = self.success_counters
        if c.first_round_selections < 0 or c.first_round_wins < 0 or c.first_round_wins > c.first_round_selections:
            raise ConfigError(f"supplier {self.id}: inconsistent success counters")

    @property
    def machine(self) -> Machine:
        """The first machine; single-machine suppliers are the norm in matching."""
        return self.machines[0]


@dataclass(frozen=True)
class Order:
    id: str
    part_volume: float
    production_time_by_process: Mapping[str, float]
    material: str
    process: Process
    resolution: float
    arrival_period: int
    due_period: int
    location: tuple[float, float] = (0.0, 0.0)
    size_preference: SizeClass | None = None
    profile: UtilityProfile | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "process", Process(self.process))
        if self.size_preference is not None:
            object.__setattr__(self, "size_preference", SizeClass(self.size_preference))
        times = {Process(k).value: float(v) for k, v in self.production_time_by_process.items()}
        object.__setattr__(self, "production_time_by_process", times)
        if not self.part_volume > 0:
            raise ConfigError(f"order {self.id}: part volume must be positive")
        if any(t <= 0 for t in times.values()):
            raise ConfigError(f"order {self.id}: production times must be positive")
        if not self.due_period > self.arrival_period:
            raise ConfigError(f"order {self.id}: due period must follow arrival period")

    def production_time(self, process: Process | str | None = None) -> float:
        key = Process(process or self.process).value
        if key in self.production_time_by_process:
            return self.production_time_by_process[key]
        return self.production_time_by_process[self.process.value]


@dataclass(frozen=True)
class Contract:
    """An (order, supplier, terms) triple with both sides' utilities."""

    terms: ContractTerms
    hours: float
    order_utility: float
    supplier_utility: float
    index: int = 0

    @property
    def order_id(self) -> str:
        return self.terms.order_id

    @property
    def supplier_id(self) -> str:
        return self.terms.supplier_id

    @property
    def price(self) -> float:
        return self.terms.price

    @property
    def due_period(self) -> int:
        return self.terms.due_period

    @property
    def utility(self) -> float:
        return self.order_utility + self.supplier_utility

    @property
    def key(self) -> tuple[str, str, float, int]:
        return (self.order_id, self.supplier_id, self.price, self.index)


@dataclass
class Matching:
    accepted: dict[str, Contract] = field(default_factory=dict)

    @classmethod
    def of(cls, contracts: Iterable[Contract]) -> Matching:
        m = cls()
        for c in contracts:
            m.add(c)
        return m

    def add(self, contract: Contract) -> None:
        if contract.order_id in self.accepted:
            raise ValueError(f"order {contract.order_id} already matched")
        self.accepted[contract.order_id] = contract

    def remove(self, order_id: str) -> Contract:
        return self.accepted.pop(order_id)

    def contract_for(self, order_id: str) -> Contract | None:
        return self.accepted.get(order_id)

    @property
    def by_supplier(self) -> dict[str, list[Contract]]:
        groups: dict[str, list[Contract]] = {}
        for c in sorted(self.accepted.values(), key=lambda c: c.key):
            groups.setdefault(c.supplier_id, []).append(c)
        return groups

    def supplier_contracts(self, supplier_id: str) -> list[Contract]:
        return self.by_supplier.get(supplier_id, [])

    def total_utility(self) -> float:
        return sum(c.utility for c in self.accepted.values())

    def __len__(self) -> int:
        return len(self.accepted)

    def contracts(self) -> list[Contract]:
        return sorted(self.accepted.values(), key=lambda c: c.key)


def capability_match(order: Order, machine: Machine) -> bool:
    lo, hi = machine.resolution_range
    return (
        machine.process == order.process
        and order.material in machine.materials
        and lo <= order.resolution <= hi
    )


def cumulative_capacity(machine: Machine | Sequence[float], upto_period: int) -> float:
    caps = machine.capacity_by_period if isinstance(machine, Machine) else tuple(machine)
    if upto_period < 0 or upto_period > len(caps):
        raise HorizonError(f"period {upto_period} outside horizon of {len(caps)}")
    return float(sum(caps[:upto_period]))


def cumulative_feasible(
    machine: Machine | Sequence[float],
    jobs: Iterable[tuple[float, int]],
) -> bool:
    """True iff for every period q the hours due by q fit in the capacity up to q."""
    caps = machine.capacity_by_period if isinstance(machine, Machine) else tuple(machine)
    horizon = len(caps)
    load = [0.0] * (horizon + 1)
    for hours, due in jobs:
        if due < 1 or due > horizon:
            raise HorizonError(f"due period {due} outside horizon of {horizon}")
        load[due] += hours
    cap_prefix = list(accumulate(caps, initial=0.0))
    due_load = 0.0
    for q in range(1, horizon + 1):
        due_load += load[q]
        if due_load > cap_prefix[q] + 1e-9:
            return False
    return True


def windowed_feasible(
    machine: Machine | Sequence[float],
    jobs: Iterable[tuple[float, int, int]],
) -> bool:
    """Like :func:`cumulative_feasible` but jobs (hours, due, release) may not start before ``release``.

    Checks every window that opens at a release period, which is exact for
    preemptive work on a single machine.
    """
    caps = machine.capacity_by_period if isinstance(machine, Machine) else tuple(machine)
    jobs = list(jobs)
    horizon = len(caps)
    for _, due, release in jobs:
        if due < 1 or due > horizon or release < 1 or release > due:
            raise HorizonError(f"window [{release}, {due}] outside horizon of {horizon}")
    cap_prefix = list(accumulate(caps, initial=0.0))
    for r in sorted({rel for _, _, rel in jobs}):
        for q in sorted({d for _, d, rel in jobs if rel >= r}):
            need = sum(h for h, d, rel in jobs if rel >= r and d <= q)
            if need > cap_prefix[q] - cap_prefix[r - 1] + 1e-9:
                return False
    return True


def check_matching(matching: Matching, capacities: Mapping[str, Sequence[float]]) -> None:
    """Raise AssertionError if a matching breaks the one-contract-per-order or capacity rules."""
    for oid, c in matching.accepted.items():
        assert c.order_id == oid, f"matching key {oid} holds contract for {c.order_id}"
    for sid, group in matching.by_supplier.items():
        jobs = [(c.hours, c.due_period) for c in group]
        assert cumulative_feasible(capacities[sid], jobs), f"supplier {sid} over capacity"


# -- JSON fixtures ------------------------------------------------------------

def machine_to_dict(m: Machine) -> dict[str, Any]:
    return {
        "id": m.id,
        "process": m.process.value,
        "materials": sorted(m.materials),
        "resolution_range": list(m.resolution_range),
        "capacity_by_period": list(m.capacity_by_period),
        "unit_threshold_band": list(m.unit_threshold_band),
        "min_order_price": m.min_order_price,
    }


def machine_from_dict(doc: Mapping[str, Any]) -> Machine:
    return Machine(
        id=str(doc["id"]),
        process=Process(doc["process"]),
        materials=frozenset(doc["materials"]),
        resolution_range=tuple(doc["resolution_range"]),  # type: ignore[arg-type]
        capacity_by_period=tuple(doc["capacity_by_period"]),
        unit_threshold_band=tuple(doc.get("unit_threshold_band", (1.0, 1.0))),  # type: ignore[arg-type]
        min_order_price=float(doc.get("min_order_price", 0.0)),
    )


def supplier_to_dict(s: Supplier) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "id": s.id,
        "rating": s.rating,
        "machines": [machine_to_dict(m) for m in s.machines],
        "size_class": s.size_class.value,
        "location": list(s.location),
        "success_counters": {
            "first_round_selections": s.success_counters.first_round_selections,
            "first_round_wins": s.success_counters.first_round_wins,
        },
    }
    if s.profile is not None:
        doc["profile"] = s.profile.to_dict()
    return doc


def supplier_from_dict(doc: Mapping[str, Any]) -> Supplier:
    counters = doc.get("success_counters", {})
    return Supplier(
        id=str(doc["id"]),
        rating=float(doc["rating"]),
        machines=tuple(machine_from_dict(m) for m in doc["machines"]),
        size_class=SizeClass(doc.get("size_class", "medium")),
        location=tuple(doc.get("location", (0.0, 0.0))),  # type: ignore[arg-type]
        success_counters=SuccessCounters(
            int(counters.get("first_round_selections", 0)), int(counters.get("first_round_wins", 0))
        ),
        profile=UtilityProfile.from_dict(doc["profile"]) if "profile" in doc else None,
    )


def order_to_dict(o: Order) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "id": o.id,
        "part_volume": o.part_volume,
        "production_time_by_process": dict(o.production_time_by_process),
        "material": o.material,
        "process": o.process.value,
        "resolution": o.resolution,
        "arrival_period": o.arrival_period,
        "due_period": o.due_period,
        "location": list(o.location),
        "size_preference": o.size_preference.value if o.size_preference else None,
    }
    if o.profile is not None:
        doc["profile"] = o.profile.to_dict()
    return doc


def order_from_dict(doc: Mapping[str, Any]) -> Order:
    return Order(
        id=str(doc["id"]),
        part_volume=float(doc["part_volume"]),
        production_time_by_process=dict(doc["production_time_by_process"]),
        material=str(doc["material"]),
        process=Process(doc["process"]),
        resolution=float(doc["resolution"]),
        arrival_period=int(doc["arrival_period"]),
        due_period=int(doc["due_period"]),
        location=tuple(doc.get("location", (0.0, 0.0))),  # type: ignore[arg-type]
        size_preference=SizeClass(doc["size_preference"]) if doc.get("size_preference") else None,
        profile=UtilityProfile.from_dict(doc["profile"]) if "profile" in doc else None,
    )
