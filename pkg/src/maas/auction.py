"""Name-your-own-price reverse auction.

Suppliers never compete on price with each other: a qualified supplier is
drawn at random and wins if any of its machines can meet the designer's bid.
Availability for the auction is read from ``Machine.capacity_by_period`` as
hours per day, and one day before delivery is reserved for shipping.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import Machine, Order, Supplier, capability_match
from .errors import ConfigError, NoSupplierError, PolicyViolationError

DEFAULT_MAX_REBIDS = 5
SHIPPING_DAYS = 1


class Modulation(str, Enum):
    RATING = "rating"
    AVAILABILITY = "availability"
    URGENCY = "urgency"


@dataclass(frozen=True)
class ModulationContext:
    """Ranges the modulated unit prices interpolate over."""

    rating_range: tuple[float, float] = (3.0, 5.0)
    availability_range: tuple[float, float] = (1.0, 16.0)
    days_range: tuple[float, float] = (2.0, 7.0)


@dataclass(frozen=True)
class BidRequest:
    order: Order
    min_rating: float
    bid: float | None = None
    max_rebids: int = DEFAULT_MAX_REBIDS
    delivery_days: int = 4

    def __post_init__(self) -> None:
        if self.bid is not None and not self.bid > 0:
            raise ConfigError(f"bid must be positive, got {self.bid}")
        if not 1.0 <= self.min_rating <= 5.0:
            raise ConfigError(f"min rating {self.min_rating} outside [1, 5]")
        if self.delivery_days < 1 + SHIPPING_DAYS:
            raise ConfigError("delivery needs at least one production day before shipping")

    def with_bid(self, bid: float) -> BidRequest:
        return BidRequest(self.order, self.min_rating, bid, self.max_rebids, self.delivery_days)


@dataclass(frozen=True)
class QualifiedMachine:
    machine: Machine
    price: float


@dataclass
class QualifiedSet:
    entries: list[tuple[Supplier, list[QualifiedMachine]]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def h(self) -> int:
        return sum(len(ms) for _, ms in self.entries)

    @property
    def prices(self) -> list[float]:
        return [qm.price for _, ms in self.entries for qm in ms]

    @property
    def market_value(self) -> float:
        return max(self.prices)


@dataclass(frozen=True)
class AuctionOutcome:
    won: bool
    supplier_id: str | None = None
    machine_id: str | None = None
    bid: float = 0.0
    threshold_price: float = 0.0
    rounds_used: int = 0
    rebids_used: int = 0
    designer_delight: float = math.nan
    first_supplier_id: str | None = None

    @property
    def margin(self) -> float:
        return self.bid - self.threshold_price if self.won else 0.0


def usable_days(request: BidRequest) -> int:
    return request.delivery_days - SHIPPING_DAYS


def machine_availability(machine: Machine, days: int) -> list[float]:
    return list(machine.capacity_by_period[:days])


def _sqrt_interp(x: float, lo: float, hi: float, a: float, b: float) -> float:
    x = min(max(x, lo), hi)
    return a + (b - a) * (math.sqrt(x) - math.sqrt(lo)) / (math.sqrt(hi) - math.sqrt(lo))


def _inv_sqrt_interp(x: float, lo: float, hi: float, a: float, b: float) -> float:
    # b at the low end of x, a at the high end
    lo = max(lo, 1e-9)
    x = min(max(x, lo), hi)
    return a + (b - a) * (x ** -0.5 - hi ** -0.5) / (lo ** -0.5 - hi ** -0.5)


def unit_threshold_price(
    machine: Machine,
    modulation: Iterable[Modulation | str] = (),
    *,
    rating: float | None = None,
    availability: float | None = None,
    days: float | None = None,
    ctx: ModulationContext = ModulationContext(),
) -> float:
    a, b = machine.unit_threshold_band
    mods = {Modulation(m) for m in modulation}
    if not mods:
        return (a + b) / 2
    values = []
    if Modulation.RATING in mods:
        if rating is None:
            raise ConfigError("rating modulation needs the supplier rating")
        values.append(_sqrt_interp(rating, *ctx.rating_range, a, b))
    if Modulation.AVAILABILITY in mods:
        if availability is None:
            raise ConfigError("availability modulation needs the machine availability")
        values.append(_inv_sqrt_interp(availability, *ctx.availability_range, a, b))
    if Modulation.URGENCY in mods:
        if days is None:
            raise ConfigError("urgency modulation needs days before delivery")
        values.append(_inv_sqrt_interp(days, *ctx.days_range, a, b))
    return float(sum(values) / len(values))


def threshold_price(
    machine: Machine,
    order: Order,
    modulation: Iterable[Modulation | str] = (),
    *,
    rating: float | None = None,
    availability: float | None = None,
    days: float | None = None,
    ctx: ModulationContext = ModulationContext(),
) -> float:
    """Unit price times the part's material volume, floored at the machine's minimum order price."""
    thp = unit_threshold_price(machine, modulation, rating=rating, availability=availability, days=days, ctx=ctx)
    return max(thp * order.part_volume, machine.min_order_price)


def filter_suppliers(
    request: BidRequest,
    suppliers: Iterable[Supplier],
    modulation: Iterable[Modulation | str] = (),
    ctx: ModulationContext = ModulationContext(),
) -> QualifiedSet:
    order = request.order
    days = usable_days(request)
    modulation = tuple(modulation)
    qs = QualifiedSet()
    for supplier in suppliers:
        if not supplier.rating > request.min_rating:
            continue
        machines = []
        for machine in supplier.machines:
            if not capability_match(order, machine):
                continue
            avail = machine_availability(machine, days)
            if not sum(avail) > order.production_time(machine.process):
                continue
            price = threshold_price(
                machine, order, modulation,
                rating=supplier.rating,
                availability=sum(avail) / max(len(avail), 1),
                days=request.delivery_days,
                ctx=ctx,
            )
            machines.append(QualifiedMachine(machine, price))
        if machines:
            qs.entries.append((supplier, machines))
    return qs


def recommend_bid(qs: QualifiedSet, greediness: float) -> float:
    if not 0.0 <= greediness <= 1.0:
        raise ConfigError(f"greediness index {greediness} outside [0, 1]")
    if qs.h == 0:
        raise NoSupplierError("no qualifying machine to price the part")
    a, b = min(qs.prices), max(qs.prices)
    return a + (b - a) * math.sqrt(greediness)


def _best_machine(machines: Sequence[QualifiedMachine], bid: float) -> QualifiedMachine | None:
    # the supplier prints on its most expensive machine that still meets the bid
    meeting = [qm for qm in machines if bid > qm.price]
    if not meeting:
        return None
    return max(meeting, key=lambda qm: (qm.price, qm.machine.id))


def run_auction(request: BidRequest, qs: QualifiedSet, rng: np.random.Generator) -> AuctionOutcome:
    if request.bid is None:
        raise ConfigError("bid request has no bid")
    if qs.n == 0:
        raise NoSupplierError("no qualified supplier")
    bid = request.bid
    remaining = list(range(qs.n))
    rounds = 0
    first = None
    while remaining:
        rounds += 1
        if rounds == 1:
            k = remaining[int(rng.integers(len(remaining)))]
        else:
            weights = np.array([qs.entries[i][0].success_counters.rate() for i in remaining])
            k = remaining[int(rng.choice(len(remaining), p=weights / weights.sum()))]
        remaining.remove(k)
        supplier, machines = qs.entries[k]
        hit = _best_machine(machines, bid)
        if rounds == 1:
            first = supplier.id
            supplier.success_counters.first_round_selections += 1
            if hit is not None:
                supplier.success_counters.first_round_wins += 1
        if hit is not None:
            delight = 100.0 * (qs.market_value - bid) / qs.market_value
            return AuctionOutcome(True, supplier.id, hit.machine.id, bid, hit.price, rounds, 0, delight, first)
    return AuctionOutcome(False, bid=bid, rounds_used=rounds, first_supplier_id=first)


RebidPolicy = Callable[[int, float, QualifiedSet], float]


@dataclass(frozen=True)
class IncrementPolicy:
    """Raise the bid by a share of the qualifying price spread (at least 1% of the bid)."""

    step: float = 0.25

    def __call__(self, attempt: int, previous: float, qs: QualifiedSet) -> float:
        spread = max(qs.prices) - min(qs.prices)
        return previous + max(self.step * spread, 0.01 * previous)


def rebid_loop(
    request: BidRequest,
    qs: QualifiedSet,
    policy: RebidPolicy,
    rng: np.random.Generator,
) -> AuctionOutcome:
    """Bid, and rebid with strictly higher values until a win or ``max_rebids`` attempts."""
    if request.bid is None:
        raise ConfigError("bid request has no opening bid")
    bid = request.bid
    outcome = AuctionOutcome(False)
    for attempt in range(request.max_rebids):
        if attempt > 0:
            nxt = policy(attempt, bid, qs)
            if not nxt > bid:
                raise PolicyViolationError(f"rebid {nxt} does not exceed previous bid {bid}")
            bid = nxt
        outcome = run_auction(request.with_bid(bid), qs, rng)
        if outcome.won:
            return _with_rebids(outcome, attempt)
    return _with_rebids(outcome, request.max_rebids - 1)


def _with_rebids(outcome: AuctionOutcome, rebids: int) -> AuctionOutcome:
    return AuctionOutcome(
        outcome.won, outcome.supplier_id, outcome.machine_id, outcome.bid, outcome.threshold_price,
        outcome.rounds_used, rebids, outcome.designer_delight, outcome.first_supplier_id,
    )


def competitive_allocate(qs: QualifiedSet, bid: float) -> AuctionOutcome:
    """Direct price competition: the cheapest qualifying machine takes the order if it meets the bid."""
    if qs.n == 0:
        raise NoSupplierError("no qualified supplier")
    best = min(
        ((qm.price, s.id, qm.machine.id) for s, ms in qs.entries for qm in ms),
    )
    price, sid, mid = best
    if not bid > price:
        return AuctionOutcome(False, bid=bid, rounds_used=1)
    delight = 100.0 * (qs.market_value - bid) / qs.market_value
    return AuctionOutcome(True, sid, mid, bid, price, 1, 0, delight)
