"""Multi-attribute expected utility of contracts for orders and suppliers."""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Literal, TypeVar

import numpy as np

from .errors import (
    ConfigError,
    InvalidRangeError,
    MissingAttributeError,
    UnknownLabelError,
)

CurveKind = Literal["quadratic", "categorical", "monotone_table"]

EARTH_RADIUS_MILES = 3958.8

T = TypeVar("T")


def normalize(x: float, lo: float, hi: float) -> float:
    if not lo < hi:
        raise InvalidRangeError(f"empty range [{lo}, {hi}]")
    return min(1.0, max(0.0, (x - lo) / (hi - lo)))


def _clip01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


@dataclass(frozen=True)
class UtilityCurve:
    """Single-attribute utility function.

    ``quadratic`` evaluates ``a*x**2 + b*x + c`` on the min-max normalized
    input, ``categorical`` looks a label up, ``monotone_table`` linearly
    interpolates ``(raw_x, u)`` points. Outputs are clamped to [0, 1].
    """

    kind: CurveKind
    coefficients: tuple[float, ...] = ()
    input_range: tuple[float, float] | None = None
    labels: Mapping[str, float] = field(default_factory=dict)
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "quadratic":
            if len(self.coefficients) != 3:
                raise ConfigError("quadratic curve needs three coefficients")
            if self.input_range is None or not self.input_range[0] < self.input_range[1]:
                raise InvalidRangeError(f"bad input range {self.input_range}")
        elif self.kind == "categorical":
            if not self.labels:
                raise ConfigError("categorical curve needs labels")
            for label, value in self.labels.items():
                if not 0.0 <= value <= 1.0:
                    raise ConfigError(f"categorical value for {label!r} outside [0, 1]")
        elif self.kind == "monotone_table":
            xs = [p[0] for p in self.table]
            if len(xs) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
                raise ConfigError("monotone_table needs >= 2 strictly increasing x points")
        else:
            raise ConfigError(f"unknown curve kind {self.kind!r}")

    @classmethod
    def quadratic(cls, a: float, b: float, c: float, lo: float, hi: float) -> UtilityCurve:
        return cls("quadratic", (a, b, c), (lo, hi))

    @classmethod
    def categorical(cls, labels: Mapping[str, float]) -> UtilityCurve:
        return cls("categorical", labels=dict(labels))

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> UtilityCurve:
        kind = doc.get("kind")
        if kind == "quadratic":
            lo, hi = doc["range"]
            return cls("quadratic", tuple(float(v) for v in doc["coefficients"]), (float(lo), float(hi)))
        if kind == "categorical":
            return cls("categorical", labels={str(k): float(v) for k, v in doc["values"].items()})
        if kind == "monotone_table":
            return cls("monotone_table", table=tuple((float(x), float(u)) for x, u in doc["points"]))
        raise ConfigError(f"unknown curve kind {kind!r}")

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "quadratic":
            assert self.input_range is not None
            return {"kind": "quadratic", "coefficients": list(self.coefficients), "range": list(self.input_range)}
        if self.kind == "categorical":
            return {"kind": "categorical", "values": dict(self.labels)}
        return {"kind": "monotone_table", "points": [list(p) for p in self.table]}


def eval_curve(curve: UtilityCurve, raw_value: Any) -> float:
    if curve.kind == "categorical":
        try:
            return _clip01(float(curve.labels[str(raw_value)]))
        except KeyError:
            raise UnknownLabelError(f"label {raw_value!r} not in curve") from None
    if curve.kind == "quadratic":
        assert curve.input_range is not None
        lo, hi = curve.input_range
        x = normalize(float(raw_value), lo, hi)
        a, b, c = curve.coefficients
        return _clip01(a * x * x + b * x + c)
    xs = [p[0] for p in curve.table]
    us = [p[1] for p in curve.table]
    return _clip01(float(np.interp(float(raw_value), xs, us)))


@dataclass(frozen=True)
class UtilityProfile:
    """Additive multi-attribute utility: ``sum(w * curve(attribute))``."""

    terms: tuple[tuple[float, UtilityCurve, str], ...]

    def __post_init__(self) -> None:
        if not self.terms:
            raise ConfigError("profile needs at least one weighted curve")
        weights = [w for w, _, _ in self.terms]
        if any(w < 0 for w in weights):
            raise ConfigError("profile weights must be non-negative")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError(f"profile weights sum to {sum(weights)}, expected 1")

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(attr for _, _, attr in self.terms)

    @classmethod
    def from_dict(cls, doc: Sequence[Mapping[str, Any]] | Mapping[str, Any]) -> UtilityProfile:
        items = doc["curves"] if isinstance(doc, Mapping) else doc
        return cls(
            tuple(
                (float(item["weight"]), UtilityCurve.from_dict(item["curve"]), str(item["attribute"]))
                for item in items
            )
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "curves": [
                {"weight": w, "curve": curve.to_dict(), "attribute": attr}
                for w, curve, attr in self.terms
            ]
        }


@dataclass(frozen=True)
class ContractTerms:
    order_id: str
    supplier_id: str
    price: float
    due_period: int
    material: str
    process: str
    resolution: float

    def __post_init__(self) -> None:
        if not self.price > 0:
            raise ConfigError(f"contract price must be positive, got {self.price}")


def _attribute(name: str, terms: ContractTerms | None, context: Mapping[str, Any]) -> Any:
    if name in context:
        return context[name]
    if terms is not None and hasattr(terms, name):
        return getattr(terms, name)
    raise MissingAttributeError(f"attribute {name!r} not derivable from terms or context")


def contract_utility(
    profile: UtilityProfile,
    terms: ContractTerms | None,
    context: Mapping[str, Any] | None = None,
) -> float:
    """Weighted sum of curve values; attributes come from ``context`` first, then ``terms``."""
    context = context or {}
    total = 0.0
    for weight, curve, attr in profile.terms:
        total += weight * eval_curve(curve, _attribute(attr, terms, context))
    return _clip01(total)


def _default_key(contract: Any) -> tuple[Any, ...]:
    return (contract.order_id, contract.supplier_id, contract.price)


def rank_contracts(
    utilities: Iterable[tuple[T, float]],
    key: Callable[[T], tuple[Any, ...]] = _default_key,
) -> list[T]:
    """Descending utility; ties by ascending (order id, supplier id, price)."""
    return [c for c, _ in sorted(utilities, key=lambda cu: (-cu[1], key(cu[0])))]


def haversine_miles(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(h)))


# Curves of the illustrative order/supplier pair used to calibrate the
# normalization convention; the scenario generator perturbs these.
ORDER_DISTANCE_CURVE = UtilityCurve.quadratic(0.595, -1.516, 0.925, 50.0, 500.0)
ORDER_SIZE_CURVE = UtilityCurve.categorical({"large": 1.0, "medium": 0.6, "small": 0.3})
ORDER_RATING_CURVE = UtilityCurve.quadratic(-0.219, 1.225, -0.005, 1.0, 5.0)
ORDER_PRICE_CURVE = UtilityCurve.quadratic(0.922, -1.962, 1.033, 640.0, 880.0)
SUPPLIER_MATERIAL_CURVE = UtilityCurve.categorical({"aluminum": 1.0, "titanium": 0.7, "steel": 0.3})
SUPPLIER_URGENCY_CURVE = UtilityCurve.quadratic(-0.240, 1.329, -0.048, 1.0, 8.0)
SUPPLIER_REVENUE_CURVE = UtilityCurve.quadratic(-0.444, 1.401, 0.032, 150.0, 1600.0)

EXAMPLE_ORDER_PROFILE = UtilityProfile(
    (
        (0.2, ORDER_DISTANCE_CURVE, "distance"),
        (0.1, ORDER_SIZE_CURVE, "size"),
        (0.3, ORDER_RATING_CURVE, "rating"),
        (0.4, ORDER_PRICE_CURVE, "price"),
    )
)
EXAMPLE_SUPPLIER_PROFILE = UtilityProfile(
    (
        (0.2, SUPPLIER_MATERIAL_CURVE, "material"),
        (0.3, SUPPLIER_URGENCY_CURVE, "urgency"),
        (0.5, SUPPLIER_REVENUE_CURVE, "revenue"),
    )
)
