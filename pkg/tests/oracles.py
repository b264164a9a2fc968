"""Slow, independent reference implementations used only by the tests.

Nothing here imports the solvers under test; each oracle works from the raw
instance data by exhaustive enumeration.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence

import numpy as np


def enumerate_binary(objective, sense, rows):
    """Best value over all 2^V assignments; rows are (dense coeffs, relation, rhs)."""
    n = len(objective)
    best = None
    for bits in itertools.product((0, 1), repeat=n):
        ok = True
        for coeffs, rel, rhs in rows:
            lhs = sum(a * b for a, b in zip(coeffs, bits))
            if rel == "<=" and lhs > rhs + 1e-9:
                ok = False
                break
            if rel == "=" and abs(lhs - rhs) > 1e-9:
                ok = False
                break
        if not ok:
            continue
        val = sum(c * b for c, b in zip(objective, bits))
        if best is None or (val > best if sense == "max" else val < best):
            best = val
    return best


def fits(caps: Sequence[float], jobs) -> bool:
    """Cumulative due-date capacity test written out period by period."""
    for q in range(1, len(caps) + 1):
        need = sum(h for h, d in jobs if d <= q)
        if need > sum(caps[:q]) + 1e-9:
            return False
    return True


def best_subset(items, caps):
    """Exhaustive single-supplier choice: items are (key, hours, due, utility)."""
    best_val, best_keys = 0.0, frozenset()
    for r in range(len(items) + 1):
        for combo in itertools.combinations(items, r):
            if fits(caps, [(h, d) for _, h, d, _ in combo]):
                val = sum(u for *_, u in combo)
                if val > best_val + 1e-12:
                    best_val, best_keys = val, frozenset(k for k, *_ in combo)
    return best_val, best_keys


def all_matchings(orders, contracts_by_order, caps_by_supplier):
    """Yield every feasible matching as a dict order -> contract (or absent)."""
    options = [[None] + list(contracts_by_order.get(o, [])) for o in orders]
    for pick in itertools.product(*options):
        chosen = [c for c in pick if c is not None]
        per_sup = {}
        for c in chosen:
            per_sup.setdefault(c.supplier_id, []).append((c.hours, c.due_period))
        if all(fits(caps_by_supplier[s], jobs) for s, jobs in per_sup.items()):
            yield {c.order_id: c for c in chosen}


def brute_force_mw(orders, contracts_by_order, caps_by_supplier) -> float:
    return max(
        sum(c.utility for c in m.values())
        for m in all_matchings(orders, contracts_by_order, caps_by_supplier)
    )


def combined_edges(contracts, caps_by_supplier):
    """Every capacity-feasible set of contracts with one supplier and distinct orders."""
    by_sup = {}
    for c in contracts:
        by_sup.setdefault(c.supplier_id, []).append(c)
    edges = []
    for sid, cs in sorted(by_sup.items()):
        orders = sorted({c.order_id for c in cs})
        per_order = {o: [c for c in cs if c.order_id == o] for o in orders}
        for r in range(1, len(orders) + 1):
            for subset in itertools.combinations(orders, r):
                for pick in itertools.product(*(per_order[o] for o in subset)):
                    if fits(caps_by_supplier[sid], [(c.hours, c.due_period) for c in pick]):
                        edges.append((sid, pick))
    return edges


def count_uncovered(matching, edges) -> int:
    """Blocking combined edges: the supplier strictly gains, no member is strictly
    worse off, and at least one member strictly gains or is unmatched."""
    sup_util = {}
    for c in matching.values():
        sup_util[c.supplier_id] = sup_util.get(c.supplier_id, 0.0) + c.supplier_utility
    count = 0
    for sid, pick in edges:
        if sup_util.get(sid, 0.0) >= sum(c.supplier_utility for c in pick) - 1e-12:
            continue
        worse = better = False
        for c in pick:
            held = matching.get(c.order_id)
            if held is None or c.order_utility > held.order_utility + 1e-12:
                better = True
            elif c.order_utility < held.order_utility - 1e-12:
                worse = True
        if better and not worse:
            count += 1
    return count


def brute_force_min_blocking(orders, contracts_by_order, caps_by_supplier) -> int:
    contracts = [c for o in orders for c in contracts_by_order.get(o, [])]
    edges = combined_edges(contracts, caps_by_supplier)
    return min(count_uncovered(m, edges) for m in all_matchings(orders, contracts_by_order, caps_by_supplier))


def central_fd_gradient(f, params: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(a: list[np.ndarray], b: list[np.ndarray]) -> float:
    worst = 0.0
    for x, y in zip(a, b):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), 1e-6)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


def binomial_band(n: int, p: float, k: float = 3.0) -> tuple[float, float]:
    mu = n * p
    sd = math.sqrt(n * p * (1 - p))
    return mu - k * sd, mu + k * sd


def fits_windows(caps: Sequence[float], jobs) -> bool:
    """Every interval [a, q] of the timeline, jobs are (hours, due, release)."""
    n = len(caps)
    for a in range(1, n + 1):
        for q in range(a, n + 1):
            need = sum(h for h, d, r in jobs if r >= a and d <= q)
            if need > sum(caps[a - 1 : q]) + 1e-9:
                return False
    return True


def _jobs(cs, release):
    return [(c.hours, c.due_period, (release or {}).get(c.order_id, 1)) for c in cs]


def slow_blocking_pairs(matching, contracts, caps_by_supplier, s=0.0, release=None):
    """Keys of contracts (i, j, c) that block, re-derived by subset enumeration."""
    out = set()
    for c in contracts:
        held = matching.get(c.order_id)
        if held is not None and held.key == c.key:
            continue
        if held is not None and not c.order_utility > (1 + s) * held.order_utility + 1e-12:
            continue
        current = [x for x in matching.values() if x.supplier_id == c.supplier_id]
        total = sum(x.supplier_utility for x in current)
        others = [x for x in current if x.order_id != c.order_id]
        best = -1.0
        for r in range(len(others) + 1):
            for combo in itertools.combinations(others, r):
                pick = list(combo) + [c]
                if fits_windows(caps_by_supplier[c.supplier_id], _jobs(pick, release)):
                    best = max(best, sum(x.supplier_utility for x in pick))
        if best > (1 + s) * total + 1e-12:
            out.add(c.key)
    return out


def slow_blocking_groups(matching, contracts, caps_by_supplier, s=0.0, release=None):
    out = set()
    by_sup = {}
    for c in contracts:
        by_sup.setdefault(c.supplier_id, []).append(c)
    for sid, cs in sorted(by_sup.items()):
        orders = sorted({c.order_id for c in cs})
        current = [x for x in matching.values() if x.supplier_id == sid]
        total = sum(x.supplier_utility for x in current)
        for r in range(1, len(orders) + 1):
            for subset in itertools.combinations(orders, r):
                options = [[c for c in cs if c.order_id == o] for o in subset]
                for pick in itertools.product(*options):
                    if not fits_windows(caps_by_supplier[sid], _jobs(pick, release)):
                        continue
                    if not sum(c.supplier_utility for c in pick) > (1 + s) * total + 1e-12:
                        continue
                    weak, strict = True, False
                    for c in pick:
                        held = matching.get(c.order_id)
                        if held is None:
                            strict = True
                        elif held.key != c.key:
                            if c.order_utility < (1 + s) * held.order_utility - 1e-12:
                                weak = False
                            elif c.order_utility > (1 + s) * held.order_utility + 1e-12:
                                strict = True
                    if weak and strict:
                        out.add((sid, tuple(c.key for c in pick)))
    return out
