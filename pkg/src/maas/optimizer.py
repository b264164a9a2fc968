"""Exact solver for small 0-1 linear programs.

The native solver is a depth-first branch-and-bound. Variables are branched in
descending ``|objective|`` order (ties by index); the bound at each node is a
sum of fractional-knapsack relaxations, one per constraint row, over a
partition of the free variables. Large programs can be delegated to HiGHS
through :func:`scipy.optimize.milp` with ``method="highs"``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import MalformedProgramError

Relation = Literal["<=", "="]
Sense = Literal["max", "min"]
Method = Literal["auto", "bnb", "highs"]

_EPS = 1e-9
# Programs at or below this size go to the native branch-and-bound under "auto".
AUTO_BNB_LIMIT = 24


@dataclass(frozen=True)
class Row:
    indices: tuple[int, ...]
    coeffs: tuple[float, ...]
    relation: Relation
    rhs: float


@dataclass
class BinaryProgram:
    objective: Sequence[float]
    sense: Sense = "max"
    constraints: list[Row] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.objective = tuple(float(c) for c in self.objective)
        if self.sense not in ("max", "min"):
            raise MalformedProgramError(f"unknown sense {self.sense!r}")
        if not all(math.isfinite(c) for c in self.objective):
            raise MalformedProgramError("objective has non-finite coefficients")
        rows, self.constraints = list(self.constraints), []
        for row in rows:
            if isinstance(row, Row):
                self._check_row(row)
                self.constraints.append(row)
            else:
                self.add_constraint(*row)

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    def add_constraint(
        self,
        coeffs: Sequence[float] | Mapping[int, float],
        relation: Relation,
        rhs: float,
    ) -> None:
        if isinstance(coeffs, Mapping):
            items = sorted((int(i), float(a)) for i, a in coeffs.items() if a != 0)
        else:
            if len(coeffs) != self.n_vars:
                raise MalformedProgramError(
                    f"constraint has {len(coeffs)} coefficients for {self.n_vars} variables"
                )
            items = [(i, float(a)) for i, a in enumerate(coeffs) if a != 0]
        row = Row(tuple(i for i, _ in items), tuple(a for _, a in items), relation, float(rhs))
        self._check_row(row)
        self.constraints.append(row)

    def _check_row(self, row: Row) -> None:
        if row.relation not in ("<=", "="):
            raise MalformedProgramError(f"unknown relation {row.relation!r}")
        if len(row.indices) != len(row.coeffs):
            raise MalformedProgramError("row index/coefficient length mismatch")
        if any(i < 0 or i >= self.n_vars for i in row.indices):
            raise MalformedProgramError("row references a variable outside the program")
        if not all(math.isfinite(a) for a in row.coeffs) or not math.isfinite(row.rhs):
            raise MalformedProgramError("row has non-finite coefficients")

    def value(self, assignment: Sequence[int]) -> float:
        return float(sum(c for c, x in zip(self.objective, assignment) if x))

    def is_feasible(self, assignment: Sequence[int]) -> bool:
        for row in self.constraints:
            lhs = sum(a for i, a in zip(row.indices, row.coeffs) if assignment[i])
            if row.relation == "<=" and lhs > row.rhs + _EPS:
                return False
            if row.relation == "=" and abs(lhs - row.rhs) > _EPS:
                return False
        return True


@dataclass(frozen=True)
class Solution:
    value: float
    assignment: tuple[int, ...]
    status: Literal["optimal", "infeasible"]

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve(bp: BinaryProgram, method: Method = "auto", check_bounds: bool = False) -> Solution:
    if bp.n_vars == 0:
        feasible = all(
            (r.relation == "<=" and 0.0 <= r.rhs + _EPS) or (r.relation == "=" and abs(r.rhs) <= _EPS)
            for r in bp.constraints
        )
        return Solution(0.0, (), "optimal" if feasible else "infeasible")
    if method == "auto":
        method = "bnb" if bp.n_vars <= AUTO_BNB_LIMIT else "highs"
    if method == "highs":
        return _solve_highs(bp)
    if method != "bnb":
        raise MalformedProgramError(f"unknown method {method!r}")
    return _BranchAndBound(bp, check_bounds).run()


class _BranchAndBound:
    def __init__(self, bp: BinaryProgram, check_bounds: bool) -> None:
        self.bp = bp
        self.check_bounds = check_bounds
        sign = 1.0 if bp.sense == "max" else -1.0
        self.c = sign * np.asarray(bp.objective, dtype=float)
        n = bp.n_vars
        m = len(bp.constraints)
        self.A = np.zeros((m, n))
        self.rhs = np.zeros(m)
        self.is_eq = np.zeros(m, dtype=bool)
        for k, row in enumerate(bp.constraints):
            self.A[k, list(row.indices)] = row.coeffs
            self.rhs[k] = row.rhs
            self.is_eq[k] = row.relation == "="
        self.order = sorted(range(n), key=lambda i: (-abs(self.c[i]), i))
        A_ord = self.A[:, self.order]
        # suffix sums of the smallest/largest contribution free variables can still add
        self.suffix_min = np.zeros((m, n + 1))
        self.suffix_max = np.zeros((m, n + 1))
        self.suffix_min[:, :n] = np.cumsum(np.minimum(A_ord, 0.0)[:, ::-1], axis=1)[:, ::-1]
        self.suffix_max[:, :n] = np.cumsum(np.maximum(A_ord, 0.0)[:, ::-1], axis=1)[:, ::-1]
        self._assign_bound_rows()
        self.best_value = -math.inf
        self.best: np.ndarray | None = None
        self.x = np.zeros(n, dtype=np.int8)

    def _assign_bound_rows(self) -> None:
        """Partition profitable variables over rows with non-negative coefficients."""
        n = self.bp.n_vars
        usable = [
            k for k in range(len(self.rhs))
            if (self.A[k] >= 0).all() and self.rhs[k] >= 0
        ]
        self.bound_row = np.full(n, -1)
        for i in range(n):
            if self.c[i] <= 0:
                continue
            best_k, best_tight = -1, 0.0
            for k in usable:
                a = self.A[k, i]
                if a <= 0:
                    continue
                tight = a / self.rhs[k] if self.rhs[k] > 0 else math.inf
                if tight > best_tight:
                    best_k, best_tight = k, tight
            self.bound_row[i] = best_k
        self.groups: dict[int, list[int]] = {}
        for i in range(n):
            if self.bound_row[i] >= 0:
                self.groups.setdefault(int(self.bound_row[i]), []).append(i)
        for k, items in self.groups.items():
            items.sort(key=lambda i: (-self.c[i] / self.A[k, i], i))

    def _bound(self, depth: int, lhs: np.ndarray, free: np.ndarray) -> float:
        total = 0.0
        for i in np.flatnonzero(free & (self.c > 0) & (self.bound_row < 0)):
            total += self.c[i]
        for k, items in self.groups.items():
            room = self.rhs[k] - lhs[k]
            for i in items:
                if not free[i]:
                    continue
                a = self.A[k, i]
                if a <= room:
                    total += self.c[i]
                    room -= a
                else:
                    total += self.c[i] * max(room, 0.0) / a
                    break
        return total

    def run(self) -> Solution:
        n = self.bp.n_vars
        lhs = np.zeros(len(self.rhs))
        free = np.ones(n, dtype=bool)
        self._dfs(0, lhs, free, 0.0, math.inf)
        if self.best is None:
            return Solution(0.0, tuple([0] * n), "infeasible")
        assignment = tuple(int(v) for v in self.best)
        return Solution(self.bp.value(assignment), assignment, "optimal")

    def _feasible_so_far(self, depth: int, lhs: np.ndarray) -> bool:
        lo = lhs + self.suffix_min[:, depth]
        if (lo > self.rhs + _EPS).any():
            return False
        if self.is_eq.any():
            hi = lhs + self.suffix_max[:, depth]
            if (hi[self.is_eq] < self.rhs[self.is_eq] - _EPS).any():
                return False
        return True

    def _dfs(self, depth: int, lhs: np.ndarray, free: np.ndarray, value: float, path_bound: float) -> None:
        if not self._feasible_so_far(depth, lhs):
            return
        if depth == len(self.order):
            if self.check_bounds:
                assert value <= path_bound + 1e-7, "relaxation bound below a feasible completion"
            if value > self.best_value + 1e-12:
                self.best_value = value
                self.best = self.x.copy()
            return
        bound = value + self._bound(depth, lhs, free)
        if bound <= self.best_value + 1e-12:
            return
        path_bound = min(path_bound, bound)
        var = self.order[depth]
        free[var] = False
        for val in ((1, 0) if self.c[var] > 0 else (0, 1)):
            self.x[var] = val
            if val:
                self._dfs(depth + 1, lhs + self.A[:, var], free, value + self.c[var], path_bound)
            else:
                self._dfs(depth + 1, lhs, free, value, path_bound)
        self.x[var] = 0
        free[var] = True


def _solve_highs(bp: BinaryProgram) -> Solution:
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import csr_matrix

    n = bp.n_vars
    c = np.asarray(bp.objective, dtype=float)
    if bp.sense == "max":
        c = -c
    constraints = []
    if bp.constraints:
        rows, cols, vals = [], [], []
        lb, ub = [], []
        for k, row in enumerate(bp.constraints):
            rows.extend([k] * len(row.indices))
            cols.extend(row.indices)
            vals.extend(row.coeffs)
            lb.append(row.rhs if row.relation == "=" else -np.inf)
            ub.append(row.rhs)
        A = csr_matrix((vals, (rows, cols)), shape=(len(bp.constraints), n))
        constraints.append(LinearConstraint(A, lb, ub))
    res = milp(
        c,
        constraints=constraints,
        integrality=np.ones(n),
        bounds=Bounds(0, 1),
        options={"disp": False, "mip_rel_gap": 0.0, "presolve": True},
    )
    if res.status == 2 or res.x is None:
        return Solution(0.0, tuple([0] * n), "infeasible")
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    assignment = tuple(int(round(v)) for v in res.x)
    return Solution(bp.value(assignment), assignment, "optimal")


@dataclass(frozen=True)
class LexSolution:
    first_value: float
    value: float
    assignment: tuple[int, ...]
    status: Literal["optimal", "infeasible"]


def solve_lexicographic(
    first: BinaryProgram,
    second_objective: Sequence[float],
    direction: Sense,
    method: Method = "auto",
    slack: float = 1e-9,
) -> LexSolution:
    """Optimize ``first``, then ``second_objective`` with the first objective held at its optimum."""
    if len(second_objective) != first.n_vars:
        raise MalformedProgramError("second objective does not match the program's variables")
    s1 = solve(first, method)
    if not s1.optimal:
        return LexSolution(0.0, 0.0, s1.assignment, "infeasible")
    lb = s1.value
    second = BinaryProgram(second_objective, direction, list(first.constraints))
    coeffs = {i: c for i, c in enumerate(first.objective) if c != 0}
    if first.sense == "min":
        second.add_constraint(coeffs, "<=", lb + slack)
    else:
        second.add_constraint({i: -c for i, c in coeffs.items()}, "<=", -lb + slack)
    s2 = solve(second, method)
    if not s2.optimal:
        # the first-stage optimum is itself feasible, so this only happens on solver failure
        raise RuntimeError("second stage infeasible although first stage was optimal")
    return LexSolution(lb, s2.value, s2.assignment, "optimal")
