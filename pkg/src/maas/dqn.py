"""Single-supplier order acceptance: MDP simulator, DQN training and baselines.

Each period a fixed number of orders arrives. The first ``slots`` waiting
orders are visible to the agent; the rest queue. The agent accepts one
visible order per step and stays in the period until it waits or picks an
order it cannot fit, which closes the period.

Capacity is committed ``commitment`` periods ahead. Accepted work is
produced earliest-due-first, and whatever capacity is idle when the period
closes is lost.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .core import cumulative_feasible
from .errors import ConfigError, InvalidUtilityError
from .neural import AdamState, Mlp, adam_step, backward, forward
from .optimizer import BinaryProgram, solve
from .utility import UtilityCurve, UtilityProfile, contract_utility

UTILITY_FLOOR = 0.01

DUE_OFFSETS = (2, 3, 4, 5, 6, 7)
DUE_SHAPES = {
    "left": (0.05, 0.05, 0.05, 0.05, 0.40, 0.40),
    "symmetric": (0.10, 0.15, 0.25, 0.25, 0.15, 0.10),
    "right": (0.40, 0.40, 0.05, 0.05, 0.05, 0.05),
}
MATERIALS = ("aluminum", "copper", "titanium", "stainless-316", "stainless-17-4")
MATERIAL_AVAILABILITY = (0.7, 0.4, 0.4, 0.5, 0.3)

# Urgency is convex in periods-to-due so rush orders quote far above routine ones.
PRICING_PROFILE = UtilityProfile(
    (
        (0.7, UtilityCurve("monotone_table", table=tuple((d, ((d - 1) / 7) ** 2) for d in range(1, 9))), "urgency"),
        (0.3, UtilityCurve.categorical({"available": 1.0, "unavailable": 0.0}), "material"),
    )
)


@dataclass(frozen=True)
class RewardConfig:
    invalid_penalty: float = 50.0
    waste_coefficient: float = 5.0
    k: float = 0.5
    l: float = 0.5
    unit_price: float = 10.0
    horizon: int = 30
    gamma: float = 0.9

    def __post_init__(self) -> None:
        if self.invalid_penalty < 0 or self.waste_coefficient < 0:
            raise ConfigError("penalties must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"discount {self.gamma} outside (0, 1]")
        if not (self.k > 0 and self.l > 0):
            raise ConfigError("price constants must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least one period")


@dataclass(frozen=True)
class DqnScenario:
    orders_per_period: int = 3
    slots: int = 3
    capacity_rate: float = 8.0
    capacity_cap: float = 12.0
    commitment: int = 7
    due_pmf: tuple[float, ...] = DUE_SHAPES["symmetric"]
    material_availability: tuple[float, ...] = MATERIAL_AVAILABILITY
    hours_range: tuple[float, float] = (1.0, 6.0)
    volume_per_hour: float = 10.0
    volume_noise: float = 0.2
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self) -> None:
        if len(self.due_pmf) != len(DUE_OFFSETS) or abs(sum(self.due_pmf) - 1.0) > 1e-9:
            raise ConfigError("due-date pmf must cover offsets 2..7 and sum to 1")
        if len(self.material_availability) != len(MATERIALS):
            raise ConfigError("one availability probability per material")
        if self.commitment < max(DUE_OFFSETS):
            raise ConfigError("commitment must cover the latest due offset")
        if self.slots < 1 or self.orders_per_period < 0 or self.capacity_rate <= 0:
            raise ConfigError("invalid arrival settings")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> DqnScenario:
        """``due_pmf`` may name one of the due-date shapes; ``reward`` is a nested mapping."""
        kw = dict(doc)
        unknown = set(kw) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        if isinstance(kw.get("due_pmf"), str):
            if kw["due_pmf"] not in DUE_SHAPES:
                raise ConfigError(f"unknown due-date shape {kw['due_pmf']!r}")
            kw["due_pmf"] = DUE_SHAPES[kw["due_pmf"]]
        if "reward" in kw:
            try:
                kw["reward"] = RewardConfig(**kw["reward"])
            except TypeError as exc:
                raise ConfigError(str(exc)) from exc
        for key in ("due_pmf", "material_availability", "hours_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()}

    @property
    def horizon(self) -> int:
        return self.reward.horizon

    @property
    def n_actions(self) -> int:
        return self.slots + 1

    @property
    def state_size(self) -> int:
        return self.slots * SLOT_FEATURES + self.commitment + len(MATERIALS) + 2

    @property
    def rate_scale(self) -> float:
        return self.reward.unit_price * self.volume_per_hour * (1 + self.reward.k)


SLOT_FEATURES = 6 + len(MATERIALS)


def base_price(unit_price: float, volume: float) -> float:
    return unit_price * volume


def price(bp: float, utility: float, k: float = 0.5, l: float = 0.5) -> float:
    """Lower utility for the supplier means a higher quote."""
    if not utility > 0:
        raise InvalidUtilityError(f"utility must be positive, got {utility}")
    return bp + k * bp * utility ** (-l)


def pricing_utility(due_in: int, material_available: bool) -> float:
    """Convex in slack so rush orders carry a heavy price tail; stocked material is cheaper."""
    u = contract_utility(
        PRICING_PROFILE,
        None,
        {
            "urgency": float(due_in),
            "material": "available" if material_available else "unavailable",
        },
    )
    return max(u, UTILITY_FLOOR)


def reward(kind: str, config: RewardConfig, rate: float = 0.0, wasted_hours: float = 0.0) -> float:
    """``kind`` is ``valid`` (rate = price per hour), ``invalid`` or ``wait`` (wasted capacity hours)."""
    if kind == "valid":
        return rate
    if kind == "invalid":
        return -config.invalid_penalty
    if kind == "wait":
        return -config.waste_coefficient * wasted_hours
    raise ValueError(f"unknown action kind {kind!r}")


@dataclass
class EnvOrder:
    id: int
    volume: float
    hours: float
    material: int
    due: int
    price: float = 0.0

    @property
    def rate(self) -> float:
        return self.price / self.hours


@dataclass
class Transition:
    reward: float
    period_advanced: bool
    terminal: bool
    kind: str


@dataclass
class EpisodeStats:
    revenue: float
    arrived: int
    accepted: int
    rejected_rates: list[float]
    unaccepted_rates: list[float] = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.arrived if self.arrived else 0.0


class OrderEnv:
    """Exogenous arrivals are drawn up front from ``seed`` so every policy sees the same stream."""

    def __init__(self, scenario: DqnScenario, seed: int | np.random.SeedSequence) -> None:
        self.sc = scenario
        rng = np.random.default_rng(seed)
        T, q, n = scenario.horizon, scenario.commitment, scenario.orders_per_period
        self._caps = np.minimum(rng.poisson(scenario.capacity_rate, size=T + q), scenario.capacity_cap).astype(float)
        self._materials_ok = rng.random((T + 1, len(MATERIALS))) < np.array(scenario.material_availability)
        lo, hi = scenario.hours_range
        self._hours = np.round(rng.uniform(lo, hi, size=(T, n)) * 2) / 2
        noise = rng.uniform(-scenario.volume_noise, scenario.volume_noise, size=(T, n))
        self._volume = scenario.volume_per_hour * self._hours * (1 + noise)
        self._material = rng.integers(len(MATERIALS), size=(T, n))
        self._due_offset = rng.choice(np.array(DUE_OFFSETS), size=(T, n), p=np.array(scenario.due_pmf))
        self.reset()

    # -- bookkeeping ----------------------------------------------------------

    def reset(self) -> np.ndarray:
        self.t = 0
        self.caps = list(self._caps[: self.sc.commitment])
        self.jobs: list[list[float]] = []  # [remaining hours, absolute due]
        self.waiting: list[EnvOrder] = []
        self.revenue = 0.0
        self.arrived = 0
        self.accepted: set[int] = set()
        self.passed: dict[int, float] = {}
        self.offered: dict[int, float] = {}
        self.done = False
        self._arrive()
        return self.state()

    @property
    def materials_ok(self) -> np.ndarray:
        return self._materials_ok[self.t]

    @property
    def slots(self) -> list[EnvOrder]:
        return self.waiting[: self.sc.slots]

    @property
    def queue_length(self) -> int:
        return max(0, len(self.waiting) - self.sc.slots)

    def _relative_jobs(self) -> list[tuple[float, int]]:
        return [(h, int(d) - self.t) for h, d in self.jobs]

    def free_capacity(self) -> list[float]:
        """Per-period capacity left after scheduling accepted work earliest-due-first, as early as possible."""
        free = list(self.caps)
        for h, rel in sorted(self._relative_jobs(), key=lambda j: j[1]):
            for k in range(rel):
                take = min(free[k], h)
                free[k] -= take
                h -= take
                if h <= 1e-12:
                    break
        return free

    def fits(self, order: EnvOrder) -> bool:
        rel = order.due - self.t
        if rel < 1:
            return False
        return cumulative_feasible(self.caps, self._relative_jobs() + [(order.hours, rel)])

    def valid_mask(self) -> np.ndarray:
        mask = np.zeros(self.sc.n_actions, dtype=bool)
        for k, o in enumerate(self.slots):
            mask[k] = self.fits(o)
        mask[-1] = True
        return mask

    def _arrive(self) -> None:
        if self.t >= self.sc.horizon:
            return
        ok = self.materials_ok
        fresh = []
        for k in range(self.sc.orders_per_period):
            d = int(self._due_offset[self.t, k])
            mat = int(self._material[self.t, k])
            o = EnvOrder(self.arrived, float(self._volume[self.t, k]), float(self._hours[self.t, k]), mat, self.t + d)
            u = pricing_utility(d, bool(ok[mat]))
            o.price = price(base_price(self.sc.reward.unit_price, o.volume), u, self.sc.reward.k, self.sc.reward.l)
            fresh.append(o)
            self.offered[o.id] = o.rate
            self.arrived += 1
        # newest orders take the visible slots, older ones drop back into the queue
        self.waiting = fresh + self.waiting

    def _advance(self) -> float:
        """Close the period; returns the idle hours that were lost."""
        cap = self.caps[0]
        used = 0.0
        for job in sorted(self.jobs, key=lambda j: j[1]):
            take = min(cap - used, job[0])
            job[0] -= take
            used += take
        assert all(h <= 1e-9 for h, d in self.jobs if d <= self.t + 1), "accepted work missed its due period"
        self.jobs = [j for j in self.jobs if j[0] > 1e-9]
        self.t += 1
        self.caps = self.caps[1:] + [float(self._caps[self.t + self.sc.commitment - 1])]
        # orders whose due period has come can no longer be produced
        self.waiting = [o for o in self.waiting if o.due - self.t >= 1]
        self._arrive()
        if self.t >= self.sc.horizon:
            self.done = True
        return cap - used

    # -- interaction ----------------------------------------------------------

    def step(self, action: int) -> Transition:
        if self.done:
            raise RuntimeError("episode finished")
        slots = self.slots
        if action < len(slots) and self.fits(slots[action]):
            o = slots[action]
            self.jobs.append([o.hours, float(o.due)])
            assert cumulative_feasible(self.caps, self._relative_jobs())
            self.waiting.remove(o)
            self.revenue += o.price
            self.accepted.add(o.id)
            return Transition(reward("valid", self.sc.reward, rate=o.rate), False, False, "valid")
        kind = "wait" if action == self.sc.slots else "invalid"
        for o in slots:
            if self.fits(o):
                self.passed[o.id] = o.rate
        wasted = self._advance()
        r = reward(kind, self.sc.reward, wasted_hours=wasted)
        return Transition(r, True, self.done, kind)

    def state(self) -> np.ndarray:
        sc = self.sc
        out = np.zeros(sc.state_size)
        ok = self.materials_ok
        for k, o in enumerate(self.slots):
            base = k * SLOT_FEATURES
            out[base] = 1.0 if self.fits(o) else 0.0
            out[base + 1] = 1.0
            out[base + 2] = o.volume / (sc.volume_per_hour * sc.hours_range[1] * (1 + sc.volume_noise))
            out[base + 3] = o.hours / sc.hours_range[1]
            out[base + 4] = (o.due - self.t) / max(DUE_OFFSETS)
            out[base + 5] = o.rate / sc.rate_scale
            out[base + 6 + o.material] = 1.0
        base = sc.slots * SLOT_FEATURES
        out[base : base + sc.commitment] = np.array(self.free_capacity()) / sc.capacity_cap
        base += sc.commitment
        out[base : base + len(MATERIALS)] = ok
        out[-2] = self.queue_length / max(sc.orders_per_period, 1)
        out[-1] = self.t / sc.horizon
        return out

    def stats(self) -> EpisodeStats:
        rejected = [r for oid, r in self.passed.items() if oid not in self.accepted]
        unaccepted = [r for oid, r in self.offered.items() if oid not in self.accepted]
        return EpisodeStats(self.revenue, self.arrived, len(self.accepted), rejected, unaccepted)


Policy = Callable[[OrderEnv], int]


def run_episode(env: OrderEnv, policy: Policy) -> EpisodeStats:
    env.reset()
    while not env.done:
        env.step(policy(env))
    return env.stats()


def episode_seed(master: int, stream: int, episode: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, stream, episode])


TRAIN_STREAM, EVAL_STREAM, POLICY_STREAM = 0, 1, 2


# -- baselines -------------------------------------------------------------------


def greedy_policy(env: OrderEnv) -> int:
    mask = env.valid_mask()
    best, best_rate = env.sc.slots, -math.inf
    for k, o in enumerate(env.slots):
        if mask[k] and o.rate > best_rate:
            best, best_rate = k, o.rate
    return best


def make_random_policy(rng: np.random.Generator) -> Policy:
    def policy(env: OrderEnv) -> int:
        valid = np.flatnonzero(env.valid_mask()[:-1])
        if len(valid) == 0:
            return env.sc.slots
        return int(valid[rng.integers(len(valid))])

    return policy


def period_plan(env: OrderEnv) -> list[int]:
    """Slot indices of the revenue-maximizing set that fits alongside accepted work."""
    slots = env.slots
    if not slots:
        return []
    bp = BinaryProgram([o.price for o in slots], sense="max")
    jobs = env._relative_jobs()
    prefix = np.cumsum(env.caps)
    for q in sorted({o.due - env.t for o in slots if o.due - env.t >= 1}):
        committed = sum(h for h, d in jobs if d <= q)
        coeffs = [o.hours if 1 <= o.due - env.t <= q else 0.0 for o in slots]
        bp.add_constraint(coeffs, "<=", float(prefix[q - 1]) - committed)
    for k, o in enumerate(slots):
        if o.due - env.t < 1:
            bp.add_constraint([1.0 if j == k else 0.0 for j in range(len(slots))], "<=", 0.0)
    sol = solve(bp)
    return [k for k, x in enumerate(sol.assignment) if x]


def rolling_horizon_policy(env: OrderEnv) -> int:
    plan = period_plan(env)
    if not plan:
        return env.sc.slots
    return max(plan, key=lambda k: (env.slots[k].rate, -k))


def tabular_state(env: OrderEnv) -> tuple[int, int]:
    return len(env.waiting), int(round(sum(env.free_capacity())))


@dataclass
class TabularQ:
    n_actions: int
    alpha: float = 0.1
    table: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def values(self, s: tuple[int, int]) -> np.ndarray:
        if s not in self.table:
            self.table[s] = np.zeros(self.n_actions)
        return self.table[s]

    def policy(self, env: OrderEnv) -> int:
        return int(np.argmax(self.values(tabular_state(env))))


def epsilon_schedule(episode: int, episodes: int, start: float = 1.0, floor: float = 0.01) -> float:
    """Exponential decay that reaches ``floor`` after 80% of the episodes."""
    horizon = max(1, int(0.8 * episodes))
    decay = (floor / start) ** (1.0 / horizon)
    return max(floor, start * decay**episode)


def train_tabular_q(scenario: DqnScenario, episodes: int, seed: int) -> TabularQ:
    agent = TabularQ(scenario.n_actions)
    rng = np.random.default_rng(episode_seed(seed, POLICY_STREAM, 1))
    gamma = scenario.reward.gamma
    for e in range(episodes):
        env = OrderEnv(scenario, episode_seed(seed, TRAIN_STREAM, e))
        eps = epsilon_schedule(e, episodes)
        while not env.done:
            s = tabular_state(env)
            a = int(rng.integers(scenario.n_actions)) if rng.random() < eps else agent.policy(env)
            tr = env.step(a)
            target = tr.reward if tr.terminal else tr.reward + gamma * float(np.max(agent.values(tabular_state(env))))
            q = agent.values(s)
            q[a] += agent.alpha * (target - q[a])
    return agent


# -- DQN -------------------------------------------------------------------------


@dataclass
class ReplayBuffer:
    capacity: int
    state_size: int
    size: int = 0
    cursor: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.s = np.zeros((self.capacity, self.state_size))
        self.a = np.zeros(self.capacity, dtype=np.int64)
        self.r = np.zeros(self.capacity)
        self.s2 = np.zeros((self.capacity, self.state_size))
        self.terminal = np.zeros(self.capacity, dtype=bool)

    def push(self, s: np.ndarray, a: int, r: float, s2: np.ndarray, terminal: bool) -> None:
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s2[i], self.terminal[i] = s, a, r, s2, terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> tuple[np.ndarray, ...]:
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} transitions, batch needs {batch}")
        idx = rng.integers(self.size, size=batch)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.terminal[idx]


@dataclass(frozen=True)
class DqnHyperparams:
    episodes: int = 500
    hidden: tuple[int, ...] = (32, 16, 8)
    lr: float = 1e-4
    buffer_size: int = 20000
    batch_size: int = 500
    updates_per_step: int = 1
    target_every: int = 10
    reward_scale: float = 100.0


def td_targets(
    target_net: Mlp, r: np.ndarray, s2: np.ndarray, terminal: np.ndarray, gamma: float
) -> np.ndarray:
    """r for terminal transitions, r + gamma * max_a Q'(s2, a) otherwise."""
    boot = np.max(np.atleast_2d(forward(target_net, s2)), axis=1)
    return r + gamma * np.where(terminal, 0.0, boot)


def dqn_update(
    net: Mlp, target_net: Mlp, adam: AdamState, batch: tuple[np.ndarray, ...], gamma: float
) -> float:
    s, a, r, s2, terminal = batch
    y = td_targets(target_net, r, s2, terminal, gamma)
    rows = np.arange(len(a))
    target = np.zeros((len(a), net.widths[-1]))
    mask = np.zeros_like(target)
    target[rows, a] = y
    mask[rows, a] = 1.0
    loss, grads = backward(net, s, target, mask)
    adam_step(adam, net.params, grads)
    return loss


def dqn_policy(net: Mlp) -> Policy:
    def policy(env: OrderEnv) -> int:
        return int(np.argmax(forward(net, env.state())))

    return policy


@dataclass
class CurveRow:
    episode: int
    epsilon: float
    revenue: float
    normalized_revenue: float
    acceptance_rate: float


def train_dqn(
    scenario: DqnScenario, hp: DqnHyperparams = DqnHyperparams(), seed: int = 0
) -> tuple[Mlp, list[CurveRow]]:
    rng = np.random.default_rng(episode_seed(seed, POLICY_STREAM, 0))
    net = Mlp.create((scenario.state_size, *hp.hidden, scenario.n_actions), rng)
    target_net = net.copy()
    adam = AdamState(lr=hp.lr)
    buffer = ReplayBuffer(hp.buffer_size, scenario.state_size)
    gamma = scenario.reward.gamma
    curve = []
    reference_rng = np.random.default_rng(episode_seed(seed, POLICY_STREAM, 2))
    for e in range(hp.episodes):
        env = OrderEnv(scenario, episode_seed(seed, TRAIN_STREAM, e))
        eps = epsilon_schedule(e, hp.episodes)
        s = env.state()
        while not env.done:
            if rng.random() < eps:
                a = int(rng.integers(scenario.n_actions))
            else:
                a = int(np.argmax(forward(net, s)))
            tr = env.step(a)
            s2 = env.state()
            buffer.push(s, a, tr.reward / hp.reward_scale, s2, tr.terminal)
            s = s2
            if buffer.size >= hp.batch_size:
                for _ in range(hp.updates_per_step):
                    dqn_update(net, target_net, adam, buffer.sample(hp.batch_size, rng), gamma)
        stats = env.stats()
        reference = run_episode(env, make_random_policy(reference_rng)).revenue
        curve.append(
            CurveRow(e, eps, stats.revenue, 100.0 * stats.revenue / reference if reference > 0 else 0.0,
                     stats.acceptance_rate)
        )
        if (e + 1) % hp.target_every == 0:
            target_net.load_from(net)
    return net, curve


# -- evaluation ------------------------------------------------------------------

BASELINES = ("tabular_q", "rolling_horizon", "greedy", "random")


def evaluate_policy(scenario: DqnScenario, policy: Policy, seed: int, episodes: int = 100) -> list[EpisodeStats]:
    return [run_episode(OrderEnv(scenario, episode_seed(seed, EVAL_STREAM, e)), policy) for e in range(episodes)]


def baseline(
    name: str, scenario: DqnScenario, seed: int, episodes: int = 100, tabular_episodes: int = 2000
) -> list[EpisodeStats]:
    if name == "greedy":
        policy = greedy_policy
    elif name == "random":
        policy = make_random_policy(np.random.default_rng(episode_seed(seed, POLICY_STREAM, 3)))
    elif name == "rolling_horizon":
        policy = rolling_horizon_policy
    elif name == "tabular_q":
        policy = train_tabular_q(scenario, tabular_episodes, seed).policy
    else:
        raise ConfigError(f"unknown baseline {name!r}")
    return evaluate_policy(scenario, policy, seed, episodes)


def normalized_revenue(stats: Sequence[EpisodeStats], reference: Sequence[EpisodeStats]) -> float:
    """Mean revenue scaled so the reference (random policy) mean is 100."""
    ref = float(np.mean([s.revenue for s in reference]))
    return 100.0 * float(np.mean([s.revenue for s in stats])) / ref


def mean_rejected_rate(stats: Sequence[EpisodeStats]) -> float:
    rates = [r for s in stats for r in s.rejected_rates]
    return float(np.mean(rates)) if rates else math.nan


def mean_unaccepted_rate(stats: Sequence[EpisodeStats]) -> float:
    """Mean revenue per hour over every order the policy never accepted."""
    rates = [r for s in stats for r in s.unaccepted_rates]
    return float(np.mean(rates)) if rates else math.nan
