"""Seven-phase maintainability lifecycle: cost model, Monte Carlo, decisions.

A project walks Configuration -> ... -> Maintenance.  Each phase attempt
costs money and days; with some probability it fails, pays a feedback cost
scaled by the edge's expenditure level (green, yellow, orange, red) and
resumes from an earlier phase.  Trajectories are cut at the horizon.
"""

from __future__ import annotations

import enum
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import EmptySamples, InvalidPlan, NotInMaintenance

HORIZON_DAYS = 3650.0
DEFAULT_MULTIPLIERS = (1.0, 3.0, 9.0, 27.0)
LEVEL_COLOURS = ("green", "yellow", "orange", "red")


class Phase(enum.IntEnum):
    CONFIGURATION = 0
    TRIAL_PRODUCTION = 1
    DEBUGGING = 2
    BATCH_PRODUCTION = 3
    DEPLOYMENT = 4
    OPERATION = 5
    MAINTENANCE = 6

    @classmethod
    def parse(cls, name: str | int | "Phase") -> "Phase":
        if isinstance(name, (int, Phase)):
            return cls(name)
        try:
            return cls[str(name).strip().upper().replace(" ", "_").replace("-", "_")]
        except KeyError:
            raise InvalidPlan(f"unknown phase {name!r}") from None


@dataclass(frozen=True)
class ExpenditureLevel:
    level: int
    multiplier: float

    @property
    def colour(self) -> str:
        return LEVEL_COLOURS[self.level - 1]


def expenditure_levels(multipliers: Sequence[float] = DEFAULT_MULTIPLIERS) -> dict[int, ExpenditureLevel]:
    if len(multipliers) != 4:
        raise InvalidPlan("exactly four expenditure levels are required")
    if any(b <= a for a, b in zip(multipliers, multipliers[1:])):
        raise InvalidPlan("level multipliers must strictly increase")
    return {i + 1: ExpenditureLevel(i + 1, float(m)) for i, m in enumerate(multipliers)}


# -- distributions ----------------------------------------------------------

@dataclass(frozen=True)
class Dist:
    kind: str
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        n = {"point": 1, "uniform": 2, "triangular": 3}.get(self.kind)
        if n is None:
            raise InvalidPlan(f"unknown distribution {self.kind!r}")
        if len(self.params) != n:
            raise InvalidPlan(f"{self.kind} takes {n} parameters")
        if not all(np.isfinite(self.params)):
            raise InvalidPlan("distribution parameters must be finite")
        if list(self.params) != sorted(self.params):
            raise InvalidPlan(f"{self.kind} parameters must be ordered low..high")

    @classmethod
    def point(cls, value: float) -> "Dist":
        return cls("point", (float(value),))

    @classmethod
    def parse(cls, raw: Any) -> "Dist":
        if isinstance(raw, Dist):
            return raw
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return cls.point(raw)
        if isinstance(raw, Mapping) and len(raw) == 1:
            (kind, params), = raw.items()
            if not isinstance(params, (list, tuple)):
                params = [params]
            return cls(str(kind), tuple(float(p) for p in params))
        raise InvalidPlan(f"cannot read distribution {raw!r}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "point":
            return self.params[0]
        if self.kind == "uniform":
            return float(rng.uniform(*self.params))
        lo, mode, hi = self.params
        if lo == hi:
            return lo
        return float(rng.triangular(lo, mode, hi))

    @property
    def mean(self) -> float:
        return sum(self.params) / len(self.params)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.params[0], self.params[-1]

    def to_raw(self) -> Any:
        return self.params[0] if self.kind == "point" else {self.kind: list(self.params)}


# -- plan -------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseModel:
    cost: Dist
    duration: Dist
    failure_prob: float = 0.0
    on_failure: tuple[Phase, int] | None = None
    feedback_cost: float = 1.0
    feedback_days: float = 0.0


@dataclass(frozen=True)
class DecisionThresholds:
    conf_net_benefit: float = 0.8
    conf_implementation: float = 0.9
    abort_failure_fraction: float = 0.4


@dataclass
class LifecyclePlan:
    phases: dict[Phase, PhaseModel]
    multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    horizon_days: float = HORIZON_DAYS
    decision: DecisionThresholds = field(default_factory=DecisionThresholds)
    max_steps: int = 100_000

    def __post_init__(self) -> None:
        self.validate()

    @property
    def levels(self) -> dict[int, ExpenditureLevel]:
        return expenditure_levels(self.multipliers)

    def validate(self) -> None:
        levels = self.levels
        missing = [p.name for p in Phase if p not in self.phases]
        if missing:
            raise InvalidPlan(f"plan lacks phases {missing}")
        if self.horizon_days <= 0:
            raise InvalidPlan("horizon must be positive")
        for phase, model in self.phases.items():
            if not 0.0 <= model.failure_prob <= 1.0:
                raise InvalidPlan(f"{phase.name}: failure_prob outside [0, 1]")
            if model.cost.bounds[0] < 0 or model.duration.bounds[0] < 0:
                raise InvalidPlan(f"{phase.name}: negative cost or duration")
            if model.feedback_cost < 0 or model.feedback_days < 0:
                raise InvalidPlan(f"{phase.name}: negative feedback cost")
            if model.failure_prob > 0 and model.on_failure is None:
                raise InvalidPlan(f"{phase.name}: failures need an on_failure edge")
            if model.on_failure is not None:
                target, level = model.on_failure
                if target > phase:
                    raise InvalidPlan(f"{phase.name}: feedback must go to an earlier phase")
                if level not in levels:
                    raise InvalidPlan(f"{phase.name}: unknown expenditure level {level}")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LifecyclePlan":
        try:
            phases = {}
            for name, spec in (raw.get("phases") or {}).items():
                spec = dict(spec)
                on_failure = None
                if spec.get("on_failure"):
                    of = spec["on_failure"]
                    on_failure = (Phase.parse(of["target"]), int(of.get("level", 1)))
                phases[Phase.parse(name)] = PhaseModel(
                    cost=Dist.parse(spec.get("cost", 0)),
                    duration=Dist.parse(spec.get("duration", 0)),
                    failure_prob=float(spec.get("failure_prob", 0.0)),
                    on_failure=on_failure,
                    feedback_cost=float(spec.get("feedback_cost", 1.0)),
                    feedback_days=float(spec.get("feedback_days", 0.0)),
                )
            decision = DecisionThresholds(**(raw.get("decision") or {}))
            return cls(
                phases=phases,
                multipliers=tuple(float(m) for m in raw.get("multipliers", DEFAULT_MULTIPLIERS)),
                horizon_days=float(raw.get("horizon_days", HORIZON_DAYS)),
                decision=decision,
            )
        except InvalidPlan:
            raise
        except (TypeError, ValueError, KeyError, AttributeError) as exc:
            raise InvalidPlan(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "LifecyclePlan":
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise InvalidPlan(f"cannot read plan {path}: {exc}") from exc
        if not isinstance(raw, Mapping):
            raise InvalidPlan("plan must be a mapping")
        return cls.from_dict(raw)

    def with_level(self, phase: Phase, level: int) -> "LifecyclePlan":
        model = self.phases[phase]
        if model.on_failure is None:
            raise InvalidPlan(f"{phase.name} has no feedback edge")
        phases = dict(self.phases)
        phases[phase] = PhaseModel(model.cost, model.duration, model.failure_prob,
                                   (model.on_failure[0], level), model.feedback_cost,
                                   model.feedback_days)
        return LifecyclePlan(phases, self.multipliers, self.horizon_days, self.decision,
                             self.max_steps)


def point_plan(costs: Sequence[float], durations: Sequence[float] | None = None,
               **overrides: Any) -> LifecyclePlan:
    """Plan with point costs/durations per phase in order and no failures."""
    durations = durations if durations is not None else [0.0] * len(Phase)
    phases = {p: PhaseModel(Dist.point(c), Dist.point(d))
              for p, c, d in zip(Phase, costs, durations)}
    return LifecyclePlan(phases, **overrides)


# -- simulation -------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    phase: Phase
    attempt: int
    cost: float
    duration: float
    kind: str = "phase"


@dataclass
class Trajectory:
    steps: list[Step]
    total_cost: float
    total_days: float
    completed: bool


def simulate_trajectory(plan: LifecyclePlan, rng: np.random.Generator) -> Trajectory:
    levels = plan.levels
    order = list(Phase)
    attempts = dict.fromkeys(order, 0)
    steps: list[Step] = []
    total_cost = 0.0
    total_days = 0.0
    idx = 0
    over = False
    while idx < len(order) and len(steps) < plan.max_steps:
        phase = order[idx]
        model = plan.phases[phase]
        attempts[phase] += 1
        cost = model.cost.sample(rng)
        days = model.duration.sample(rng)
        steps.append(Step(phase, attempts[phase], cost, days))
        total_cost += cost
        total_days += days
        if total_days > plan.horizon_days:
            over = True
            break
        if model.failure_prob > 0 and rng.random() < model.failure_prob:
            target, level = model.on_failure
            fb_cost = levels[level].multiplier * model.feedback_cost
            steps.append(Step(phase, attempts[phase], fb_cost, model.feedback_days, "feedback"))
            total_cost += fb_cost
            total_days += model.feedback_days
            if total_days > plan.horizon_days:
                over = True
                break
            idx = int(target)
        else:
            idx += 1
    completed = not over and idx == len(order)
    return Trajectory(steps, total_cost, total_days, completed)


def _simulate_chunk(plan: LifecyclePlan, seed: int, start: int, stop: int):
    costs = np.empty(stop - start)
    days = np.empty(stop - start)
    done = np.empty(stop - start, dtype=bool)
    for j, i in enumerate(range(start, stop)):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        traj = simulate_trajectory(plan, rng)
        costs[j], days[j], done[j] = traj.total_cost, traj.total_days, traj.completed
    return costs, days, done


@dataclass(frozen=True)
class LifecycleReport:
    n: int
    seed: int
    mean_cost: float
    cost_stderr: float
    cost_percentiles: dict[int, float]
    mean_days: float
    days_percentiles: dict[int, float]
    completion_fraction: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "totalCost": {"mean": self.mean_cost, "stderr": self.cost_stderr,
                          **{f"p{q}": v for q, v in self.cost_percentiles.items()}},
            "totalDays": {"mean": self.mean_days,
                          **{f"p{q}": v for q, v in self.days_percentiles.items()}},
            "completionFraction": self.completion_fraction,
        }

    def to_text(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


PERCENTILES = (50, 90, 99)


def summarize(costs: np.ndarray, days: np.ndarray, done: np.ndarray, seed: int) -> LifecycleReport:
    n = len(costs)
    stderr = float(costs.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return LifecycleReport(
        n=n,
        seed=seed,
        mean_cost=float(costs.mean()),
        cost_stderr=stderr,
        cost_percentiles={q: float(np.percentile(costs, q)) for q in PERCENTILES},
        mean_days=float(days.mean()),
        days_percentiles={q: float(np.percentile(days, q)) for q in PERCENTILES},
        completion_fraction=float(done.mean()),
    )


def simulate_lifecycle(plan: LifecyclePlan, n: int, seed: int, workers: int = 1,
                       return_samples: bool = False):
    """Monte Carlo over ``n`` independent trajectories.

    Trajectory ``i`` draws from its own stream spawned from ``seed``, so the
    result does not depend on ``workers``.
    """
    if n < 1:
        raise InvalidPlan("need at least one trajectory")
    plan.validate()
    if workers <= 1:
        costs, days, done = _simulate_chunk(plan, seed, 0, n)
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_simulate_chunk, [plan] * workers, [seed] * workers,
                                  bounds[:-1].tolist(), bounds[1:].tolist()))
        costs = np.concatenate([p[0] for p in parts])
        days = np.concatenate([p[1] for p in parts])
        done = np.concatenate([p[2] for p in parts])
    report = summarize(costs, days, done, seed)
    if return_samples:
        return report, costs
    return report


def expected_cost_single_loop(plan: LifecyclePlan, phase: Phase) -> float:
    """Closed-form mean cost when only ``phase`` can fail (no horizon cut).

    Failures are geometric: with success probability s the expected number
    of failures is (1 - s) / s, and each one pays the feedback cost plus a
    re-run of every phase from the feedback target through ``phase``.
    """
    model = plan.phases[phase]
    base = sum(plan.phases[p].cost.mean for p in Phase)
    if model.failure_prob == 0:
        return base
    if model.failure_prob >= 1:
        return float("inf")
    target, level = model.on_failure
    loop = plan.levels[level].multiplier * model.feedback_cost + sum(
        plan.phases[p].cost.mean for p in Phase if target <= p <= phase
    )
    q = model.failure_prob
    return base + q / (1 - q) * loop


# -- decisions --------------------------------------------------------------

@dataclass(frozen=True)
class DecisionInputs:
    net_benefit_samples: Sequence[float]
    implementation_success_samples: Sequence[bool]
    thresholds: DecisionThresholds = DecisionThresholds()


@dataclass(frozen=True)
class Advance:
    to: Phase | None


@dataclass(frozen=True)
class Hold:
    conf_net_benefit: float
    conf_implementation: float


@dataclass(frozen=True)
class Feedback:
    target: Phase
    level: int


def net_benefit(expected_benefit: float, expected_cost: float,
                convertible_resources: float = 0.0) -> float:
    return expected_benefit - expected_cost - convertible_resources


def confidence(samples: Iterable[bool]) -> float:
    samples = list(samples)
    if not samples:
        raise EmptySamples("no samples")
    return sum(1 for s in samples if s) / len(samples)


def advance(current: Phase, inputs: DecisionInputs,
            plan: LifecyclePlan | None = None) -> Advance | Hold | Feedback:
    if not inputs.net_benefit_samples or not inputs.implementation_success_samples:
        raise EmptySamples("decision needs both sample sets")
    th = inputs.thresholds
    conf_net = confidence(x >= 0 for x in inputs.net_benefit_samples)
    conf_impl = confidence(bool(x) for x in inputs.implementation_success_samples)
    if conf_net >= th.conf_net_benefit and conf_impl >= th.conf_implementation:
        nxt = Phase(current + 1) if current < Phase.MAINTENANCE else None
        return Advance(nxt)
    if 1.0 - conf_impl > th.abort_failure_fraction:
        edge = plan.phases[current].on_failure if plan is not None else None
        if edge is None:
            return Feedback(current, 1)
        return Feedback(edge[0], edge[1])
    return Hold(conf_net, conf_impl)


@dataclass(frozen=True)
class TransitionRecord:
    source: Phase
    target: Phase
    reason: str
    level: int | None = None


def maintenance_switch(current: Phase, target: Phase, reason: str,
                       level: int | None = None) -> TransitionRecord:
    """Leave Maintenance for any phase; the expenditure level does not gate it."""
    if current is not Phase.MAINTENANCE:
        raise NotInMaintenance(f"switch requested from {current.name}")
    return TransitionRecord(current, Phase.parse(target), reason, level)


# -- maintenance cost ledger ------------------------------------------------

@dataclass(frozen=True)
class CostEntry:
    tick: int
    node: str
    action: str
    level: int
    cost: float

    def to_dict(self) -> dict:
        return {"tick": self.tick, "node": self.node, "action": self.action,
                "level": self.level, "cost": self.cost}


class LifecycleLedger:
    """Operation-time maintenance costs, priced by expenditure level."""

    def __init__(self, base_cost: float = 1.0,
                 multipliers: Sequence[float] = DEFAULT_MULTIPLIERS):
        self.base_cost = base_cost
        self.levels = expenditure_levels(multipliers)
        self._entries: list[CostEntry] = []
        self._lock = threading.Lock()

    def post(self, tick: int, node: str, action: str, level: int) -> CostEntry:
        entry = CostEntry(tick, node, action, level, self.levels[level].multiplier * self.base_cost)
        with self._lock:
            self._entries.append(entry)
        return entry

    @property
    def entries(self) -> tuple[CostEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def total(self) -> float:
        return sum(e.cost for e in self.entries)
