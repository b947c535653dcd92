"""Multi-CNN objectives, slow-down pattern search, and the memory-aware DSE loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

from .pareto import DesignPoint, JointDesignPoint
from .sched import (
    SL_FLOOR,
    CyclicSchedule,
    ScheduleError,
    TaskInstance,
    Unschedulable,
    chain_tasks,
    rcls,
    remove_violations,
    violations,
)


class ObjectiveKind(str, Enum):
    FPS = "fps"
    MAXTHRPT = "maxthrpt"


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    fps_max: tuple
    t_max: tuple
    fps_user: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        object.__setattr__(self, "fps_max", tuple(self.fps_max))
        object.__setattr__(self, "t_max", tuple(self.t_max))
        user = tuple(self.fps_user) or (None,) * len(self.fps_max)
        object.__setattr__(self, "fps_user", user)
        if not (len(self.fps_max) == len(self.t_max) == len(user)):
            raise ValueError("per-CNN reference vectors differ in length")
        if any(not v > 0 for v in self.fps_max + self.t_max):
            raise ValueError("reference values must be strictly positive")

    @property
    def fps_target(self) -> tuple:
        return tuple(m if u is None else min(u, m) for u, m in zip(self.fps_user, self.fps_max))

    @property
    def ops(self) -> tuple:
        return tuple(t / f for t, f in zip(self.t_max, self.fps_max))

    def value(self, fps: Sequence[float]) -> float:
        """Sum of squared relative deviations (lower is better)."""
        if self.kind is ObjectiveKind.FPS:
            return sum(((f - g) / g) ** 2 for f, g in zip(fps, self.fps_target))
        return sum(((o * f - t) / t) ** 2 for o, f, t in zip(self.ops, fps, self.t_max))

    def rate_targets(self) -> tuple:
        return self.fps_target if self.kind is ObjectiveKind.FPS else self.fps_max


def derive_references(fronts: Sequence[Sequence[DesignPoint]], b_mem: float) -> list[tuple[float, float]]:
    """(fps_max, t_max) per CNN, each CNN owning the device and memory port."""
    refs = []
    for front in fronts:
        best = min(p.alone_latency(b_mem) for p in front)
        fps_max = 1.0 / best
        refs.append((fps_max, front[0].ops * fps_max))
    return refs


def make_objective(kind, fronts, b_mem: float, fps_user: Sequence[Optional[float]] = ()) -> Objective:
    refs = derive_references(fronts, b_mem)
    return Objective(kind, tuple(r[0] for r in refs), tuple(r[1] for r in refs), tuple(fps_user))


def joint_tasks(sigma: JointDesignPoint, rep: Sequence[int], sl: Optional[Sequence[float]] = None) -> list[TaskInstance]:
    lat = [[m.latency_s for m in p.metrics] for p in sigma.points]
    bw = [[m.bandwidth_bytes_per_s for m in p.metrics] for p in sigma.points]
    return chain_tasks(lat, bw, rep, sl)


def schedule_joint(sigma: JointDesignPoint, sl: Sequence[float], b_mem: float,
                   rep: Sequence[int]) -> CyclicSchedule:
    return rcls(joint_tasks(sigma, rep, sl), b_mem, True, rep)


def evaluate(sigma: JointDesignPoint, sl: Sequence[float], obj: Objective, b_mem: float,
             rep: Optional[Sequence[int]] = None) -> float:
    """Objective after scheduling with the given slow-downs; +inf if unschedulable."""
    rep = tuple(rep) if rep is not None else (1,) * len(sigma)
    try:
        sched = schedule_joint(sigma, sl, b_mem, rep)
    except (Unschedulable, ValueError):
        return math.inf
    return obj.value(sched.fps)


@dataclass(frozen=True)
class SearchConfig:
    initial_step: float = 0.1
    min_step: float = 1e-3
    max_iter: int = 200


def minimise_box(func: Callable[[tuple], float], x0: Sequence[float],
                   config: SearchConfig = SearchConfig(),
                   lower: float = SL_FLOOR, upper: float = 1.0) -> tuple[tuple, float]:
    """Derivative-free minimisation over a box.

    Each iteration explores +/-step along every coordinate and takes the
    first improving move; failing that it polls +/-2*step along every
    coordinate and along the all-ones direction; failing both, the step is
    halved.  Stops when the step drops below ``min_step`` or after
    ``max_iter`` iterations.
    """
    def clamp(v):
        return min(upper, max(lower, v))

    cache: dict[tuple, float] = {}

    def f(x: tuple) -> float:
        if x not in cache:
            cache[x] = func(x)
        return cache[x]

    x = tuple(clamp(v) for v in x0)
    fx = f(x)
    step = config.initial_step
    n = len(x)

    def first_improvement(moves):
        for cand in moves:
            if cand != x and f(cand) < fx:
                return cand
        return None

    def coordinate_moves(delta):
        for i in range(n):
            for sign in (1, -1):
                cand = list(x)
                cand[i] = clamp(x[i] + sign * delta)
                yield tuple(cand)

    for _ in range(config.max_iter):
        if step < config.min_step:
            break
        cand = first_improvement(coordinate_moves(step))
        if cand is None:
            poll = list(coordinate_moves(2 * step))
            poll += [tuple(clamp(v + s * 2 * step) for v in x) for s in (1, -1)]
            cand = first_improvement(poll)
        if cand is None:
            step /= 2
        else:
            x, fx = cand, f(cand)
    return x, fx


def pattern_search(sigma: JointDesignPoint, sl0: Sequence[float], b_mem: float, obj: Objective,
                     rep: Optional[Sequence[int]] = None,
                     config: SearchConfig = SearchConfig()) -> tuple[tuple, float]:
    rep = tuple(rep) if rep is not None else (1,) * len(sigma)
    return minimise_box(lambda sl: evaluate(sigma, sl, obj, b_mem, rep), sl0, config)


def rep_candidates(targets: Sequence[float], n_subgraphs: Sequence[int], max_rep: int = 4,
                   max_tasks: int = 24) -> list[tuple]:
    """Repetition vectors to try: all ones, plus roundings of the target-rate ratios.

    Roundings that exceed ``max_rep`` are clipped, so CNNs with very
    different rates still get a vector that leans the right way.
    """
    out = [(1,) * len(targets)]
    low = min(targets)
    for scale in range(1, max_rep + 1):
        rep = tuple(min(max_rep, max(1, round(scale * t / low))) for t in targets)
        if sum(r * n for r, n in zip(rep, n_subgraphs)) > max_tasks:
            continue
        if rep not in out:
            out.append(rep)
    return out


@dataclass(frozen=True)
class DseResult:
    sigma_star: JointDesignPoint
    sl_star: tuple
    schedule: CyclicSchedule
    objective_value: float
    rep: tuple
    index: int
    fps: tuple
    gops: tuple
    # (objective, slow-downs, rep) for every joint point, in input order
    trials: tuple = field(default=(), compare=False)

    @property
    def per_cnn(self) -> tuple:
        return tuple(zip(self.fps, self.gops))


@dataclass(frozen=True)
class DseConfig:
    search: SearchConfig = SearchConfig()
    rep_mode: str = "auto"
    max_rep: int = 4
    max_tasks: int = 24


def optimise_joint(sigma: JointDesignPoint, obj: Objective, b_mem: float,
                   config: DseConfig = DseConfig()) -> tuple[float, tuple, tuple]:
    """Slow-down proposals then pattern search for one joint point.

    Returns (objective, slow-downs, rep) of the best repetition vector.
    """
    if config.rep_mode == "ones":
        reps = [(1,) * len(sigma)]
    else:
        reps = rep_candidates(obj.rate_targets(), [len(p.metrics) for p in sigma.points],
                              config.max_rep, config.max_tasks)
    best = (math.inf, (), reps[0])
    for rep in reps:
        tasks = joint_tasks(sigma, rep)
        init = rcls(tasks, b_mem, enforce_bandwidth=False, rep=rep)
        viol = violations(init, tasks, b_mem)
        sl0 = remove_violations(tasks, viol, b_mem)
        sl, value = pattern_search(sigma, sl0, b_mem, obj, rep, config.search)
        if value < best[0]:
            best = (value, sl, rep)
    return best


def memory_aware_dse(joints: Sequence[JointDesignPoint], obj: Objective, b_mem: float,
                     config: DseConfig = DseConfig()) -> DseResult:
    if not joints:
        raise ValueError("memory_aware_dse needs at least one joint design point")
    best = None
    trials = []
    for idx, sigma in enumerate(joints):
        value, sl, rep = optimise_joint(sigma, obj, b_mem, config)
        trials.append((value, tuple(sl), tuple(rep)))
        if best is None or value < best[0]:
            best = (value, idx, sl, rep)
    value, idx, sl, rep = best
    if math.isinf(value):
        raise ScheduleError("every joint design point is unschedulable")
    sigma = joints[idx]
    sched = schedule_joint(sigma, sl, b_mem, rep)
    fps = sched.fps
    gops = tuple(p.ops * f / 1e9 for p, f in zip(sigma.points, fps))
    return DseResult(sigma, tuple(sl), sched, obj.value(fps), tuple(rep), idx, fps, gops, tuple(trials))


def predicted_objective(sigma: JointDesignPoint, obj: Objective, b_mem: float) -> float:
    """Objective if every engine had the whole memory bandwidth to itself."""
    fps = [1.0 / p.alone_latency(b_mem) for p in sigma.points]
    return obj.value(fps)
