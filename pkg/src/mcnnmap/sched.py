"""Bandwidth-constrained cyclic scheduling of subgraph instances.

A schedule covers one period of length K.  Each CNN runs ``rep(i)``
inferences per period as a chain of subgraph instances; instances of one
CNN execute in order on that CNN's engine.
"""

from __future__ import annotations

import graphlib
import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

# slow-downs are clamped to (SL_FLOOR, 1]
SL_FLOOR = 1e-3
# relative slack on the bandwidth budget for floating-point sums
BW_TOL = 1e-9


class ScheduleError(Exception):
    pass


class Unschedulable(ScheduleError):
    pass


class InstanceTooLarge(ScheduleError):
    pass


@dataclass(frozen=True)
class TaskInstance:
    """One subgraph instance with its slowed latency and bandwidth."""

    cnn: int
    subgraph: int
    latency_s: float
    bandwidth: float
    sl: float = 1.0
    base_latency_s: Optional[float] = None
    base_bandwidth: Optional[float] = None

    @classmethod
    def slowed(cls, cnn: int, subgraph: int, latency_s: float, bandwidth: float, sl: float = 1.0):
        if not 0 < sl <= 1:
            raise ValueError(f"slow-down {sl} outside (0, 1]")
        return cls(cnn, subgraph, latency_s / sl, sl * bandwidth, sl, latency_s, bandwidth)

    def with_slowdown(self, sl: float) -> "TaskInstance":
        base_l = self.latency_s * self.sl if self.base_latency_s is None else self.base_latency_s
        base_b = self.bandwidth / self.sl if self.base_bandwidth is None else self.base_bandwidth
        return TaskInstance.slowed(self.cnn, self.subgraph, base_l, base_b, sl)

    @property
    def key(self) -> tuple:
        return (self.cnn, self.subgraph)


def clamp_slowdowns(sl: Sequence[float]) -> tuple:
    return tuple(min(1.0, max(SL_FLOOR, float(x))) for x in sl)


def chain_tasks(latencies: Sequence[Sequence[float]], bandwidths: Sequence[Sequence[float]],
                rep: Optional[Sequence[int]] = None, sl: Optional[Sequence[float]] = None) -> list[TaskInstance]:
    """Augmented task set: CNN ``i`` contributes ``rep[i]`` copies of its chain."""
    rep = rep or [1] * len(latencies)
    tasks = []
    for i, (lat, bw) in enumerate(zip(latencies, bandwidths)):
        for r in range(rep[i]):
            for j, (l, b) in enumerate(zip(lat, bw)):
                tasks.append(TaskInstance.slowed(i, r * len(lat) + j, l, b))
    if sl is not None:
        if len(sl) != len(tasks):
            raise ValueError(f"expected {len(tasks)} slow-downs, got {len(sl)}")
        tasks = [t.with_slowdown(s) for t, s in zip(tasks, sl)]
    return tasks


def chain_edges(tasks: Sequence[TaskInstance]) -> list[tuple[int, int]]:
    by_cnn: dict[int, list[int]] = {}
    for idx, t in enumerate(tasks):
        by_cnn.setdefault(t.cnn, []).append(idx)
    edges = []
    for members in by_cnn.values():
        members.sort(key=lambda k: tasks[k].subgraph)
        edges.extend(zip(members, members[1:]))
    return edges


@dataclass(frozen=True)
class CyclicSchedule:
    start: tuple
    cycle_time_s: float
    rep: tuple
    tasks: tuple = field(default=(), compare=False)

    def end(self, idx: int) -> float:
        return self.start[idx] + self.tasks[idx].latency_s

    @property
    def fps(self) -> tuple:
        return tuple(r / self.cycle_time_s for r in self.rep)


def _graph(n: int, edges: Sequence[tuple[int, int]]):
    preds = [[] for _ in range(n)]
    succs = [[] for _ in range(n)]
    for a, b in edges:
        preds[b].append(a)
        succs[a].append(b)
    sorter = graphlib.TopologicalSorter({k: preds[k] for k in range(n)})
    try:
        order = list(sorter.static_order())
    except graphlib.CycleError as exc:
        raise ScheduleError(f"cyclic precedence: {exc.args[1]}") from None
    return preds, succs, order


def _priorities(tasks, succs, order) -> list[float]:
    tail = [0.0] * len(tasks)
    for k in reversed(order):
        tail[k] = tasks[k].latency_s + max((tail[s] for s in succs[k]), default=0.0)
    return tail


def _rep_of(tasks: Sequence[TaskInstance], rep) -> tuple:
    if rep is not None:
        return tuple(rep)
    n_cnn = max((t.cnn for t in tasks), default=-1) + 1
    return (1,) * n_cnn


def rcls(tasks: Sequence[TaskInstance], b_mem: float, enforce_bandwidth: bool = True,
         rep: Optional[Sequence[int]] = None, edges: Optional[Sequence[tuple[int, int]]] = None) -> CyclicSchedule:
    """Resource-constrained list scheduling.

    At each event time the precedence-ready tasks are scanned in priority
    order (longest remaining chain first, then cnn and subgraph index) and
    every task that fits the residual bandwidth is started.
    """
    tasks = tuple(tasks)
    n = len(tasks)
    if n == 0:
        raise ScheduleError("no tasks to schedule")
    edges = chain_edges(tasks) if edges is None else edges
    preds, succs, order = _graph(n, edges)
    prio = _priorities(tasks, succs, order)
    cap = b_mem * (1 + BW_TOL)
    if enforce_bandwidth:
        for t in tasks:
            if t.bandwidth > cap:
                raise Unschedulable(f"task {t.key} needs {t.bandwidth:.4g} B/s > budget {b_mem:.4g} B/s")

    missing = [len(p) for p in preds]
    ready = [k for k in range(n) if missing[k] == 0]
    start = [0.0] * n
    running: list[tuple[float, int]] = []
    used = 0.0
    t_now = 0.0
    done = 0
    while done < n:
        ready.sort(key=lambda k: (-prio[k], tasks[k].cnn, tasks[k].subgraph))
        waiting = []
        for k in ready:
            if not enforce_bandwidth or used + tasks[k].bandwidth <= cap:
                start[k] = t_now
                used += tasks[k].bandwidth
                heapq.heappush(running, (t_now + tasks[k].latency_s, k))
            else:
                waiting.append(k)
        ready = waiting
        if not running:
            raise Unschedulable("ready tasks cannot start on an idle resource")
        t_now = running[0][0]
        while running and running[0][0] <= t_now:
            _, k = heapq.heappop(running)
            done += 1
            for s in succs[k]:
                missing[s] -= 1
                if missing[s] == 0:
                    ready.append(s)
        used = sum(tasks[k].bandwidth for _, k in running)
    makespan = max(start[k] + tasks[k].latency_s for k in range(n))
    return CyclicSchedule(tuple(start), makespan, _rep_of(tasks, rep), tasks)


def exact_schedule(tasks: Sequence[TaskInstance], b_mem: float, time_quantum: float,
                   rep: Optional[Sequence[int]] = None, edges: Optional[Sequence[tuple[int, int]]] = None,
                   max_tasks: int = 24, upper_bound: Optional[float] = None) -> CyclicSchedule:
    """Minimum-period schedule on a timeline discretised at ``time_quantum``.

    Branch-and-bound over precedence-feasible task lists decoded by the
    serial schedule-generation scheme; the active schedules it produces
    contain an optimum for makespan under a cumulative resource.  The bound
    is the larger of the chain-latency bound and the bandwidth-energy bound.
    """
    tasks = tuple(tasks)
    n = len(tasks)
    if n > max_tasks:
        raise InstanceTooLarge(f"instance too large for exact solver ({n} > {max_tasks} tasks)")
    edges = chain_edges(tasks) if edges is None else edges
    preds, succs, order = _graph(n, edges)
    cap = b_mem * (1 + BW_TOL)
    dur = [max(1, math.ceil(t.latency_s / time_quantum - 1e-9)) for t in tasks]
    bw = [t.bandwidth for t in tasks]
    if any(b > cap for b in bw):
        raise Unschedulable("a task exceeds the bandwidth budget on its own")
    tail = [0] * n
    for k in reversed(order):
        tail[k] = dur[k] + max((tail[s] for s in succs[k]), default=0)
    energy_lb = math.ceil(sum(d * b for d, b in zip(dur, bw)) / cap - 1e-9)
    horizon = sum(dur) + 1
    usage = np.zeros(horizon)

    # incumbent from list scheduling on the quantised durations
    quantised = [replace(t, latency_s=d * time_quantum) for t, d in zip(tasks, dur)]
    seed = rcls(quantised, b_mem, True, rep, edges)
    best_starts = [round(s / time_quantum) for s in seed.start]
    best = max(s + d for s, d in zip(best_starts, dur))
    global_lb = max(energy_lb, max(tail[k] for k in range(n) if not preds[k]))

    starts = [-1] * n
    missing = [len(p) for p in preds]

    def place(k: int, est: int) -> int:
        t = est
        d = dur[k]
        while True:
            window = usage[t:t + d] + bw[k]
            bad = np.nonzero(window > cap)[0]
            if bad.size == 0:
                return t
            t += int(bad[-1]) + 1

    def bound(makespan: int, ready: list) -> int:
        lb = makespan
        for k in ready:
            est = max((starts[p] + dur[p] for p in preds[k]), default=0)
            lb = max(lb, est + tail[k])
        return lb

    def dfs(n_done: int, makespan: int, ready: list) -> None:
        nonlocal best, best_starts
        if n_done == n:
            if makespan < best:
                best = makespan
                best_starts = list(starts)
            return
        if bound(makespan, ready) >= best:
            return
        for k in sorted(ready, key=lambda q: (-tail[q], tasks[q].cnn, tasks[q].subgraph)):
            est = max((starts[p] + dur[p] for p in preds[k]), default=0)
            t = place(k, est)
            if t + tail[k] >= best:
                continue
            starts[k] = t
            usage[t:t + dur[k]] += bw[k]
            nxt = [q for q in ready if q != k]
            for s in succs[k]:
                missing[s] -= 1
                if missing[s] == 0:
                    nxt.append(s)
            dfs(n_done + 1, max(makespan, t + dur[k]), nxt)
            for s in succs[k]:
                missing[s] += 1
            usage[t:t + dur[k]] -= bw[k]
            starts[k] = -1
            if best <= global_lb:
                return

    if best > global_lb:
        dfs(0, 0, [k for k in range(n) if missing[k] == 0])

    if upper_bound is not None and best * time_quantum > upper_bound * (1 + 1e-12):
        raise Unschedulable(f"no schedule with period <= {upper_bound}")
    start = tuple(s * time_quantum for s in best_starts)
    return CyclicSchedule(start, best * time_quantum, _rep_of(tasks, rep), tuple(quantised))


@dataclass(frozen=True)
class ViolationReport:
    overshoot: tuple
    max_overshoot: float
    max_interval: tuple

    @property
    def clean(self) -> bool:
        return self.max_overshoot <= 1 + 1e-6

    @property
    def violating(self) -> tuple:
        return tuple(k for k, o in enumerate(self.overshoot) if o > 1 + 1e-6)


def violations(schedule: CyclicSchedule, tasks: Sequence[TaskInstance], b_mem: float) -> ViolationReport:
    """Sweep-line over start/end events of the aggregate bandwidth demand."""
    n = len(tasks)
    starts = [schedule.start[k] for k in range(n)]
    ends = [schedule.start[k] + tasks[k].latency_s for k in range(n)]
    times = sorted(set(starts) | set(ends))
    # ulp-scale slivers between abutting tasks are not overlaps
    sliver = 1e-9 * max(times[-1], 1e-300) if times else 0.0
    overshoot = [0.0] * n
    worst, worst_iv = 0.0, (0.0, 0.0)
    for t0, t1 in zip(times, times[1:]):
        if t1 - t0 <= sliver:
            continue
        active = [k for k in range(n) if starts[k] <= t0 and ends[k] >= t1 and ends[k] > starts[k]]
        ratio = sum(tasks[k].bandwidth for k in active) / b_mem
        for k in active:
            overshoot[k] = max(overshoot[k], ratio)
        if ratio > worst:
            worst, worst_iv = ratio, (t0, t1)
    return ViolationReport(tuple(overshoot), worst, worst_iv)


def check_schedule(schedule: CyclicSchedule, tasks: Sequence[TaskInstance], b_mem: float,
                   edges: Optional[Sequence[tuple[int, int]]] = None, tol: float = 1e-9) -> list[str]:
    """All violated scheduling constraints, as readable strings."""
    problems = []
    k_time = schedule.cycle_time_s
    for k, st in enumerate(schedule.start):
        if not (-tol <= st < k_time):
            problems.append(f"task {tasks[k].key}: start {st} outside [0, {k_time})")
    for a, b in (chain_edges(tasks) if edges is None else edges):
        if schedule.start[a] + tasks[a].latency_s > schedule.start[b] + tol * k_time:
            problems.append(f"precedence {tasks[a].key} -> {tasks[b].key} broken")
    report = violations(schedule, tasks, b_mem)
    if not report.clean:
        problems.append(f"bandwidth overshoot {report.max_overshoot:.6f} in {report.max_interval}")
    return problems


def remove_violations(tasks: Sequence[TaskInstance], report: ViolationReport, b_mem: float,
                      rounds: int = 10) -> tuple:
    """Greedy slow-down proposal: scale each task by the inverse of its overshoot."""
    sl = [t.sl for t in tasks]
    overshoot = report.overshoot
    for _ in range(rounds):
        sl = list(clamp_slowdowns(s * min(1.0, 1.0 / o) if o > 0 else s for s, o in zip(sl, overshoot)))
        slowed = [t.with_slowdown(s) for t, s in zip(tasks, sl)]
        try:
            sched = rcls(slowed, b_mem, True)
        except Unschedulable:
            # some task is over budget even at the floor
            break
        check = violations(sched, slowed, b_mem)
        if check.clean:
            break
        overshoot = check.overshoot
    return tuple(sl)
