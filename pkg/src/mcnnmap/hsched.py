"""Static configuration of the table-driven memory arbiter.

Each scheduled subgraph instance gets a number of consecutive burst slots
per arbitration round.  Its nominal share of the port is its slot count
over the slot total of the concurrency group it belongs to.  The round robin
skips entries with nothing to fetch, so while only part of a group is
active the active entries split the port in proportion to their slots.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .model import ModelError, PlatformSpec
from .pareto import JointDesignPoint
from .sched import BW_TOL, CyclicSchedule

MAX_SLOTS_TOTAL = 64


class ConfigError(ModelError):
    pass


@dataclass(frozen=True)
class HsEntry:
    cnn: int
    subgraph: int
    data_elements: int
    slots: int
    base_address: int
    executions: int
    slots_total: int
    release_s: float = 0.0
    latency_s: float = 0.0

    @property
    def fraction(self) -> float:
        return self.slots / self.slots_total

    def delivery(self, burst_length: int, pack_factor: int) -> int:
        """Elements delivered per arbitration round."""
        return self.slots * burst_length * pack_factor


def executions_needed(data_elements: int, slots: int, burst_length: int, pack_factor: int) -> int:
    if slots < 1:
        raise ValueError("slots must be >= 1")
    return -(-data_elements // (slots * burst_length * pack_factor))


@dataclass(frozen=True)
class HsConfigTable:
    entries: tuple
    burst_length: int
    pack_factor: int
    cycle_time_s: float = 0.0
    rep: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "rep", tuple(self.rep))

    def entry(self, cnn: int, subgraph: int) -> HsEntry:
        for e in self.entries:
            if e.cnn == cnn and e.subgraph == subgraph:
                return e
        raise KeyError((cnn, subgraph))

    def to_json(self) -> str:
        body = {
            "burst_length": self.burst_length,
            "pack_factor": self.pack_factor,
            "cycle_time_s": self.cycle_time_s,
            "rep": list(self.rep),
            "entries": [asdict(e) for e in self.entries],
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "HsConfigTable":
        try:
            body = json.loads(text)
            entries = [HsEntry(**e) for e in body["entries"]]
            return cls(entries, int(body["burst_length"]), int(body["pack_factor"]),
                       float(body.get("cycle_time_s", 0.0)), tuple(body.get("rep", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config table: {exc}") from None


def _apportion(targets: Sequence[float], total: int) -> tuple[float, list[int]]:
    """Minimax integer apportionment of ``total`` slots, each entry >= 1."""
    n = len(targets)
    cands = sorted({abs(k / total - t) for t in targets for k in range(1, total + 1)})

    def bounds(eps):
        slack = eps + 1e-12
        lo = [max(1, math.ceil((t - slack) * total)) for t in targets]
        hi = [min(total, math.floor((t + slack) * total)) for t in targets]
        return lo, hi

    def feasible(eps):
        lo, hi = bounds(eps)
        return all(a <= b for a, b in zip(lo, hi)) and sum(lo) <= total <= sum(hi)

    lo_i, hi_i = 0, len(cands) - 1
    if not feasible(cands[hi_i]):
        return math.inf, []
    while lo_i < hi_i:
        mid = (lo_i + hi_i) // 2
        if feasible(cands[mid]):
            hi_i = mid
        else:
            lo_i = mid + 1
    lo, hi = bounds(cands[lo_i])
    slots = list(lo)
    spare = total - sum(slots)
    # hand out the rest to the entries furthest below their target
    order = sorted(range(n), key=lambda e: (slots[e] / total - targets[e], e))
    while spare:
        for e in order:
            if spare and slots[e] < hi[e]:
                slots[e] += 1
                spare -= 1
    err = max(abs(s / total - t) for s, t in zip(slots, targets))
    return err, slots


def compute_slots(required_bw: Sequence[float], b_mem: float,
                  max_slots_total: int = MAX_SLOTS_TOTAL) -> tuple[tuple, tuple]:
    """Slot counts whose ratios best match the bandwidth demands.

    Demands are normalised over the group, so any spare bandwidth is split
    in proportion.  Returns (slots, achieved fractions).
    """
    n = len(required_bw)
    if n == 0:
        return (), ()
    if max_slots_total < n:
        raise ValueError(f"max_slots_total={max_slots_total} < {n} entries")
    if any(b <= 0 for b in required_bw):
        raise ValueError("bandwidth demands must be positive")
    total_bw = sum(required_bw)
    targets = [b / total_bw for b in required_bw]
    best = (math.inf, None)
    for total in range(n, max_slots_total + 1):
        err, slots = _apportion(targets, total)
        if err < best[0] - 1e-12:
            best = (err, slots)
    slots = tuple(best[1])
    s = sum(slots)
    return slots, tuple(k / s for k in slots)


def concurrency_groups(schedule: CyclicSchedule, tasks=None) -> list[list[int]]:
    """Connected components of the task-overlap graph within one period."""
    tasks = schedule.tasks if tasks is None else tasks
    n = len(tasks)
    span = max(schedule.cycle_time_s, 1e-300)
    iv = sorted(range(n), key=lambda k: (schedule.start[k], k))
    groups: list[list[int]] = []
    reach = -math.inf
    for k in iv:
        s = schedule.start[k]
        e = s + tasks[k].latency_s
        if groups and s < reach - 1e-9 * span:
            groups[-1].append(k)
            reach = max(reach, e)
        else:
            groups.append([k])
            reach = e
    return [sorted(g) for g in groups]


def _check_group_capacity(schedule: CyclicSchedule, group: list[int], b_mem: float) -> None:
    tasks = schedule.tasks
    span = max(schedule.cycle_time_s, 1e-300)
    times = sorted({schedule.start[k] for k in group} | {schedule.end(k) for k in group})
    for t0, t1 in zip(times, times[1:]):
        if t1 - t0 <= 1e-9 * span:
            continue
        load = sum(tasks[k].bandwidth for k in group
                   if schedule.start[k] <= t0 and schedule.end(k) >= t1)
        if load > b_mem * (1 + BW_TOL) * (1 + 1e-6):
            raise ConfigError(
                f"concurrent demand {load:.6g} B/s exceeds {b_mem:.6g} B/s in [{t0:.6g}, {t1:.6g}]"
            )


def build_config_table(schedule: CyclicSchedule, sigma: JointDesignPoint, platform: PlatformSpec,
                       max_slots_total: int = MAX_SLOTS_TOTAL) -> HsConfigTable:
    tasks = schedule.tasks
    if not tasks:
        raise ConfigError("schedule carries no tasks")
    wb = platform.word_bytes
    pack = platform.pack_factor
    burst = platform.burst_length
    metrics = [p.metrics for p in sigma.points]
    if len(metrics) != len(schedule.rep):
        raise ConfigError("schedule and joint design point cover different CNN counts")

    slots = [0] * len(tasks)
    totals = [0] * len(tasks)
    for group in concurrency_groups(schedule):
        _check_group_capacity(schedule, group, platform.b_mem)
        s, _ = compute_slots([tasks[k].bandwidth for k in group], platform.b_mem, max_slots_total)
        for k, v in zip(group, s):
            slots[k] = v
            totals[k] = sum(s)

    # flat address space: each CNN's subgraph data laid out back to back
    address = {}
    cursor = 0
    for i, m in enumerate(metrics):
        for j, sub in enumerate(m):
            address[(i, j)] = cursor
            cursor += sub.transfer_bytes

    entries = []
    for k, t in enumerate(tasks):
        n_sub = len(metrics[t.cnn])
        j0 = t.subgraph % n_sub
        data = metrics[t.cnn][j0].transfer_bytes // wb
        entries.append(HsEntry(
            cnn=t.cnn, subgraph=t.subgraph, data_elements=int(data), slots=slots[k],
            base_address=address[(t.cnn, j0)],
            executions=executions_needed(int(data), slots[k], burst, pack),
            slots_total=totals[k], release_s=schedule.start[k], latency_s=t.latency_s,
        ))
    return HsConfigTable(entries, burst, pack, schedule.cycle_time_s, schedule.rep)


def round_deliveries(data_elements: int, slots: int, burst_length: int, pack_factor: int) -> list[int]:
    """Elements moved in each round; the last round may be partial."""
    per_round = slots * burst_length * pack_factor
    full, rest = divmod(data_elements, per_round)
    return [per_round] * full + ([rest] if rest else [])
