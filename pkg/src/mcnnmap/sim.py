"""Event-driven simulation of CNN engines sharing one memory port.

Time is counted in engine clock cycles.  The port moves one burst
(``burst_length * pack_factor`` elements) per slot at the full memory
rate.  Each engine streams its current subgraph's data through a FIFO and
consumes it no faster than its pipeline allows; when the FIFO runs dry the
engine stalls.  Between events every rate is constant, so the state is
advanced in closed form from one event to the next.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .hsched import ConfigError, HsConfigTable, build_config_table
from .model import PlatformSpec
from .optimizer import Objective, optimise_joint, schedule_joint
from .pareto import JointDesignPoint

_EPS = 1e-6


@dataclass(frozen=True)
class MemoryAware:
    """Table-driven round robin.

    By default engines run data-driven and the table only sets how many
    consecutive slots the engine's current subgraph gets per round.  With
    ``time_triggered`` each subgraph instance is also held back until its
    scheduled start in every period.
    """

    table: HsConfigTable
    time_triggered: bool = False


@dataclass(frozen=True)
class ContentionUnaware:
    penalty: float = 0.15

    def efficiency(self, requesters: int) -> float:
        return 1.0 / (1.0 + self.penalty * max(0, requesters - 1))


@dataclass(frozen=True)
class SimConfig:
    policy: Union[MemoryAware, ContentionUnaware]
    duration_frames: int = 4
    fifo_depth: Optional[int] = None
    seed: int = 0
    trace: bool = False

    def __post_init__(self):
        if self.duration_frames < 1:
            raise ValueError("duration_frames must be >= 1")


@dataclass
class SimResult:
    fps: tuple
    frame_times_s: tuple
    subgraph_latency_s: dict
    stall_cycles: tuple
    delivered_elements: tuple
    demanded_elements: tuple
    busy_cycles: float
    end_cycle: float
    timeline: list = field(default_factory=list)

    @property
    def utilisation(self) -> float:
        return self.busy_cycles / self.end_cycle if self.end_cycle else 0.0


@dataclass
class _Job:
    subgraph: int
    base: int
    elements: float
    cap: float
    release: float
    slots: int
    frame_end: bool


class _Engine:
    def __init__(self, cnn: int, jobs: Iterator[_Job], fifo_depth: float):
        self.cnn = cnn
        self.jobs = jobs
        self.depth = fifo_depth
        self.pending = next(jobs, None)
        self.cur: Optional[_Job] = None
        self.delivered = 0.0
        self.consumed = 0.0
        self.started = 0.0
        self.frames_done: list[float] = []
        self.latencies: dict[int, list[float]] = {}
        self.stall = 0.0
        self.total_delivered = 0.0
        self.total_demand = 0.0

    @property
    def fifo(self) -> float:
        return self.delivered - self.consumed

    def undelivered(self) -> float:
        return self.cur.elements - self.delivered if self.cur else 0.0

    def grant_size(self, slot: float) -> float:
        return min(slot, self.undelivered())

    def requesting(self, slot: float) -> bool:
        if self.cur is None or self.undelivered() <= _EPS:
            return False
        return self.depth - self.fifo >= self.grant_size(slot) - _EPS

    def activate(self, now: float) -> None:
        if self.cur is None and self.pending is not None and self.pending.release <= now + _EPS:
            self.cur, self.pending = self.pending, next(self.jobs, None)
            self.delivered = self.consumed = 0.0
            self.started = now
            self.total_demand += self.cur.elements

    def finished(self) -> bool:
        return self.cur is None and self.pending is None


def _elements(metric, word_bytes: int) -> int:
    return metric.transfer_bytes // word_bytes


def _ma_jobs(sigma: JointDesignPoint, table: HsConfigTable, platform: PlatformSpec,
             periods: int) -> list[Iterator[_Job]]:
    clock = platform.clock_hz
    k_cycles = table.cycle_time_s * clock
    per_cnn: dict[int, list] = {}
    for e in table.entries:
        per_cnn.setdefault(e.cnn, []).append(e)
    out = []
    for i, point in enumerate(sigma.points):
        n_sub = len(point.metrics)
        entries = sorted(per_cnn.get(i, []), key=lambda e: e.subgraph)

        def gen(entries=entries, point=point, n_sub=n_sub):
            for p in range(periods):
                for e in entries:
                    m = point.metrics[e.subgraph % n_sub]
                    yield _Job(e.subgraph, e.subgraph % n_sub, float(e.data_elements),
                               e.data_elements / (m.latency_s * clock),
                               p * k_cycles + e.release_s * clock, e.slots,
                               e.subgraph % n_sub == n_sub - 1)
        out.append(gen())
    return out


def _free_jobs(sigma: JointDesignPoint, platform: PlatformSpec,
               table: Optional[HsConfigTable] = None) -> list[Iterator[_Job]]:
    clock = platform.clock_hz
    wb = platform.word_bytes
    out = []
    for i, point in enumerate(sigma.points):
        n_sub = len(point.metrics)
        rep = table.rep[i] if table is not None else 1

        def gen(i=i, point=point, n_sub=n_sub, rep=rep):
            k = 0
            while True:
                j = k % n_sub
                m = point.metrics[j]
                el = _elements(m, wb)
                slots = table.entry(i, k % (rep * n_sub)).slots if table is not None else 1
                yield _Job(k, j, float(el), el / (m.latency_s * clock), 0.0, slots, j == n_sub - 1)
                k += 1
        out.append(gen())
    return out


def check_table(sigma: JointDesignPoint, table: HsConfigTable, platform: PlatformSpec) -> None:
    if len(table.rep) != len(sigma):
        raise ConfigError(f"table covers {len(table.rep)} CNNs, joint design point has {len(sigma)}")
    for i, point in enumerate(sigma.points):
        n_sub = len(point.metrics)
        subs = sorted(e.subgraph for e in table.entries if e.cnn == i)
        if subs != list(range(table.rep[i] * n_sub)):
            raise ConfigError(f"table entries for CNN {i} do not match its {n_sub} subgraphs x rep {table.rep[i]}")
    for e in table.entries:
        point = sigma.points[e.cnn]
        want = _elements(point.metrics[e.subgraph % len(point.metrics)], platform.word_bytes)
        if e.data_elements != want:
            raise ConfigError(f"entry ({e.cnn}, {e.subgraph}) moves {e.data_elements} elements, design needs {want}")


def simulate(sigma: JointDesignPoint, cfg: SimConfig, platform: PlatformSpec) -> SimResult:
    """Run the engines of ``sigma`` under the configured arbitration policy."""
    clock = platform.clock_hz
    slot = platform.burst_length * platform.pack_factor
    port_rate = platform.b_mem / (platform.word_bytes * clock)
    policy = cfg.policy
    n = len(sigma)

    timed = isinstance(policy, MemoryAware) and policy.time_triggered
    if isinstance(policy, MemoryAware):
        table = policy.table
        check_table(sigma, table, platform)
        # room for two arbitration rounds of the widest entry
        default_depth = 2 * slot * max(e.slots for e in table.entries)
        if timed:
            periods = -(-cfg.duration_frames // min(table.rep))
            job_iters = _ma_jobs(sigma, table, platform, periods)
            frames_wanted = [periods * r for r in table.rep]
        else:
            job_iters = _free_jobs(sigma, platform, table)
            frames_wanted = [cfg.duration_frames] * n
    else:
        job_iters = _free_jobs(sigma, platform)
        default_depth = 2 * slot
        frames_wanted = [cfg.duration_frames] * n
    depth = default_depth if cfg.fifo_depth is None else cfg.fifo_depth
    if depth < slot:
        raise ConfigError(f"fifo depth {depth} is smaller than one burst delivery ({slot} elements)")

    engines = [_Engine(i, it, depth) for i, it in enumerate(job_iters)]
    rng = random.Random(cfg.seed)
    now = 0.0
    holder: Optional[_Engine] = None
    grant_left = 0.0
    grant_rate = 0.0
    turn_left = 0
    grant_start = 0.0
    grant_amount = 0.0
    pointer = 0
    busy = 0.0
    timeline = []

    def done() -> bool:
        if timed:
            return all(e.finished() for e in engines)
        return all(len(e.frames_done) >= f for e, f in zip(engines, frames_wanted))

    def start_grant(e: _Engine, rate: float, turns: int) -> None:
        nonlocal holder, grant_left, grant_rate, turn_left, grant_start, grant_amount
        holder = e
        grant_left = grant_amount = e.grant_size(slot)
        grant_rate = rate
        turn_left = turns
        grant_start = now

    guard = 0
    while not done():
        guard += 1
        if guard > 50_000_000:
            raise RuntimeError("simulation did not converge")
        for e in engines:
            e.activate(now)
        if holder is None:
            req = [e for e in engines if e.requesting(slot)]
            if req:
                if isinstance(policy, MemoryAware):
                    for step in range(n):
                        e = engines[(pointer + step) % n]
                        if e in req:
                            start_grant(e, port_rate, e.cur.slots - 1)
                            break
                else:
                    e = req[rng.randrange(len(req))]
                    start_grant(e, port_rate * policy.efficiency(len(req)), 0)

        inflow = {id(holder): grant_rate} if holder is not None else {}
        rates = []
        dt = math.inf
        if holder is not None:
            dt = grant_left / grant_rate
        for e in engines:
            r_in = inflow.get(id(e), 0.0)
            if e.cur is None:
                rates.append((r_in, 0.0))
                if e.pending is not None:
                    dt = min(dt, max(0.0, e.pending.release - now))
                continue
            cons = e.cur.cap if e.fifo > _EPS else min(e.cur.cap, r_in)
            rates.append((r_in, cons))
            if cons > 0:
                dt = min(dt, (e.cur.elements - e.consumed) / cons)
                if cons > r_in and e.fifo > _EPS:
                    dt = min(dt, e.fifo / (cons - r_in))
            if holder is None and e.undelivered() > _EPS and cons > 0:
                short = e.grant_size(slot) - (e.depth - e.fifo)
                if short > 0:
                    dt = min(dt, short / cons)
        if math.isinf(dt):
            raise RuntimeError("simulation deadlocked: no engine can make progress")

        for e, (r_in, cons) in zip(engines, rates):
            if e.cur is None:
                continue
            if cons < e.cur.cap * (1 - 1e-12):
                e.stall += dt
            e.delivered += r_in * dt
            e.total_delivered += r_in * dt
            e.consumed = min(e.delivered, e.consumed + cons * dt)
        if holder is not None:
            busy += dt
            grant_left -= grant_rate * dt
        now += dt

        if holder is not None and grant_left <= _EPS:
            # snap the grant so conservation holds exactly
            holder.delivered += grant_left
            holder.total_delivered += grant_left
            if cfg.trace:
                timeline.append((grant_start, now, holder.cnn, grant_amount))
            prev = holder
            holder = None
            if turn_left > 0 and prev.requesting(slot):
                start_grant(prev, grant_rate, turn_left - 1)
            else:
                pointer = (prev.cnn + 1) % n
        for e in engines:
            if e.cur is not None and e.cur.elements - e.consumed <= _EPS and e.undelivered() <= _EPS:
                job = e.cur
                e.latencies.setdefault(job.base, []).append((now - e.started) / clock)
                if job.frame_end:
                    e.frames_done.append(now)
                e.cur = None
                e.activate(now)

    fps = []
    frame_times = []
    if timed:
        horizon = periods * policy.table.cycle_time_s * clock
        for e, f in zip(engines, frames_wanted):
            end = max(horizon, e.frames_done[-1])
            fps.append(f * clock / end)
            frame_times.append(end / clock / f)
    else:
        for e, f in zip(engines, frames_wanted):
            end = e.frames_done[f - 1]
            fps.append(f * clock / end)
            frame_times.append(end / clock / f)
    lat = {(e.cnn, j): sum(v) / len(v) for e in engines for j, v in e.latencies.items()}
    return SimResult(
        fps=tuple(fps),
        frame_times_s=tuple(frame_times),
        subgraph_latency_s=lat,
        stall_cycles=tuple(e.stall for e in engines),
        delivered_elements=tuple(e.total_delivered for e in engines),
        demanded_elements=tuple(e.total_demand for e in engines),
        busy_cycles=busy,
        end_cycle=now,
        timeline=timeline,
    )


@dataclass(frozen=True)
class PolicyComparison:
    predicted: float
    contention_unaware: float
    memory_aware: float
    fps_predicted: tuple
    fps_contention_unaware: tuple
    fps_memory_aware: tuple
    sl: tuple
    rep: tuple

    @property
    def gain(self) -> float:
        """Relative objective reduction of the memory-aware design."""
        if self.contention_unaware == 0:
            return 0.0
        return (self.contention_unaware - self.memory_aware) / self.contention_unaware


def compare_policies(sigma: JointDesignPoint, platform: PlatformSpec, obj: Objective,
                     sl=None, rep=None, frames: int = 4, seed: int = 0,
                     penalty: float = 0.15, dse_config=None) -> PolicyComparison:
    """Full-bandwidth prediction, contention-unaware and memory-aware outcomes."""
    b_mem = platform.b_mem
    if sl is None:
        kwargs = {} if dse_config is None else {"config": dse_config}
        value, sl, rep = optimise_joint(sigma, obj, b_mem, **kwargs)
        if math.isinf(value):
            raise ConfigError("joint design point is unschedulable")
    rep = tuple(rep) if rep is not None else (1,) * len(sigma)
    sched = schedule_joint(sigma, sl, b_mem, rep)
    table = build_config_table(sched, sigma, platform)
    ma = simulate(sigma, SimConfig(MemoryAware(table), frames, seed=seed), platform)
    cu = simulate(sigma, SimConfig(ContentionUnaware(penalty), frames, seed=seed), platform)
    fps_pred = tuple(1.0 / p.alone_latency(b_mem) for p in sigma.points)
    return PolicyComparison(
        predicted=obj.value(fps_pred),
        contention_unaware=obj.value(cu.fps),
        memory_aware=obj.value(ma.fps),
        fps_predicted=fps_pred,
        fps_contention_unaware=cu.fps,
        fps_memory_aware=ma.fps,
        sl=tuple(sl),
        rep=rep,
    )
