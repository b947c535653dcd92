"""Per-CNN design points, latency/resource Pareto fronts, and joint points."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import (
    LayerKind,
    ModelError,
    NetworkSpec,
    Partitioning,
    PlatformSpec,
    ResourceVector,
    divisors,
    enumerate_partitionings,
    _cut_sets,
)
from .sdf import (
    STAGE_LATENCY_CYCLES,
    EngineConfig,
    StageConfig,
    engine_metrics,
    resource_usage,
    stage_resources,
    _stage_workload,
    _tile_reps,
)


class NoFeasibleDesign(ModelError):
    pass


@dataclass(frozen=True)
class FoldLimits:
    max_subgraphs: int = 8
    max_n_pe: Optional[int] = None
    max_n_op: Optional[int] = None
    max_points: int = 250_000


@dataclass(frozen=True)
class DesignPoint:
    net: NetworkSpec
    engine: EngineConfig
    metrics: tuple
    rsc: ResourceVector
    latency_s: float

    @property
    def objectives(self) -> tuple:
        return (self.latency_s, *self.rsc.as_tuple())

    @property
    def ops(self) -> int:
        return self.net.ops

    def alone_latency(self, b_mem: float) -> float:
        """Frame time with the whole device and memory bandwidth to itself."""
        return sum(max(m.latency_s, m.transfer_bytes / b_mem) for m in self.metrics)


@dataclass(frozen=True)
class JointDesignPoint:
    points: tuple

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def rsc(self) -> ResourceVector:
        return ResourceVector.total(p.rsc for p in self.points)

    def __len__(self):
        return len(self.points)


def _stage_options(net: NetworkSpec, i: int, limits: FoldLimits, f_in: Optional[int] = None):
    layer = net.layers[i]
    pes = [d for d in divisors(layer.n_out) if limits.max_n_pe is None or d <= limits.max_n_pe]
    if layer.kind is LayerKind.NONLIN:
        ops = [1]
    else:
        ops = [d for d in divisors(layer.k * layer.k) if limits.max_n_op is None or d <= limits.max_n_op]
    folds = [f_in] if f_in is not None else [1]
    return [StageConfig(layer.kind, p, o, f) for p in pes for o in ops for f in folds]


def _stage_cycles(net: NetworkSpec, i: int, stage: StageConfig, stage_latency: int) -> int:
    layer = net.layers[i]
    reps = _tile_reps(layer, stage)
    return reps * (_stage_workload(layer, stage) // stage.rate + stage_latency)


def make_point(net: NetworkSpec, engine: EngineConfig, platform: PlatformSpec,
               stage_latency: int = STAGE_LATENCY_CYCLES) -> DesignPoint:
    metrics = engine_metrics(net, engine, platform, stage_latency)
    rsc = resource_usage(net, engine, platform.cost_model, platform.wordlength_bits)
    cycles = sum(_stage_cycles(net, i, s, stage_latency) for i, s in enumerate(engine.stages))
    weight_bytes = sum(m.weight_bytes for m in metrics)
    # one canonical formula so equal cycle counts give bit-identical latencies
    latency = cycles / platform.clock_hz + weight_bytes / platform.b_mem
    return DesignPoint(net, engine, metrics, rsc, latency)


def _engines(net: NetworkSpec, limits: FoldLimits):
    conv_pos = {idx: k for k, idx in enumerate(net.conv_indices)}
    for part in enumerate_partitionings(net, limits.max_subgraphs):
        per_layer = []
        for i in range(len(net.layers)):
            f_in = part.input_folds[conv_pos[i]] if i in conv_pos else None
            per_layer.append(_stage_options(net, i, limits, f_in))
        for stages in itertools.product(*per_layer):
            yield EngineConfig(part, stages)


def count_lattice(net: NetworkSpec, limits: FoldLimits) -> int:
    conv_pos = {idx: k for k, idx in enumerate(net.conv_indices)}
    total = 0
    for part in enumerate_partitionings(net, limits.max_subgraphs):
        n = 1
        for i in range(len(net.layers)):
            f_in = part.input_folds[conv_pos[i]] if i in conv_pos else None
            n *= len(_stage_options(net, i, limits, f_in))
        total += n
    return total


def enumerate_points(net: NetworkSpec, platform: PlatformSpec,
                     limits: FoldLimits = FoldLimits()) -> list[DesignPoint]:
    """Materialise every lattice point that fits the device on its own."""
    size = count_lattice(net, limits)
    if size > limits.max_points:
        raise ModelError(
            f"{net.name}: fold lattice has {size} points (limit {limits.max_points}); "
            "tighten the limits or use explore()"
        )
    points = []
    for engine in _engines(net, limits):
        point = make_point(net, engine, platform)
        if point.rsc.fits(platform.rsc_avail):
            points.append(point)
    if not points:
        raise NoFeasibleDesign(f"no feasible single-CNN design for {net.name}")
    return points


def _front_mask(vectors: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Exact non-dominated mask.

    Vectors are visited in lexicographic order, where only earlier vectors
    can dominate later ones.  A vector dominated by a discarded one is also
    dominated by whatever discarded it, so checking each chunk against the
    kept set plus the chunk itself suffices.
    """
    n, d = vectors.shape
    order = np.lexsort(vectors.T[::-1])
    keep = np.zeros(n, dtype=bool)
    kept = np.empty((n, d))
    count = 0
    for lo in range(0, n, chunk):
        idx = order[lo:lo + chunk]
        block = vectors[idx]
        dominated = np.zeros(len(idx), dtype=bool)
        for ref in (kept[:count], block):
            if len(ref):
                le = np.all(ref[:, None, :] <= block[None, :, :], axis=2)
                lt = np.any(ref[:, None, :] < block[None, :, :], axis=2)
                dominated |= np.any(le & lt, axis=0)
        survivors = idx[~dominated]
        keep[survivors] = True
        kept[count:count + len(survivors)] = vectors[survivors]
        count += len(survivors)
    return keep


def pareto_front(points: Sequence[DesignPoint]) -> list[DesignPoint]:
    """Non-dominated points over (latency, lut, ff, dsp, bram), input order kept."""
    if not points:
        raise ValueError("pareto_front needs at least one point")
    vectors = np.array([p.objectives for p in points], dtype=float)
    mask = _front_mask(vectors)
    return [p for p, k in zip(points, mask) if k]


def _prune(entries: list) -> list:
    vectors = np.array([e[0] for e in entries], dtype=float)
    mask = _front_mask(vectors)
    return [e for e, k in zip(entries, mask) if k]


def explore(net: NetworkSpec, platform: PlatformSpec,
            limits: FoldLimits = FoldLimits(), stage_latency: int = STAGE_LATENCY_CYCLES) -> list[DesignPoint]:
    """Pareto front of the full lattice without materialising it.

    Cycle counts and resources are sums over stages inside a subgraph and the
    engine footprint is a componentwise max over subgraphs; both operations
    are monotone, so partial combinations that are strictly dominated can be
    discarded early.  Yields the same objective vectors as
    ``pareto_front(enumerate_points())``; when several designs tie on every
    objective, some of them may be dropped.
    """
    wb = platform.word_bytes
    cost = platform.cost_model
    avail = np.array(platform.rsc_avail.as_tuple(), dtype=float)
    conv_pos = {idx: k for k, idx in enumerate(net.conv_indices)}
    candidates = []
    for cuts in _cut_sets(net, limits.max_subgraphs):
        ranges = Partitioning(cuts).ranges(len(net.layers))
        sub_fronts = []
        for start, end in ranges:
            partial = [((0, 0, 0, 0, 0), ())]
            for i in range(start, end):
                layer = net.layers[i]
                folds = divisors(layer.n_in) if i in conv_pos else [None]
                opts = []
                for f in folds:
                    for st in _stage_options(net, i, limits, f):
                        r = stage_resources(layer, st, cost, wb)
                        vec = (_stage_cycles(net, i, st, stage_latency), *r.as_tuple())
                        if np.all(np.array(vec[1:]) <= avail):
                            opts.append((vec, st))
                combined = [
                    (tuple(a + b for a, b in zip(pv, ov)), stages + (st,))
                    for pv, stages in partial for ov, st in opts
                ]
                combined = [c for c in combined if np.all(np.array(c[0][1:]) <= avail)]
                partial = _prune(combined) if combined else []
            sub_fronts.append(partial)
        if any(not f for f in sub_fronts):
            continue
        engines = [((0, 0, 0, 0, 0), ())]
        for front in sub_fronts:
            engines = _prune([
                ((ev[0] + sv[0], *(max(a, b) for a, b in zip(ev[1:], sv[1:]))), es + ss)
                for ev, es in engines for sv, ss in front
            ])
        for _, stages in engines:
            folds = tuple(stages[i].f_in for i in net.conv_indices)
            candidates.append(EngineConfig(Partitioning(cuts, folds), stages))
    points = [make_point(net, e, platform, stage_latency) for e in candidates]
    points = [p for p in points if p.rsc.fits(platform.rsc_avail)]
    if not points:
        raise NoFeasibleDesign(f"no feasible single-CNN design for {net.name}")
    return pareto_front(points)


def _spread(front: Sequence[DesignPoint], cap: int) -> list[DesignPoint]:
    ranked = sorted(front, key=lambda p: (p.latency_s, p.rsc.as_tuple()))
    if len(ranked) <= cap:
        return ranked
    if cap == 1:
        return ranked[:1]
    picks = sorted({round(i * (len(ranked) - 1) / (cap - 1)) for i in range(cap)})
    return [ranked[i] for i in picks]


def enumerate_joint(fronts: Sequence[Sequence[DesignPoint]], rsc_avail: ResourceVector,
                    cap: Optional[int] = None) -> list[JointDesignPoint]:
    """Feasible combinations of front points, lexicographic by front index.

    ``cap`` keeps at most ``cap`` points of each front, evenly spaced in
    latency rank from the fastest to the smallest design.
    """
    if any(len(f) == 0 for f in fronts):
        raise ValueError("every CNN needs a nonempty front")
    if cap is not None:
        if cap < 1:
            raise ValueError("cap must be >= 1")
        fronts = [_spread(f, cap) for f in fronts]
    avail = np.array(rsc_avail.as_tuple())
    rsc = [np.array([p.rsc.as_tuple() for p in f]) for f in fronts]
    out = []
    for combo in itertools.product(*(range(len(f)) for f in fronts)):
        total = sum(rsc[i][j] for i, j in enumerate(combo))
        if np.all(total <= avail):
            out.append(JointDesignPoint(tuple(fronts[i][j] for i, j in enumerate(combo))))
    if not out:
        raise NoFeasibleDesign("no feasible joint design")
    return out
