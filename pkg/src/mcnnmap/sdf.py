"""Synchronous-dataflow performance model of a single CNN engine.

Each subgraph of a partitioned CNN is a chain of hardware stages.  For a
chain of ``V`` stages there are ``V + 1`` arcs: arc ``v`` feeds stage ``v``
and arc ``v + 1`` carries its output.  Topology entries hold processing
rates (elements/cycle), workload entries hold elements per input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .model import (
    LayerKind,
    LayerSpec,
    ModelError,
    NetworkSpec,
    Partitioning,
    PlatformSpec,
    ResourceCostModel,
    ResourceVector,
    ValidationError,
)

__all__ = [
    "StageConfig", "EngineConfig", "SubgraphMetrics", "ResourceVector",
    "build_matrices", "initiation_interval", "subgraph_time", "total_time",
    "bandwidth_demand", "resource_usage", "subgraph_metrics", "engine_metrics",
    "STAGE_LATENCY_CYCLES",
]

# fixed pipeline fill/drain cost per stage pass
STAGE_LATENCY_CYCLES = 16


@dataclass(frozen=True)
class StageConfig:
    t: LayerKind
    n_pe: int = 1
    n_op: int = 1
    f_in: int = 1

    def __post_init__(self):
        object.__setattr__(self, "t", LayerKind(self.t))

    def validate(self, layer: LayerSpec) -> None:
        if self.t is not layer.kind:
            raise ValidationError(f"stage type {self.t.value} does not match layer {layer.kind.value}")
        if not 1 <= self.n_pe <= layer.n_out:
            raise ValidationError(f"n_pe={self.n_pe} outside [1, {layer.n_out}]")
        if not 1 <= self.n_op <= layer.k * layer.k:
            raise ValidationError(f"n_op={self.n_op} outside [1, {layer.k * layer.k}]")
        if self.t is LayerKind.CONV:
            if not 1 <= self.f_in <= layer.n_in or layer.n_in % self.f_in:
                raise ValidationError(f"f_in={self.f_in} must divide n_in={layer.n_in}")
        elif self.f_in != 1:
            raise ValidationError("only Conv stages take an input fold")
        if self.t is LayerKind.NONLIN and self.n_op != 1:
            raise ValidationError("nonlin stages have n_op = 1")

    @property
    def rate(self) -> int:
        return self.n_pe * self.n_op


@dataclass(frozen=True)
class EngineConfig:
    partitioning: Partitioning
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    def validate(self, net: NetworkSpec) -> None:
        self.partitioning.validate(net)
        if len(self.stages) != len(net.layers):
            raise ValidationError(f"expected {len(net.layers)} stages, got {len(self.stages)}")
        for layer, stage in zip(net.layers, self.stages):
            stage.validate(layer)
        folds = tuple(self.stages[i].f_in for i in net.conv_indices)
        if folds != self.partitioning.input_folds:
            raise ValidationError("stage f_in values disagree with the partitioning's input folds")

    def subgraph_layers(self, n_layers: int, index: int) -> range:
        ranges = self.partitioning.ranges(n_layers)
        if not 0 <= index < len(ranges):
            raise IndexError(f"subgraph index {index} out of range [0, {len(ranges)})")
        return range(*ranges[index])


def _stage_workload(layer: LayerSpec, stage: StageConfig) -> int:
    if layer.kind is LayerKind.CONV:
        return stage.f_in * layer.n_out * layer.k ** 2 * layer.h_out * layer.w_out
    if layer.kind is LayerKind.POOL:
        return layer.n_out * layer.k ** 2 * layer.h_out * layer.w_out
    return layer.n_out * layer.h_out * layer.w_out


def _tile_reps(layer: LayerSpec, stage: StageConfig) -> int:
    return layer.n_in // stage.f_in if layer.kind is LayerKind.CONV else 1


def build_matrices(net: NetworkSpec, cfg: EngineConfig, subgraph_index: int):
    """Topology and workload matrices of one subgraph, shape (V + 1, V)."""
    idx = cfg.subgraph_layers(len(net.layers), subgraph_index)
    n_v = len(idx)
    gamma = np.zeros((n_v + 1, n_v))
    w = np.zeros((n_v + 1, n_v), dtype=np.int64)
    loads = [_stage_workload(net.layers[i], cfg.stages[i]) for i in idx]
    for v, i in enumerate(idx):
        layer, stage = net.layers[i], cfg.stages[i]
        gamma[v, v] = stage.rate
        w[v, v] = loads[v]
        # the producer emits exactly what the consumer on the arc takes, at
        # a rate scaled so both ends of the stage share one interval
        produced = loads[v + 1] if v + 1 < n_v else layer.output_elements
        w[v + 1, v] = produced
        gamma[v + 1, v] = stage.rate * produced / loads[v]
    return gamma, w


def initiation_interval(w: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if w.shape != gamma.shape:
        raise ModelError(f"shape mismatch {w.shape} vs {gamma.shape}")
    if np.any((w != 0) & (gamma == 0)):
        raise ModelError("stage processes arc with zero rate")
    out = np.zeros_like(w)
    nz = w != 0
    out[nz] = w[nz] / gamma[nz]
    return out


def subgraph_time(batch: int, gamma, w, depth_cycles: float, clock_hz: float,
                  tile_reps: Union[int, Sequence[int]] = 1) -> float:
    """Execution time of one subgraph for ``batch`` inputs.

    ``tile_reps`` is either one count for the whole subgraph or one count
    per stage; in the latter case the steady-state interval is the largest
    per-stage interval times that stage's number of passes.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    ii = initiation_interval(w, gamma)
    if np.ndim(tile_reps) == 0:
        interval = (ii.max() if ii.size else 0.0) * tile_reps
    else:
        per_stage = ii.max(axis=0) if ii.size else np.zeros(0)
        interval = float(np.max(per_stage * np.asarray(tile_reps))) if per_stage.size else 0.0
    return (depth_cycles + interval * (batch - 1)) / clock_hz


@dataclass(frozen=True)
class SubgraphMetrics:
    """Per-subgraph figures at batch size 1.

    ``latency_s`` is the task latency handed to the scheduler: pipeline
    traversal plus loading the subgraph's weights at full bandwidth.
    """

    depth_cycles: float
    compute_s: float
    weights_time_s: float
    latency_s: float
    bandwidth_bytes_per_s: float
    ops: int
    weight_bytes: int
    io_bytes: int

    @property
    def transfer_bytes(self) -> int:
        return self.weight_bytes + self.io_bytes


def _depth_cycles(net: NetworkSpec, cfg: EngineConfig, idx: range, gamma, w,
                  stage_latency: int) -> float:
    ii = initiation_interval(w, gamma)
    depth = 0.0
    for v, i in enumerate(idx):
        reps = _tile_reps(net.layers[i], cfg.stages[i])
        depth += reps * (float(ii[:, v].max()) + stage_latency)
    return depth


def subgraph_metrics(net: NetworkSpec, cfg: EngineConfig, index: int, platform: PlatformSpec,
                     stage_latency: int = STAGE_LATENCY_CYCLES) -> SubgraphMetrics:
    idx = cfg.subgraph_layers(len(net.layers), index)
    gamma, w = build_matrices(net, cfg, index)
    depth = _depth_cycles(net, cfg, idx, gamma, w, stage_latency)
    wb = platform.word_bytes
    first, last = net.layers[idx.start], net.layers[idx.stop - 1]
    weight_bytes = sum(net.layers[i].weight_count for i in idx) * wb
    io_bytes = (first.input_elements + last.output_elements) * wb
    compute_s = depth / platform.clock_hz
    weights_s = weight_bytes / platform.b_mem
    latency = compute_s + weights_s
    return SubgraphMetrics(
        depth_cycles=depth,
        compute_s=compute_s,
        weights_time_s=weights_s,
        latency_s=latency,
        bandwidth_bytes_per_s=(weight_bytes + io_bytes) / latency,
        ops=sum(net.layers[i].ops for i in idx),
        weight_bytes=weight_bytes,
        io_bytes=io_bytes,
    )


def engine_metrics(net: NetworkSpec, cfg: EngineConfig, platform: PlatformSpec,
                   stage_latency: int = STAGE_LATENCY_CYCLES) -> tuple:
    return tuple(subgraph_metrics(net, cfg, j, platform, stage_latency)
                 for j in range(cfg.partitioning.num_subgraphs()))


def total_time(net: NetworkSpec, cfg: EngineConfig, batch: int, platform: PlatformSpec,
               bandwidth: Optional[float] = None, stage_latency: int = STAGE_LATENCY_CYCLES) -> float:
    """Batch execution time of every subgraph plus their weight loads.

    ``bandwidth`` is the stream bandwidth for weight loading; defaults to
    the whole platform bandwidth.
    """
    bw = platform.b_mem if bandwidth is None else bandwidth
    total = 0.0
    for j in range(cfg.partitioning.num_subgraphs()):
        idx = cfg.subgraph_layers(len(net.layers), j)
        gamma, w = build_matrices(net, cfg, j)
        depth = _depth_cycles(net, cfg, idx, gamma, w, stage_latency)
        reps = [_tile_reps(net.layers[i], cfg.stages[i]) for i in idx]
        total += subgraph_time(batch, gamma, w, depth, platform.clock_hz, reps)
        total += sum(net.layers[i].weight_count for i in idx) * platform.word_bytes / bw
    return total


def bandwidth_demand(net: NetworkSpec, cfg: EngineConfig, subgraph_index: int,
                     platform: PlatformSpec) -> float:
    return subgraph_metrics(net, cfg, subgraph_index, platform).bandwidth_bytes_per_s


def weight_tile_bytes(layer: LayerSpec, stage: StageConfig, word_bytes: int) -> int:
    if layer.kind is not LayerKind.CONV:
        return 0
    return stage.f_in * layer.n_out * layer.k ** 2 * word_bytes


def line_buffer_bytes(layer: LayerSpec, stage: StageConfig, word_bytes: int) -> int:
    if layer.kind is LayerKind.CONV:
        return stage.f_in * layer.k * layer.w_in * word_bytes
    if layer.kind is LayerKind.POOL:
        return layer.n_in * layer.k * layer.w_in * word_bytes
    return 0


def stage_resources(layer: LayerSpec, stage: StageConfig, cost: ResourceCostModel,
                    word_bytes: int) -> ResourceVector:
    ops = stage.n_pe * stage.n_op
    bram = math.ceil(line_buffer_bytes(layer, stage, word_bytes) / cost.bram_bytes)
    bram += math.ceil(weight_tile_bytes(layer, stage, word_bytes) / cost.bram_bytes)
    dsp = cost.dsp_base + ops * cost.dsp_per_mult if layer.kind is LayerKind.CONV else 0
    return ResourceVector(
        lut=cost.lut_base + ops * cost.lut_per_pe,
        ff=cost.ff_base + ops * cost.ff_per_pe,
        dsp=dsp,
        bram=bram,
    )


def resource_usage(net: NetworkSpec, cfg: EngineConfig, cost_model: ResourceCostModel,
                   wordlength_bits: int = 16) -> ResourceVector:
    """Engine footprint: the largest per-subgraph stage total, per component.

    One engine datapath executes every subgraph of its CNN in turn, so it is
    sized for the most demanding subgraph.
    """
    word_bytes = wordlength_bits // 8
    out = ResourceVector()
    for j in range(cfg.partitioning.num_subgraphs()):
        idx = cfg.subgraph_layers(len(net.layers), j)
        sub = ResourceVector.total(
            stage_resources(net.layers[i], cfg.stages[i], cost_model, word_bytes) for i in idx
        )
        out = out.maximum(sub)
    return out
