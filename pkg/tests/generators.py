"""Seeded instance generators shared by the test suite."""

from __future__ import annotations

import random

from mcnnmap.model import LayerSpec, NetworkSpec, PlatformSpec, ResourceVector

BASE_PLATFORM = dict(clock_hz=1e8, port_width_bits=64, wordlength_bits=16, burst_length=64)


def platform(b_mem=4e8, lut=40000, ff=60000, dsp=128, bram=120, **kw) -> PlatformSpec:
    args = dict(BASE_PLATFORM)
    args.update(kw)
    return PlatformSpec(ResourceVector(lut, ff, dsp, bram), b_mem, **args)


def random_network(rng: random.Random, name: str, max_convs: int = 2) -> NetworkSpec:
    """Small conv/relu/pool chain with random widths and spatial sizes."""
    n_convs = rng.randint(1, max_convs)
    c_in = rng.choice([1, 2, 3, 4])
    size = rng.choice([8, 10, 12, 16])
    layers = []
    for idx in range(n_convs):
        c_out = rng.choice([2, 4, 6, 8, 12, 16])
        k = rng.choice([1, 3]) if size > 4 else 1
        h = max(2, size - k + 1)
        layers.append(LayerSpec("conv", c_in, c_out, k, 1, h, h))
        if rng.random() < 0.6:
            layers.append(LayerSpec("nonlin", c_out, c_out, 1, 1, h, h))
        if idx < n_convs - 1 and h >= 4 and rng.random() < 0.5:
            h //= 2
            layers.append(LayerSpec("pool", c_out, c_out, 2, 2, h, h))
        c_in, size = c_out, h
    return NetworkSpec(name, layers)


def random_engine(rng: random.Random, net: NetworkSpec, max_subgraphs: int = 3):
    """One engine drawn uniformly per factor from the legal fold lattice."""
    from mcnnmap.model import LayerKind, divisors, enumerate_partitionings
    from mcnnmap.sdf import EngineConfig, StageConfig

    part = rng.choice(enumerate_partitionings(net, max_subgraphs))
    folds = iter(part.input_folds)
    stages = []
    for layer in net.layers:
        n_pe = rng.choice(divisors(layer.n_out))
        if layer.kind is LayerKind.NONLIN:
            stages.append(StageConfig(layer.kind, n_pe, 1, 1))
            continue
        n_op = rng.choice(divisors(layer.k * layer.k))
        f_in = next(folds) if layer.kind is LayerKind.CONV else 1
        stages.append(StageConfig(layer.kind, n_pe, n_op, f_in))
    return EngineConfig(part, stages)


class FakePoint:
    """Stand-in design point with given per-subgraph latency and bandwidth."""

    def __init__(self, latencies, bandwidths, ops=10**6, transfer_bytes=None):
        from types import SimpleNamespace

        if transfer_bytes is None:
            transfer_bytes = [round(l * b) for l, b in zip(latencies, bandwidths)]
        self.metrics = tuple(
            SimpleNamespace(latency_s=l, bandwidth_bytes_per_s=b, transfer_bytes=t)
            for l, b, t in zip(latencies, bandwidths, transfer_bytes)
        )
        self.ops = ops
        self.latency_s = sum(latencies)

    def alone_latency(self, b_mem):
        return sum(max(m.latency_s, m.transfer_bytes / b_mem) for m in self.metrics)


def fake_joint(*chains, ops=10**6):
    """Joint point from (latencies, bandwidths) pairs, one per CNN."""
    from mcnnmap.pareto import JointDesignPoint

    return JointDesignPoint(tuple(FakePoint(l, b, ops) for l, b in chains))
