import random

import pytest

from mcnnmap.hsched import ConfigError, HsConfigTable, build_config_table
from mcnnmap.optimizer import Objective, make_objective, optimise_joint, schedule_joint
from mcnnmap.pareto import FoldLimits, JointDesignPoint, explore, make_point
from mcnnmap.sdf import total_time
from mcnnmap.sim import ContentionUnaware, MemoryAware, SimConfig, compare_policies, simulate

from generators import fake_joint, platform, random_engine, random_network

CLOCK = 1e8


def single_design(seed, b_mem=1e9):
    rng = random.Random(seed)
    net = random_network(rng, f"n{seed}")
    p = platform(b_mem=b_mem, burst_length=16)
    engine = random_engine(rng, net)
    return net, make_point(net, engine, p), p


def scheduled(sigma, p, rep=None, sl=None):
    rep = rep or (1,) * len(sigma)
    n = sum(len(pt.metrics) * r for pt, r in zip(sigma.points, rep))
    sched = schedule_joint(sigma, sl or (1.0,) * n, p.b_mem, rep)
    return sched, build_config_table(sched, sigma, p)


@pytest.mark.parametrize("seed", range(6))
def test_single_cnn_matches_analytic_time(seed):
    net, point, p = single_design(seed)
    # give the port enough headroom for every subgraph
    p = p.with_bandwidth(2 * max(m.bandwidth_bytes_per_s for m in point.metrics))
    point = make_point(net, point.engine, p)
    sigma = JointDesignPoint([point])
    expected = total_time(net, point.engine, 1, p)
    _, table = scheduled(sigma, p)
    for policy in (MemoryAware(table), ContentionUnaware()):
        res = simulate(sigma, SimConfig(policy, duration_frames=2), p)
        assert expected <= res.frame_times_s[0] <= expected * 1.02


def test_determinism_and_seed():
    sigma = fake_joint(([1e-4, 2e-4], [3e8, 2e8]), ([1.5e-4], [4e8]), ([1e-4], [3e8]))
    p = platform(b_mem=4e8, burst_length=16)
    cfg = SimConfig(ContentionUnaware(), 3, seed=7)
    assert simulate(sigma, cfg, p) == simulate(sigma, cfg, p)
    other = simulate(sigma, SimConfig(ContentionUnaware(), 3, seed=8), p)
    assert other.fps != simulate(sigma, cfg, p).fps
    _, table = scheduled(sigma, p)
    ma = SimConfig(MemoryAware(table), 3)
    assert simulate(sigma, ma, p) == simulate(sigma, ma, p)


def test_time_triggered_conservation_and_prediction():
    sigma = fake_joint(([1e-4, 2e-4], [3e8, 2e8]), ([1.5e-4], [2.5e8]), ([1e-4], [3e8]))
    p = platform(b_mem=4e8, burst_length=16)
    obj = make_objective("fps", [[pt] for pt in sigma.points], p.b_mem)
    value, sl, rep = optimise_joint(sigma, obj, p.b_mem)
    sched, table = scheduled(sigma, p, rep, sl)
    res = simulate(sigma, SimConfig(MemoryAware(table, time_triggered=True), 4), p)
    for got, want in zip(res.fps, sched.fps):
        assert got == pytest.approx(want, rel=0.05)
    assert res.delivered_elements == pytest.approx(res.demanded_elements, rel=1e-9)
    assert res.utilisation <= 1.0


def test_slots_are_exclusive_and_burst_long():
    sigma = fake_joint(([1e-4], [5e8]), ([1e-4], [5e8]))
    # eight-byte port at the engine clock: one packed word per cycle
    p = platform(b_mem=8 * CLOCK, burst_length=16)
    sched, table = scheduled(sigma, p)
    res = simulate(sigma, SimConfig(MemoryAware(table), 2, trace=True), p)
    grants = sorted(res.timeline)
    assert grants
    for (s0, e0, _, _), (s1, _, _, _) in zip(grants, grants[1:]):
        assert s1 >= e0 - 1e-6
    full = [g for g in grants if g[3] == pytest.approx(16 * 4)]
    assert full and all(e - s == pytest.approx(16) for s, e, _, _ in full)


def test_fifo_smaller_than_burst():
    sigma = fake_joint(([1e-4], [1e8]))
    p = platform(burst_length=16)
    with pytest.raises(ConfigError, match="smaller than one burst"):
        simulate(sigma, SimConfig(ContentionUnaware(), 1, fifo_depth=32), p)


def test_table_mismatch():
    sigma = fake_joint(([1e-4], [1e8]), ([1e-4], [1e8]))
    p = platform(burst_length=16)
    _, table = scheduled(sigma, p)
    other = fake_joint(([1e-4, 1e-4], [1e8, 1e8]), ([1e-4], [1e8]))
    with pytest.raises(ConfigError):
        simulate(other, SimConfig(MemoryAware(table), 1), p)
    bigger = fake_joint(([1e-4], [2e8]), ([1e-4], [1e8]))
    with pytest.raises(ConfigError, match="elements"):
        simulate(bigger, SimConfig(MemoryAware(table), 1), p)
    with pytest.raises(ConfigError):
        simulate(fake_joint(([1e-4], [1e8])), SimConfig(MemoryAware(table), 1), p)


def test_duration_must_be_positive():
    with pytest.raises(ValueError):
        SimConfig(ContentionUnaware(), 0)


def test_oversubscribed_contention_unaware_is_slower():
    # three engines that each want 70% of the port
    sigma = fake_joint(*[([2e-4, 1e-4], [2.8e8, 2.8e8])] * 3)
    p = platform(b_mem=4e8, burst_length=16)
    _, table = scheduled(sigma, p)
    ma = simulate(sigma, SimConfig(MemoryAware(table), 4), p)
    cu = simulate(sigma, SimConfig(ContentionUnaware(), 4), p)
    assert sum(cu.fps) < sum(ma.fps)
    assert ma.utilisation <= 1.0


def test_penalty_model():
    cu = ContentionUnaware()
    assert cu.efficiency(1) == 1.0
    assert cu.efficiency(3) == pytest.approx(1 / 1.3)


def test_compare_policies_uncontended():
    sigma = fake_joint(([1e-4, 1e-4], [1e7, 2e7]), ([2e-4], [1e7]))
    p = platform(b_mem=1e9, burst_length=16)
    obj = Objective("maxthrpt", (1 / 2e-4, 1 / 2e-4), (1e6 / 2e-4, 1e6 / 2e-4))
    c = compare_policies(sigma, p, obj)
    assert c.predicted == pytest.approx(0.0, abs=1e-12)
    assert c.contention_unaware == pytest.approx(c.predicted, abs=1e-3)
    assert c.memory_aware == pytest.approx(c.predicted, abs=1e-3)
    assert c.predicted <= min(c.contention_unaware, c.memory_aware)


def test_compare_policies_contended_order():
    sigma = fake_joint(*[([2e-4, 1e-4], [2.8e8, 2.8e8])] * 3)
    p = platform(b_mem=4e8, burst_length=16)
    obj = make_objective("fps", [[pt] for pt in sigma.points], p.b_mem)
    c = compare_policies(sigma, p, obj)
    assert c.predicted <= c.memory_aware <= c.contention_unaware
    assert c.gain > 0
    # nobody beats having the port to itself
    for pred, a, b in zip(c.fps_predicted, c.fps_memory_aware, c.fps_contention_unaware):
        assert max(a, b) <= pred * (1 + 1e-9)


def test_real_designs_time_triggered():
    rng = random.Random(3)
    nets = [random_network(rng, f"n{i}") for i in range(3)]
    p = platform(b_mem=3e8, burst_length=16)
    fronts = [explore(n, p, FoldLimits(2, 8, 9)) for n in nets]
    sigma = JointDesignPoint([f[len(f) // 2] for f in fronts])
    obj = make_objective("maxthrpt", fronts, p.b_mem)
    value, sl, rep = optimise_joint(sigma, obj, p.b_mem)
    sched, table = scheduled(sigma, p, rep, sl)
    res = simulate(sigma, SimConfig(MemoryAware(table, time_triggered=True), 3), p)
    for got, want in zip(res.fps, sched.fps):
        assert got == pytest.approx(want, rel=0.05)
