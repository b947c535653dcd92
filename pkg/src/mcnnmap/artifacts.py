"""JSON artifacts passed between the command-line stages."""

from __future__ import annotations

import json
from typing import Sequence

from .model import NetworkSpec, ParseError, Partitioning, PlatformSpec, parse_network, serialize_network
from .pareto import DesignPoint, JointDesignPoint, make_point
from .sched import CyclicSchedule, TaskInstance
from .sdf import EngineConfig, StageConfig
from .sim import SimResult


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def loads(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what}: {exc.msg}", line=exc.lineno) from None


def point_to_dict(p: DesignPoint) -> dict:
    return {
        "network": p.net.name,
        "cut_points": list(p.engine.partitioning.cut_points),
        "input_folds": list(p.engine.partitioning.input_folds),
        "stages": [
            {"t": s.t.value, "n_pe": s.n_pe, "n_op": s.n_op, "f_in": s.f_in} for s in p.engine.stages
        ],
        "latency_s": p.latency_s,
        "rsc": dict(zip(("lut", "ff", "dsp", "bram"), p.rsc.as_tuple())),
        "subgraphs": [
            {"latency_s": m.latency_s, "bandwidth_bytes_per_s": m.bandwidth_bytes_per_s,
             "weight_bytes": m.weight_bytes, "io_bytes": m.io_bytes, "ops": m.ops}
            for m in p.metrics
        ],
    }


def point_from_dict(d: dict, net: NetworkSpec, platform: PlatformSpec) -> DesignPoint:
    try:
        stages = tuple(StageConfig(s["t"], int(s["n_pe"]), int(s["n_op"]), int(s["f_in"])) for s in d["stages"])
        engine = EngineConfig(Partitioning(tuple(d["cut_points"]), tuple(d["input_folds"])), stages)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed design point for {net.name}: {exc}") from None
    engine.validate(net)
    return make_point(net, engine, platform)


def joint_to_dict(sigma: JointDesignPoint, sl: Sequence[float], rep: Sequence[int]) -> dict:
    return {
        "networks": [serialize_network(p.net) for p in sigma.points],
        "points": [point_to_dict(p) for p in sigma.points],
        "sl": list(sl),
        "rep": list(rep),
    }


def joint_from_dict(d: dict, platform: PlatformSpec) -> tuple[JointDesignPoint, tuple, tuple]:
    try:
        nets = [parse_network(text) for text in d["networks"]]
        points = [point_from_dict(p, n, platform) for p, n in zip(d["points"], nets)]
        if len(points) != len(nets):
            raise ParseError("networks and points differ in length")
        return JointDesignPoint(tuple(points)), tuple(float(x) for x in d["sl"]), tuple(int(r) for r in d["rep"])
    except KeyError as exc:
        raise ParseError(f"joint design file lacks {exc}") from None


def schedule_to_dict(s: CyclicSchedule) -> dict:
    rows = []
    for k, t in enumerate(s.tasks):
        rows.append({
            "cnn": t.cnn, "subgraph": t.subgraph, "start_s": s.start[k], "end_s": s.end(k),
            "sl": t.sl, "bandwidth": t.bandwidth,
            "base_latency_s": t.base_latency_s, "base_bandwidth": t.base_bandwidth,
        })
    return {"cycle_time_s": s.cycle_time_s, "rep": list(s.rep), "tasks": rows}


def schedule_from_dict(d: dict) -> CyclicSchedule:
    try:
        tasks = []
        starts = []
        for r in d["tasks"]:
            tasks.append(TaskInstance(int(r["cnn"]), int(r["subgraph"]), r["end_s"] - r["start_s"],
                                      r["bandwidth"], r["sl"], r["base_latency_s"], r["base_bandwidth"]))
            starts.append(r["start_s"])
        return CyclicSchedule(tuple(starts), d["cycle_time_s"], tuple(d["rep"]), tuple(tasks))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed schedule: {exc}") from None


def sim_to_dict(r: SimResult, names: Sequence[str], ops: Sequence[int], policy: str) -> dict:
    return {
        "policy": policy,
        "cnns": [
            {"name": n, "fps": f, "gops": o * f / 1e9, "stall_cycles": st,
             "delivered_elements": dv, "demanded_elements": dm}
            for n, f, o, st, dv, dm in zip(names, r.fps, ops, r.stall_cycles,
                                          r.delivered_elements, r.demanded_elements)
        ],
        "subgraph_latency_s": [
            {"cnn": c, "subgraph": j, "latency_s": v} for (c, j), v in sorted(r.subgraph_latency_s.items())
        ],
        "utilisation": r.utilisation,
        "end_cycle": r.end_cycle,
    }
