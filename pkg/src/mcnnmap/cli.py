"""Command-line front end: dse, schedule, simulate, report."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import artifacts as art
from .hsched import ConfigError, HsConfigTable, build_config_table
from .model import ModelError, ParseError, ValidationError, parse_network, parse_platform
from .optimizer import DseConfig, Objective, SearchConfig, make_objective, memory_aware_dse, schedule_joint
from .pareto import FoldLimits, NoFeasibleDesign, enumerate_joint, explore
from .sched import ScheduleError, check_schedule, violations
from .sim import ContentionUnaware, MemoryAware, SimConfig, compare_policies, simulate

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2

POLICIES = ("memory-aware", "contention-unaware", "time-triggered")
REPORT_INPUTS = ("result.json", "sim_memory-aware.json", "sim_contention-unaware.json", "comparison.csv")


class InputError(Exception):
    pass


def _read(path: str, what: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {path}")
    return p.read_text()


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _fps_targets(pairs: Sequence[str], names: Sequence[str]) -> list[Optional[float]]:
    targets = {}
    for item in pairs or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"--fps-target expects NAME=VALUE, got {item!r}")
        if name not in names:
            raise InputError(f"--fps-target names unknown network {name!r}")
        try:
            targets[name] = float(value)
        except ValueError:
            raise InputError(f"--fps-target value for {name} is not a number: {value!r}") from None
        if not targets[name] > 0:
            raise InputError(f"--fps-target for {name} must be positive")
    return [targets.get(n) for n in names]


def _load_platform(path: str):
    return parse_platform(_read(path, "platform"))


def _load_joint(path: str, platform):
    return art.joint_from_dict(art.loads(_read(path, "joint design"), path), platform)


def _triples_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["joint_index", "predicted", "contention_unaware", "memory_aware", "gain"])
    for idx, c in rows:
        w.writerow([idx, repr(c.predicted), repr(c.contention_unaware), repr(c.memory_aware), repr(c.gain)])
    return buf.getvalue()


def cmd_dse(args) -> int:
    platform = _load_platform(args.platform)
    nets = [parse_network(_read(p, "network")) for p in args.networks]
    names = [n.name for n in nets]
    if len(set(names)) != len(names):
        raise InputError("network names must be unique")
    user = _fps_targets(args.fps_target, names)
    user = [u if u is not None else n.fps_target for u, n in zip(user, nets)]
    limits = FoldLimits(max_subgraphs=args.max_subgraphs)
    fronts = [explore(n, platform, limits) for n in nets]
    joints = enumerate_joint(fronts, platform.rsc_avail, args.joint_cap)
    obj = make_objective(args.objective, fronts, platform.b_mem, user)
    config = DseConfig(search=SearchConfig(initial_step=args.ps_step))
    result = memory_aware_dse(joints, obj, platform.b_mem, config)

    out = Path(args.out)
    _write(out, "fronts.json", art.dumps({
        n.name: [art.point_to_dict(p) for p in f] for n, f in zip(nets, fronts)
    }))
    _write(out, "objective.json", art.dumps({
        "kind": obj.kind.value, "fps_max": list(obj.fps_max), "t_max": list(obj.t_max),
        "fps_user": list(obj.fps_user), "networks": names,
    }))
    _write(out, "result.json", art.dumps({
        **art.joint_to_dict(result.sigma_star, result.sl_star, result.rep),
        "joint_index": result.index, "joint_count": len(joints),
        "objective_value": result.objective_value,
        "fps": list(result.fps), "gops": list(result.gops),
    }))
    _write(out, "schedule.json", art.dumps(art.schedule_to_dict(result.schedule)))
    table = build_config_table(result.schedule, result.sigma_star, platform)
    _write(out, "table.json", table.to_json())

    rows = []
    for idx, (sigma, (value, sl, rep)) in enumerate(zip(joints, result.trials)):
        if math.isinf(value):
            continue
        rows.append((idx, compare_policies(sigma, platform, obj, sl=sl, rep=rep,
                                           frames=args.frames, seed=args.seed)))
    _write(out, "comparison.csv", _triples_csv(rows))
    ops = [p.ops for p in result.sigma_star.points]
    for policy in ("memory-aware", "contention-unaware"):
        res = _run_sim(result.sigma_star, table, platform, policy, args.frames, args.seed, args.trace, out)
        _write(out, f"sim_{policy}.json", art.dumps(art.sim_to_dict(res, names, ops, policy)))

    for name, fps, gops in zip(names, result.fps, result.gops):
        print(f"{name}: {fps:.6g} fps, {gops:.6g} GOp/s")
    print(f"objective {obj.kind.value} = {result.objective_value:.6g} (joint point {result.index} of {len(joints)})")
    return EXIT_OK


def _run_sim(sigma, table, platform, policy, frames, seed, trace, out: Path):
    if policy == "contention-unaware":
        pol = ContentionUnaware()
    else:
        pol = MemoryAware(table, time_triggered=policy == "time-triggered")
    res = simulate(sigma, SimConfig(pol, frames, seed=seed, trace=trace), platform)
    if trace:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start_cycle", "end_cycle", "cnn", "elements"])
        w.writerows(res.timeline)
        _write(out, f"trace_{policy}.csv", buf.getvalue())
    return res


def cmd_schedule(args) -> int:
    platform = _load_platform(args.platform)
    sigma, sl, rep = _load_joint(args.joint, platform)
    if args.sl:
        sl = tuple(float(x) for x in art.loads(_read(args.sl, "slow-down"), args.sl))
    try:
        sched = schedule_joint(sigma, sl, platform.b_mem, rep)
    except ScheduleError as exc:
        print(f"error: unschedulable: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        raise InputError(str(exc)) from None
    problems = check_schedule(sched, sched.tasks, platform.b_mem)
    if problems:
        report = violations(sched, sched.tasks, platform.b_mem)
        print("error: schedule violates constraints:\n  " + "\n  ".join(problems), file=sys.stderr)
        print(f"  max overshoot {report.max_overshoot:.6g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = Path(args.out)
    _write(out, "schedule.json", art.dumps(art.schedule_to_dict(sched)))
    _write(out, "table.json", build_config_table(sched, sigma, platform).to_json())
    print(f"cycle time {sched.cycle_time_s:.6g} s, {len(sched.tasks)} subgraph instances")
    return EXIT_OK


def cmd_simulate(args) -> int:
    platform = _load_platform(args.platform)
    sigma, _, _ = _load_joint(args.joint, platform)
    table = HsConfigTable.from_json(_read(args.table, "config table"))
    out = Path(args.out)
    res = _run_sim(sigma, table, platform, args.policy, args.frames, args.seed, args.trace, out)
    names = [p.net.name for p in sigma.points]
    ops = [p.ops for p in sigma.points]
    _write(out, f"sim_{args.policy}.json", art.dumps(art.sim_to_dict(res, names, ops, args.policy)))
    for name, fps in zip(names, res.fps):
        print(f"{name}: {fps:.6g} fps")
    return EXIT_OK


def geo_mean(values: Sequence[float]) -> float:
    return math.exp(sum(math.log(v) for v in values) / len(values))


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    missing = [n for n in REPORT_INPUTS if not (run / n).is_file()]
    if missing:
        print("error: incomplete run, missing: " + ", ".join(missing), file=sys.stderr)
        return EXIT_INPUT
    ma = art.loads((run / "sim_memory-aware.json").read_text(), "sim_memory-aware.json")
    cu = art.loads((run / "sim_contention-unaware.json").read_text(), "sim_contention-unaware.json")
    result = art.loads((run / "result.json").read_text(), "result.json")
    objective = art.loads((run / "objective.json").read_text(), "objective.json") \
        if (run / "objective.json").is_file() else None

    rows = []
    for a, b in zip(cu["cnns"], ma["cnns"]):
        rows.append((a["name"], a["fps"], a["gops"], b["fps"], b["gops"], b["gops"] / a["gops"]))
    speedup = geo_mean([r[5] for r in rows])

    lines = ["CNN            baseline fps   baseline GOp/s   mem-aware fps   mem-aware GOp/s   speed-up"]
    for name, f_cu, g_cu, f_ma, g_ma, s in rows:
        lines.append(f"{name:<14} {f_cu:>12.6g} {g_cu:>16.6g} {f_ma:>15.6g} {g_ma:>17.6g} {s:>10.4f}")
    lines.append(f"speed-up (geometric mean): {speedup:.4f}")
    if objective is not None:
        obj = Objective(objective["kind"], objective["fps_max"], objective["t_max"], objective["fps_user"])
        v_cu = obj.value([r[1] for r in rows])
        v_ma = obj.value([r[3] for r in rows])
        gain = 0.0 if v_cu == 0 else 100.0 * (v_cu - v_ma) / v_cu
        lines.append(f"objective ({obj.kind.value}): baseline {v_cu:.6g}, memory-aware {v_ma:.6g}, gain {gain:.2f}%")
    lines.append(f"joint point {result['joint_index']} of {result['joint_count']}, rep {result['rep']}")
    text = "\n".join(lines) + "\n"
    (run / "report.txt").write_text(text)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cnn", "fps_baseline", "gops_baseline", "fps_memory_aware", "gops_memory_aware", "speedup"])
    for r in rows:
        w.writerow([r[0], *(repr(x) for x in r[1:])])
    (run / "report.csv").write_text(buf.getvalue())
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcnnmap", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dse", help="explore designs, schedule, and simulate both policies")
    d.add_argument("--networks", nargs="+", required=True, metavar="FILE")
    d.add_argument("--platform", required=True, metavar="FILE")
    d.add_argument("--objective", choices=("fps", "maxthrpt"), default="fps")
    d.add_argument("--fps-target", nargs="*", default=[], metavar="NAME=VAL")
    d.add_argument("--max-subgraphs", type=int, default=3)
    d.add_argument("--joint-cap", type=int, default=4)
    d.add_argument("--ps-step", type=float, default=0.1)
    d.add_argument("--frames", type=int, default=4)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True, metavar="DIR")
    d.add_argument("--trace", action="store_true")
    d.set_defaults(func=cmd_dse)

    s = sub.add_parser("schedule", help="schedule a joint design and build the arbiter table")
    s.add_argument("--joint", required=True, metavar="FILE")
    s.add_argument("--sl", metavar="FILE", help="JSON list of slow-downs (default: from the joint file)")
    s.add_argument("--platform", required=True, metavar="FILE")
    s.add_argument("--out", required=True, metavar="DIR")
    s.set_defaults(func=cmd_schedule)

    m = sub.add_parser("simulate", help="simulate a joint design under one arbitration policy")
    m.add_argument("--joint", required=True, metavar="FILE")
    m.add_argument("--table", required=True, metavar="FILE")
    m.add_argument("--platform", required=True, metavar="FILE")
    m.add_argument("--policy", choices=POLICIES, default="memory-aware")
    m.add_argument("--frames", type=int, default=4)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, metavar="DIR")
    m.add_argument("--trace", action="store_true")
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="summarise a dse run directory")
    r.add_argument("run_dir", metavar="DIR")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ParseError, ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NoFeasibleDesign, ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
