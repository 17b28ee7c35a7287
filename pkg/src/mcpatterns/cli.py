"""Command-line interface: validate, graph, plan, simulate, sweep.

Exit codes: 0 ok, 1 invalid model, 2 I/O or syntax error, 3 ambiguous
classification, 4 simulation abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

from .engine import (HmcDatabase, HmcPolicy, MachineError, MachineModel, PlanError, PlanOptions,
                     SimulationAbort, emit_middleware_config, parse_machine, plan, resolve_perf, simulate)
from .model import ModelError, parse_model, validate_model
from .patterns import AmbiguousPatternError, EmbeddingError, PatternKind, classify, embed
from .perf import PerfError, aux_model, es_efficiency, eval_time, parse_perf
from .taskgraph import DeadlockError, TaskGraphError, detect_deadlock, to_dot, unfold

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_AMBIGUOUS, EXIT_ABORT = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}", EXIT_IO) from None


def _load_model(path: str):
    text = _read(path)
    try:
        m = parse_model(text)
    except ModelError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from None
    diags = validate_model(m)
    msgs = [f"{path}: {d}" for d in diags]
    if all(d.code == "no-start" for d in diags):
        dl = detect_deadlock(m)
        if dl is not None:
            msgs.append(f"{path}: {dl}")
    if msgs:
        raise CliError("\n".join(msgs), EXIT_INVALID)
    return m


def _fraction(name, lo_open=True):
    def conv(text):
        x = float(text)
        if not (0 < x <= 1 if lo_open else 0 <= x):
            raise argparse.ArgumentTypeError(f"{name} out of range: {text}")
        return x
    return conv


def _nonneg(text):
    x = float(text)
    if x < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return x


def _instances(items):
    out = {}
    for item in items or []:
        key, _, value = item.partition("=")
        try:
            out[key] = int(value)
        except ValueError:
            raise CliError(f"bad --instances entry {item!r}, expected name=count", EXIT_IO) from None
    return out


# --------------------------------------------------------------------------
# Shared pipeline


@dataclasses.dataclass
class Setup:
    model: object
    perf: dict
    machine: MachineModel
    graph: object
    kind: PatternKind
    embedding: object
    options: PlanOptions


def _machine(args, cores=None) -> MachineModel:
    if args.machine:
        try:
            mach = parse_machine(_read(args.machine))
        except MachineError as exc:
            raise CliError(f"{args.machine}: {exc}", EXIT_IO) from None
    else:
        mach = MachineModel(cores or args.cores or 1)
    changes = {}
    if args.alpha is not None:
        changes["energy"] = dataclasses.replace(mach.energy, alpha=args.alpha)
    if args.lambda_core is not None:
        changes["lambda_core"] = args.lambda_core
    want = cores or args.cores
    if want and want > mach.total_cores:
        raise CliError(f"{want} cores requested, the machine has {mach.total_cores}", EXIT_INVALID)
    return dataclasses.replace(mach, **changes) if changes else mach


def _setup(args, cores=None, frequency=None, lambda_core=None) -> Setup:
    m = _load_model(args.model)
    try:
        perf = resolve_perf(m, parse_perf(_read(args.perf)))
    except PerfError as exc:
        raise CliError(f"{args.perf}: {exc}", EXIT_IO) from None
    missing = [s for s in m.ids if s not in perf]
    if missing:
        raise CliError(f"{args.perf}: no performance model for {', '.join(missing)}", EXIT_INVALID)
    mach = _machine(args, cores)
    if lambda_core is not None:
        mach = dataclasses.replace(mach, lambda_core=lambda_core)
    counts = _instances(args.instances)
    try:
        g = unfold(m, args.cycles, counts)
    except (TaskGraphError, DeadlockError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from None

    if args.pattern:
        kind = PatternKind.from_hint(args.pattern)
    else:
        costs = {}
        for s in m.submodels:
            k = counts.get(s.id, 1) if s.is_dynamic else 1
            costs[s.id] = eval_time(perf[s.id], 1) * k
        try:
            kind = classify(m, costs, args.theta_es)
        except AmbiguousPatternError as exc:
            raise CliError(f"{exc}; pass --pattern", EXIT_AMBIGUOUS) from None
        if kind is None:
            raise CliError("model matches no pattern; pass --pattern", EXIT_AMBIGUOUS)
    try:
        costs = {s: eval_time(perf[s], 1) for s in m.ids}
        emb = embed(g, m, kind, primary=args.primary, costs=costs)
    except EmbeddingError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None

    db = None
    if kind == PatternKind.HMC and args.delta_reuse:
        db = HmcDatabase(policy=HmcPolicy(delta_reuse=args.delta_reuse))
    opts = PlanOptions(
        cores=cores or args.cores, jobs=args.jobs, mode=args.mode, r_seq=args.r_seq,
        slack_tol=args.slack_tol, frequency=frequency if frequency is not None else args.frequency,
        q=args.q, replica_cores=args.replica_cores, hmc_db=db,
    )
    return Setup(m, perf, mach, g, kind, emb, opts)


def _plan(s: Setup):
    try:
        return plan(s.embedding, s.graph, s.perf, s.machine, s.options)
    except PlanError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None


def _es_efficiency(s: Setup, cores: int):
    if s.kind != PatternKind.ES:
        return None, None
    aux = [s.perf[x] for x, r in sorted(s.embedding.role_of.items()) if r != "A"
           for _ in range(sum(1 for n in s.graph.nodes
                              if n.submodel == x and n.phase == "cycle" and n.iteration == 0))]
    pm_aux = aux_model(aux)
    if pm_aux is None:
        return None, None
    return es_efficiency(s.perf[s.embedding.primary], pm_aux, cores)


def _g(x) -> str:
    return format(x, ".12g")


# --------------------------------------------------------------------------
# Commands


def cmd_validate(args) -> int:
    _load_model(args.model)
    print("ok")
    return EXIT_OK


def cmd_graph(args) -> int:
    if args.cycles < 1:
        raise CliError("--cycles must be >= 1", EXIT_IO)
    m = _load_model(args.model)
    try:
        g = unfold(m, args.cycles, _instances(args.instances))
    except (TaskGraphError, DeadlockError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    if args.dot:
        _write(args.dot, to_dot(g))
    print(f"nodes={len(g.nodes)} edges={len(g.edges)}")
    return EXIT_OK


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}", EXIT_IO) from None


def _summary(s: Setup, p) -> str:
    head = f"pattern={p.pattern.value} mode={p.mode or 'packed'}"
    if p.pattern == PatternKind.ES:
        a = p.allocation
        return f"{head} P1={a.P1} P2={a.P2} period={_g(p.period)}"
    if p.pattern == PatternKind.HMC:
        return (f"{head} macro={len(p.role_cores['M'])} db={len(p.role_cores.get('D', ()))} "
                f"micro_slots={p.notes['micro_slots']} launches={p.notes['launches']}")
    return f"{head} replicas={p.notes['replicas']} slots={p.notes['slots']} waves={p.notes['waves']}"


def cmd_plan(args) -> int:
    s = _setup(args)
    p = _plan(s)
    print(_summary(s, p))
    exact, eq2 = _es_efficiency(s, p.total_cores)
    if exact is not None:
        print(f"efficiency_exact={_g(exact)} efficiency_eq2={_g(eq2)}")
    if args.out:
        try:
            os.makedirs(args.out, exist_ok=True)
        except OSError as exc:
            raise CliError(f"{args.out}: {exc.strerror or exc}", EXIT_IO) from None
        for name, text in sorted(emit_middleware_config(p).items()):
            _write(os.path.join(args.out, name), text)
    return EXIT_OK


def _simulate(s: Setup, p, seed):
    try:
        return simulate(p, p.graph, s.perf, s.machine, seed=seed)
    except SimulationAbort as exc:
        raise CliError(f"simulation aborted: {exc}", EXIT_ABORT) from None


def cmd_simulate(args) -> int:
    s = _setup(args)
    p = _plan(s)
    r = _simulate(s, p, args.seed)
    if args.report == "-":
        sys.stdout.write(r.to_json())
    elif args.report:
        _write(args.report, r.to_json())
    print(f"makespan={_g(r.makespan)} energy={_g(r.energy_joules)} "
          f"efficiency={_g(r.efficiency_observed)} failures={len(r.failures)}")
    return EXIT_OK


def _sweep_values(spec: str):
    name, eq, rhs = spec.partition("=")
    name = name.strip()
    if not eq or name not in ("P", "f", "lambda"):
        raise CliError(f"unknown sweep parameter {spec!r}; use P=a..b, f=x,y or lambda=x,y", EXIT_IO)
    try:
        if name == "P":
            if ".." in rhs:
                lo, hi = (int(x) for x in rhs.split(".."))
                values = list(range(lo, hi + 1))
            else:
                values = [int(x) for x in rhs.split(",")]
            if not values or min(values) < 1:
                raise ValueError
        else:
            values = [float(x) for x in rhs.split(",")]
    except ValueError:
        raise CliError(f"bad sweep values {rhs!r}", EXIT_IO) from None
    return name, sorted(set(values))


def cmd_sweep(args) -> int:
    name, values = _sweep_values(args.param)
    rows = []
    for v in values:
        kw = {"P": {"cores": v}, "f": {"frequency": v}, "lambda": {"lambda_core": v}}[name]
        s = _setup(args, **kw)
        p = _plan(s)
        r = _simulate(s, p, args.seed)
        exact, eq2 = _es_efficiency(s, p.total_cores)
        period = p.period if p.period is not None else r.makespan
        rows.append([_g(v), p.mode or "packed", _g(period), _g(r.makespan), _g(r.energy_joules),
                     "" if exact is None else _g(exact), "" if eq2 is None else _g(eq2)])
    header = ["param", "mode", "period", "makespan", "energy", "efficiency_exact", "efficiency_eq2"]
    if args.csv and args.csv != "-":
        try:
            fh = open(args.csv, "w", encoding="utf-8", newline="")
        except OSError as exc:
            raise CliError(f"{args.csv}: {exc.strerror or exc}", EXIT_IO) from None
        with fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def _add_pipeline_args(sp):
    sp.add_argument("model", help="MMD model file")
    sp.add_argument("--perf", required=True, help="performance sidecar file")
    sp.add_argument("--machine", help="machine description (key=value)")
    sp.add_argument("--cores", type=int, help="cores to plan for (default: whole machine)")
    sp.add_argument("--cycles", type=int, default=1, help="iterations per job (default 1)")
    sp.add_argument("--jobs", type=int, default=1, help="independent ES jobs (default 1)")
    sp.add_argument("--instances", action="append", metavar="NAME=K",
                    help="instance count of a dynamic submodel")
    sp.add_argument("--pattern", choices=[k.value for k in PatternKind], help="force a pattern")
    sp.add_argument("--primary", help="primary submodel for ES")
    sp.add_argument("--mode", choices=["sequential", "interleaved"], help="force the ES mode")
    sp.add_argument("--frequency", type=float, help="force one DVFS level for all tasks")
    sp.add_argument("--theta-es", type=_fraction("theta_es"), default=0.9,
                    help="ES cost-share threshold (default 0.9)")
    sp.add_argument("--r-seq", type=_nonneg, default=0.01,
                    help="aux/primary ratio below which ES runs sequentially (default 0.01)")
    sp.add_argument("--slack-tol", type=_nonneg, default=0.0,
                    help="allowed period stretch for DVFS (default 0)")
    sp.add_argument("--q", type=_fraction("q"), default=0.9,
                    help="RC quality threshold (default 0.9)")
    sp.add_argument("--alpha", type=float, help="override the dynamic power exponent")
    sp.add_argument("--delta-reuse", type=_nonneg, default=0.0,
                    help="HMC reuse distance (default 0)")
    sp.add_argument("--replica-cores", type=int, default=1, help="cores per RC replica (default 1)")
    sp.add_argument("--lambda", dest="lambda_core", type=_nonneg,
                    help="override failures per core-second")
    sp.add_argument("--seed", type=int, default=0, help="simulation seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcpatterns", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="check a model for errors and deadlocks")
    sp.add_argument("model")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("graph", help="unfold a model into a task graph")
    sp.add_argument("model")
    sp.add_argument("--cycles", type=int, default=1)
    sp.add_argument("--instances", action="append", metavar="NAME=K")
    sp.add_argument("--dot", help="write Graphviz DOT here")
    sp.set_defaults(func=cmd_graph)

    sp = sub.add_parser("plan", help="classify, embed and plan; write middleware config")
    _add_pipeline_args(sp)
    sp.add_argument("--out", help="directory for manifest and launch documents")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="plan and simulate")
    _add_pipeline_args(sp)
    sp.add_argument("--report", help="write the JSON report here ('-' for stdout)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="plan and simulate over a parameter range")
    _add_pipeline_args(sp)
    sp.add_argument("--param", required=True, help="P=a..b, f=x,y,... or lambda=x,y,...")
    sp.add_argument("--csv", help="output CSV (default stdout)")
    sp.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
