"""Execution plans: cores, frequencies, start order and recovery per task."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from ..patterns import PatternEmbedding, PatternKind
from ..perf import (
    INTERLEAVED,
    SEQUENTIAL,
    EsAllocation,
    PerfModel,
    aux_model,
    best_allocation,
    energy_optimize_interleave,
    eval_time,
    optimal_split,
    sequential_allocation,
)
from ..taskgraph import TaskGraph, replicate, topological_order
from .hmc import HmcDatabase, Launch, hmc_decide, hmc_insert, hmc_precompute_candidates
from .machine import MachineModel

RESTART_TASK = "restart_task"
MUST_RESTART = "must_restart"
SKIP_IF_QUALITY_OK = "skip_if_quality_ok"
RESIDUAL = "residual"


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    cores: tuple
    freq: float = 1.0


@dataclass
class PlanOptions:
    """Planner knobs. ``cores`` defaults to the whole machine."""

    cores: Optional[int] = None
    jobs: int = 1
    mode: Optional[str] = None
    r_seq: float = 0.01
    slack_tol: float = 0.0
    frequency: Optional[float] = None
    q: float = 0.9
    replica_cores: int = 1
    master_cores: int = 1
    macro_cores: Optional[int] = None
    db_cores: int = 1
    micro_cores: int = 1
    precompute: bool = False
    precompute_slots: int = 1
    hmc_db: Optional[HmcDatabase] = None
    hmc_queries: Optional[list] = None
    anticipated: list = field(default_factory=list)
    decision_latency: float = 0.0
    energy_budget: Optional[float] = None


@dataclass
class ExecutionPlan:
    pattern: PatternKind
    graph: TaskGraph
    assignments: dict
    roles: dict
    order: list
    recovery: dict
    mode: Optional[str] = None
    allocation: Optional[EsAllocation] = None
    fixed_time: dict = field(default_factory=dict)
    total_cores: int = 0
    q: float = 0.9
    role_cores: dict = field(default_factory=dict)
    role_freq: dict = field(default_factory=dict)
    residual: tuple = ()
    notes: dict = field(default_factory=dict)
    energy_budget: Optional[float] = None

    @property
    def period(self) -> Optional[float]:
        """ES steady-state period at the planned frequencies."""
        a = self.allocation
        if a is None:
            return None
        f_pr, f_aux = self.notes["f_pr"], self.notes["f_aux"]
        if a.mode == INTERLEAVED:
            return max(a.t_pr / f_pr, a.t_aux / f_aux)
        return a.t_pr / f_pr + a.t_aux / f_aux

    def task_time(self, nid: str, perf: dict) -> float:
        """Duration of ``nid`` at its assigned cores and frequency."""
        a = self.assignments[nid]
        if nid in self.fixed_time:
            base = self.fixed_time[nid]
        else:
            base = eval_time(perf[self.graph.node(nid).submodel], len(a.cores))
        return base / a.freq

    def used_cores(self) -> set:
        out = set()
        for a in self.assignments.values():
            out.update(a.cores)
        return out


def resolve_perf(m, perf_defs: dict) -> dict:
    """Per-submodel performance models: a submodel's ``perf=`` reference,
    else its own id, looked up in ``perf_defs``."""
    out = {}
    for s in m.submodels:
        ref = s.perf or s.id
        if ref in perf_defs:
            out[s.id] = perf_defs[ref]
    return out


def _instances(g: TaskGraph, submodel: str) -> int:
    return len({n.instance for n in g.nodes if n.submodel == submodel}) or 1


def _residual_setup(g: TaskGraph, roles: dict, assignments: dict, fixed: dict):
    for n in g.nodes:
        if n.phase != "cycle":
            roles[n.id] = RESIDUAL
            assignments[n.id] = Assignment((), 1.0)
            fixed[n.id] = float(n.cost_hint or 0.0)


def plan(embedding: PatternEmbedding, g: TaskGraph, perf: dict, machine: MachineModel,
         options: Optional[PlanOptions] = None) -> ExecutionPlan:
    """Build an execution plan for one job graph ``g``.

    ``perf`` maps submodel ids to :class:`PerfModel`. For ES, ``options.jobs``
    independent copies of ``g`` are scheduled; in interleaved mode the
    primary runs on ``P1`` cores while the auxiliaries of the previous job
    run on the other ``P2``.
    """
    options = options or PlanOptions()
    total = options.cores or machine.total_cores
    if total > machine.total_cores:
        raise PlanError(f"plan asks for {total} cores, machine has {machine.total_cores}")
    missing = sorted({n.submodel for n in g.nodes if n.phase == "cycle"} - set(perf))
    if missing:
        raise PlanError(f"no performance model for {', '.join(missing)}")
    if embedding.kind == PatternKind.ES:
        p = _plan_es(embedding, g, perf, machine, options, total)
    elif embedding.kind == PatternKind.HMC:
        p = _plan_hmc(embedding, g, perf, machine, options, total)
    else:
        p = _plan_rc(embedding, g, perf, machine, options, total)
    p.energy_budget = options.energy_budget
    p.residual = tuple(sorted(n for n, r in p.roles.items() if r == RESIDUAL))
    return p


def _plan_es(emb, g, perf, machine, options, total):
    primary = emb.primary
    aux_subs = [s for s, r in sorted(emb.role_of.items()) if r in ("B_s", "B_p")]
    pm_pr: PerfModel = perf[primary]
    pm_aux = aux_model([perf[s] for s in aux_subs for _ in range(_instances(g, s))])

    if pm_aux is None or total < 2:
        if options.mode == INTERLEAVED:
            raise PlanError("interleaving needs an auxiliary model and at least 2 cores")
        t_pr = eval_time(pm_pr, total)
        alloc = EsAllocation(total, total, SEQUENTIAL, t_pr + (eval_time(pm_aux, total) if pm_aux else 0.0),
                             0.0, t_pr, eval_time(pm_aux, total) if pm_aux else 0.0)
    elif options.mode == SEQUENTIAL:
        alloc = sequential_allocation(pm_pr, pm_aux, total)
    elif options.mode == INTERLEAVED:
        alloc = optimal_split(pm_pr, pm_aux, total)
    else:
        alloc = best_allocation(pm_pr, pm_aux, total, options.r_seq)

    best = machine.cores_by_reliability()
    if alloc.mode == INTERLEAVED:
        cores_a = tuple(sorted(best[: alloc.P1]))
        cores_b = tuple(sorted(best[alloc.P1 : alloc.P1 + alloc.P2]))
        if options.frequency is not None:
            f_pr = f_aux = machine.energy.level(options.frequency)
        else:
            f_pr, f_aux = energy_optimize_interleave(alloc, machine.energy, options.slack_tol)
    else:
        cores_a = cores_b = tuple(sorted(best[:total]))
        f_pr = f_aux = machine.energy.level(options.frequency) if options.frequency is not None else 1.0

    jobs = max(1, int(options.jobs))
    xg = replicate(g, jobs) if jobs > 1 else g
    roles, assignments, fixed = {}, {}, {}
    _residual_setup(xg, roles, assignments, fixed)
    for n in xg.nodes:
        if n.phase != "cycle":
            continue
        role = emb.role_of.get(n.submodel)
        if role is None:
            raise PlanError(f"submodel {n.submodel!r} has no ES role")
        roles[n.id] = role
        if role == "A":
            assignments[n.id] = Assignment(cores_a, f_pr)
        else:
            assignments[n.id] = Assignment(cores_b, f_aux)
    role_cores = {"A": cores_a}
    role_freq = {"A": f_pr}
    for r in ("B_s", "B_p"):
        if r in emb.role_of.values():
            role_cores[r] = cores_b
            role_freq[r] = f_aux
    recovery = {r: RESTART_TASK for r in list(role_cores) + [RESIDUAL]}
    return ExecutionPlan(
        PatternKind.ES, xg, assignments, roles, topological_order(xg), recovery,
        mode=alloc.mode, allocation=alloc, fixed_time=fixed,
        total_cores=alloc.total, q=options.q, role_cores=role_cores, role_freq=role_freq,
        notes={"primary": primary, "jobs": jobs, "f_pr": f_pr, "f_aux": f_aux},
    )


def _plan_hmc(emb, g, perf, machine, options, total):
    best = machine.cores_by_reliability()
    roles, assignments, fixed = {}, {}, {}
    _residual_setup(g, roles, assignments, fixed)
    dbs = emb.submodels_with("D")
    micros = emb.submodels_with("mu")
    others = emb.submodels_with("aux")

    # Which micro tasks actually launch, replaying the query stream.
    launches = set()
    micro_nodes = sorted((n for n in g.nodes if n.submodel in micros and n.phase == "cycle"),
                         key=lambda n: n.sort_key)
    db = options.hmc_db
    if options.hmc_queries is None:
        launches = {n.id for n in micro_nodes}
    else:
        db = db if db is not None else HmcDatabase()
        for n in micro_nodes:
            qs = options.hmc_queries[n.iteration] if n.iteration < len(options.hmc_queries) else []
            if n.instance < len(qs):
                point = qs[n.instance]
                if isinstance(hmc_decide(db, point), Launch):
                    launches.add(n.id)
                    db = hmc_insert(db, point, (0.0,), replace=True)

    n_macro = options.macro_cores
    if n_macro is None:
        n_macro = max(1, total // 2) if launches or options.precompute else max(1, total - len(dbs) * options.db_cores)
    used = 0

    def take(k):
        nonlocal used
        if used + k > total:
            raise PlanError(f"HMC plan needs more than {total} cores")
        out = tuple(sorted(best[used : used + k]))
        used += k
        return out

    macro_cores = take(n_macro)
    db_cores = take(options.db_cores) if dbs else ()
    reserved = take(options.precompute_slots * options.micro_cores) if options.precompute else ()
    slots = []
    if launches:
        free = total - used
        n_slots = free // options.micro_cores
        if n_slots < 1:
            raise PlanError("no cores left for micro simulations")
        slots = [take(options.micro_cores) for _ in range(n_slots)]

    role_cores = {"M": macro_cores}
    if dbs:
        role_cores["D"] = db_cores
    if slots:
        role_cores["mu"] = tuple(sorted(c for s in slots for c in s))
    k = 0
    for n in sorted(g.nodes, key=lambda n: n.sort_key):
        if n.phase != "cycle":
            continue
        role = emb.role_of.get(n.submodel, "aux")
        roles[n.id] = role
        if role == "mu":
            if n.id in launches:
                assignments[n.id] = Assignment(slots[k % len(slots)], 1.0)
                k += 1
            else:
                assignments[n.id] = Assignment((), 1.0)
                fixed[n.id] = options.decision_latency
        elif role == "D":
            assignments[n.id] = Assignment(db_cores, 1.0)
        else:
            assignments[n.id] = Assignment(macro_cores, 1.0)
    recovery = {"M": RESTART_TASK, "D": RESTART_TASK, "mu": MUST_RESTART, "aux": RESTART_TASK,
                RESIDUAL: RESTART_TASK}
    notes = {"launches": len(launches), "micro_slots": len(slots),
             "reserved_precompute_cores": list(reserved)}
    if options.precompute:
        notes["precompute"] = hmc_precompute_candidates(
            db if db is not None else HmcDatabase(), options.anticipated, options.precompute_slots)
    if others:
        role_cores.setdefault("aux", macro_cores)
    return ExecutionPlan(
        PatternKind.HMC, g, assignments, roles, topological_order(g), recovery,
        fixed_time=fixed, total_cores=used, q=options.q, role_cores=role_cores,
        role_freq={r: 1.0 for r in role_cores}, notes=notes,
    )


def _plan_rc(emb, g, perf, machine, options, total):
    best = machine.cores_by_reliability()
    if options.replica_cores > total or options.master_cores > total:
        raise PlanError(f"a task needs more cores than the {total} available")
    roles, assignments, fixed = {}, {}, {}
    _residual_setup(g, roles, assignments, fixed)
    replicas = sorted({(n.job, n.submodel, n.instance) for n in g.nodes
                       if n.phase == "cycle" and emb.role_of.get(n.submodel) == "A1"})
    n_slots = total // options.replica_cores
    slots = [tuple(sorted(best[i * options.replica_cores : (i + 1) * options.replica_cores]))
             for i in range(n_slots)]
    slot_of = {r: slots[i % n_slots] for i, r in enumerate(replicas)}
    master_cores = tuple(sorted(best[: options.master_cores]))
    role_cores = {}
    for n in g.nodes:
        if n.phase != "cycle":
            continue
        role = emb.role_of.get(n.submodel, "aux")
        if role == "A1":
            key = (n.job, n.submodel, n.instance)
            label = f"A1[{replicas.index(key)}]"
            roles[n.id] = label
            assignments[n.id] = Assignment(slot_of[key], 1.0)
            role_cores[label] = slot_of[key]
        else:
            roles[n.id] = role
            assignments[n.id] = Assignment(master_cores, 1.0)
            role_cores[role] = master_cores
    recovery = {r: (SKIP_IF_QUALITY_OK if r.startswith("A1") else RESTART_TASK)
                for r in role_cores}
    recovery[RESIDUAL] = RESTART_TASK
    waves = math.ceil(len(replicas) / n_slots) if replicas else 0
    used = len({c for a in assignments.values() for c in a.cores})
    return ExecutionPlan(
        emb.kind, g, assignments, roles, topological_order(g), recovery,
        fixed_time=fixed, total_cores=used, q=options.q, role_cores=role_cores,
        role_freq={r: 1.0 for r in role_cores},
        notes={"replicas": len(replicas), "slots": n_slots, "waves": waves},
    )


# --------------------------------------------------------------------------
# Fault-free schedule


def list_schedule(p: ExecutionPlan, perf: dict) -> dict:
    """Greedy fixed-core list schedule without failures: node -> (start, end).

    At each decision instant every task finishing then is retired first;
    then one pass over the ready tasks in plan order starts each task whose
    cores are all idle.
    """
    g = p.graph
    rank = {nid: i for i, nid in enumerate(p.order)}
    remaining = {n.id: len(g.predecessors[n.id]) for n in g.nodes}
    ready = sorted((n for n, k in remaining.items() if k == 0), key=rank.get)
    running = {}  # nid -> end
    times = {}
    now = 0.0
    while True:
        busy = {c for nid in running for c in p.assignments[nid].cores}
        for nid in list(ready):
            cores = p.assignments[nid].cores
            if busy.isdisjoint(cores):
                end = now + p.task_time(nid, perf)
                times[nid] = (now, end)
                running[nid] = end
                busy.update(cores)
                ready.remove(nid)
        if not running:
            break
        now = min(running.values())
        for nid in sorted(n for n, e in running.items() if e == now):
            del running[nid]
            for w in g.successors[nid]:
                remaining[w] -= 1
                if remaining[w] == 0:
                    ready.append(w)
        ready.sort(key=rank.get)
    if len(times) != len(g.nodes):
        raise PlanError("list schedule stalled")
    return times
