"""Discrete-event execution of a plan with exponential core failures."""

from __future__ import annotations

import bisect
import heapq
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..perf import energy_of, eval_time
from .machine import MachineModel
from .planner import MUST_RESTART, RESTART_TASK, SKIP_IF_QUALITY_OK, ExecutionPlan
from .rc import RcAction, RcState, rc_on_failure


class SimulationAbort(RuntimeError):
    def __init__(self, task: str, failures: int):
        super().__init__(f"task {task} failed {failures} times; aborting")
        self.task = task
        self.failures = failures


@dataclass
class TaskRecord:
    start: float
    end: float
    retries: int = 0
    skipped: bool = False


@dataclass
class SimReport:
    makespan: float
    per_task: dict
    energy_joules: float
    core_seconds: float
    failures: list
    efficiency_observed: float
    quality: Optional[float] = None
    restarts: int = 0
    must_restarts: int = 0
    job_completions: list = field(default_factory=list)
    seed: int = 0

    @property
    def steady_period(self) -> Optional[float]:
        """Mean interval between consecutive job completions."""
        c = self.job_completions
        if len(c) < 2:
            return None
        return (c[-1] - c[0]) / (len(c) - 1)

    def to_dict(self) -> dict:
        return {
            "makespan": self.makespan,
            "energy_joules": self.energy_joules,
            "core_seconds": self.core_seconds,
            "efficiency_observed": self.efficiency_observed,
            "quality": self.quality,
            "restarts": self.restarts,
            "must_restarts": self.must_restarts,
            "seed": self.seed,
            "job_completions": self.job_completions,
            "steady_period": self.steady_period,
            "failures": [{"time": t, "task": n, "cores": list(c)} for t, n, c in self.failures],
            "per_task": {
                k: {"start": r.start, "end": r.end, "retries": r.retries, "skipped": r.skipped}
                for k, r in self.per_task.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def simulate(plan: ExecutionPlan, g=None, perf=None, machine: MachineModel = None,
             seed: int = 0, max_retries: int = 10) -> SimReport:
    """Run ``plan`` to completion.

    Tasks start greedily in plan order once their predecessors are done and
    all their cores are idle. Each attempt draws a failure time from an
    exponential with the summed rate of its cores; a failure before the
    attempt ends frees the cores and triggers the role's recovery policy.
    Simultaneous events are handled in (time, task id) order.
    """
    g = plan.graph if g is None else g
    if perf is None or machine is None:
        raise ValueError("simulate needs perf models and a machine")
    rng = np.random.default_rng(seed)
    em = machine.energy
    rank = {nid: i for i, nid in enumerate(plan.order)}
    nodes = g.by_id
    succ = g.successors
    remaining = {nid: len(p) for nid, p in g.predecessors.items()}
    cores_of = {nid: plan.assignments[nid].cores for nid in nodes}
    dur = {nid: plan.task_time(nid, perf) for nid in nodes}
    rate = {nid: machine.failure_rate(cores_of[nid]) for nid in nodes}

    # RC bookkeeping: replicas are (job, submodel, instance) of skip-policy roles
    replica_of = {}
    for nid, n in nodes.items():
        if plan.recovery.get(plan.roles[nid]) == SKIP_IF_QUALITY_OK:
            replica_of[nid] = (n.job, n.submodel, n.instance)
    replicas = sorted(set(replica_of.values()))
    dead_replicas = set()

    # unit-rate exponentials drawn in blocks, consumed in task start order
    draws = iter(())

    def next_exponential():
        nonlocal draws
        try:
            return next(draws)
        except StopIteration:
            draws = iter(rng.standard_exponential(4096).tolist())
            return next(draws)

    ready = []  # (rank, nid), sorted
    coreless_ready = 0
    busy = set()
    held = set()  # tasks currently occupying their cores
    events = []  # (time, nid, failed)
    start = {}
    wall = dict.fromkeys(nodes, 0.0)
    retries = dict.fromkeys(nodes, 0)
    records = {}
    failures = []
    restarts = must_restarts = 0
    n_cores = len(plan.used_cores())
    now = 0.0

    def requeue(nid):
        nonlocal coreless_ready
        if not cores_of[nid]:
            coreless_ready += 1
        bisect.insort(ready, (rank[nid], nid))

    def dispatch():
        nonlocal coreless_ready
        i = 0
        while i < len(ready):
            if len(busy) >= n_cores and not coreless_ready:
                return  # nothing can start until something finishes
            nid = ready[i][1]
            cores = cores_of[nid]
            if not busy.isdisjoint(cores):
                i += 1
                continue
            del ready[i]
            if not cores:
                coreless_ready -= 1
            start[nid] = now
            if nid in replica_of and replica_of[nid] in dead_replicas:
                heapq.heappush(events, (now, nid, False))
                continue
            busy.update(cores)
            held.add(nid)
            d = dur[nid]
            if rate[nid] > 0 and d > 0:
                tf = next_exponential() / rate[nid]
                if tf < d:
                    heapq.heappush(events, (now + tf, nid, True))
                    continue
            heapq.heappush(events, (now + d, nid, False))

    for nid, k in remaining.items():
        if k == 0:
            requeue(nid)
    dispatch()
    while events:
        now, nid, failed = heapq.heappop(events)
        skipped = nid not in held
        cores = cores_of[nid]
        if not skipped:
            held.discard(nid)
            busy.difference_update(cores)
            wall[nid] += now - start[nid]
        if failed:
            retries[nid] += 1
            failures.append((now, nid, tuple(cores)))
            policy = plan.recovery.get(plan.roles[nid], RESTART_TASK)
            if policy == SKIP_IF_QUALITY_OK:
                state = RcState(len(replicas), 0, len(dead_replicas) + 1, plan.q)
                if rc_on_failure(state) == RcAction.CONTINUE:
                    dead_replicas.add(replica_of[nid])
                    skipped = True
                    failed = False
            if failed:
                if retries[nid] >= max_retries:
                    raise SimulationAbort(nid, retries[nid])
                if policy == MUST_RESTART:
                    must_restarts += 1
                else:
                    restarts += 1
                requeue(nid)
        if not failed:
            records[nid] = TaskRecord(start[nid], now, retries[nid], skipped)
            for w in succ[nid]:
                remaining[w] -= 1
                if remaining[w] == 0:
                    requeue(w)
        # drain everything else happening at this instant before dispatching
        if events and events[0][0] == now:
            continue
        dispatch()

    energy = 0.0
    core_seconds = 0.0
    for nid, t in wall.items():
        if t > 0:
            f = plan.assignments[nid].freq
            energy += energy_of(t * f, len(cores_of[nid]), f, em)
            core_seconds += t * len(cores_of[nid])

    if len(records) != len(nodes):
        raise RuntimeError("simulation ended with unfinished tasks")
    makespan = max((r.end for r in records.values()), default=0.0)
    used = plan.used_cores()
    # idle allocated cores still draw static power until the end
    idle = len(used) * makespan - core_seconds
    energy += em.p_static * max(idle, 0.0)

    useful = 0.0
    for nid, r in records.items():
        if r.skipped or not plan.assignments[nid].cores:
            continue
        if nid in plan.fixed_time:
            useful += plan.fixed_time[nid]
        else:
            useful += eval_time(perf[nodes[nid].submodel], 1)
    if used and makespan > 0:
        eff = min(1.0, useful / (len(used) * makespan))
    else:
        eff = 1.0
    if eff <= 0:
        eff = float.fromhex("0x1p-1074")  # keep the (0, 1] invariant for empty work

    jobs = {}
    for nid, r in records.items():
        j = nodes[nid].job
        jobs[j] = max(jobs.get(j, 0.0), r.end)
    quality = None
    if replicas:
        quality = (len(replicas) - len(dead_replicas)) / len(replicas)
    return SimReport(
        makespan=makespan,
        per_task=dict(sorted(records.items())),
        energy_joules=energy,
        core_seconds=core_seconds,
        failures=failures,
        efficiency_observed=eff,
        quality=quality,
        restarts=restarts,
        must_restarts=must_restarts,
        job_completions=sorted(jobs.values()),
        seed=int(seed),
    )
