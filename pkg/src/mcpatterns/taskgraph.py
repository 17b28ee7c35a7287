"""Unfolding multiscale models into acyclic task graphs.

Per-cycle couplings form a (usually cyclic) graph between submodels. To get
a DAG, each strongly connected component of that graph needs an entry
submodel whose state is available before the loop starts: an init-coupling
target, or failing that the unique member whose time scale is separated
from, and slower than, every other member (the outer loop of a
scale-separated pair, e.g. tissue growth driving blood flow). Inside a
component the entry runs last in each iteration; couplings leaving it are
realized one iteration later (from its init node at iteration 0). All
other couplings whose same-iteration realization would close a cycle are
shifted the same way.

Loop-continuation edges (``s@k -> s@k+1``) are added only where no other
path already orders the two nodes.
"""

from __future__ import annotations

import heapq
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import networkx as nx

from .model import DYNAMIC, MultiscaleModel, temporal_relation

PHASES = ("init", "cycle", "final")
_PHASE_RANK = {p: i for i, p in enumerate(PHASES)}


class TaskGraphError(ValueError):
    pass


class CycleError(TaskGraphError):
    pass


class DeadlockError(TaskGraphError):
    def __init__(self, deadlock: "Deadlock"):
        self.deadlock = deadlock
        super().__init__(str(deadlock))


@dataclass(frozen=True)
class TaskNode:
    id: str
    submodel: str
    instance: int = 0
    iteration: int = 0
    phase: str = "cycle"
    cost_hint: Optional[float] = None
    job: int = 0

    @property
    def sort_key(self):
        return (self.iteration, self.job, self.submodel, self.instance,
                _PHASE_RANK[self.phase], self.id)


@dataclass(frozen=True)
class TaskGraph:
    nodes: tuple[TaskNode, ...] = ()
    edges: tuple[tuple[str, str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        ids = set()
        for n in self.nodes:
            if n.id in ids:
                raise TaskGraphError(f"duplicate node id {n.id!r}")
            ids.add(n.id)
        keys = set()
        for n in self.nodes:
            k = (n.job, n.submodel, n.instance, n.iteration, n.phase)
            if k in keys:
                raise TaskGraphError(f"duplicate task {k}")
            keys.add(k)
        for u, v, nbytes in self.edges:
            if u not in ids or v not in ids:
                raise TaskGraphError(f"edge {u!r} -> {v!r} has a missing endpoint")
            if nbytes < 0:
                raise TaskGraphError(f"edge {u!r} -> {v!r} has negative payload")

    @cached_property
    def by_id(self) -> dict[str, TaskNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def successors(self) -> dict[str, list[str]]:
        out = {n.id: [] for n in self.nodes}
        for u, v, _ in self.edges:
            out[u].append(v)
        return out

    @cached_property
    def predecessors(self) -> dict[str, list[str]]:
        out = {n.id: [] for n in self.nodes}
        for u, v, _ in self.edges:
            out[v].append(u)
        return out

    def node(self, nid: str) -> TaskNode:
        return self.by_id[nid]

    def is_acyclic(self) -> bool:
        try:
            topological_order(self)
        except CycleError:
            return False
        return True

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for n in self.nodes:
            g.add_node(n.id, node=n)
        for u, v, nbytes in self.edges:
            g.add_edge(u, v, payload_bytes=nbytes)
        return g


# --------------------------------------------------------------------------
# Cycle structure of the per_cycle coupling graph


@dataclass(frozen=True)
class Deadlock:
    cycle: tuple[str, ...]
    reason: str = "per_cycle couplings form a cycle with no entry point"

    def __str__(self):
        return f"deadlock: {' -> '.join(self.cycle)}: {self.reason}"


@dataclass
class CycleStructure:
    order: list[str]
    forward: set = field(default_factory=set)
    feedback: set = field(default_factory=set)
    entries: list[str] = field(default_factory=list)
    init_submodels: list[str] = field(default_factory=list)
    deadlocks: list[Deadlock] = field(default_factory=list)


def _slow_driver(m: MultiscaleModel, members) -> Optional[str]:
    for s in sorted(members):
        a = m.submodel(s)
        if all(
            temporal_relation(a.temporal_box, m.submodel(t).temporal_box) == "separated"
            and a.dt > m.submodel(t).t_total
            for t in members
            if t != s
        ):
            return s
    return None


def cycle_structure(m: MultiscaleModel) -> CycleStructure:
    """Classify per_cycle couplings as same-iteration or next-iteration."""
    ids = m.ids
    per_cycle = [(c.source, c.target) for c in m.couplings if c.kind == "per_cycle"]
    init_targets = {c.target for c in m.couplings if c.kind == "init"}

    g = nx.DiGraph()
    g.add_nodes_from(ids)
    g.add_edges_from(per_cycle)
    cond = nx.condensation(g)
    comp_nodes = {c: sorted(cond.nodes[c]["members"]) for c in cond.nodes}

    comp_order = list(
        nx.lexicographical_topological_sort(cond, key=lambda c: comp_nodes[c][0])
    )
    order: list[str] = []
    entries: list[str] = []
    deadlocks: list[Deadlock] = []
    for c in comp_order:
        group = comp_nodes[c]
        if len(group) == 1:
            order.extend(group)
            continue
        ent = sorted(s for s in group if s in init_targets)
        if not ent:
            drv = _slow_driver(m, group)
            ent = [drv] if drv is not None else []
        if not ent:
            cyc = [u for u, _ in nx.find_cycle(g.subgraph(group))]
            deadlocks.append(Deadlock(tuple(cyc + [cyc[0]])))
            ent = [group[0]]  # arbitrary, only to keep an order
        else:
            entries.extend(ent)
        dist = {s: 0 for s in ent}
        queue = deque(ent)
        sub = g.subgraph(group)
        while queue:
            u = queue.popleft()
            for v in sorted(sub.successors(u)):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        rest = sorted((s for s in group if s not in ent), key=lambda s: (dist.get(s, 0), s))
        order.extend(rest + sorted(ent))

    pos = {s: i for i, s in enumerate(order)}
    forward, feedback = set(), set()
    for u, v in per_cycle:
        (forward if pos[u] < pos[v] else feedback).add((u, v))

    has_pred = {v for _, v in per_cycle}
    init_subs = [
        s for s in order if s in init_targets or s in entries or s not in has_pred
    ]
    return CycleStructure(order, forward, feedback, sorted(entries), init_subs, deadlocks)


# --------------------------------------------------------------------------
# Unfolding


def _instance_counts(m: MultiscaleModel, instance_counts) -> dict[str, int]:
    instance_counts = instance_counts or {}
    counts = {}
    for s in m.submodels:
        if s.multiplicity == DYNAMIC:
            if s.id not in instance_counts:
                raise TaskGraphError(f"missing instance count for dynamic submodel {s.id!r}")
            k = int(instance_counts[s.id])
        else:
            k = int(s.multiplicity)
        if k < 1:
            raise TaskGraphError(f"instance count for {s.id!r} must be >= 1")
        counts[s.id] = k
    return counts


def _multi(m: MultiscaleModel, sid: str) -> bool:
    return m.submodel(sid).multiplicity != 1


def node_id(submodel: str, iteration, instance: int = 0, multi: bool = False) -> str:
    """Node id: ``smc@3``, ``p[1]@0``, ``smc@init``, ``p[0]@final``."""
    inst = f"[{instance}]" if multi else ""
    return f"{submodel}{inst}@{iteration}"


def _pairs(ku: int, kv: int):
    if ku == kv and ku > 1:
        return [(i, i) for i in range(ku)]
    return [(i, j) for i in range(ku) for j in range(kv)]


def _build(m: MultiscaleModel, cycles: int, counts: dict, cs: CycleStructure) -> TaskGraph:
    nodes: dict[str, TaskNode] = {}
    cyc = {}  # (submodel, iteration, instance) -> node id

    for s in cs.init_submodels:
        nid = node_id(s, "init", 0, False)
        nodes[nid] = TaskNode(nid, s, 0, 0, "init")
    for k in range(cycles):
        for s in cs.order:
            multi = _multi(m, s)
            for i in range(counts[s]):
                nid = node_id(s, k, i, multi)
                nodes[nid] = TaskNode(nid, s, i, k, "cycle")
                cyc[s, k, i] = nid
    final_sources = sorted({c.source for c in m.couplings if c.kind == "final"})
    finals = {}
    for s in final_sources:
        multi = _multi(m, s)
        for i in range(counts[s]):
            nid = node_id(s, "final", i, multi)
            nodes[nid] = TaskNode(nid, s, i, cycles - 1, "final")
            finals[s, i] = nid

    def init_of(s):
        nid = node_id(s, "init", 0, False)
        return nid if nid in nodes else None

    def entry_nodes(s):
        ini = init_of(s)
        if ini is not None:
            return [ini]
        return [cyc[s, 0, j] for j in range(counts[s])]

    edges: dict[tuple[str, str], int] = {}

    def add(u, v, nbytes):
        edges[u, v] = edges.get((u, v), 0) + nbytes

    for c in m.couplings:
        u, v, nb = c.source, c.target, c.payload_bytes
        if c.kind == "per_cycle":
            pairs = _pairs(counts[u], counts[v])
            shift = (u, v) in cs.feedback
            for k in range(cycles):
                if shift and k == 0:
                    ini = init_of(u)
                    if ini is not None:
                        for j in range(counts[v]):
                            add(ini, cyc[v, 0, j], nb)
                    continue
                ks = k - 1 if shift else k
                for i, j in pairs:
                    add(cyc[u, ks, i], cyc[v, k, j], nb)
        elif c.kind == "init":
            ini = init_of(u)
            srcs = [ini] if ini is not None else [cyc[u, 0, i] for i in range(counts[u])]
            for src in srcs:
                add(src, init_of(v), nb)
        elif c.kind == "final":
            for i in range(counts[u]):
                for dst in entry_nodes(v):
                    add(finals[u, i], dst, nb)

    coupling_edges = set(edges)
    continuation = []
    for s in cs.order:
        ini = init_of(s)
        for i in range(counts[s]):
            if ini is not None:
                continuation.append((ini, cyc[s, 0, i]))
            for k in range(1, cycles):
                continuation.append((cyc[s, k - 1, i], cyc[s, k, i]))
            if (s, i) in finals:
                continuation.append((cyc[s, cycles - 1, i], finals[s, i]))
    for e in continuation:
        if e not in edges:
            edges[e] = 0

    g = TaskGraph(tuple(nodes.values()), tuple((u, v, b) for (u, v), b in edges.items()))
    topo = topological_order(g)
    redundant = _redundant(g, topo, [e for e in continuation if e not in coupling_edges])
    if redundant:
        g = TaskGraph(g.nodes, tuple(e for e in g.edges if (e[0], e[1]) not in redundant))
    return g


def _redundant(g: TaskGraph, topo: list[str], candidates) -> set:
    """Candidate edges (u, v) for which another u ~> v path exists."""
    if not candidates:
        return set()
    index = {nid: i for i, nid in enumerate(topo)}
    reach = {}  # node -> bitset of descendants including itself
    succ = g.successors
    for nid in reversed(topo):
        bits = 1 << index[nid]
        for w in succ[nid]:
            bits |= reach[w]
        reach[nid] = bits
    out = set()
    for u, v in candidates:
        vbit = 1 << index[v]
        for w in succ[u]:
            if w != v and reach[w] & vbit:
                out.add((u, v))
                break
    return out


def unfold(m: MultiscaleModel, cycles: int, instance_counts: Optional[dict] = None) -> TaskGraph:
    """Materialize ``cycles`` iterations of ``m`` as a task graph.

    Parameters
    ----------
    m : MultiscaleModel
        A model that validates cleanly.
    cycles : int
        Number of iterations of the coupled loop, at least 1.
    instance_counts : dict, optional
        Instance count for every dynamic-multiplicity submodel.
    """
    if int(cycles) != cycles or cycles < 1:
        raise TaskGraphError("cycles must be a positive integer")
    counts = _instance_counts(m, instance_counts)
    cs = cycle_structure(m)
    if cs.deadlocks:
        raise DeadlockError(cs.deadlocks[0])
    try:
        return _build(m, int(cycles), counts, cs)
    except CycleError as exc:
        raise DeadlockError(Deadlock(tuple(exc.args[1]), "init/final couplings close a cycle")) from None


def detect_deadlock(m: MultiscaleModel) -> Optional[Deadlock]:
    """Return a :class:`Deadlock` if ``m`` admits no acyclic unfolding, else None."""
    cs = cycle_structure(m)
    if cs.deadlocks:
        return cs.deadlocks[0]
    counts = {s.id: 1 for s in m.submodels if s.is_dynamic}
    try:
        unfold(m, 2, counts)
    except DeadlockError as exc:
        return exc.deadlock
    return None


def replicate(g: TaskGraph, jobs: int) -> TaskGraph:
    """Independent copies of ``g`` with ids prefixed ``j<n>/``."""
    nodes, edges = [], []
    for j in range(jobs):
        pre = f"j{j}/"
        for n in g.nodes:
            nodes.append(TaskNode(pre + n.id, n.submodel, n.instance, n.iteration,
                                  n.phase, n.cost_hint, j))
        for u, v, b in g.edges:
            edges.append((pre + u, pre + v, b))
    return TaskGraph(tuple(nodes), tuple(edges))


# --------------------------------------------------------------------------
# Analyses


def topological_order(g: TaskGraph) -> list[str]:
    """Kahn's algorithm; ties go to the smallest (iteration, submodel, instance)."""
    indeg = {n.id: 0 for n in g.nodes}
    for _, v, _ in g.edges:
        indeg[v] += 1
    succ = g.successors
    by_id = g.by_id
    heap = [by_id[n].sort_key for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        nid = heapq.heappop(heap)[-1]
        out.append(nid)
        for w in succ[nid]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, by_id[w].sort_key)
    if len(out) != len(g.nodes):
        stuck = {n for n, d in indeg.items() if d > 0}
        cyc = _find_cycle(g, stuck)
        raise CycleError("task graph contains a cycle", [by_id[n].submodel for n in cyc])
    return out


def _find_cycle(g: TaskGraph, within: set) -> list[str]:
    sub = nx.DiGraph()
    sub.add_edges_from((u, v) for u, v, _ in g.edges if u in within and v in within)
    return [u for u, _ in nx.find_cycle(sub)]


def critical_path(g: TaskGraph, costs: dict) -> tuple[float, list[str]]:
    """Longest cost-weighted path; a lower bound on makespan with unbounded cores."""
    if not g.nodes:
        return 0.0, []
    for n in g.nodes:
        if n.id not in costs:
            raise KeyError(f"missing cost for node {n.id!r}")
        if costs[n.id] < 0:
            raise ValueError(f"negative cost for node {n.id!r}")
    order = topological_order(g)
    best = {}
    back = {}
    preds = g.predecessors
    for nid in order:
        top, arg = 0.0, None
        for p in preds[nid]:
            if arg is None or best[p] > top:
                top, arg = best[p], p
        best[nid] = top + costs[nid]
        back[nid] = arg
    end = max(order, key=lambda n: best[n])  # first maximum in topological order
    path = [end]
    while back[path[-1]] is not None:
        path.append(back[path[-1]])
    return best[end], path[::-1]


def node_label(n: TaskNode, multi: bool) -> str:
    inst = f"[i{n.instance}]" if multi else ""
    return f"{n.submodel}{inst}@{n.iteration}/{n.phase}"


def to_dot(g: TaskGraph) -> str:
    counts = defaultdict(set)
    for n in g.nodes:
        counts[n.job, n.submodel].add(n.instance)
    lines = ["digraph g {"]
    for n in sorted(g.nodes, key=lambda n: n.id):
        multi = len(counts[n.job, n.submodel]) > 1 or n.instance > 0
        lines.append(f'  "{n.id}" [label="{node_label(n, multi)}"];')
    for u, v, nbytes in sorted(g.edges):
        attr = f' [label="{nbytes}B"]' if nbytes else ""
        lines.append(f'  "{u}" -> "{v}"{attr};')
    lines.append("}")
    return "\n".join(lines) + "\n"
