"""Multiscale computing patterns: classification, templates and embedding.

Three generic patterns are recognised:

* Extreme Scaling (ES): one cost-dominating primary submodel (role ``A``)
  with serial (``B_s``) and parallel (``B_p``) auxiliary submodels.
* Heterogeneous Multiscale Computing (HMC): a macro model (``M``) served by
  a database/manager (``D``) that launches a varying number of micro
  simulations (``mu``).
* Replica Computing (RC): many independent replicas (``A1``) feeding a
  master (``A2``); static, dynamic-ensemble and replica-exchange variants.

Template topologies follow the role descriptions; the
ES unit synchronises ``A`` and ``B_p`` at the end of the unit (both feed
``B_s``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .model import MultiscaleModel
from .taskgraph import TaskGraph, TaskNode, topological_order

__all__ = [
    "AmbiguousPatternError",
    "EmbeddingError",
    "PatternEmbedding",
    "PatternKind",
    "classify",
    "dominant_submodel",
    "embed",
    "embed_es",
    "template",
]


class PatternKind(enum.Enum):
    ES = "ES"
    HMC = "HMC"
    RC_static = "RC-static"
    RC_dynamic = "RC-dynamic"
    RC_exchange = "RC-exchange"

    @classmethod
    def from_hint(cls, hint: str) -> "PatternKind":
        return cls(hint)

    @property
    def is_rc(self) -> bool:
        return self.name.startswith("RC")


class AmbiguousPatternError(ValueError):
    pass


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class PatternEmbedding:
    kind: PatternKind
    role_of: dict
    unit_count: int
    residual: tuple
    primary: Optional[str] = None

    def submodels_with(self, role: str) -> list[str]:
        return sorted(s for s, r in self.role_of.items() if r == role)


# --------------------------------------------------------------------------
# Classification


def _neighbours(m: MultiscaleModel, sid: str, kinds=("per_cycle",)) -> set:
    out = set()
    for c in m.couplings:
        if c.kind not in kinds:
            continue
        if c.source == sid:
            out.add(c.target)
        elif c.target == sid:
            out.add(c.source)
    return out


def _hmc_structure(m: MultiscaleModel) -> Optional[str]:
    dyn = [s for s in m.submodels if s.is_dynamic]
    if len(dyn) != 1 or dyn[0].role_hint not in (None, "micro", "none"):
        return None
    mu = dyn[0].id
    if len(_neighbours(m, mu) - {mu}) == 1:
        return mu
    return None


def _rc_structure(m: MultiscaleModel):
    """(replica ids, master id, variant) or None."""
    for r in m.submodels:
        if r.is_dynamic or r.multiplicity < 2 or r.role_hint not in (None, "replica", "none"):
            continue
        masters = sorted(
            c.target
            for c in m.couplings
            if c.source == r.id
            and c.kind in ("per_cycle", "final")
            and m.submodel(c.target).multiplicity == 1
            and m.submodel(c.target).role_hint in (None, "master", "none")
        )
        if not masters:
            continue
        master = masters[0]
        partners = sorted(
            s for s in _neighbours(m, r.id)
            if s != master and m.submodel(s).multiplicity == r.multiplicity
        )
        if partners:
            return [r.id] + partners, master, PatternKind.RC_exchange
        feedback = any(
            c.source == master and c.target == r.id and c.kind in ("per_cycle", "init")
            for c in m.couplings
        )
        return [r.id], master, PatternKind.RC_dynamic if feedback else PatternKind.RC_static
    return None


def cost_shares(m: MultiscaleModel, costs: dict) -> dict[str, float]:
    """Aggregate cost share per submodel (per-instance cost times instances)."""
    agg = {}
    for s in m.submodels:
        c = costs[s.id]
        if not c > 0:
            raise ValueError(f"cost of {s.id!r} must be positive")
        agg[s.id] = c * (1 if s.is_dynamic else s.multiplicity)
    total = sum(agg.values())
    return {k: v / total for k, v in agg.items()}


def dominant_submodel(m: MultiscaleModel, costs: dict) -> str:
    shares = cost_shares(m, costs)
    return max(sorted(shares), key=lambda s: shares[s])


def classify(m: MultiscaleModel, costs: dict, theta_es: float = 0.9) -> Optional[PatternKind]:
    """Pattern of ``m``; None when nothing matches (unclassified).

    An explicit pattern hint other than ``auto`` wins. Otherwise structural
    signatures are checked first (HMC, then RC) and the ES cost-dominance
    test last.
    """
    if not 0 < theta_es <= 1:
        raise ValueError("theta_es must lie in (0, 1]")
    if m.pattern_hint not in (None, "auto"):
        return PatternKind.from_hint(m.pattern_hint)
    hmc = _hmc_structure(m)
    rc = _rc_structure(m)
    if hmc is not None and rc is not None:
        raise AmbiguousPatternError(
            f"model {m.name!r} shows both HMC ({hmc}) and RC ({', '.join(rc[0])}) structure"
        )
    if hmc is not None:
        return PatternKind.HMC
    if rc is not None:
        return rc[2]
    shares = cost_shares(m, costs)
    # relative slack so rescaled costs rounding across the threshold keep their class
    if max(shares.values()) >= theta_es * (1.0 - 1e-12):
        return PatternKind.ES
    return None


# --------------------------------------------------------------------------
# Embedding


def _reach_bits(g: TaskGraph):
    order = topological_order(g)
    index = {nid: i for i, nid in enumerate(order)}
    desc = {}
    for nid in reversed(order):
        bits = 1 << index[nid]
        for w in g.successors[nid]:
            bits |= desc[w]
        desc[nid] = bits
    return index, desc


def embed_es(g: TaskGraph, m: MultiscaleModel, primary: str) -> PatternEmbedding:
    """Map ``g`` onto the ES template with ``primary`` as role ``A``.

    Within each repeating unit (one iteration of one job), an auxiliary
    submodel ordered before or after ``A`` is serial (``B_s``); one whose
    nodes are incomparable with ``A`` is parallel (``B_p``).
    """
    if primary not in m.ids:
        raise EmbeddingError(f"unknown primary submodel {primary!r}")
    units = {}
    residual = []
    for n in g.nodes:
        if n.phase != "cycle":
            residual.append(n.id)
            continue
        units.setdefault((n.job, n.iteration), []).append(n)
    a_units = {k for k, ns in units.items() if any(n.submodel == primary for n in ns)}
    if not a_units:
        raise EmbeddingError(f"primary {primary!r} takes part in no repeating unit")

    index, desc = _reach_bits(g)
    serial = set()
    present = set()
    for key in sorted(a_units):
        nodes = units[key]
        a_nodes = [n for n in nodes if n.submodel == primary]
        for n in nodes:
            if n.submodel == primary:
                continue
            present.add(n.submodel)
            bit = 1 << index[n.id]
            for a in a_nodes:
                if desc[a.id] & bit or desc[n.id] & (1 << index[a.id]):
                    serial.add(n.submodel)
                    break
    role_of = {primary: "A"}
    for s in sorted(present):
        role_of[s] = "B_s" if s in serial else "B_p"
    return PatternEmbedding(
        PatternKind.ES, role_of, len(a_units), tuple(sorted(residual)), primary
    )


def embed(g: TaskGraph, m: MultiscaleModel, kind: PatternKind,
          primary: Optional[str] = None, costs: Optional[dict] = None) -> PatternEmbedding:
    """Embed ``g`` into the template for ``kind``.

    ES needs ``primary`` or ``costs`` (the dominant submodel becomes ``A``).
    """
    if kind == PatternKind.ES:
        if primary is None:
            hinted = [s.id for s in m.submodels if s.role_hint == "primary"]
            if len(hinted) == 1:
                primary = hinted[0]
            elif costs is not None:
                primary = dominant_submodel(m, costs)
            else:
                raise EmbeddingError("ES embedding needs a primary submodel")
        return embed_es(g, m, primary)

    residual = tuple(sorted(n.id for n in g.nodes if n.phase != "cycle"))
    units = len({(n.job, n.iteration) for n in g.nodes if n.phase == "cycle"})
    role_of = {s: "aux" for s in m.ids}
    if kind == PatternKind.HMC:
        mu = _hmc_structure(m)
        if mu is None:
            dyn = [s.id for s in m.submodels if s.is_dynamic]
            if len(dyn) != 1:
                raise EmbeddingError("HMC needs exactly one dynamic-multiplicity submodel")
            mu = dyn[0]
        role_of[mu] = "mu"
        near = sorted(_neighbours(m, mu) - {mu})
        macro_hint = [s.id for s in m.submodels if s.role_hint == "macro"]
        if near and (not macro_hint or near[0] not in macro_hint):
            role_of[near[0]] = "D"
        macro = macro_hint[0] if macro_hint else None
        if macro is None:
            others = sorted(s for s in m.ids if role_of[s] == "aux")
            if not others:
                raise EmbeddingError("HMC needs a macro submodel")
            macro = others[0]
        role_of[macro] = "M"
        return PatternEmbedding(kind, role_of, units, residual)

    rc = _rc_structure(m)
    if rc is None:
        reps = [s.id for s in m.submodels if s.role_hint == "replica"]
        masters = [s.id for s in m.submodels if s.role_hint == "master"]
        if not reps or not masters:
            raise EmbeddingError("RC needs replica and master submodels")
        rc = (reps, masters[0], kind)
    for r in rc[0]:
        role_of[r] = "A1"
    role_of[rc[1]] = "A2"
    return PatternEmbedding(kind, role_of, units, residual)


# --------------------------------------------------------------------------
# Generic templates


def _graph(nodes, edges) -> TaskGraph:
    g = TaskGraph(tuple(nodes), tuple((u, v, 0) for u, v in edges))
    topological_order(g)
    return g


def template(kind: PatternKind, params: Optional[dict] = None) -> TaskGraph:
    """Generic task graph for ``kind``.

    params
        ES: ``serial`` and ``parallel`` (bools, default True), ``units``.
        HMC: ``micro`` slots (default 2), ``units``.
        RC: ``replicas`` (default 3); ``rounds`` for the dynamic variant;
        ``exchanges`` for replica exchange.
    """
    p = dict(params or {})
    if kind == PatternKind.ES:
        return _es_template(bool(p.get("serial", True)), bool(p.get("parallel", True)),
                            int(p.get("units", 1)))
    if kind == PatternKind.HMC:
        return _hmc_template(int(p.get("micro", 2)), int(p.get("units", 1)))
    n = int(p.get("replicas", 3))
    if n < 1:
        raise ValueError("RC needs at least one replica")
    if kind == PatternKind.RC_static:
        if int(p.get("rounds", 1)) != 1:
            raise ValueError("static RC runs a single round")
        return _rc_template(n, 1, 0)
    if kind == PatternKind.RC_dynamic:
        rounds = int(p.get("rounds", 2))
        if rounds < 1:
            raise ValueError("feedback rounds must be >= 1")
        return _rc_template(n, rounds, 0)
    exchanges = int(p.get("exchanges", 1))
    if exchanges < 1:
        raise ValueError("exchange interval count must be >= 1")
    return _rc_template(n, 1, exchanges)


def _es_template(serial: bool, parallel: bool, units: int) -> TaskGraph:
    if units < 1:
        raise ValueError("units must be >= 1")
    nodes, edges = [], []
    for k in range(units):
        nodes.append(TaskNode(f"A@{k}", "A", 0, k))
        if parallel:
            nodes.append(TaskNode(f"B_p@{k}", "B_p", 0, k))
        if serial:
            nodes.append(TaskNode(f"B_s@{k}", "B_s", 0, k))
            edges.append((f"A@{k}", f"B_s@{k}"))
            if parallel:
                edges.append((f"B_p@{k}", f"B_s@{k}"))
        if k > 0:
            tail = [f"B_s@{k-1}"] if serial else [f"A@{k-1}"] + ([f"B_p@{k-1}"] if parallel else [])
            heads = [f"A@{k}"] + ([f"B_p@{k}"] if parallel else [])
            edges.extend((t, h) for t in tail for h in heads)
    return _graph(nodes, edges)


def _hmc_template(micro: int, units: int) -> TaskGraph:
    if micro < 0 or units < 1:
        raise ValueError("HMC template needs micro >= 0 and units >= 1")
    nodes, edges = [], []
    for k in range(units):
        m, q, r = f"M@{k}", f"D[0]@{k}", f"D[1]@{k}"
        nodes += [TaskNode(m, "M", 0, k), TaskNode(q, "D", 0, k), TaskNode(r, "D", 1, k)]
        edges += [(m, q)]
        if micro == 0:
            edges.append((q, r))
        for i in range(micro):
            mu = f"mu[{i}]@{k}"
            nodes.append(TaskNode(mu, "mu", i, k))
            edges += [(q, mu), (mu, r)]
        if k > 0:
            edges.append((f"D[1]@{k-1}", m))
    return _graph(nodes, edges)


def _rc_template(n: int, rounds: int, exchanges: int) -> TaskGraph:
    nodes, edges = [], []
    segments = exchanges + 1
    for k in range(rounds):
        for seg in range(segments):
            it = k * segments + seg
            for i in range(n):
                rid = f"A1[{i}]@{it}"
                nodes.append(TaskNode(rid, "A1", i, it))
                if seg > 0:
                    edges.append((f"X@{it-1}", rid))
                elif k > 0:
                    edges.append((f"A2@{k-1}", rid))
            if seg < segments - 1:
                nodes.append(TaskNode(f"X@{it}", "X", 0, it))
                edges += [(f"A1[{i}]@{it}", f"X@{it}") for i in range(n)]
        last = k * segments + segments - 1
        nodes.append(TaskNode(f"A2@{k}", "A2", 0, last))
        edges += [(f"A1[{i}]@{last}", f"A2@{k}") for i in range(n)]
    return _graph(nodes, edges)
