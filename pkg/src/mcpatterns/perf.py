"""Performance and energy models for single-scale submodels and the ES pattern.

Execution time of a submodel on ``P`` processors is given by one of four
models (serial, perfectly scaling, Amdahl, measured table). On top of those
this module evaluates the Extreme Scaling composite time ``T_pr + T_aux``,
its parallel efficiency (exact and the primary-dominated approximation),
searches processor splits for interleaving two ES instances, and picks
DVFS frequencies on the interleaved schedule.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

SEQUENTIAL = "sequential"
INTERLEAVED = "interleaved"

_KINDS = ("serial", "perfect", "amdahl", "table", "sum")


class PerfError(ValueError):
    pass


@dataclass(frozen=True)
class PerfModel:
    """Time-vs-processors model of one submodel.

    ``a`` is the time on one processor (any processor count for ``serial``),
    ``s`` the Amdahl serial fraction, ``points`` the measured ``(P, time)``
    pairs of a table model. Times scale linearly with ``problem_size``.
    A ``sum`` model runs its ``parts`` one after another.
    """

    kind: str
    a: float = 0.0
    s: float = 0.0
    points: tuple = ()
    problem_size: float = 1.0
    parts: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise PerfError(f"unknown performance model kind {self.kind!r}")
        if not self.problem_size > 0:
            raise PerfError("problem size must be positive")
        if self.kind == "table":
            pts = tuple(sorted((int(p), float(t)) for p, t in self.points))
            if not pts:
                raise PerfError("table model needs at least one point")
            ps = [p for p, _ in pts]
            if len(set(ps)) != len(ps):
                raise PerfError("table points must have distinct P")
            if ps[0] < 1:
                raise PerfError("table points need P >= 1")
            ts = [t for _, t in pts]
            if any(t <= 0 for t in ts):
                raise PerfError("table times must be positive")
            if any(b > a for a, b in zip(ts, ts[1:])):
                raise PerfError("table times must be nonincreasing in P")
            object.__setattr__(self, "points", pts)
        elif self.kind == "sum":
            if not self.parts:
                raise PerfError("sum model needs parts")
        else:
            if not self.a > 0:
                raise PerfError(f"{self.kind} model needs a > 0")
            if self.kind == "amdahl" and not 0.0 <= self.s <= 1.0:
                raise PerfError("Amdahl serial fraction must lie in [0, 1]")

    @classmethod
    def serial(cls, a, problem_size=1.0):
        return cls("serial", a=a, problem_size=problem_size)

    @classmethod
    def perfect(cls, a, problem_size=1.0):
        return cls("perfect", a=a, problem_size=problem_size)

    @classmethod
    def amdahl(cls, a, s, problem_size=1.0):
        return cls("amdahl", a=a, s=s, problem_size=problem_size)

    @classmethod
    def table(cls, points, problem_size=1.0):
        return cls("table", points=tuple(points), problem_size=problem_size)

    def __call__(self, P) -> float:
        return eval_time(self, P)


def eval_time(pm: PerfModel, P) -> float:
    """Execution time of ``pm`` on ``P >= 1`` processors."""
    if P < 1:
        raise PerfError(f"processor count must be >= 1, got {P}")
    n = pm.problem_size
    if pm.kind == "sum":
        return n * sum(eval_time(part, P) for part in pm.parts)
    if pm.kind == "serial":
        return pm.a * n
    if pm.kind == "perfect":
        return pm.a * n / P
    if pm.kind == "amdahl":
        return pm.a * n * (pm.s + (1.0 - pm.s) / P)
    ps = [p for p, _ in pm.points]
    if P < ps[0] or P > ps[-1]:
        log.warning("P=%s outside table range [%s, %s]; clamping", P, ps[0], ps[-1])
    # Linear in 1/P; np.interp wants increasing abscissae and clamps at the ends.
    inv = np.array([1.0 / p for p, _ in reversed(pm.points)])
    ts = np.array([t for _, t in reversed(pm.points)])
    return float(np.interp(1.0 / P, inv, ts)) * n


# --------------------------------------------------------------------------
# Extreme Scaling composite model


def es_time(t_pr: float, t_aux: float) -> float:
    if t_pr < 0 or t_aux < 0:
        raise PerfError("times must be nonnegative")
    return t_pr + t_aux


def es_efficiency(pm_pr: PerfModel, pm_aux: PerfModel, P: int) -> tuple[float, float]:
    """Parallel efficiency of sequential ES execution on ``P`` processors.

    Returns ``(exact, approx)``. The approximation drops the auxiliary
    single-processor time and reads ``eps_pr / (T_aux(P)/T_pr(P) + 1)``.
    """
    tp1, tpP = eval_time(pm_pr, 1), eval_time(pm_pr, P)
    ta1, taP = eval_time(pm_aux, 1), eval_time(pm_aux, P)
    exact = (ta1 + tp1) / (P * (taP + tpP))
    eps_pr = tp1 / (P * tpP)
    approx = eps_pr / (taP / tpP + 1.0)
    return exact, approx


@dataclass(frozen=True)
class EsAllocation:
    P1: int
    P2: int
    mode: str
    period: float
    imbalance: float
    t_pr: float
    t_aux: float

    @property
    def total(self) -> int:
        return self.P1 + self.P2 if self.mode == INTERLEAVED else self.P1


def _imbalance(a: float, b: float) -> float:
    m = max(a, b)
    return abs(a - b) / m if m > 0 else 0.0


def optimal_split(pm_pr: PerfModel, pm_aux: PerfModel, P: int) -> EsAllocation:
    """Best ``P1 + P2 = P`` split for two interleaved ES instances.

    Minimizes the steady-state period ``max(T_pr(P1), T_aux(P2))``; ties go
    to the smaller imbalance, then the smaller ``P2``.
    """
    if P < 2:
        raise PerfError("interleaving needs at least 2 processors")
    best = None
    for p2 in range(1, P):
        p1 = P - p2
        tp, ta = eval_time(pm_pr, p1), eval_time(pm_aux, p2)
        key = (max(tp, ta), _imbalance(tp, ta), p2)
        if best is None or key < best[0]:
            best = (key, p1, p2, tp, ta)
    (period, imb, _), p1, p2, tp, ta = best
    return EsAllocation(p1, p2, INTERLEAVED, period, imb, tp, ta)


def sequential_allocation(pm_pr: PerfModel, pm_aux: PerfModel, P: int) -> EsAllocation:
    tp, ta = eval_time(pm_pr, P), eval_time(pm_aux, P)
    return EsAllocation(P, P, SEQUENTIAL, es_time(tp, ta), _imbalance(tp, ta), tp, ta)


def choose_mode(pm_pr: PerfModel, pm_aux: PerfModel, P: int, r_seq: float = 0.01) -> str:
    """Sequential or interleaved execution, whichever has the shorter per-job time.

    When the auxiliary model costs at most ``r_seq`` of the primary at ``P``
    the split search is skipped unless the split beats sequential anyway.
    """
    return best_allocation(pm_pr, pm_aux, P, r_seq).mode


def best_allocation(pm_pr: PerfModel, pm_aux: PerfModel, P: int, r_seq: float = 0.01) -> EsAllocation:
    seq = sequential_allocation(pm_pr, pm_aux, P)
    if P < 2:
        return seq
    # Negligible aux: no split can win once T_pr(P - 1) already exceeds the
    # sequential period (nonincreasing models), so skip the search.
    if seq.t_aux <= r_seq * seq.t_pr and eval_time(pm_pr, P - 1) >= seq.period:
        return seq
    split = optimal_split(pm_pr, pm_aux, P)
    return split if split.period < seq.period else seq


# --------------------------------------------------------------------------
# Energy


@dataclass(frozen=True)
class EnergyModel:
    p_static: float = 1.0
    p_dyn: float = 3.0
    alpha: float = 3.0
    f_levels: tuple = (1.0,)

    def __post_init__(self):
        levels = tuple(sorted(float(f) for f in self.f_levels))
        if not levels or any(not 0 < f <= 1 for f in levels):
            raise PerfError("frequency levels must lie in (0, 1]")
        if not math.isclose(levels[-1], 1.0):
            raise PerfError("frequency levels must include 1")
        if self.p_static < 0 or self.p_dyn < 0 or self.p_static + self.p_dyn <= 0:
            raise PerfError("power coefficients must be nonnegative with positive sum")
        if self.alpha < 0:
            raise PerfError("alpha must be nonnegative")
        object.__setattr__(self, "f_levels", levels)

    def power(self, f: float) -> float:
        return self.p_static + self.p_dyn * f ** self.alpha

    def level(self, f: float) -> float:
        for lv in self.f_levels:
            if math.isclose(lv, f, rel_tol=1e-9, abs_tol=1e-12):
                return lv
        raise PerfError(f"frequency {f} is not a permitted level {self.f_levels}")


def energy_of(time: float, cores: int, f: float, em: EnergyModel) -> float:
    """Joules for a task taking ``time`` seconds at full frequency, run at ``f``."""
    f = em.level(f)
    if time == 0:
        return 0.0
    return cores * em.power(f) * (time / f)


def interleave_energy(alloc: EsAllocation, em: EnergyModel, f_pr: float, f_aux: float) -> float:
    """Energy of one steady-state period; allocated cores draw static power throughout."""
    period = max(alloc.t_pr / f_pr, alloc.t_aux / f_aux, alloc.period)
    out = 0.0
    for cores, t, f in ((alloc.P1, alloc.t_pr, f_pr), (alloc.P2, alloc.t_aux, f_aux)):
        busy = t / f
        out += energy_of(t, cores, f, em) + cores * em.p_static * (period - busy)
    return out


def energy_optimize_interleave(alloc: EsAllocation, em: EnergyModel, slack_tol: float = 0.0):
    """Frequencies ``(f_pr, f_aux)`` minimizing energy per period.

    Candidates are all pairs of permitted levels whose stretched times still
    fit in the period (up to ``slack_tol``). Ties favour higher frequencies.
    """
    if alloc.mode != INTERLEAVED:
        raise PerfError("frequency optimization applies to interleaved allocations")
    bound = alloc.period * (1.0 + slack_tol) * (1 + 1e-12)
    best = None
    for f_pr in em.f_levels:
        for f_aux in em.f_levels:
            if max(alloc.t_pr / f_pr, alloc.t_aux / f_aux) > bound:
                continue
            e = interleave_energy(alloc, em, f_pr, f_aux)
            key = (e, -f_pr, -f_aux)
            if best is None or key < best[0]:
                best = (key, f_pr, f_aux)
    return best[1], best[2]


# --------------------------------------------------------------------------
# Sidecar performance file

_PERF_LINE = re.compile(r"perf\s+(\S+)\s+(serial|perfect|amdahl|table)\s+(.*)\Z")


def parse_perf(text: str) -> dict[str, PerfModel]:
    """Parse ``perf <ref> <kind> ...`` lines into models keyed by reference."""
    out: dict[str, PerfModel] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _PERF_LINE.match(line)
        if not m:
            raise PerfError(f"line {lineno}: expected `perf <ref> serial|perfect|amdahl|table ...`")
        ref, kind, rest = m.groups()
        if ref in out:
            raise PerfError(f"line {lineno}: duplicate perf reference {ref!r}")
        try:
            if kind == "table":
                pts_txt, _, tail = rest.partition(" ")
                pts = []
                for chunk in pts_txt.split(";"):
                    pm = re.fullmatch(r"\(\s*(\d+)\s*,\s*([^)\s]+)\s*\)", chunk.strip())
                    if not pm:
                        raise PerfError(f"bad table point {chunk!r}")
                    pts.append((int(pm.group(1)), float(pm.group(2))))
                kv = _kv(tail, ("n",))
                out[ref] = PerfModel.table(pts, kv.get("n", 1.0))
            else:
                keys = {"serial": ("a", "n"), "perfect": ("a", "n"), "amdahl": ("a", "s", "n")}[kind]
                kv = _kv(rest, keys)
                if "a" not in kv or (kind == "amdahl" and "s" not in kv):
                    raise PerfError(f"missing parameter for {kind} model")
                out[ref] = PerfModel(kind, a=kv["a"], s=kv.get("s", 0.0),
                                     problem_size=kv.get("n", 1.0))
        except (PerfError, ValueError) as exc:
            raise PerfError(f"line {lineno}: {exc}") from None
    return out


def _kv(text: str, allowed) -> dict[str, float]:
    out = {}
    for tok in text.split():
        key, eq, value = tok.partition("=")
        if not eq or key not in allowed:
            raise PerfError(f"unexpected token {tok!r}")
        out[key] = float(value)
    return out


def aux_model(models: list[PerfModel]) -> Optional[PerfModel]:
    """Auxiliary models run back to back on the same processors, as one model."""
    if not models:
        return None
    if len(models) == 1:
        return models[0]
    return PerfModel("sum", parts=tuple(models))
