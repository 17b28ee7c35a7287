"""Multiscale model descriptions in the MMD plain-text dialect.

An MMD file declares a model name, its single-scale submodels with their
temporal and spatial scales, the couplings between them and, optionally,
a pattern hint::

    model isr3d
    submodel smc dt=1d total=30d dx=10um extent=1mm role=auxiliary perf=smc
    submodel bf  dt=1ms total=1s dx=10um extent=1mm role=primary perf=bf
    couple smc -> bf kind=per_cycle bytes=4096
    pattern auto

Units are fixed: seconds and meters internally, bytes for payloads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional, Union

__all__ = [
    "COUPLING_KINDS",
    "PATTERN_HINTS",
    "ROLE_HINTS",
    "Coupling",
    "Diagnostic",
    "DuplicateSubmodelError",
    "ModelError",
    "MMDSyntaxError",
    "MultiscaleModel",
    "NonpositiveScaleError",
    "ScaleSeparationMap",
    "Submodel",
    "UnknownEndpointError",
    "parse_model",
    "render",
    "scale_separation_map",
    "temporal_relation",
    "validate_model",
]

COUPLING_KINDS = ("init", "per_cycle", "final")
PATTERN_HINTS = ("ES", "HMC", "RC-static", "RC-dynamic", "RC-exchange", "auto")
ROLE_HINTS = ("primary", "auxiliary", "macro", "micro", "replica", "master", "none")
DYNAMIC = "dynamic"

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "d": 86400.0}
SPACE_UNITS = {"m": 1.0, "mm": 1e-3, "um": 1e-6}

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*\Z")
_QUANTITY = re.compile(r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)([A-Za-z]+)\Z")


class ModelError(ValueError):
    """Base class for MMD parse and validation failures."""

    def __init__(self, message, line=None, column=None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class MMDSyntaxError(ModelError):
    pass


class DuplicateSubmodelError(ModelError):
    pass


class UnknownEndpointError(ModelError):
    pass


class NonpositiveScaleError(ModelError):
    pass


@dataclass(frozen=True)
class Submodel:
    id: str
    dt: float
    t_total: float
    dx: float
    x_total: float
    multiplicity: Union[int, str] = 1
    role_hint: Optional[str] = None
    perf: Optional[str] = None

    @property
    def is_dynamic(self) -> bool:
        return self.multiplicity == DYNAMIC

    @property
    def temporal_box(self) -> tuple[float, float]:
        return (self.dt, self.t_total)

    @property
    def spatial_box(self) -> tuple[float, float]:
        return (self.dx, self.x_total)


@dataclass(frozen=True)
class Coupling:
    source: str
    target: str
    kind: str
    payload_bytes: int = 0


@dataclass(frozen=True)
class MultiscaleModel:
    name: str
    submodels: tuple[Submodel, ...]
    couplings: tuple[Coupling, ...] = ()
    pattern_hint: Optional[str] = None
    # Source line of each declaration, keyed "submodel:<id>" / "couple:<index>".
    lines: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "submodels", tuple(self.submodels))
        object.__setattr__(self, "couplings", tuple(self.couplings))

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.submodels]

    def submodel(self, sid: str) -> Submodel:
        for s in self.submodels:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def couplings_of_kind(self, kind: str) -> list[Coupling]:
        return [c for c in self.couplings if c.kind == kind]


@dataclass(frozen=True)
class Diagnostic:
    """A validation finding; ``line`` points into the MMD source when known."""

    code: str
    message: str
    line: Optional[int] = None

    def __str__(self):
        if self.line is None:
            return self.message
        return f"line {self.line}: {self.message}"


# --------------------------------------------------------------------------
# Parsing


def _tokens(line: str):
    """Split a line into (token, 1-based column) pairs."""
    return [(m.group(0), m.start() + 1) for m in re.finditer(r"\S+", line)]


def _quantity(value: str, units: dict, lineno: int, col: int, key: str) -> float:
    m = _QUANTITY.match(value)
    if not m or m.group(2) not in units:
        raise MMDSyntaxError(
            f"expected <number><unit> for {key} with unit in {sorted(units)}, got {value!r}",
            lineno,
            col,
        )
    x = float(m.group(1)) * units[m.group(2)]
    if not math.isfinite(x):
        raise MMDSyntaxError(f"non-finite value for {key}", lineno, col)
    if x <= 0:
        raise NonpositiveScaleError(f"nonpositive scale value {key}={value}", lineno, col)
    return x


def _ident(tok: str, lineno: int, col: int, what: str) -> str:
    if not _IDENT.match(tok):
        raise MMDSyntaxError(f"expected {what} identifier, got {tok!r}", lineno, col)
    return tok


def _keyvals(toks, lineno, allowed):
    out = {}
    for tok, col in toks:
        if "=" not in tok:
            raise MMDSyntaxError(f"expected key=value, got {tok!r}", lineno, col)
        key, value = tok.split("=", 1)
        if key not in allowed:
            raise MMDSyntaxError(
                f"unknown key {key!r}; expected one of {', '.join(allowed)}", lineno, col
            )
        if key in out:
            raise MMDSyntaxError(f"key {key!r} given twice", lineno, col)
        if value == "":
            raise MMDSyntaxError(f"empty value for {key!r}", lineno, col + len(key) + 1)
        out[key] = (value, col + len(key) + 1)
    return out


_SUBMODEL_KEYS = ("dt", "total", "dx", "extent", "multiplicity", "role", "perf")
_COUPLE_KEYS = ("kind", "bytes")


def _parse_submodel(toks, lineno):
    if len(toks) < 2:
        raise MMDSyntaxError("expected submodel identifier", lineno, len("submodel") + 2)
    sid = _ident(toks[1][0], lineno, toks[1][1], "submodel")
    kv = _keyvals(toks[2:], lineno, _SUBMODEL_KEYS)
    for req in ("dt", "total", "dx", "extent"):
        if req not in kv:
            raise MMDSyntaxError(f"missing required key {req!r}", lineno, toks[-1][1])
    dt = _quantity(kv["dt"][0], TIME_UNITS, lineno, kv["dt"][1], "dt")
    t_total = _quantity(kv["total"][0], TIME_UNITS, lineno, kv["total"][1], "total")
    dx = _quantity(kv["dx"][0], SPACE_UNITS, lineno, kv["dx"][1], "dx")
    x_total = _quantity(kv["extent"][0], SPACE_UNITS, lineno, kv["extent"][1], "extent")

    multiplicity: Union[int, str] = 1
    if "multiplicity" in kv:
        value, col = kv["multiplicity"]
        if value == DYNAMIC:
            multiplicity = DYNAMIC
        elif re.fullmatch(r"\d+", value):
            multiplicity = int(value)
        else:
            raise MMDSyntaxError(
                f"expected multiplicity=<int>|dynamic, got {value!r}", lineno, col
            )
    role = None
    if "role" in kv:
        value, col = kv["role"]
        if value not in ROLE_HINTS:
            raise MMDSyntaxError(
                f"expected role in {{{', '.join(ROLE_HINTS)}}}, got {value!r}", lineno, col
            )
        role = value
    perf = None
    if "perf" in kv:
        perf = _ident(kv["perf"][0], lineno, kv["perf"][1], "perf reference")
    return Submodel(sid, dt, t_total, dx, x_total, multiplicity, role, perf)


def _parse_couple(toks, lineno):
    if len(toks) < 4 or toks[2][0] != "->":
        col = toks[2][1] if len(toks) > 2 else (toks[-1][1] + len(toks[-1][0]) + 1)
        raise MMDSyntaxError("expected `couple <from> -> <to> kind=...`", lineno, col)
    src = _ident(toks[1][0], lineno, toks[1][1], "coupling source")
    dst = _ident(toks[3][0], lineno, toks[3][1], "coupling target")
    kv = _keyvals(toks[4:], lineno, _COUPLE_KEYS)
    if "kind" not in kv:
        raise MMDSyntaxError("missing required key 'kind'", lineno, toks[-1][1])
    kind, col = kv["kind"]
    if kind not in COUPLING_KINDS:
        raise MMDSyntaxError(
            f"expected kind in {{{', '.join(COUPLING_KINDS)}}}, got {kind!r}", lineno, col
        )
    nbytes = 0
    if "bytes" in kv:
        value, col = kv["bytes"]
        if not re.fullmatch(r"\d+", value):
            raise MMDSyntaxError(f"expected bytes=<nonnegative int>, got {value!r}", lineno, col)
        nbytes = int(value)
    return Coupling(src, dst, kind, nbytes)


def parse_model(text: str) -> MultiscaleModel:
    """Parse MMD source into a :class:`MultiscaleModel`.

    Raises a :class:`ModelError` subclass carrying line and column on the
    first problem found: syntax errors, duplicate submodel ids, couplings
    naming undeclared submodels, or nonpositive scale values.
    """
    name = None
    pattern = None
    submodels: list[Submodel] = []
    couplings: list[Coupling] = []
    lines: dict[str, int] = {}
    coupling_cols = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = _tokens(line)
        if not toks:
            continue
        head, col = toks[0]
        if head == "model":
            if len(toks) != 2:
                raise MMDSyntaxError("expected `model <name>`", lineno, col)
            if name is not None:
                raise MMDSyntaxError("model name declared twice", lineno, col)
            name = _ident(toks[1][0], lineno, toks[1][1], "model")
            lines["model"] = lineno
        elif head == "submodel":
            sm = _parse_submodel(toks, lineno)
            if f"submodel:{sm.id}" in lines:
                raise DuplicateSubmodelError(
                    f"duplicate submodel id {sm.id!r} (first declared on line "
                    f"{lines['submodel:' + sm.id]})",
                    lineno,
                    toks[1][1],
                )
            lines[f"submodel:{sm.id}"] = lineno
            submodels.append(sm)
        elif head == "couple":
            cp = _parse_couple(toks, lineno)
            lines[f"couple:{len(couplings)}"] = lineno
            coupling_cols.append((lineno, toks[1][1], toks[3][1]))
            couplings.append(cp)
        elif head == "pattern":
            if len(toks) != 2 or toks[1][0] not in PATTERN_HINTS:
                c = toks[1][1] if len(toks) > 1 else col
                raise MMDSyntaxError(
                    f"expected pattern in {{{', '.join(PATTERN_HINTS)}}}", lineno, c
                )
            if pattern is not None:
                raise MMDSyntaxError("pattern declared twice", lineno, col)
            pattern = toks[1][0]
        else:
            raise MMDSyntaxError(
                f"expected one of model, submodel, couple, pattern; got {head!r}", lineno, col
            )

    if name is None:
        raise MMDSyntaxError("missing `model <name>` declaration", 1, 1)
    declared = {s.id for s in submodels}
    for cp, (lineno, scol, dcol) in zip(couplings, coupling_cols):
        if cp.source not in declared:
            raise UnknownEndpointError(f"unknown coupling endpoint {cp.source!r}", lineno, scol)
        if cp.target not in declared:
            raise UnknownEndpointError(f"unknown coupling endpoint {cp.target!r}", lineno, dcol)
    return MultiscaleModel(name, tuple(submodels), tuple(couplings), pattern, lines)


def _fmt(x: float) -> str:
    return repr(float(x))


def render(m: MultiscaleModel) -> str:
    """Pretty-print ``m`` as MMD; ``parse_model(render(m)) == m``."""
    out = [f"model {m.name}"]
    for s in m.submodels:
        parts = [
            f"submodel {s.id}",
            f"dt={_fmt(s.dt)}s",
            f"total={_fmt(s.t_total)}s",
            f"dx={_fmt(s.dx)}m",
            f"extent={_fmt(s.x_total)}m",
        ]
        if s.multiplicity != 1:
            parts.append(f"multiplicity={s.multiplicity}")
        if s.role_hint is not None:
            parts.append(f"role={s.role_hint}")
        if s.perf is not None:
            parts.append(f"perf={s.perf}")
        out.append(" ".join(parts))
    for c in m.couplings:
        line = f"couple {c.source} -> {c.target} kind={c.kind}"
        if c.payload_bytes:
            line += f" bytes={c.payload_bytes}"
        out.append(line)
    if m.pattern_hint is not None:
        out.append(f"pattern {m.pattern_hint}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Validation


def starting_points(m: MultiscaleModel) -> list[str]:
    """Submodels able to begin the coupled loop.

    A submodel is a starting point if it is the target of an init coupling,
    has no per_cycle predecessor, or is the scale-separated slow driver of a
    per_cycle cycle (see :func:`mcpatterns.taskgraph.cycle_structure`).
    """
    from .taskgraph import cycle_structure

    return cycle_structure(m).init_submodels


def validate_model(m: MultiscaleModel) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    lines = m.lines or {}

    def add(code, message, key=None):
        diags.append(Diagnostic(code, message, lines.get(key) if key else None))

    if not m.submodels:
        add("empty", "model has no submodels", "model")

    seen = set()
    for s in m.submodels:
        key = f"submodel:{s.id}"
        if s.id in seen:
            add("duplicate", f"duplicate submodel id {s.id!r}", key)
        seen.add(s.id)
        for label, value in (("dt", s.dt), ("total", s.t_total), ("dx", s.dx), ("extent", s.x_total)):
            if not value > 0:
                add("nonpositive", f"{s.id}: nonpositive scale value {label}={value}", key)
        if s.dt > s.t_total:
            add("invariant", f"{s.id}: dt={s.dt} exceeds total={s.t_total}", key)
        if s.dx > s.x_total:
            add("invariant", f"{s.id}: dx={s.dx} exceeds extent={s.x_total}", key)
        if s.multiplicity != DYNAMIC and (
            not isinstance(s.multiplicity, int) or s.multiplicity < 1
        ):
            add("invariant", f"{s.id}: multiplicity must be >= 1 or dynamic", key)

    dynamic = {s.id for s in m.submodels if s.is_dynamic}
    for i, c in enumerate(m.couplings):
        key = f"couple:{i}"
        for end in (c.source, c.target):
            if end not in seen:
                add("endpoint", f"unknown coupling endpoint {end!r}", key)
        if c.source == c.target:
            add("invariant", f"coupling {c.source} -> {c.target} couples a submodel to itself", key)
        if c.kind not in COUPLING_KINDS:
            add("invariant", f"unknown coupling kind {c.kind!r}", key)
        if c.payload_bytes < 0:
            add("invariant", f"negative payload on {c.source} -> {c.target}", key)
        if c.source in dynamic and c.target in dynamic:
            add(
                "dynamic-pair",
                f"coupling {c.source} -> {c.target} joins two dynamic-multiplicity submodels",
                key,
            )

    if diags:
        return diags
    if not starting_points(m):
        add("no-start", "no starting point", "model")
    return diags


# --------------------------------------------------------------------------
# Scale separation map


def temporal_relation(a: tuple[float, float], b: tuple[float, float]) -> str:
    """Relation between two closed intervals: separated, contiguous or overlapping."""
    lo = max(a[0], b[0])
    hi = min(a[1], b[1])
    if lo > hi:
        return "separated"
    if lo == hi and a != b:
        return "contiguous"
    return "overlapping"


@dataclass(frozen=True)
class ScaleSeparationMap:
    temporal: dict
    spatial: dict
    relations: dict

    def relation(self, a: str, b: str) -> str:
        return self.relations[frozenset((a, b))] if a != b else "overlapping"


def scale_separation_map(m: MultiscaleModel) -> ScaleSeparationMap:
    temporal = {s.id: s.temporal_box for s in m.submodels}
    spatial = {s.id: s.spatial_box for s in m.submodels}
    relations = {}
    ids = m.ids
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            relations[frozenset((a, b))] = temporal_relation(temporal[a], temporal[b])
    return ScaleSeparationMap(temporal, spatial, relations)
