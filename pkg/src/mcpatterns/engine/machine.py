"""Synthetic cluster description."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..perf import EnergyModel


class MachineError(ValueError):
    pass


@dataclass(frozen=True)
class MachineModel:
    """Homogeneous cluster with DVFS levels and a per-core failure rate.

    ``reliability`` lists ``(first_node, last_node, multiplier)`` ranges that
    scale ``lambda_core`` for cores on those nodes; unlisted nodes use 1.
    """

    nodes: int
    cores_per_node: int = 1
    energy: EnergyModel = field(default_factory=EnergyModel)
    lambda_core: float = 0.0
    reliability: tuple = ()

    def __post_init__(self):
        if self.nodes < 1 or self.cores_per_node < 1:
            raise MachineError("machine needs at least one node and one core per node")
        if self.lambda_core < 0:
            raise MachineError("lambda_core must be nonnegative")
        for lo, hi, mult in self.reliability:
            if not 0 <= lo <= hi < self.nodes or mult < 0:
                raise MachineError(f"bad reliability range {lo}-{hi}:{mult}")

    @property
    def total_cores(self) -> int:
        return self.nodes * self.cores_per_node

    @property
    def f_levels(self) -> tuple:
        return self.energy.f_levels

    def multiplier(self, core: int) -> float:
        node = core // self.cores_per_node
        for lo, hi, mult in self.reliability:
            if lo <= node <= hi:
                return mult
        return 1.0

    def cores_by_reliability(self) -> list[int]:
        """Core ids, most reliable first (ties by id)."""
        return sorted(range(self.total_cores), key=lambda c: (self.multiplier(c), c))

    def failure_rate(self, cores) -> float:
        return self.lambda_core * sum(self.multiplier(c) for c in cores)


_KEYS = ("nodes", "cores_per_node", "lambda_core", "p_static", "p_dyn", "alpha",
         "f_levels", "reliability")


def parse_machine(text: str) -> MachineModel:
    """Parse ``key=value`` lines (``#`` comments) into a :class:`MachineModel`."""
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or key not in _KEYS:
            raise MachineError(f"line {lineno}: expected one of {', '.join(_KEYS)} as key=value")
        if key in kv:
            raise MachineError(f"line {lineno}: key {key!r} given twice")
        kv[key] = (value, lineno)

    def num(key, default, conv=float):
        if key not in kv:
            return default
        value, lineno = kv[key]
        try:
            return conv(value)
        except ValueError:
            raise MachineError(f"line {lineno}: bad value for {key}: {value!r}") from None

    if "nodes" not in kv:
        raise MachineError("machine description needs nodes=<count>")
    levels = (1.0,)
    if "f_levels" in kv:
        value, lineno = kv["f_levels"]
        try:
            levels = tuple(float(x) for x in value.split(","))
        except ValueError:
            raise MachineError(f"line {lineno}: bad f_levels {value!r}") from None
    reliability = []
    if "reliability" in kv:
        value, lineno = kv["reliability"]
        for chunk in value.split(";"):
            m = re.fullmatch(r"\s*(\d+)(?:-(\d+))?\s*:\s*([0-9.eE+-]+)\s*", chunk)
            if not m:
                raise MachineError(f"line {lineno}: bad reliability range {chunk!r}")
            lo = int(m.group(1))
            hi = int(m.group(2)) if m.group(2) else lo
            reliability.append((lo, hi, float(m.group(3))))
    energy = EnergyModel(num("p_static", 1.0), num("p_dyn", 3.0), num("alpha", 3.0), levels)
    return MachineModel(num("nodes", 1, int), num("cores_per_node", 1, int), energy,
                        num("lambda_core", 0.0), tuple(reliability))
