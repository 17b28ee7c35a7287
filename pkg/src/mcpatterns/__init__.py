"""Planner and simulator for multiscale computing patterns."""

from .model import MultiscaleModel, parse_model, render, scale_separation_map, validate_model
from .patterns import PatternKind, classify, embed, embed_es, template
from .perf import EnergyModel, PerfModel, es_efficiency, eval_time, optimal_split
from .taskgraph import TaskGraph, critical_path, detect_deadlock, to_dot, topological_order, unfold

__version__ = "0.1.0"

__all__ = [
    "EnergyModel", "MultiscaleModel", "PatternKind", "PerfModel", "TaskGraph", "classify",
    "critical_path", "detect_deadlock", "embed", "embed_es", "es_efficiency", "eval_time",
    "optimal_split", "parse_model", "render", "scale_separation_map", "template", "to_dot",
    "topological_order", "unfold", "validate_model",
]
