"""Planning, simulation and runtime policies."""

from .hmc import (HmcDatabase, HmcError, HmcPolicy, Interpolated, Launch, Reuse, hmc_decide,
                  hmc_insert, hmc_precompute_candidates)
from .machine import MachineError, MachineModel, parse_machine
from .middleware import emit_middleware_config
from .planner import (MUST_RESTART, RESTART_TASK, SKIP_IF_QUALITY_OK, Assignment, ExecutionPlan,
                      PlanError, PlanOptions, list_schedule, plan, resolve_perf)
from .rc import RcAction, RcState, rc_on_failure
from .simulator import SimReport, SimulationAbort, TaskRecord, simulate

__all__ = [
    "Assignment", "ExecutionPlan", "HmcDatabase", "HmcError", "HmcPolicy", "Interpolated",
    "Launch", "MUST_RESTART", "MachineError", "MachineModel", "PlanError", "PlanOptions",
    "RESTART_TASK", "RcAction", "RcState", "Reuse", "SKIP_IF_QUALITY_OK", "SimReport",
    "SimulationAbort", "TaskRecord", "emit_middleware_config", "hmc_decide", "hmc_insert",
    "hmc_precompute_candidates", "list_schedule", "parse_machine", "plan", "rc_on_failure", "resolve_perf",
    "simulate",
]
