"""Key=value configuration documents for a launching middleware."""

from __future__ import annotations

from .planner import ExecutionPlan


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_middleware_config(plan: ExecutionPlan) -> dict[str, str]:
    """Return ``{filename: text}``: one manifest plus one document per role.

    Output depends only on the plan, so identical plans give identical bytes.
    """
    period = plan.period
    manifest = [
        f"pattern={plan.pattern.value}",
        f"mode={plan.mode or 'packed'}",
        f"total_cores={plan.total_cores}",
    ]
    if period is not None:
        manifest.append(f"period_s={_fmt(float(period))}")
    if plan.energy_budget is not None:
        manifest.append(f"energy_budget_j={_fmt(float(plan.energy_budget))}")
    roles = sorted(plan.role_cores)
    for role in roles:
        cores = plan.role_cores[role]
        manifest.append(f"role.{role}.cores={len(cores)}")
        manifest.append(f"role.{role}.frequency={_fmt(float(plan.role_freq.get(role, 1.0)))}")
        manifest.append(f"role.{role}.core_list={','.join(str(c) for c in cores)}")
    if plan.residual:
        manifest += ["", "[residual]", f"tasks={','.join(plan.residual)}"]
    docs = {"manifest.cfg": "\n".join(manifest) + "\n"}

    for role in roles:
        tasks = sorted((nid for nid, r in plan.roles.items() if r == role),
                       key=plan.order.index)
        subs = sorted({plan.graph.node(t).submodel for t in tasks})
        lines = [
            f"[role.{role}]",
            f"submodels={','.join(subs)}",
            f"cores={','.join(str(c) for c in plan.role_cores[role])}",
            f"frequency={_fmt(float(plan.role_freq.get(role, 1.0)))}",
            f"recovery={plan.recovery.get(role, plan.recovery.get(role.split('[')[0], 'restart_task'))}",
            f"tasks={','.join(tasks)}",
        ]
        docs[f"role_{role.replace('[', '_').replace(']', '')}.cfg"] = "\n".join(lines) + "\n"
    return docs
