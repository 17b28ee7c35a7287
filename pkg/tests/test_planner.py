import pytest

from conftest import corpus_path
from mcpatterns.engine import (MUST_RESTART, RESTART_TASK, SKIP_IF_QUALITY_OK, HmcDatabase,
                               MachineError, MachineModel, PlanError, PlanOptions,
                               emit_middleware_config, hmc_insert, parse_machine, plan,
                               resolve_perf)
from mcpatterns.model import parse_model
from mcpatterns.patterns import PatternEmbedding, PatternKind, embed, template
from mcpatterns.perf import INTERLEAVED, SEQUENTIAL, EnergyModel, PerfModel, parse_perf
from mcpatterns.taskgraph import unfold


def read(name):
    return open(corpus_path(name)).read()


def isr3d_plan(cycles=1, **opts):
    m = parse_model(read("isr3d.mmd"))
    g = unfold(m, cycles)
    perf = resolve_perf(m, parse_perf(read("isr3d.perf")))
    mach = parse_machine(read("cluster21.machine"))
    return plan(embed(g, m, PatternKind.ES), g, perf, mach, PlanOptions(**opts)), perf, mach


def rc_plan(n, cores, **opts):
    m = parse_model("model e\nsubmodel rep dt=1us total=1ms dx=1um extent=1mm "
                    f"multiplicity={n}\nsubmodel ana dt=1ms total=1ms dx=1um extent=1mm\n"
                    "couple rep -> ana kind=per_cycle\n")
    g = unfold(m, 1)
    perf = {"rep": PerfModel.serial(10.0), "ana": PerfModel.serial(1.0)}
    return plan(embed(g, m, PatternKind.RC_static), g, perf, MachineModel(cores), PlanOptions(**opts))


def hmc_plan(**opts):
    m = parse_model(read("hmc.mmd"))
    g = unfold(m, opts.pop("cycles", 1), {"micro": opts.pop("micro", 2)})
    perf = resolve_perf(m, parse_perf(read("hmc.perf")))
    return plan(embed(g, m, PatternKind.HMC), g, perf, MachineModel(8), PlanOptions(**opts))


def test_parse_machine():
    mach = parse_machine(read("cluster21.machine"))
    assert mach.total_cores == 21
    assert mach.f_levels == (0.5, 0.75, 1.0)
    assert mach.multiplier(3) == 0.5 and mach.multiplier(20) == 1.0
    assert mach.cores_by_reliability()[-1] == 20
    m2 = parse_machine("nodes=2\ncores_per_node=4\nlambda_core=1e-3\n")
    assert m2.failure_rate([0, 1, 2]) == pytest.approx(3e-3)


@pytest.mark.parametrize("text", [
    "cores_per_node=2\n",
    "nodes=2\nnodes=3\n",
    "nodes=two\n",
    "nodes=1\nvoltage=3\n",
    "nodes=1\nreliability=0-5:0.5\n",
    "nodes=1\nlambda_core=-1\n",
    "nodes=0\n",
])
def test_parse_machine_errors(text):
    with pytest.raises(MachineError):
        parse_machine(text)


def test_es_isr3d_interleaved():
    p, perf, mach = isr3d_plan()
    a = p.allocation
    assert (p.mode, a.P1, a.P2, a.period) == (INTERLEAVED, 20, 1, 50.0)
    assert p.role_cores["A"] == tuple(range(20))  # reliable partition
    assert p.role_cores["B_s"] == (20,) and p.role_cores["B_p"] == (20,)
    assert p.notes["f_aux"] == 1.0 and p.period == 50.0
    assert p.recovery["A"] == RESTART_TASK
    assert p.residual == ("smc@init",)
    assert all(nid in p.assignments for nid in p.graph.by_id)


def test_es_forced_sequential():
    p, perf, _ = isr3d_plan(mode=SEQUENTIAL)
    assert p.mode == SEQUENTIAL
    assert p.allocation.t_pr == pytest.approx(1000 / 21)
    assert p.period == pytest.approx(1000 / 21 + 50)
    assert p.assignments["bf@0"].cores == p.assignments["smc@0"].cores


def test_es_energy_frequency_chosen():
    m = parse_model("model s\nsubmodel a dt=1us total=1s dx=1um extent=1mm role=primary\n"
                    "submodel b dt=1ms total=10s dx=1um extent=1mm\npattern ES\n")
    g = unfold(m, 1)
    perf = {"a": PerfModel.perfect(1000.0), "b": PerfModel.serial(25.0)}
    mach = MachineModel(21, energy=EnergyModel(1, 3, 3, (0.5, 0.75, 1.0)))
    p = plan(embed(g, m, PatternKind.ES), g, perf, mach, PlanOptions())
    assert (p.notes["f_pr"], p.notes["f_aux"]) == (1.0, 0.5)
    assert p.period == 50.0


def test_es_jobs_replicated():
    p, _, _ = isr3d_plan(jobs=3)
    assert len(p.graph.nodes) == 3 * 4
    assert p.notes["jobs"] == 3


def test_infeasible_core_request():
    with pytest.raises(PlanError):
        isr3d_plan(cores=64)
    with pytest.raises(PlanError):
        rc_plan(3, 2, replica_cores=4)


def test_missing_perf():
    m = parse_model(read("isr3d.mmd"))
    g = unfold(m, 1)
    with pytest.raises(PlanError, match="no performance model"):
        plan(embed(g, m, PatternKind.ES), g, {}, MachineModel(4))


def test_rc_waves():
    p = rc_plan(4, 2)
    assert p.notes == {"replicas": 4, "slots": 2, "waves": 2}
    cores = [p.assignments[f"rep[{i}]@0"].cores for i in range(4)]
    assert cores == [(0,), (1,), (0,), (1,)]
    assert p.recovery["A1[0]"] == SKIP_IF_QUALITY_OK
    assert p.recovery["A2"] == RESTART_TASK
    order = p.order
    assert all(order.index(f"rep[{i}]@0") < order.index("ana@0") for i in range(4))


def test_hmc_all_launch_by_default():
    p = hmc_plan()
    assert p.recovery["mu"] == MUST_RESTART
    assert p.notes["launches"] == 2 and p.notes["micro_slots"] >= 1
    assert p.assignments["micro[0]@0"].cores


def test_hmc_zero_launches_reserve_no_micro_cores():
    db = hmc_insert(hmc_insert(HmcDatabase(), 0.1, 1.0), 0.2, 2.0)
    p = hmc_plan(hmc_db=db, hmc_queries=[[0.1, 0.2]], decision_latency=0.5)
    assert p.notes["launches"] == 0
    assert "mu" not in p.role_cores
    assert p.assignments["micro[0]@0"].cores == ()
    assert p.fixed_time["micro[1]@0"] == 0.5
    assert p.notes["reserved_precompute_cores"] == []


def test_hmc_repeated_queries_launch_once():
    p = hmc_plan(cycles=2, hmc_queries=[[0.5, 0.7], [0.5, 0.9]])
    assert p.notes["launches"] == 3
    assert p.assignments["micro[0]@1"].cores == ()


def test_hmc_precompute_reserves_slots():
    p = hmc_plan(precompute=True, precompute_slots=2, hmc_queries=[[0.1, 0.1]],
                 anticipated=[0.1, 0.5, 0.9])
    assert len(p.notes["reserved_precompute_cores"]) == 2
    # 0.1 got cached while replaying the queries; the widest gap comes first
    assert p.notes["precompute"] == [(0.9,), (0.5,)]


def test_middleware_es_manifest():
    p, _, _ = isr3d_plan()
    docs = emit_middleware_config(p)
    man = docs["manifest.cfg"].splitlines()
    assert "pattern=ES" in man and "mode=interleaved" in man
    assert "role.A.cores=20" in man and "role.B_s.cores=1" in man
    assert "total_cores=21" in man and "period_s=50.0" in man
    assert "[residual]" in man and "tasks=smc@init" in man
    assert sorted(docs) == ["manifest.cfg", "role_A.cfg", "role_B_p.cfg", "role_B_s.cfg"]
    assert "recovery=restart_task" in docs["role_A.cfg"]
    assert emit_middleware_config(isr3d_plan()[0]) == docs


def test_middleware_rc_docs():
    docs = emit_middleware_config(rc_plan(3, 3))
    assert "period_s" not in docs["manifest.cfg"]
    assert "mode=packed" in docs["manifest.cfg"]
    assert sorted(docs) == ["manifest.cfg", "role_A1_0.cfg", "role_A1_1.cfg", "role_A1_2.cfg",
                            "role_A2.cfg"]
    assert "recovery=skip_if_quality_ok" in docs["role_A1_1.cfg"]
    assert "tasks=rep[1]@0" in docs["role_A1_1.cfg"]


def test_middleware_empty_residual_has_no_section():
    # the generic template has no init or final tasks
    g = template(PatternKind.RC_static, {"replicas": 3})
    emb = PatternEmbedding(PatternKind.RC_static, {"A1": "A1", "A2": "A2"}, 1, ())
    perf = {"A1": PerfModel.serial(2.0), "A2": PerfModel.serial(1.0)}
    p = plan(emb, g, perf, MachineModel(3))
    assert p.residual == ()
    docs = emit_middleware_config(p)
    assert "[residual]" not in docs["manifest.cfg"]
    assert len(docs) == 5


def test_middleware_energy_budget():
    p, _, _ = isr3d_plan(energy_budget=1e4)
    assert "energy_budget_j=10000.0" in emit_middleware_config(p)["manifest.cfg"]
