import csv
import io
import json

import pytest

from conftest import corpus_path
from mcpatterns.cli import main

ISR = corpus_path("isr3d.mmd")
ISR_PERF = corpus_path("isr3d.perf")
CLUSTER = corpus_path("cluster21.machine")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(capsys):
    assert run(capsys, "validate", ISR) == (0, "ok\n", "")


def test_validate_deadlock_names_cycle(capsys):
    code, _, err = run(capsys, "validate", corpus_path("deadlock.mmd"))
    assert code == 1
    assert "no starting point" in err and "a" in err and "b" in err


def test_validate_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "validate", tmp_path / "nope.mmd")
    assert code == 2 and "nope.mmd" in err


def test_validate_syntax_error(capsys, tmp_path):
    f = tmp_path / "bad.mmd"
    f.write_text("model x\nsubmodel a dt=1 total=2s dx=1m extent=1m\n")
    code, _, err = run(capsys, "validate", f)
    assert code == 2 and "line 2" in err


def test_graph_counts(capsys, tmp_path):
    dot = tmp_path / "g.dot"
    assert run(capsys, "graph", ISR, "--cycles", 2, "--dot", dot) == (0, "nodes=7 edges=8\n", "")
    assert dot.read_text().startswith("digraph g {")
    one = tmp_path / "one.mmd"
    one.write_text("model one\nsubmodel a dt=1s total=9s dx=1m extent=1m\n")
    assert run(capsys, "graph", one, "--cycles", 3)[:2] == (0, "nodes=4 edges=3\n")


def test_graph_rejects_zero_cycles(capsys):
    code, out, _ = run(capsys, "graph", ISR, "--cycles", 0)
    assert code != 0 and out == ""


def test_graph_dynamic_instances(capsys):
    code, out, _ = run(capsys, "graph", corpus_path("hmc.mmd"), "--instances", "micro=3")
    assert code == 0 and out.startswith("nodes=")
    assert run(capsys, "graph", corpus_path("hmc.mmd"))[0] == 1


def test_plan_isr3d_summary(capsys, tmp_path):
    code, out, _ = run(capsys, "plan", ISR, "--perf", ISR_PERF, "--machine", CLUSTER,
                       "--out", tmp_path / "cfg")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "pattern=ES mode=interleaved P1=20 P2=1 period=50"
    assert lines[1].startswith("efficiency_exact=") and "efficiency_eq2=" in lines[1]
    manifest = (tmp_path / "cfg" / "manifest.cfg").read_text()
    assert "role.A.cores=20" in manifest
    assert sorted(p.name for p in (tmp_path / "cfg").iterdir()) == [
        "manifest.cfg", "role_A.cfg", "role_B_p.cfg", "role_B_s.cfg"]


def test_plan_rc_wave_summary(capsys):
    code, out, _ = run(capsys, "plan", corpus_path("ensemble.mmd"), "--perf",
                       corpus_path("ensemble.perf"), "--cores", 2, "--pattern", "RC-static")
    assert code == 0
    assert out == "pattern=RC-static mode=packed replicas=4 slots=2 waves=2\n"


def test_plan_ambiguous_exit_3(capsys, tmp_path):
    f = tmp_path / "amb.mmd"
    f.write_text("model amb\n"
                 "submodel mac dt=10ms total=1s dx=1mm extent=1m\n"
                 "submodel mic dt=1us total=1ms dx=1um extent=1mm multiplicity=dynamic\n"
                 "submodel rep dt=1us total=1ms dx=1um extent=1mm multiplicity=4\n"
                 "submodel ana dt=1ms total=1ms dx=1um extent=1mm\n"
                 "couple mac -> mic kind=per_cycle\ncouple mic -> mac kind=per_cycle\n"
                 "couple rep -> ana kind=per_cycle\n")
    p = tmp_path / "amb.perf"
    p.write_text("perf mac serial a=1\nperf mic serial a=1\nperf rep serial a=1\nperf ana serial a=1\n")
    args = ["plan", f, "--perf", p, "--cores", 4, "--instances", "mic=2"]
    code, _, err = run(capsys, *args)
    assert code == 3 and "--pattern" in err
    assert run(capsys, *args, "--pattern", "RC-static")[0] == 0


def test_plan_missing_perf_file(capsys, tmp_path):
    assert run(capsys, "plan", ISR, "--perf", tmp_path / "x.perf", "--cores", 4)[0] == 2


def _summary(out):
    return dict(kv.split("=") for kv in out.split())


def test_simulate_sequential_matches_analytic(capsys):
    code, out, _ = run(capsys, "simulate", ISR, "--perf", ISR_PERF, "--cores", 21,
                       "--mode", "sequential", "--lambda", 0)
    assert code == 0
    s = _summary(out)
    assert float(s["makespan"]) == pytest.approx(1000 / 21 + 45 + 5, rel=1e-12)
    assert s["failures"] == "0"


def test_simulate_ten_jobs_interleaved(capsys):
    code, out, _ = run(capsys, "simulate", ISR, "--perf", ISR_PERF, "--machine", CLUSTER,
                       "--jobs", 10, "--lambda", 0)
    assert code == 0
    assert abs(float(_summary(out)["makespan"]) - 550) / 550 <= 0.01


def test_simulate_report_deterministic(capsys, tmp_path):
    args = ["simulate", ISR, "--perf", ISR_PERF, "--machine", CLUSTER, "--jobs", 3,
            "--lambda", 1e-3, "--seed", 17]
    run(capsys, *args, "--report", tmp_path / "a.json")
    run(capsys, *args, "--report", tmp_path / "b.json")
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    assert json.loads(a)["seed"] == 17
    code, out, _ = run(capsys, *args, "--report", "-")
    assert code == 0 and out.startswith(a.decode())


def test_simulate_abort_exit_4(capsys):
    code, _, err = run(capsys, "simulate", ISR, "--perf", ISR_PERF, "--cores", 4, "--lambda", 10)
    assert code == 4 and "aborted" in err


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_sweep_csv_round_trip(capsys, tmp_path):
    out_csv = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep", ISR, "--perf", ISR_PERF, "--param", "P=2..8",
                     "--csv", out_csv, "--lambda", 0)
    assert code == 0
    rows = _rows(out_csv.read_text())
    assert [int(r["param"]) for r in rows] == list(range(2, 9))
    for r in rows:
        for key in ("period", "makespan", "energy", "efficiency_exact", "efficiency_eq2"):
            assert format(float(r[key]), ".12g") == r[key]


def test_sweep_eq2_decreases_with_serial_aux(capsys):
    code, out, _ = run(capsys, "sweep", ISR, "--perf", ISR_PERF, "--param", "P=2..32",
                       "--mode", "sequential", "--lambda", 0)
    assert code == 0
    eq2 = [float(r["efficiency_eq2"]) for r in _rows(out)]
    assert all(b < a for a, b in zip(eq2, eq2[1:]))


def test_sweep_single_value_and_errors(capsys):
    code, out, _ = run(capsys, "sweep", ISR, "--perf", ISR_PERF, "--param", "P=5", "--lambda", 0)
    assert code == 0 and len(_rows(out)) == 1
    assert run(capsys, "sweep", ISR, "--perf", ISR_PERF, "--param", "voltage=1")[0] == 2
    code, out, _ = run(capsys, "sweep", ISR, "--perf", ISR_PERF, "--cores", 21,
                       "--param", "f=0.5,1", "--machine", CLUSTER, "--lambda", 0)
    assert code == 0 and [r["param"] for r in _rows(out)] == ["0.5", "1"]
