import contextlib
import os
import time

import pytest
from hypothesis import settings

# Fixed example generation so repeated runs see the same cases.
settings.register_profile("repro", derandomize=True, deadline=None, print_blob=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repro"))

CORPUS = os.path.join(os.path.dirname(__file__), os.pardir, "corpus")


def corpus_path(name):
    return os.path.abspath(os.path.join(CORPUS, name))


@pytest.fixture
def corpus():
    return corpus_path


@pytest.fixture
def criterion(request):
    """Context manager recording a PASS/FAIL line for an acceptance criterion."""
    results = request.config.stash.setdefault(_KEY, [])

    @contextlib.contextmanager
    def record(number, text, budget_s):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            results.append((number, "FAIL", text, time.perf_counter() - t0, str(exc).splitlines()[:1]))
            raise
        elapsed = time.perf_counter() - t0
        if elapsed >= budget_s:
            results.append((number, "FAIL", text, elapsed, [f"took {elapsed:.2f}s, budget {budget_s}s"]))
            pytest.fail(f"criterion {number} took {elapsed:.2f}s (budget {budget_s}s)")
        results.append((number, "PASS", text, elapsed, []))

    return record


_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_KEY, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, text, elapsed, why in sorted(results):
        line = f"criterion {number:2d}: {status}  {text}  ({elapsed:.2f}s)"
        if why:
            line += f"  -- {why[0]}"
        terminalreporter.write_line(line)
