import pytest
from hypothesis import given, strategies as st

from mcpatterns.engine import (HmcDatabase, HmcError, HmcPolicy, Interpolated, Launch, RcAction,
                               RcState, Reuse, hmc_decide, hmc_insert, hmc_precompute_candidates,
                               rc_on_failure)


def db_of(pairs, **policy):
    db = HmcDatabase(policy=HmcPolicy(**policy))
    for p, v in pairs:
        db = hmc_insert(db, p, v)
    return db


def test_empty_db_launches():
    assert hmc_decide(HmcDatabase(), [0.3, 4.0]) == Launch()


def test_exact_hit_reuses():
    db = db_of([((1.0, 2.0), (7.0,))])
    assert hmc_decide(db, (1.0, 2.0)) == Reuse((7.0,))


def test_linear_interpolation_1d():
    db = db_of([(0.0, 10.0), (2.0, 14.0)], delta_reuse=0.1)
    assert hmc_decide(db, 1.0) == Interpolated((12.0,))
    assert hmc_decide(db, 0.05) == Reuse((10.0,))
    assert hmc_decide(db, 3.0) == Launch()  # outside the hull


def test_interpolation_disabled():
    db = db_of([(0.0, 10.0), (2.0, 14.0)], interpolation="none")
    assert hmc_decide(db, 1.0) == Launch()


def test_interpolation_2d_inside_hull():
    pts = [((0.0, 0.0), (0.0,)), ((2.0, 0.0), (2.0,)), ((0.0, 2.0), (2.0,)), ((2.0, 2.0), (4.0,))]
    db = db_of(pts)
    d = hmc_decide(db, (1.0, 1.0))
    assert isinstance(d, Interpolated) and d.value == pytest.approx((2.0,))
    assert hmc_decide(db, (3.0, 1.0)) == Launch()


def test_insert_replace_and_duplicate():
    db = db_of([(1.0, 5.0)])
    with pytest.raises(HmcError):
        hmc_insert(db, 1.0, 6.0)
    db = hmc_insert(db, 1.0, 6.0, replace=True)
    assert hmc_decide(db, 1.0) == Reuse((6.0,))
    assert len(db) == 1


def test_dimension_mismatch():
    db = db_of([((1.0, 2.0), (0.0,))])
    with pytest.raises(HmcError, match="dimension"):
        hmc_decide(db, 1.0)
    with pytest.raises(HmcError):
        hmc_insert(db, (1.0, 2.0, 3.0), 0.0)


def test_policy_validation():
    with pytest.raises(HmcError):
        HmcPolicy(delta_reuse=-1)
    with pytest.raises(HmcError):
        HmcPolicy(interpolation="cubic")
    assert HmcPolicy().neighbours(1) == 2 and HmcPolicy().neighbours(3) == 6


def test_precompute_candidates():
    db = db_of([(0.0, 1.0), (10.0, 1.0)], interpolation="none")
    assert hmc_precompute_candidates(db, [3.0, 20.0], 0) == []
    assert hmc_precompute_candidates(db, [0.0, 10.0], 5) == []
    # 20 is 10 away from the cache, 3 only 3 away
    assert hmc_precompute_candidates(db, [3.0, 20.0], 1) == [(20.0,)]
    assert hmc_precompute_candidates(db, [3.0, 20.0, 3.0], 5) == [(20.0,), (3.0,)]
    with pytest.raises(HmcError):
        hmc_precompute_candidates(db, [], -1)


points = st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1, max_size=20,
                  unique=True)


@given(points, st.sampled_from(["none", "linear"]), st.floats(0, 5))
def test_cache_soundness(pts, interp, delta):
    db = HmcDatabase(policy=HmcPolicy(delta, interp))
    for i, p in enumerate(pts):
        db = hmc_insert(db, p, (float(i),))
    for p in pts:
        assert not isinstance(hmc_decide(db, p), Launch)


def test_rc_examples():
    assert rc_on_failure(RcState(100, failed=5, q=0.9)) == RcAction.CONTINUE
    assert rc_on_failure(RcState(100, failed=10, q=0.9)) == RcAction.CONTINUE
    assert rc_on_failure(RcState(100, failed=11, q=0.9)) == RcAction.RESTART_REPLICA
    assert rc_on_failure(RcState(7, failed=1, q=1.0)) == RcAction.RESTART_REPLICA


@pytest.mark.parametrize("kw", [
    {"n_replicas": 0},
    {"n_replicas": 3, "completed": 2, "failed": 2},
    {"n_replicas": 3, "q": 0.0},
    {"n_replicas": 3, "q": 1.5},
    {"n_replicas": 3, "exchange_interval": 0},
    {"n_replicas": 3, "feedback_rounds": 0},
])
def test_rc_state_validation(kw):
    with pytest.raises(ValueError):
        RcState(**kw)


@given(st.integers(1, 500), st.floats(0.01, 1.0), st.data())
def test_rc_monotone(n, q, data):
    k = data.draw(st.integers(0, n))
    if rc_on_failure(RcState(n, failed=k, q=q)) == RcAction.CONTINUE:
        for j in range(k):
            assert rc_on_failure(RcState(n, failed=j, q=q)) == RcAction.CONTINUE
