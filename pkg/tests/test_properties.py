import math

from hypothesis import given, settings
from hypothesis import strategies as st

from collision_bench.cab import (Action, CabParams, Range, SampleStats, cab_execute,
                                 classify_range, diagnose, sample_size)
from collision_bench.channel import (Channel, ChannelParams, EngineMode, Metrics, SlotKind,
                                     SlotOutcome, classify, make_rng, record_outcome)
from collision_bench.baselines import beb_execute, stb_execute

engines = st.sampled_from(list(EngineMode))


@given(st.integers(0, 10**6))
def test_classification_is_consistent(k):
    out = SlotOutcome.of(k)
    assert (out.kind is SlotKind.EMPTY) == (k == 0)
    assert (out.kind is SlotKind.SUCCESS) == (k == 1)
    assert (out.kind is SlotKind.COLLISION) == (k >= 2)
    assert classify(k) is out.kind


@given(st.lists(st.integers(0, 5), max_size=200), st.floats(1, 1e6))
def test_metrics_conservation(senders, C):
    m = Metrics(collision_unit=C)
    for k in senders:
        record_outcome(m, SlotOutcome.of(k), ChannelParams(C), "p" + str(k % 2))
    m.check()
    assert m.total_slots == len(senders)
    assert sum(pc.total_slots for pc in m.per_phase.values()) == m.total_slots


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 40), st.floats(0, 1), st.integers(0, 300), engines, st.booleans(),
       st.integers(0, 2**32))
def test_window_invariants(m, p, slots, engine, deactivate, seed):
    ch = Channel(m, ChannelParams(3), make_rng(seed), engine)
    st_ = ch.run_window(p, slots, "w", deactivate=deactivate, stop_when_done=False)
    ch.metrics.check()
    assert st_.slots == slots == ch.metrics.total_slots
    assert st_.successes + st_.collisions <= slots
    if deactivate:
        assert ch.metrics.successes == m - ch.active <= m
    else:
        assert ch.active == m


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(1, 64), engines, st.integers(0, 2**32))
def test_uniform_window_invariants(m, w, engine, seed):
    ch = Channel(m, ChannelParams(1), make_rng(seed), engine)
    s = ch.run_uniform_window(w, "u")
    ch.metrics.check()
    assert ch.metrics.successes == m - ch.active
    assert s.successes + 2 * s.collisions <= m
    assert s.slots <= w


@given(st.integers(0, 10**5), st.integers(0, 10**5), st.floats(2, 1e12), st.floats(1, 1e6),
       st.floats(0.01, 1e4))
def test_diagnose_total_and_pure(succ, coll, w, C, d):
    stats = SampleStats(succ, coll, succ + coll)
    a = diagnose(stats, w, C, d)
    assert a in set(Action)
    assert diagnose(stats, w, C, d) is a
    # more collisions never turn a doubling into something else
    if a is Action.DOUBLE:
        assert diagnose(SampleStats(succ, coll + 1, succ + coll + 1), w, C, d) is Action.DOUBLE


@given(st.floats(2, 1e15), st.floats(1, 1e6), st.floats(0.001, 1e4))
def test_sample_size_positive(w, C, d):
    s = sample_size(w, C, d)
    assert s >= 1 and s >= d * math.sqrt(C) * math.log(w) - 1e-6 * s


@given(st.floats(1, 1e18), st.integers(2, 10**6), st.floats(1, 1e6))
def test_range_partition(w, n, C):
    r = classify_range(w, n, C)
    unit = n * math.sqrt(C)
    if w < n:
        assert r is Range.ROCK_BOTTOM
    elif w >= 1e5 * unit:
        assert r is Range.HIGH
    elif 200 * unit <= w < 1e3 * unit:
        assert r is Range.GOOD


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 200), st.sampled_from([1.0, 2.0, 16.0]), engines, st.integers(0, 10**6))
def test_cab_trials_complete(n, C, engine, seed):
    if C > n * n:
        return
    r = cab_execute(n, ChannelParams(C), CabParams(), engine, seed=seed)
    assert not r.incomplete and r.successes == n
    assert r.collision_cost == r.collisions * C
    assert all(w >= 2 for w, _ in r.decision_trace)
    total = sum(v["total_slots"] for v in r.phase_breakdown.values())
    assert total == r.makespan


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 300), st.integers(0, 10**6))
def test_baselines_complete(n, seed):
    for fn in (beb_execute, stb_execute):
        r = fn(n, ChannelParams(1), seed=seed)
        assert r.successes == n and not r.incomplete


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 100), st.integers(0, 10**6))
def test_determinism(n, seed):
    a = cab_execute(n, ChannelParams(4), seed=seed)
    b = cab_execute(n, ChannelParams(4), seed=seed)
    assert a.csv_row() == b.csv_row() and a.phase_breakdown == b.phase_breakdown
