import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillchain.benchmark.metrics import (
    EmptyResults,
    Metrics,
    average,
    compute_metrics,
    prefix_from_trace,
    trial_outcome,
)
from skillchain.executive import Event


def V(i, ok=True):
    return Event("Verify", i, ok)


ABORT = Event("Abort", 2, detail={"reason": "retry_budget"})


def test_clean_run_counts_fully():
    assert trial_outcome([V(1), V(2), V(3)], 3) == (True, 3)


def test_out_of_order_voids_success_and_halts_progress():
    trace = [V(1), V(3), V(2), V(3)]
    audit = prefix_from_trace(trace, 3)
    assert not audit.in_order and audit.halted_at == 1 and audit.prefix == 1
    assert trial_outcome(trace, 3) == (False, 1)


def test_recovered_skills_count():
    trace = [V(1), V(2, False), V(1), V(2), V(3)]
    assert trial_outcome(trace, 3) == (True, 3)


def test_latest_verification_wins():
    # step 1 re-run after a backtrack and failed: prefix drops back to zero
    trace = [V(1), V(2), V(1, False)]
    assert trial_outcome(trace, 3) == (False, 0)


def test_abort_is_never_success():
    assert trial_outcome([V(1), V(2), V(3), ABORT], 3) == (False, 3)


def test_index_out_of_range_halts():
    assert prefix_from_trace([V(1), V(7)], 3).in_order is False


def test_json_events_accepted():
    raw = [{"event": "Verify", "index": 1, "ok": True}, {"event": "Verify", "index": 2, "ok": True}]
    assert trial_outcome(raw, 2) == (True, 2)


def test_compute_metrics_example():
    m = compute_metrics([[V(1), V(2), V(3)], [V(1), V(2, False), ABORT]], plan_len=3)
    assert m.sr == 0.5 and m.ap == pytest.approx((1 + 1 / 3) / 2) and m.trials == 2


def test_raw_traces_need_plan_length():
    with pytest.raises(ValueError):
        trial_outcome([V(1)])
    with pytest.raises(EmptyResults):
        compute_metrics([], 3)
    with pytest.raises(EmptyResults):
        average({})


def test_average_is_unweighted_over_tasks():
    avg = average({"a": Metrics(1.0, 1.0, 10), "b": Metrics(0.0, 0.5, 30)})
    assert avg.sr == 0.5 and avg.ap == 0.75 and avg.trials == 40
    assert Metrics.from_dict(avg.to_dict()) == avg


events = st.lists(
    st.one_of(
        st.builds(V, st.integers(1, 5), st.booleans()),
        st.just(Event("Reach", 1, True)),
        st.just(ABORT),
    ),
    max_size=30,
)


@given(st.lists(events, min_size=1, max_size=8))
def test_sr_never_exceeds_ap(traces):
    m = compute_metrics(traces, plan_len=5)
    assert 0.0 <= m.sr <= m.ap <= 1.0
