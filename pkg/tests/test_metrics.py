import pytest

from database.metrics import MetricsStore
from errors import EmptyWindow
from services.ids import PouchStats
from services.metrics_service import compute_metrics, empty_summary, summarize_cpu, summarize_latency
from utils.stats import describe, linear_fit, percentile, ranks, spearman, stddev

S = 1_000_000


def _store():
    return MetricsStore(window_start_us=10 * S, window_end_us=20 * S)


def test_percentile_nearest_rank():
    values = list(range(1, 21))
    assert percentile(values, 95) == 19
    assert percentile(values, 100) == 20
    assert percentile([5.0], 95) == 5.0
    assert percentile([], 95) is None


def test_describe_and_stddev():
    stats = describe([2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0])
    assert stats["count"] == 8
    assert stats["mean"] == 5.0
    assert stats["stddev"] == 2.0
    assert stddev([3.0]) == 0.0
    assert describe([])["mean"] is None


def test_linear_fit():
    slope, intercept, r2 = linear_fit([25, 50, 75, 100], [0.1, 0.2, 0.3, 0.4])
    assert slope == pytest.approx(0.004)
    assert intercept == pytest.approx(0.0, abs=1e-12)
    assert r2 == pytest.approx(1.0)
    assert linear_fit([1, 1], [2, 4]) == (0.0, 3.0, 0.0)


def test_ranks_and_spearman():
    assert ranks([30, 10, 20, 20]) == [4.0, 1.0, 2.5, 2.5]
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 1, 1], [1, 2, 3]) is None


def test_call_outcomes_only_count_calls_started_in_window():
    store = _store()
    store.open_call("early", "a", "b", 5 * S)
    store.open_call("ok", "a", "b", 11 * S)
    store.open_call("busy", "a", "b", 12 * S)
    store.open_call("gone", "a", "b", 13 * S)
    store.open_call("late", "a", "b", 20 * S)
    store.call_answered("ok", 12 * S)
    store.call_ended("ok", 15 * S)
    store.close_call("busy", "failed", 12 * S, status=480)
    store.close_call("gone", "abandoned", 14 * S)
    counts = store.outcome_counts()
    assert counts == {"attempted": 3, "established": 1, "failed": 1, "abandoned": 1,
                      "pending": 0, "dropped": 0}
    assert store.calls["late"].in_window is False


def test_close_call_rejects_established_and_ignores_repeats():
    store = _store()
    store.open_call("c", "a", "b", 11 * S)
    with pytest.raises(ValueError):
        store.close_call("c", "established", 12 * S)
    store.call_answered("c", 12 * S)
    store.close_call("c", "failed", 13 * S)
    assert store.calls["c"].outcome == "established"


def test_dropped_calls_are_flagged():
    store = _store()
    store.open_call("c", "a", "b", 11 * S)
    store.call_answered("c", 11 * S)
    store.call_ended("c", 12 * S, dropped=True)
    assert store.outcome_counts()["dropped"] == 1
    assert store.active_calls == 0


def test_mean_concurrency_is_time_weighted():
    store = _store()
    for call_id, start, end in (("a", 5, 15), ("b", 12, 30)):
        store.open_call(call_id, "x", "y", start * S)
        store.call_answered(call_id, start * S)
    store.call_ended("a", 15 * S)
    # 10..12: 1, 12..15: 2, 15..20: 1
    assert store.mean_concurrency() == pytest.approx((2 * 1 + 3 * 2 + 5 * 1) / 10)


def test_latency_samples_use_siph_timestamps():
    store = _store()
    store.open_call("c1", "a", "b", 11 * S)
    store.record_setup("c1", 11 * S, 11 * S + 4_250)
    store.open_call("c2", "a", "b", 9 * S)
    store.record_setup("c2", 9 * S + 1, 9 * S + 9_000)
    assert store.calls["c1"].setup_latency_ms == 4.25
    assert store.latency_samples_ms() == [4.25]
    assert summarize_latency(store.latency_samples_ms()).count == 1


def test_jitter_traces_keep_frame_index():
    store = _store()
    for k in range(5):
        ideal = 10 * S - 40_000 + k * 20_000
        store.record_jitter("CU3", "c1", ideal, 100 + k)
    trace = store.media["c1"]
    assert trace.frames_total == 5
    assert list(trace.samples()) == [(2, 102), (3, 103), (4, 104)]
    assert store.jitter_samples_ms() == [0.102, 0.103, 0.104]
    assert store.jitter_by_pouch_ms() == {"CU3": [0.102, 0.103, 0.104]}


def test_cpu_samples_are_grouped_by_concurrency():
    store = _store()
    for t, level, util in ((11, 0, 0.1), (12, 1, 0.2), (13, 2, 0.3)):
        while store.active_calls < level:
            call_id = f"c{store.active_calls}"
            store.open_call(call_id, "a", "b", t * S)
            store.call_answered(call_id, t * S)
        for pouch in ("CU1", "CU2"):
            store.record_cpu(PouchStats(pouch, t * S, util, 0, 0))
    store.record_cpu(PouchStats("CU1", 25 * S, 0.9, 0, 0))
    summary = summarize_cpu(store)
    assert summary.samples == 6
    assert summary.by_concurrency == pytest.approx({0: 0.1, 1: 0.2, 2: 0.3})
    assert summary.slope == pytest.approx(0.1)
    assert summary.r2 == pytest.approx(1.0)


def test_empty_window_is_an_error():
    store = _store()
    with pytest.raises(EmptyWindow):
        compute_metrics(store, "DIST")
    summary = empty_summary(store, "DIST", seed=3)
    assert summary.latency.mean_ms is None
    assert summary.seed == 3


def test_compute_metrics_summary():
    store = _store()
    store.open_call("c1", "a", "b", 11 * S)
    store.record_setup("c1", 11 * S, 11 * S + 2_000)
    store.call_answered("c1", 11 * S + 5_000)
    store.record_registration(True)
    store.record_registration(False)
    store.end_us = 25 * S
    summary = compute_metrics(store, "NO1", {"call_rate": 30}, seed=2)
    assert summary.latency.mean_ms == 2.0
    assert summary.outcomes["established"] == 1
    assert summary.registrations == {"ok": 1, "failed": 1}
    assert summary.window_ms == [10_000.0, 20_000.0]
    assert summary.concurrency_max == 1
