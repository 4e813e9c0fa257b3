import pytest

from errors import PouchDead, SchedulingInPast, UnknownEndpoint, WindowTooLarge
from services.kernel import Event, Kernel, NetworkModel, RandomStream, ms_to_us, us_to_ms


@pytest.fixture
def kernel():
    k = Kernel(NetworkModel(intra_ms=0.0, inter_ms=0.5, ua_ms=1.0), seed=7)
    k.add_pouch("CU1", "cu", 1.0, 1)
    k.add_pouch("CU2", "cu", 2.0, 2)
    return k


def test_time_conversions_are_exact():
    assert ms_to_us(0.5) == 500
    assert ms_to_us(20) == 20_000
    assert us_to_ms(1500) == 1.5


def test_events_fire_in_time_then_insertion_order(kernel):
    fired = []
    kernel.call_at(200, lambda: fired.append("b"))
    kernel.call_at(100, lambda: fired.append("a"))
    kernel.call_at(200, lambda: fired.append("c"))
    stats = kernel.run_until(1000)
    assert fired == ["a", "b", "c"]
    assert stats.events_processed == 3
    assert kernel.now_us == 1000


def test_run_until_leaves_later_events(kernel):
    fired = []
    kernel.call_at(5000, lambda: fired.append(1))
    kernel.run_until(4999)
    assert fired == [] and kernel.pending_events == 1
    kernel.run_until(5000)
    assert fired == [1]


def test_scheduling_in_past_is_rejected(kernel):
    kernel.run_until(1000)
    with pytest.raises(SchedulingInPast):
        kernel.call_at(999, lambda: None)


def test_cancelled_event_does_not_fire(kernel):
    fired = []
    event_id = kernel.call_at(100, lambda: fired.append(1))
    kernel.cancel(event_id)
    kernel.run_until(200)
    assert fired == []


def test_cpu_is_fifo_and_scaled_by_speed(kernel):
    done = []
    slow, fast = kernel.pouches["CU1"], kernel.pouches["CU2"]
    assert kernel.execute_work(slow, 1000, lambda: done.append("s1")) == 1000
    assert kernel.execute_work(slow, 500, lambda: done.append("s2")) == 1500
    assert kernel.execute_work(fast, 1000, lambda: done.append("f1")) == 500
    kernel.run_until(2000)
    assert done == ["f1", "s1", "s2"]
    assert slow.cumulative_busy_us == 1500


def test_cpu_utilization_window(kernel):
    pouch = kernel.pouches["CU1"]
    kernel.execute_work(pouch, 250_000)
    kernel.run_until(1_000_000)
    assert kernel.cpu_utilization(pouch, 1_000_000) == pytest.approx(0.25)
    assert kernel.cpu_utilization(pouch, 500_000) == 0.0
    with pytest.raises(WindowTooLarge):
        kernel.cpu_utilization(pouch, 2_000_000)


def test_dead_pouch_drops_pending_deliveries(kernel):
    delivered, dropped = [], []
    kernel.transmit("CU1", "CU2", lambda: delivered.append(1), on_drop=lambda: dropped.append(1))
    kernel.kill_pouch("CU2")
    kernel.run_until(10_000)
    assert delivered == [] and dropped == [1]
    assert kernel.dropped_deliveries == 1
    with pytest.raises(PouchDead):
        kernel.execute_work(kernel.pouches["CU2"], 10)


def test_network_delays(kernel):
    ua = kernel.add_user_agent("user0001")
    assert ua == "UA:user0001"
    assert kernel.delay_us("CU1", "CU1") == 0
    assert kernel.delay_us("CU1", "CU2") == 500
    assert kernel.delay_us(ua, "CU2") == 1000
    with pytest.raises(UnknownEndpoint):
        kernel.delay_us("CU1", "CU9")


def test_random_streams_are_independent_and_reproducible():
    a, b = RandomStream(3), RandomStream(3)
    first = [a.stream("traffic").random() for _ in range(3)]
    a.stream("audit").random()
    assert first == [b.stream("traffic").random() for _ in range(3)]
    assert RandomStream(4).stream("traffic").random() != RandomStream(3).stream("traffic").random()


def test_window_beyond_retention_is_rejected():
    kernel = Kernel(seed=1, utilization_retention_ms=1000.0)
    pouch = kernel.add_pouch("CU1", "cu", 1.0, 1)
    kernel.execute_work(pouch, 500_000)
    kernel.run_until(5_000_000)
    assert kernel.cpu_utilization(pouch, 1_000_000) == 0.0
    with pytest.raises(WindowTooLarge):
        kernel.cpu_utilization(pouch, 4_000_000)


def test_cancelling_fired_event_does_not_leak(kernel):
    fired = []
    first = kernel.call_at(100, lambda: fired.append("a"))
    kernel.run_until(200)
    kernel.cancel(first)
    kernel.cancel(10_000)
    later = kernel.call_at(300, lambda: fired.append("b"))
    kernel.run_until(400)
    assert fired == ["a", "b"]
    assert later != first
    assert kernel._cancelled == set()


def test_schedule_assigns_sequence():
    k = Kernel(seed=1)
    fired = []
    a = k.schedule(Event(fire_us=100, seq=0, payload=lambda: fired.append("a")))
    b = k.schedule(Event(fire_us=100, seq=0, payload=lambda: fired.append("b")))
    c = k.call_at(100, lambda: fired.append("c"))
    assert a < b < c
    k.cancel(b)
    k.run_until(100)
    assert fired == ["a", "c"]


def test_batch_runs_back_to_back_after_queued_work(kernel):
    fast = kernel.pouches["CU2"]
    kernel.execute_work(fast, 1000)
    assert kernel.execute_batch(fast, [200, 400, 0]) == [600, 800, 800]
    assert fast.busy_until_us == 800
    assert kernel.pending_events == 0
