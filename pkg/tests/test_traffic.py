import pytest

from errors import NegativeRate, ScenarioSyntaxError
from services.descriptor import load_descriptor, parse_descriptor
from services.metrics_service import compute_metrics
from services.orchestrator import deploy_system
from services.traffic import ScenarioConfig, load_scenario, parse_scenario, run_traffic


def test_paper_scenario(scenario_dir):
    scenario = load_scenario("paper", scenario_dir)
    assert scenario.name == "paper"
    assert scenario.call_rate == 30
    assert scenario.call_duration == 200
    assert scenario.subscriber_count == 200
    assert scenario.reregistration_rate == 20
    assert scenario.warmup == 210
    assert scenario.measurement_window == 600
    assert scenario.arrival == "deterministic"
    assert scenario.seed == 1
    assert scenario.window_start_us == 210_000_000
    assert scenario.window_end_us == 810_000_000
    assert scenario.expected_concurrency == pytest.approx(100.0)


def test_parse_accepts_dashes_and_comments():
    scenario = parse_scenario("# x\ncall-rate = 12  # в минуту\nabandon-ratio=0.25\n", name="s")
    assert scenario.call_rate == 12
    assert scenario.abandon_ratio == 0.25
    assert scenario.name == "s"


@pytest.mark.parametrize("text", [
    "call_rate = 1\nbogus = 2\n",
    "call_rate\n",
    "call_rate = fast\n",
    "arrival = bursty\n",
])
def test_parse_rejects(text):
    with pytest.raises(ScenarioSyntaxError):
        parse_scenario(text)


def test_parse_reports_line_number():
    with pytest.raises(ScenarioSyntaxError) as info:
        parse_scenario("call_rate = 1\n\nbogus = 2\n")
    assert info.value.line_no == 3


def test_negative_rate():
    with pytest.raises(NegativeRate):
        parse_scenario("reregistration_rate = -1\n")


def test_with_rate_renames():
    scenario = ScenarioConfig(name="base").with_rate(15)
    assert scenario.call_rate == 15
    assert scenario.name == "base@15"


def test_small_run_conserves_outcomes(run_small):
    system, store = run_small("DIST")
    counts = store.outcome_counts()
    assert counts["attempted"] == 20
    assert counts["pending"] == 0
    assert counts["attempted"] == counts["established"] + counts["failed"] + counts["abandoned"]
    assert counts["established"] == 20
    assert store.registrations["ok"] >= 20
    assert store.registrations["failed"] == 0
    system.check_conservation()


def test_small_run_samples(run_small):
    _, store = run_small("DIST")
    latency = store.latency_samples_ms()
    assert len(latency) == 20
    assert all(value > 0 for value in latency)
    assert store.jitter_samples_ms()
    assert store.cpu
    assert store.counters["pending_calls"] == 0
    assert store.counters["calls_generated"] == 24


def test_same_seed_same_summary(run_small):
    first = compute_metrics(run_small("DIST", seed=7)[1], "DIST", seed=7)
    second = compute_metrics(run_small("DIST", seed=7)[1], "DIST", seed=7)
    assert first.model_dump() == second.model_dump()


def test_every_call_abandoned(run_small):
    system, store = run_small("DIST", abandon_ratio=1.0)
    counts = store.outcome_counts()
    assert counts["attempted"] > 0
    assert counts["abandoned"] == counts["attempted"]
    assert counts["established"] == 0
    assert counts["pending"] == 0


def test_pinned_small_run(run_small):
    system, store = run_small("NO3")
    counts = store.outcome_counts()
    assert counts["pending"] == 0
    assert counts["established"] == counts["attempted"]
    system.check_conservation()


@pytest.mark.slow
def test_paper_profile_on_no3(descriptor_dir, scenario_dir):
    scenario = load_scenario("paper", scenario_dir)
    system = deploy_system(load_descriptor("NO3", descriptor_dir), seed=1)
    store = run_traffic(scenario, system)
    counts = store.outcome_counts()
    assert counts["attempted"] == 300
    assert counts["pending"] == 0
    assert counts["attempted"] == counts["established"] + counts["failed"] + counts["abandoned"]
    system.check_conservation()


def test_zero_rate_is_registration_only():
    assert parse_scenario("call_rate = 0\n").call_rate == 0


def test_negative_duration():
    with pytest.raises(NegativeRate):
        parse_scenario("call_duration = -1\n")


def test_load_scenario_by_path(scenario_dir):
    scenario = load_scenario(str(scenario_dir / "paper.scn"), scenario_dir)
    assert scenario.name == "paper"


def test_steady_state_concurrency(run_small, small_scenario):
    # прогрев перекрывает удержание: в окне только установившийся режим
    _, store = run_small("DIST", warmup=8)
    expected = small_scenario.expected_concurrency
    assert expected == pytest.approx(5.0)
    assert store.mean_concurrency() == pytest.approx(expected, abs=0.1)


@pytest.mark.slow
def test_paper_concurrency(descriptor_dir, scenario_dir):
    scenario = load_scenario("paper", scenario_dir)
    system = deploy_system(load_descriptor("DIST", descriptor_dir), seed=1)
    store = run_traffic(scenario, system)
    assert store.mean_concurrency() == pytest.approx(100.0, abs=2.0)


SINGLE_POUCH = "[pool cu]\npouches=1\nmax=1\n[deployment]\nmode=distributed\n[elasticity]\ncpu_low=0.0\n"


def test_uncontended_setup_latency_is_sum_of_chain_costs():
    descriptor = parse_descriptor(SINGLE_POUCH, name="single")
    costs = descriptor.costs
    # второй C на pouch удорожает три шага терминирующей стороны
    expected_ms = (2 * costs.sip_ms + 4 * costs.nss_ms + 7 * costs.spawn_ms + 6 * costs.c_setup_ms
                   + 2 * (costs.h_query_ms + costs.diah_ms) + 4 * costs.t_event_ms
                   + 2 * costs.a_negotiate_ms + 3 * costs.c_session_ms)
    scenario = ScenarioConfig(name="single", call_rate=1, call_duration=5, subscriber_count=2,
                              reregistration_rate=0, warmup=0, measurement_window=61)
    system = deploy_system(descriptor, seed=1)
    store = run_traffic(scenario, system)
    assert store.latency_samples_ms() == [pytest.approx(expected_ms, abs=0.001)]
    assert expected_ms == pytest.approx(25.8)
    system.check_conservation()
