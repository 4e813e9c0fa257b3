import pytest

from errors import ConfigError, PinningViolation, UnknownConfigKey, UnknownEndpoint
from services.descriptor import load_descriptor, parse_descriptor
from services.ids import GLOBAL_CONFIG
from services.orchestrator import NO_DECISION, deploy_system
from services.traffic import ScenarioConfig, run_traffic

ELASTIC = "[pool cu]\npouches=2\nmax=4\n[elasticity]\ncpu_high=0.8\ncpu_low=0.3\ncooldown_ms=5000\n"
TWO_POOLS = "[pool a]\npouches=1\nmax=2\nspeed=0.5\n[pool b]\npouches=1\nmax=4\nspeed=2.0\n"


@pytest.fixture
def dist(descriptor_dir):
    return deploy_system(load_descriptor("DIST", descriptor_dir), seed=1)


@pytest.fixture
def no3(descriptor_dir):
    return deploy_system(load_descriptor("NO3", descriptor_dir), seed=1)


def test_pinned_deploy_places_base_units_by_pin_map(no3):
    placed = {t: a.pouch_id for t, a in no3.base_units.items()}
    assert placed == {"SIPh": "CU1", "NSS": "CU1", "H": "CU2", "Diah": "CU2"}
    assert no3.live_pouches() == [f"CU{i}" for i in range(1, 9)]
    assert no3.fabric.pinning["M"] == {"CU6", "CU7", "CU8"}
    assert not no3.mmo.enabled


def test_pinned_fabric_rejects_misplaced_units(no3):
    with pytest.raises(PinningViolation):
        no3.fabric.cmw_for("CU1").spawn_unit("CU1", "M", call_id="x")


def test_distributed_deploy(dist):
    assert {a.pouch_id for a in dist.base_units.values()} == {"CU1"}
    assert dist.fabric.pinning is None
    assert dist.mmo.enabled


def test_every_cmw_can_resolve_base_services_at_start(dist):
    for cmw in dist.fabric.cmws.values():
        assert cmw.resolve("SIPh") == dist.siph
        assert cmw.resolve("Diameter") == dist.base_units["Diah"]
        assert cmw.resolve("HSS-frontend") == dist.base_units["H"]


def test_element_manager_pushes_config_to_all_pouches(dist):
    applied = dist.em.push_config({"supported-codecs": "pcma, pcmu", "monitoring-interval-ms": "500"})
    assert applied == {"supported-codecs": ("PCMA", "PCMU"), "monitoring-interval-ms": 500.0}
    dist.kernel.run_until(10_000)
    for cmw in dist.fabric.cmws.values():
        assert cmw.config["supported-codecs"] == ("PCMA", "PCMU")
        assert cmw.config["monitoring-interval-ms"] == 500.0


@pytest.mark.parametrize("values, error", [
    ({"max-calls": 5}, UnknownConfigKey),
    ({"supported-codecs": "OPUS"}, ConfigError),
    ({"log-level": "loud"}, ConfigError),
    ({"conference-digits": ""}, ConfigError),
    ({"monitoring-interval-ms": 0}, ConfigError),
])
def test_element_manager_rejects_bad_values(dist, values, error):
    with pytest.raises(error):
        dist.em.push_config(values)


def test_push_is_all_or_nothing(dist):
    before = dist.ids.published[GLOBAL_CONFIG]
    with pytest.raises(ConfigError):
        dist.em.push_config({"log-level": "debug", "supported-codecs": "OPUS"})
    assert dist.ids.published[GLOBAL_CONFIG] == before
    assert dist.fabric.config["log-level"] == "info"


def test_deploy_with_initial_config(descriptor_dir):
    system = deploy_system(load_descriptor("DIST", descriptor_dir), em_config={"conference-digits": "#9"})
    assert system.fabric.config["conference-digits"] == "#9"
    assert all(c.config["conference-digits"] == "#9" for c in system.fabric.cmws.values())


def test_scale_out_then_in():
    system = deploy_system(parse_descriptor(ELASTIC), seed=1)
    mmo = system.mmo
    decision = mmo.elasticity_tick({"CU1": 0.95, "CU2": 0.9}, now_us=10_000_000)
    assert (decision.action, decision.pool_id) == ("add-pouch", "cu")
    assert decision.mean_utilization == pytest.approx(0.925)
    mmo.apply(decision)
    assert system.live_pouches() == ["CU1", "CU2", "CU3"]

    assert mmo.elasticity_tick({"CU1": 0.95}, now_us=12_000_000) == NO_DECISION

    decision = mmo.elasticity_tick({"CU1": 0.1, "CU2": 0.1, "CU3": 0.0}, now_us=16_000_000)
    assert (decision.action, decision.pouch_id) == ("remove-pouch", "CU3")
    mmo.apply(decision)
    assert system.live_pouches() == ["CU1", "CU2"]

    assert mmo.elasticity_tick({"CU1": 0.0, "CU2": 0.0}, now_us=30_000_000) == NO_DECISION
    assert [d.action for d in mmo.decisions] == ["add-pouch", "remove-pouch"]


def test_scale_out_respects_pool_max(descriptor_dir):
    system = deploy_system(load_descriptor("DIST", descriptor_dir))
    reports = {p: 1.0 for p in system.live_pouches()}
    assert system.mmo.elasticity_tick(reports, now_us=10_000_000) == NO_DECISION


def test_scale_out_prefers_pool_with_most_headroom():
    system = deploy_system(parse_descriptor(TWO_POOLS))
    decision = system.mmo.elasticity_tick({"CU1": 0.9, "CU2": 0.95}, now_us=10_000_000)
    assert decision.pool_id == "b"
    system.mmo.apply(decision)
    assert system.kernel.pouches["CU3"].speed == 2.0


def test_new_pouch_gets_resolve_snapshot_and_is_known_to_nss():
    system = deploy_system(parse_descriptor(ELASTIC))
    pouch_id = system.add_pouch("cu")
    system.kernel.run_until(100_000)
    assert system.fabric.cmw_for(pouch_id).resolve("NSS") == system.base_units["NSS"]
    nss = system.fabric.unit(system.base_units["NSS"])
    assert pouch_id in nss.view.live_pouches()


def test_pinned_system_never_scales(no3):
    assert no3.mmo.elasticity_tick({"CU1": 1.0}, now_us=10_000_000) == NO_DECISION


def test_monitoring_reports_reach_mmo(dist):
    dist.kernel.run_until(3_000_000)
    assert sorted(dist.mmo.reports) == sorted(dist.live_pouches())
    assert dist.mmo.decisions == []


def test_kill_and_remove(dist):
    dist.kill_pouch("CU8")
    assert "CU8" not in dist.live_pouches()
    assert dist.killed == ["CU8"]
    with pytest.raises(UnknownEndpoint):
        dist.kill_pouch("CU8")
    with pytest.raises(ConfigError):
        dist.remove_pouch("CU1")
    dist.remove_pouch("CU7")
    assert dist.live_pouches() == [f"CU{i}" for i in range(1, 7)]
    dist.check_conservation()


LOADED = ("[pool cu]\npouches=2\nmax=4\n[elasticity]\ncpu_high=0.22\ncpu_low=0.0\ncooldown_ms=5000\n"
          "[costs]\nm_frame_ms=1.0\n")


def _elastic_run(call_rate: float):
    scenario = ScenarioConfig(name="elastic", call_rate=call_rate, call_duration=5, subscriber_count=20,
                              reregistration_rate=10, warmup=0, measurement_window=40, answer_delay=1,
                              ua_timeout=8)
    system = deploy_system(parse_descriptor(LOADED), seed=1)
    store = run_traffic(scenario, system)
    return system, store


def test_doubled_load_scales_out_and_lowers_utilization():
    base, _ = _elastic_run(30)
    assert [d.action for d in base.mmo.decisions] == []

    system, store = _elastic_run(60)
    adds = [d for d in system.mmo.decisions if d.action == "add-pouch"]
    assert adds
    first = adds[0]
    assert len(system.live_pouches()) > 2
    settled = [s.utilization for s in store.cpu if s.t_us >= first.t_us + 10_000_000]
    assert settled
    assert sum(settled) / len(settled) < first.mean_utilization
    system.check_conservation()
