from dataclasses import dataclass

import pytest

from errors import DuplicateCmw, NoLiveInstance, PinningViolation, PouchDead, ServiceUnknown, UnknownUnitType
from handlers.base import Unit
from services.cmw import CmwFabric, PeerDown
from services.descriptor import CostModel
from services.ids import (
    GLOBAL_CONFIG,
    LOG_ENTRIES,
    RESOURCE_UTILIZATION,
    SYSTEM_STATUS,
    ConfigUpdate,
    InformationDistributionService,
    SystemStatus,
)
from services.kernel import Kernel


@dataclass(frozen=True)
class Ping:
    call_id: str
    n: int


class Recorder(Unit):
    unit_type = "Rec"

    def __init__(self, address, cmw, **params):
        super().__init__(address, cmw, **params)
        self.seen = []

    def on_ping(self, sender, ping: Ping):
        self.seen.append((ping.n, self.now_us))

    def on_peer_down(self, sender, event: PeerDown):
        self.seen.append(("down", event.peer))


class Service(Recorder):
    unit_type = "Svc"
    service_key = "svc"


@pytest.fixture
def fabric():
    kernel = Kernel(seed=1)
    ids = InformationDistributionService(kernel)
    fabric = CmwFabric(kernel, ids, costs=CostModel(spawn_ms=0),
                       factories={"Rec": Recorder, "Svc": Service})
    for ordinal in (1, 2):
        fabric.create_cmw(kernel.add_pouch(f"CU{ordinal}", "cu", 1.0, ordinal))
    return fabric


def _unit(fabric, address):
    return fabric.unit(address)


def _kill(fabric, pouch_id):
    fabric.kernel.kill_pouch(pouch_id)
    fabric.remove_cmw(pouch_id, lost=True)
    fabric.ids.publish(SYSTEM_STATUS, SystemStatus("pouch-down", pouch_id))


def test_delivery_is_location_transparent(fabric):
    cmw1 = fabric.cmw_for("CU1")
    a = cmw1.spawn_unit("CU1", "Rec")
    near = cmw1.spawn_unit("CU1", "Rec")
    far = cmw1.spawn_unit("CU2", "Rec")
    fabric.send(a, near, Ping("c", 1))
    fabric.send(a, far, Ping("c", 2))
    fabric.kernel.run_until(10_000)
    assert _unit(fabric, near).seen == [(1, 0)]
    assert _unit(fabric, far).seen == [(2, fabric.kernel.inter_us)]
    assert fabric.messages_sent == fabric.messages_handled == 2


def test_pairwise_order_is_preserved(fabric):
    cmw1 = fabric.cmw_for("CU1")
    a, b = cmw1.spawn_unit("CU1", "Rec"), cmw1.spawn_unit("CU2", "Rec")
    for n in range(10):
        fabric.send(a, b, Ping("c", n))
    fabric.kernel.run_until(10_000)
    assert [n for n, _ in _unit(fabric, b).seen] == list(range(10))


def test_terminate_is_idempotent_and_late_messages_are_dead_letters(fabric):
    cmw1 = fabric.cmw_for("CU1")
    b = cmw1.spawn_unit("CU2", "Rec")
    cmw1.terminate_unit(b)
    cmw1.terminate_unit(b)
    fabric.send(None, b, Ping("c", 1))
    fabric.kernel.run_until(10_000)
    assert fabric.spawned["Rec"] == fabric.terminated["Rec"] == 1
    assert fabric.dead_letters == 1
    assert fabric.cmw_for("CU2").dead_letters == 1


def test_spawn_checks(fabric):
    cmw1 = fabric.cmw_for("CU1")
    with pytest.raises(UnknownUnitType):
        cmw1.spawn_unit("CU1", "Nope")
    fabric.pinning = {"Rec": {"CU1"}}
    with pytest.raises(PinningViolation):
        cmw1.spawn_unit("CU2", "Rec")
    assert cmw1.spawn_unit("CU1", "Rec").pouch_id == "CU1"
    _kill(fabric, "CU2")
    fabric.pinning = None
    with pytest.raises(PouchDead):
        cmw1.spawn_unit("CU2", "Rec")


def test_one_cmw_per_pouch(fabric):
    with pytest.raises(DuplicateCmw):
        fabric.create_cmw(fabric.kernel.pouches["CU1"])


def test_resolve_round_robin_and_failover(fabric):
    cmw1 = fabric.cmw_for("CU1")
    s1 = cmw1.spawn_unit("CU1", "Svc")
    s2 = cmw1.spawn_unit("CU2", "Svc")
    fabric.kernel.run_until(10_000)
    assert [cmw1.resolve("svc") for _ in range(3)] == [s1, s2, s1]
    with pytest.raises(ServiceUnknown):
        cmw1.resolve("other")

    _kill(fabric, "CU2")
    fabric.kernel.run_until(20_000)
    assert {cmw1.resolve("svc") for _ in range(3)} == {s1}

    cmw1.terminate_unit(s1)
    fabric.kernel.run_until(30_000)
    with pytest.raises(NoLiveInstance):
        cmw1.resolve("svc")


def test_linked_unit_is_told_when_peer_pouch_fails(fabric):
    cmw1 = fabric.cmw_for("CU1")
    watcher = cmw1.spawn_unit("CU1", "Rec")
    watched = cmw1.spawn_unit("CU2", "Rec")
    cmw1.link(watcher, watched)
    _kill(fabric, "CU2")
    fabric.kernel.run_until(10_000)
    assert _unit(fabric, watcher).seen == [("down", watched)]
    assert fabric.lost["Rec"] == 1
    assert fabric.spawned["Rec"] == fabric.terminated["Rec"] + 1


def test_config_updates_and_log_threshold(fabric):
    cmw1 = fabric.cmw_for("CU1")
    unit = cmw1.spawn_unit("CU1", "Rec")
    cmw1.log(unit, "info", "c", "visible")
    assert fabric.ids.published[LOG_ENTRIES] == 1
    fabric.ids.publish(GLOBAL_CONFIG, ConfigUpdate("log-level", "error"))
    fabric.kernel.run_until(10_000)
    assert cmw1.config["log-level"] == "error"
    cmw1.log(unit, "warning", "c", "hidden")
    assert fabric.ids.published[LOG_ENTRIES] == 1


def test_pouch_stats_are_published_every_interval(fabric):
    reports = []
    fabric.ids.subscribe(RESOURCE_UTILIZATION, reports.append)
    fabric.kernel.run_until(2_001_000)
    assert [(r.pouch_id, r.t_us) for r in reports] == [
        ("CU1", 1_000_000), ("CU2", 1_000_000), ("CU1", 2_000_000), ("CU2", 2_000_000)]
    assert all(r.utilization == 0.0 for r in reports)
