from collections import defaultdict

import pytest

from database.hss import ADHOC_CONF, DOMAIN, MMTEL, generate_subscribers, profile_from_flags, subscriber_impu
from handlers.messages import DiameterAnswer, ProfileRequest, SipFromUa, TelephonyEvent, TelephonyStart
from services.cmw import UnitAddress
from services.descriptor import load_descriptor
from services.orchestrator import deploy_system
from services.kernel import ms_to_us
from utils.sdp import SdpBody, serialize_sdp
from utils.sip_codec import build_request, make_tag, parse_message, serialize_message

SETTLE_US = 2_000_000


class Phones:
    """UA без логики: отправляет запросы в SIPh и собирает все, что пришло в ответ"""

    def __init__(self, system):
        self.system = system
        self.inbox = defaultdict(list)
        system.fabric.ua_gateway = self.receive

    def receive(self, endpoint, raw):
        self.inbox[endpoint].append(parse_message(raw))

    def endpoint(self, index: int) -> str:
        return self.system.kernel.add_user_agent(f"user{index:04d}")

    def send(self, index: int, msg):
        endpoint = self.endpoint(index)
        self.system.fabric.send(None, self.system.siph, SipFromUa(serialize_message(msg), endpoint, msg.call_id),
                                src_endpoint=endpoint)

    def statuses(self, index: int):
        return [m.status_code for m in self.inbox[f"UA:user{index:04d}"] if not m.is_request]

    def settle(self):
        kernel = self.system.kernel
        kernel.run_until(kernel.now_us + SETTLE_US)

    def register(self, index: int):
        impu = subscriber_impu(index)
        call_id = f"reg-{index}"
        endpoint = self.endpoint(index)
        self.send(index, build_request("REGISTER", f"sip:{DOMAIN}", impu, make_tag(call_id, "reg"), impu,
                                       call_id, 1, _via(endpoint), contact=endpoint))
        self.settle()

    def invite(self, caller: int, callee: str, call_id: str = "call-1", codecs=("PCMU", "PCMA")):
        impu = subscriber_impu(caller)
        endpoint = self.endpoint(caller)
        offer = serialize_sdp(SdpBody("1", "10.2.0.1", 20000, tuple(codecs)))
        self.send(caller, build_request("INVITE", callee, impu, make_tag(call_id, "caller"), callee, call_id, 1,
                                        _via(endpoint), contact=endpoint, body=offer,
                                        content_type="application/sdp"))
        self.settle()


def _via(endpoint: str) -> str:
    return f"SIP/2.0/UDP {endpoint[3:]}.ua.{DOMAIN}"


@pytest.fixture
def phones(descriptor_dir):
    system = deploy_system(load_descriptor("DIST", descriptor_dir), seed=1, hss=generate_subscribers(20))
    return Phones(system)


def test_register_of_unprovisioned_user(phones):
    phones.register(99)
    assert phones.statuses(99) == [404]


def test_register_then_invite_reaches_callee(phones):
    phones.register(1)
    phones.register(2)
    assert phones.statuses(1) == [200]
    phones.invite(1, subscriber_impu(2))
    invites = [m for m in phones.inbox["UA:user0002"] if m.is_request and m.method == "INVITE"]
    assert len(invites) == 1
    assert 100 in phones.statuses(1)


def test_invite_from_unregistered_caller(phones):
    phones.register(2)
    phones.invite(1, subscriber_impu(2))
    assert phones.statuses(1) == [403]
    assert not phones.system.per_call_units()


def test_invite_to_unregistered_callee(phones):
    phones.register(1)
    phones.invite(1, subscriber_impu(2))
    assert phones.statuses(1)[-1] == 480
    phones.settle()
    phones.system.check_conservation()


def test_invite_to_unknown_callee(phones):
    phones.register(1)
    phones.invite(1, subscriber_impu(99))
    assert phones.statuses(1)[-1] == 404


def test_codec_mismatch(descriptor_dir):
    system = deploy_system(load_descriptor("DIST", descriptor_dir), seed=1, hss=generate_subscribers(20),
                           em_config={"supported-codecs": "PCMA"})
    phones = Phones(system)
    phones.register(1)
    phones.register(2)
    phones.invite(1, subscriber_impu(2), codecs=("PCMU",))
    assert phones.statuses(1)[-1] == 488
    assert not [m for m in phones.inbox["UA:user0002"] if m.is_request and m.method == "INVITE"]


def test_bye_for_unknown_dialog(phones):
    phones.register(1)
    impu = subscriber_impu(1)
    callee = subscriber_impu(2)
    bye = build_request("BYE", callee, impu, "abc", callee, "no-such-call", 2, _via(phones.endpoint(1)),
                        to_tag="def")
    phones.send(1, bye)
    phones.settle()
    assert phones.statuses(1)[-1] == 481


def test_profile_cache_hit_is_cheaper(descriptor_dir):
    system = deploy_system(load_descriptor("DIST", descriptor_dir), seed=1, hss=generate_subscribers(20))
    costs = system.descriptor.costs
    h = system.fabric.unit(system.base_units["H"])
    impu = subscriber_impu(1)
    near, far = UnitAddress("C", 9001, "CU2"), UnitAddress("C", 9002, "CU3")
    assert h.cost_us(ProfileRequest("c", impu, near)) == ms_to_us(costs.h_query_ms)
    h.on_diameter_answer(None, DiameterAnswer("c", impu, profile_from_flags(impu, [MMTEL]), near))
    assert h.cost_us(ProfileRequest("c", impu, near)) == ms_to_us(costs.h_cache_hit_ms)
    # кэш у каждого запрашивающего pouch свой
    assert h.cost_us(ProfileRequest("c", impu, far)) == ms_to_us(costs.h_query_ms)
    h.invalidate(impu)
    assert h.cost_us(ProfileRequest("c", impu, near)) == ms_to_us(costs.h_query_ms)


def test_call_step_cost_grows_with_sessions_on_pouch(descriptor_dir):
    system = deploy_system(load_descriptor("DIST", descriptor_dir), seed=1)
    costs = system.descriptor.costs
    cmw = system.fabric.cmw_for("CU3")
    first = system.fabric.unit(cmw.spawn_unit("CU3", "C", role="orig"))
    assert first.step_cost_us() == ms_to_us(costs.c_setup_ms)
    for _ in range(4):
        cmw.spawn_unit("CU3", "C", role="term")
    assert first.step_cost_us() == ms_to_us(costs.c_setup_ms) + 4 * ms_to_us(costs.c_session_ms)
    # сессии на других pouch не учитываются
    other = system.fabric.unit(cmw.spawn_unit("CU4", "C", role="orig"))
    assert other.step_cost_us() == ms_to_us(costs.c_setup_ms)


def _telephony(descriptor_dir, services):
    system = deploy_system(load_descriptor("DIST", descriptor_dir), seed=1)
    system.fabric.trace = []
    cmw = system.fabric.cmw_for("CU2")
    t = system.fabric.unit(cmw.spawn_unit("CU2", "T"))
    t.on_telephony_start(None, TelephonyStart("c1", subscriber_impu(1), UnitAddress("C", 9001, "CU2"),
                                              "orig", services))
    return system, t


def _conference_requests(system):
    return [r for r in system.fabric.trace if r.kind == "ConferenceRequest"]


def test_conference_digits_start_third_leg(descriptor_dir):
    system, t = _telephony(descriptor_dir, (MMTEL, ADHOC_CONF))
    digits = t.config("conference-digits")
    t.on_telephony_event(None, TelephonyEvent("c1", "12", subscriber_impu(3)))
    assert not _conference_requests(system)
    t.on_telephony_event(None, TelephonyEvent("c1", digits, subscriber_impu(3)))
    assert t.conferences == 1
    assert [r.call_id for r in _conference_requests(system)] == ["c1"]


def test_conference_needs_subscription(descriptor_dir):
    system, t = _telephony(descriptor_dir, (MMTEL,))
    t.on_telephony_event(None, TelephonyEvent("c1", t.config("conference-digits"), subscriber_impu(3)))
    assert t.conferences == 0
    assert not _conference_requests(system)
