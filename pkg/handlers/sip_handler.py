"""
SIPh: точка входа SIP. Регистратор, маршрутизация начальных INVITE через NSS
и пересылка сообщений внутри диалога между UA и юнитами C.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional

from database.hss import DOMAIN
from errors import CmwError, KernelError, SipError
from handlers.base import Unit
from handlers.messages import (
    CallReleased,
    DeliverInvite,
    NssAnswer,
    NssQuery,
    PeerDown,
    RegisterAnswer,
    RegisterRequest,
    SendToUa,
    SipFromUa,
    SipRelay,
    StartOriginating,
)
from services.cmw import UnitAddress
from utils.sip_codec import SipMessage, build_request, build_response, make_tag, parse_message, serialize_message

VIA = f"SIP/2.0/UDP siph.{DOMAIN}"


@dataclass
class DialogRecord:
    call_id: str
    caller: str
    callee: str
    ua_orig: Optional[str]
    invite: SipMessage
    t_rx_us: int = 0
    ua_term: Optional[str] = None
    c_orig: Optional[UnitAddress] = None
    c_term: Optional[UnitAddress] = None
    confirmed: bool = False
    conference_leg: bool = False


class SipHandlerUnit(Unit):
    unit_type = "SIPh"
    service_key = "SIPh"
    costs = {"SipFromUa": "sip", "SendToUa": "sip", "DeliverInvite": "sip"}

    def __init__(self, address: UnitAddress, cmw, **params: Any):
        super().__init__(address, cmw, **params)
        self.registrar: Dict[str, str] = {}
        self.dialogs: Dict[str, DialogRecord] = {}
        self.malformed = 0

    # --- отправка в сторону UA ---

    def _to_ua(self, endpoint: str, msg: SipMessage):
        raw = serialize_message(msg)
        self.fabric.trace_external(self.address, endpoint, msg.summary(), msg.call_id)
        gateway = self.fabric.ua_gateway
        if gateway is None:
            return
        self.cmw.kernel.transmit(self.pouch_id, endpoint, lambda: gateway(endpoint, raw))

    def _reply(self, endpoint: str, request: SipMessage, status: int):
        self._to_ua(endpoint, build_response(request, status))

    # --- сообщения от UA ---

    def on_sip_from_ua(self, sender: Optional[UnitAddress], packet: SipFromUa):
        try:
            msg = parse_message(packet.raw)
        except SipError as e:
            self.malformed += 1
            self.log("warning", packet.call_id, f"malformed SIP: {e}")
            return

        if not msg.is_request:
            self._response_from_ua(msg, packet.ua_endpoint)
        elif msg.method == "REGISTER":
            self._register(msg, packet.ua_endpoint)
        elif msg.method == "INVITE" and msg.to.tag is None:
            self._initial_invite(msg, packet.ua_endpoint)
        else:
            self._in_dialog_request(msg, packet.ua_endpoint)

    def _register(self, msg: SipMessage, endpoint: str):
        try:
            h = self.resolve("HSS-frontend")
        except CmwError as e:
            self.log("error", msg.call_id, f"HSS frontend unavailable: {e}")
            self._reply(endpoint, msg, 500)
            return
        self.send(h, RegisterRequest(msg.call_id, msg.to.uri, endpoint, self.address, msg))

    def on_register_answer(self, sender: UnitAddress, answer: RegisterAnswer):
        if answer.ok:
            self.registrar[answer.impu] = answer.binding
            self._reply(answer.binding, answer.ua_msg, 200)
        else:
            self.log("info", answer.call_id, f"REGISTER unknown {answer.impu}")
            self._reply(answer.binding, answer.ua_msg, 404)

    def _initial_invite(self, msg: SipMessage, endpoint: str):
        if msg.call_id in self.dialogs:
            return
        caller = msg.from_.uri
        if caller not in self.registrar:
            self.log("info", msg.call_id, f"INVITE from unregistered {caller}")
            self._reply(endpoint, msg, 403)
            return
        record = DialogRecord(msg.call_id, caller, msg.to.uri, endpoint, msg, t_rx_us=self.received_us)
        self.dialogs[msg.call_id] = record
        self._reply(endpoint, msg, 100)
        try:
            nss = self.resolve("NSS")
        except CmwError as e:
            self._fail_setup(record, 500, f"NSS unavailable: {e}")
            return
        self.send(nss, NssQuery(msg.call_id, caller, ("C",), "c-orig"))

    def on_nss_answer(self, sender: UnitAddress, answer: NssAnswer):
        record = self.dialogs.get(answer.call_id)
        if record is None:
            return
        if answer.error:
            self._fail_setup(record, 500, answer.error)
            return
        try:
            c_orig = self.spawn(answer.placement["C"], "C", role="orig")
        except (CmwError, KernelError) as e:
            self._fail_setup(record, 500, f"C spawn failed: {e}")
            return
        record.c_orig = c_orig
        self.link(c_orig)
        self.send(c_orig, StartOriginating(record.invite, record.caller, record.callee, self.address))

    def _fail_setup(self, record: DialogRecord, status: int, reason: str):
        self.log("warning", record.call_id, f"setup failed {status}: {reason}")
        self.dialogs.pop(record.call_id, None)
        self._reply(record.ua_orig, record.invite, status)

    def _in_dialog_request(self, msg: SipMessage, endpoint: str):
        record = self.dialogs.get(msg.call_id)
        target, leg = self._route(record, endpoint)
        if target is None:
            if msg.method == "BYE":
                self._reply(endpoint, msg, 481)
            return
        if msg.method == "ACK" and leg == "orig":
            record.confirmed = True
        self.send(target, SipRelay(msg, leg))

    def _response_from_ua(self, msg: SipMessage, endpoint: str):
        record = self.dialogs.get(msg.call_id)
        target, leg = self._route(record, endpoint)
        if target is not None:
            self.send(target, SipRelay(msg, leg))

    @staticmethod
    def _route(record: Optional[DialogRecord], endpoint: str):
        if record is None:
            return None, ""
        if endpoint == record.ua_orig and record.c_orig is not None:
            return record.c_orig, "orig"
        if endpoint == record.ua_term and record.c_term is not None:
            return record.c_term, "term"
        return None, ""

    # --- сообщения от юнитов C ---

    def on_send_to_ua(self, sender: UnitAddress, request: SendToUa):
        endpoint = self.registrar.get(request.impu)
        record = self.dialogs.get(request.msg.call_id)
        if record is not None:
            endpoint = (record.ua_orig if request.leg == "orig" else record.ua_term) or endpoint
        if endpoint is None:
            self.log("warning", request.msg.call_id, f"no binding for {request.impu}")
            return
        self._to_ua(endpoint, request.msg)

    def on_deliver_invite(self, sender: UnitAddress, delivery: DeliverInvite):
        invite = delivery.invite
        record = self.dialogs.get(invite.call_id)
        if record is None:
            record = DialogRecord(invite.call_id, invite.from_.uri, delivery.callee, None, invite,
                                  c_orig=delivery.c_orig, conference_leg=True)
            self.dialogs[invite.call_id] = record
        endpoint = self.registrar.get(delivery.callee)
        if endpoint is None:
            self.log("info", invite.call_id, f"callee {delivery.callee} has no binding")
            self.send(delivery.c_term, SipRelay(build_response(invite, 480), "term"))
            return
        record.ua_term = endpoint
        record.c_term = delivery.c_term
        self._to_ua(endpoint, invite)
        if not record.conference_leg and self.fabric.metrics is not None:
            self.fabric.metrics.record_setup(invite.call_id, record.t_rx_us, self.now_us)

    def on_call_released(self, sender: UnitAddress, release: CallReleased):
        record = self.dialogs.pop(release.call_id, None)
        if record is None or not release.status:
            return
        self._notify_caller(record, release.status)

    def on_peer_down(self, sender: Optional[UnitAddress], event: PeerDown):
        for record in [r for r in self.dialogs.values() if r.c_orig == event.peer]:
            del self.dialogs[record.call_id]
            self.log("warning", record.call_id, f"session lost with {event.peer}")
            self._notify_caller(record, 503)

    def _notify_caller(self, record: DialogRecord, status: int):
        if record.ua_orig is None:
            return
        if not record.confirmed:
            self._reply(record.ua_orig, record.invite, status)
            return
        invite = record.invite
        bye = build_request(
            "BYE", record.caller, record.callee, make_tag(record.call_id, "network"),
            record.caller, record.call_id, invite.cseq.number + 1, VIA,
            to_tag=invite.from_.tag,
        )
        self._to_ua(record.ua_orig, bye)
