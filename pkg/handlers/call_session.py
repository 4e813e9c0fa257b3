"""
C: управление сессией вызова.

Исходящий C (role="orig") строит цепочку услуг вызывающего: профиль через
H/Diah, T и A, медиа M, затем через NSS создает терминирующий C для каждого
вызываемого (основная ветвь и ветви конференции). Терминирующий C
(role="term") получает профиль вызываемого, создает свои T и A,
подключается к существующему M и передает INVITE через SIPh.
Оба C остаются живы до подтверждения BYE.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

from database.hss import SubscriberProfile
from errors import CallStateError, CmwError, KernelError, SdpError
from handlers.base import Unit
from handlers.messages import (
    AuditTimer,
    CallRejected,
    CallReleased,
    ConferenceRequest,
    DeliverInvite,
    MediaDetach,
    MediaJoin,
    MediaOffer,
    MediaReady,
    MediaStart,
    NssAnswer,
    NssQuery,
    PeerDown,
    ProfileAnswer,
    ProfileRequest,
    SendToUa,
    SetupTimer,
    SipRelay,
    StartOriginating,
    StartTerminating,
    TelephonyStart,
)
from handlers.sip_handler import VIA
from services.cmw import UnitAddress
from utils.sdp import SdpBody, parse_sdp, serialize_sdp
from utils.sip_codec import NameAddr, SipMessage, build_request, build_response, make_tag

STATES = ("Init", "Inviting", "Ringing", "Confirmed", "Terminating", "Done")


@dataclass
class CallLeg:
    """Ветвь к одному вызываемому"""
    leg_call_id: str
    callee: str
    c_term: Optional[UnitAddress] = None
    to_tag: Optional[str] = None
    answered: bool = False
    bye_pending: bool = False


@dataclass
class CallContext:
    call_id: str
    role: str
    state: str = "Init"
    caller: str = ""
    callee: str = ""
    invite: Optional[SipMessage] = None
    offer: Optional[SdpBody] = None
    answer: Optional[SdpBody] = None
    profile: Optional[SubscriberProfile] = None
    c_orig: Optional[UnitAddress] = None
    t_addr: Optional[UnitAddress] = None
    a_addr: Optional[UnitAddress] = None
    m_addr: Optional[UnitAddress] = None
    codec: Optional[str] = None
    legs: Dict[str, CallLeg] = field(default_factory=dict)
    history: List[str] = field(default_factory=lambda: ["Init"])

    def advance(self, state: str):
        """Только вперед по STATES; Init -> Done допустим при отказе"""
        if STATES.index(state) <= STATES.index(self.state):
            raise CallStateError(f"{self.call_id}: {self.state} -> {state}")
        self.state = state
        self.history.append(state)

    @property
    def finished(self) -> bool:
        return self.state in ("Terminating", "Done")


class CallSessionUnit(Unit):
    unit_type = "C"
    costs = {
        "StartOriginating": "c_setup",
        "StartTerminating": "c_setup",
        "ProfileAnswer": "c_setup",
        "MediaReady": "c_setup",
        "CallRejected": "c_setup",
        "ConferenceRequest": "c_setup",
        "AuditTimer": "c_audit",
    }

    def __init__(self, address: UnitAddress, cmw, role: str = "orig", **params: Any):
        super().__init__(address, cmw, **params)
        self.role = role
        self.ctx = CallContext(call_id="", role=role)
        self.siph: Optional[UnitAddress] = None
        self.caller_bye: Optional[SipMessage] = None
        self.term_bye: Optional[SipMessage] = None
        self.term_bye_from: Optional[UnitAddress] = None
        self.awaiting_caller = False
        self.invite_delivered = False
        self.orig_bye: Optional[SipMessage] = None
        self._setup_timer: Optional[int] = None
        self._audit_timer: Optional[int] = None
        self._audits = 0

    def cost_us(self, payload: Any) -> int:
        if isinstance(payload, SipRelay):
            if payload.msg.cseq.method == "BYE":
                return self.fabric.cost_us("bye")
            return self.step_cost_us()
        if self.costs.get(type(payload).__name__) == "c_setup":
            return self.step_cost_us()
        return super().cost_us(payload)

    def step_cost_us(self) -> int:
        """Шаг сигнализации: базовая стоимость плюс учет других сессий C на этом pouch"""
        others = max(0, self.cmw.unit_counts["C"] - 1)
        return self.fabric.cost_us("c_setup") + others * self.fabric.cost_us("c_session")

    # --- общие шаги ---

    def _fetch_profile(self, impu: str):
        try:
            h = self.resolve("HSS-frontend")
        except CmwError as e:
            self._fail(500, f"HSS frontend unavailable: {e}")
            return
        self.send(h, ProfileRequest(self.ctx.call_id, impu, self.address))

    def _query_nss(self, call_id: str, subscriber: str, unit_types, purpose: str):
        try:
            nss = self.resolve("NSS")
        except CmwError as e:
            self._fail(500, f"NSS unavailable: {e}")
            return
        self.send(nss, NssQuery(call_id, subscriber, tuple(unit_types), purpose))

    def _spawn_linked(self, pouch_id: str, unit_type: str, **init) -> UnitAddress:
        address = self.spawn(pouch_id, unit_type, **init)
        self.link(address)
        return address

    def _services(self) -> tuple:
        profile = self.ctx.profile
        return tuple(sorted(profile.service_triggers | profile.supplementary))

    def _start_audit(self):
        interval = self.fabric.cost_us("c_audit_interval")
        phase = self.cmw.kernel.random.stream("audit").randrange(max(1, interval))
        self._audit_timer = self.start_timer(phase, AuditTimer(self.ctx.call_id))

    def _stop_timers(self):
        self.cancel_timer(self._audit_timer)
        self.cancel_timer(self._setup_timer)
        self._audit_timer = self._setup_timer = None

    def on_audit_timer(self, sender, timer: AuditTimer):
        self._audit_timer = None
        if self.ctx.state != "Confirmed":
            return
        self._audits += 1
        self._audit_timer = self.start_timer(self.fabric.cost_us("c_audit_interval"), timer)

    def _fail(self, status: int, reason: str):
        self.log("warning", self.ctx.call_id, f"{status} {reason}")
        if self.role == "orig":
            self._reject(status)
        else:
            self._term_reject(status)

    def on_profile_answer(self, sender: UnitAddress, answer: ProfileAnswer):
        if self.ctx.finished:
            return
        if self.role == "orig":
            self._caller_profile(answer)
        else:
            self._callee_profile(answer)

    def on_nss_answer(self, sender: UnitAddress, answer: NssAnswer):
        if self.ctx.finished:
            return
        if answer.error:
            if answer.purpose == "conf-c":
                self._drop_leg(answer.call_id)
                return
            self._fail(500, answer.error)
            return
        try:
            if answer.purpose == "orig-chain":
                self._build_originating_chain(answer.placement)
            elif answer.purpose in ("term-c", "conf-c"):
                self._spawn_terminating(answer.call_id, answer.placement["C"])
            elif answer.purpose == "term-chain":
                self._build_terminating_chain(answer.placement)
        except (CmwError, KernelError) as e:
            if answer.purpose == "conf-c":
                self._drop_leg(answer.call_id)
                return
            self._fail(500, f"spawn failed: {e}")

    def on_sip_relay(self, sender: UnitAddress, relay: SipRelay):
        if self.role == "orig":
            if sender == self.siph:
                self._from_caller(relay.msg)
            else:
                self._from_leg(sender, relay.msg)
        elif sender == self.siph:
            self._from_callee(relay.msg)
        else:
            self._from_originating(relay.msg)

    def on_peer_down(self, sender, event: PeerDown):
        if self.ctx.state == "Done":
            return
        self.log("warning", self.ctx.call_id, f"peer lost {event.peer}")
        if self.role == "orig":
            self._orig_peer_down(event.peer)
        else:
            self._term_peer_down()

    # --- исходящая сторона ---

    def on_start_originating(self, sender: UnitAddress, start: StartOriginating):
        ctx = self.ctx
        ctx.call_id = start.call_id
        ctx.caller = start.caller
        ctx.callee = start.callee
        ctx.invite = start.invite
        self.siph = start.siph
        ctx.advance("Inviting")
        self._setup_timer = self.start_timer(self.fabric.cost_us("setup_timeout"), SetupTimer(ctx.call_id))
        try:
            ctx.offer = parse_sdp(start.invite.body or "")
        except SdpError as e:
            self._reject(488, str(e))
            return
        self._fetch_profile(ctx.caller)

    def _caller_profile(self, answer: ProfileAnswer):
        if answer.profile is None:
            self._reject(403, f"caller {answer.impu} unknown")
            return
        self.ctx.profile = answer.profile
        types = ("T", "A", "M") if answer.profile.has_mmtel else ("A", "M")
        self._query_nss(self.ctx.call_id, self.ctx.caller, types, "orig-chain")

    def _build_originating_chain(self, placement: Dict[str, str]):
        ctx = self.ctx
        if "T" in placement:
            ctx.t_addr = self._spawn_linked(placement["T"], "T")
            self.send(ctx.t_addr, TelephonyStart(ctx.call_id, ctx.caller, self.address, "orig", self._services()))
        ctx.a_addr = self._spawn_linked(placement["A"], "A", role="orig")
        self.send(ctx.a_addr, MediaOffer(ctx.call_id, ctx.offer, self.address, ctx.t_addr, placement["M"]))

    def on_media_ready(self, sender: UnitAddress, ready: MediaReady):
        if self.ctx.finished:
            return
        if self.role == "term":
            self._callee_media_ready(ready)
            return
        ctx = self.ctx
        if ready.status != 200:
            self._reject(ready.status, "media negotiation failed")
            return
        ctx.answer = ready.answer
        ctx.codec = ready.answer.codecs[0]
        ctx.m_addr = ready.m_addr
        self.link(ready.m_addr)
        ctx.legs[ctx.call_id] = CallLeg(ctx.call_id, ctx.callee)
        self._query_nss(ctx.call_id, ctx.callee, ("C",), "term-c")

    def _spawn_terminating(self, leg_call_id: str, pouch_id: str):
        ctx = self.ctx
        leg = ctx.legs.get(leg_call_id)
        if leg is None:
            return
        leg.c_term = self._spawn_linked(pouch_id, "C", role="term")
        invite = ctx.invite
        if leg_call_id != ctx.call_id:
            invite = replace(invite, call_id=leg_call_id, request_uri=leg.callee, to=NameAddr(leg.callee))
        self.send(leg.c_term, StartTerminating(invite, leg.callee, self.address, ctx.m_addr,
                                               self.siph, leg_call_id))

    def on_conference_request(self, sender: UnitAddress, request: ConferenceRequest):
        ctx = self.ctx
        if ctx.state != "Confirmed":
            return
        leg_call_id = f"{ctx.call_id}~conf{len(ctx.legs)}"
        ctx.legs[leg_call_id] = CallLeg(leg_call_id, request.third_party)
        self.log("info", ctx.call_id, f"conference leg {leg_call_id} to {request.third_party}")
        self._query_nss(leg_call_id, request.third_party, ("C",), "conf-c")

    def _leg_by_c_term(self, address: UnitAddress) -> Optional[CallLeg]:
        return next((leg for leg in self.ctx.legs.values() if leg.c_term == address), None)

    def _from_caller(self, msg: SipMessage):
        ctx = self.ctx
        if msg.is_request and msg.method == "ACK":
            main = ctx.legs.get(ctx.call_id)
            if ctx.state in ("Inviting", "Ringing") and main is not None and main.answered:
                ctx.advance("Confirmed")
                self.send(main.c_term, SipRelay(msg, "orig"))
                self.send(ctx.m_addr, MediaStart(ctx.call_id))
                self._start_audit()
        elif msg.is_request and msg.method == "BYE":
            self._start_teardown(msg)
        elif not msg.is_request and msg.cseq.method == "BYE":
            # вызывающий подтвердил BYE, начатый вызываемым
            self.awaiting_caller = False
            self._maybe_finish()

    def _from_leg(self, sender: UnitAddress, msg: SipMessage):
        ctx = self.ctx
        leg = self._leg_by_c_term(sender)
        if leg is None:
            return
        main = leg.leg_call_id == ctx.call_id
        if msg.is_request and msg.method == "BYE":
            self._leg_bye(leg, sender, msg)
            return
        if msg.is_request:
            return
        if msg.cseq.method == "BYE":
            leg.bye_pending = False
            self._maybe_finish()
            return
        if ctx.finished or msg.cseq.method != "INVITE":
            return
        status = msg.status_code
        if status == 180 and main:
            if ctx.state == "Inviting":
                ctx.advance("Ringing")
            self.send(self.siph, SendToUa(build_response(ctx.invite, 180, to_tag=msg.to.tag), ctx.caller))
        elif status == 200 and not leg.answered:
            leg.answered = True
            leg.to_tag = msg.to.tag
            if main:
                self.cancel_timer(self._setup_timer)
                self._setup_timer = None
                response = build_response(ctx.invite, 200, sdp=ctx.answer, to_tag=msg.to.tag)
                self.send(self.siph, SendToUa(response, ctx.caller))
            else:
                ack = self._leg_request("ACK", leg, ctx.invite.cseq.number)
                self.send(leg.c_term, SipRelay(ack, "orig"))

    def _leg_request(self, method: str, leg: CallLeg, cseq: int) -> SipMessage:
        ctx = self.ctx
        return build_request(
            method, leg.callee, ctx.caller, ctx.invite.from_.tag or make_tag(ctx.call_id, "orig"),
            leg.callee, leg.leg_call_id, cseq, VIA, to_tag=leg.to_tag,
        )

    def _leg_bye(self, leg: CallLeg, sender: UnitAddress, bye: SipMessage):
        ctx = self.ctx
        if leg.leg_call_id != ctx.call_id:
            # участник конференции вышел: остальные ветви продолжают
            self.send(sender, SipRelay(build_response(bye, 200), "orig"))
            del ctx.legs[leg.leg_call_id]
            self.send(self.siph, CallReleased(leg.leg_call_id))
            return
        if ctx.finished:
            self.send(sender, SipRelay(build_response(bye, 200), "orig"))
            return
        ctx.advance("Terminating")
        self._stop_timers()
        self.term_bye, self.term_bye_from = bye, sender
        to_caller = build_request(
            "BYE", ctx.caller, ctx.callee, leg.to_tag or make_tag(ctx.call_id, "term"),
            ctx.caller, ctx.call_id, bye.cseq.number, VIA, to_tag=ctx.invite.from_.tag,
        )
        self.send(self.siph, SendToUa(to_caller, ctx.caller))
        self.awaiting_caller = True
        self._bye_legs(exclude=leg)
        self._maybe_finish()

    def _start_teardown(self, bye: SipMessage):
        ctx = self.ctx
        if ctx.finished:
            return
        ctx.advance("Terminating")
        self._stop_timers()
        self.caller_bye = bye
        self._bye_legs()
        self._maybe_finish()

    def _bye_legs(self, exclude: Optional[CallLeg] = None):
        ctx = self.ctx
        for leg in ctx.legs.values():
            if leg is exclude or leg.c_term is None:
                continue
            leg.bye_pending = True
            bye = self._leg_request("BYE", leg, ctx.invite.cseq.number + 1)
            self.send(leg.c_term, SipRelay(bye, "orig"))

    def _maybe_finish(self):
        ctx = self.ctx
        if ctx.state != "Terminating":
            return
        if any(leg.bye_pending for leg in ctx.legs.values()):
            return
        if self.awaiting_caller:
            return
        if self.caller_bye is not None:
            self.send(self.siph, SendToUa(build_response(self.caller_bye, 200), ctx.caller))
        if self.term_bye is not None and self.term_bye_from is not None:
            self.send(self.term_bye_from, SipRelay(build_response(self.term_bye, 200), "orig"))
        self._release(status=0)

    def _release(self, status: int):
        """Завершить свои юниты, освободить диалоги в SIPh и завершиться"""
        ctx = self.ctx
        for address in (ctx.t_addr, ctx.a_addr, ctx.m_addr):
            if address is not None:
                self.terminate(address)
        if self.siph is not None:
            for leg_call_id in ctx.legs:
                if leg_call_id != ctx.call_id:
                    self.send(self.siph, CallReleased(leg_call_id))
            self.send(self.siph, CallReleased(ctx.call_id, status, confirmed=ctx.state == "Confirmed"))
        self._stop_timers()
        if ctx.state != "Done":
            ctx.state = "Done"
            ctx.history.append("Done")
        self.terminate()

    def _reject(self, status: int, reason: str = ""):
        """Отказ до подтверждения: финальный ответ вызывающему"""
        ctx = self.ctx
        if ctx.state == "Done":
            return
        if reason:
            self.log("info", ctx.call_id, f"reject {status}: {reason}")
        if ctx.invite is not None and self.siph is not None:
            self.send(self.siph, SendToUa(build_response(ctx.invite, status), ctx.caller))
        self._bye_legs()
        self._release(status=0)

    def on_setup_timer(self, sender, timer: SetupTimer):
        self._setup_timer = None
        if self.ctx.state in ("Init", "Inviting", "Ringing"):
            self._reject(408, "setup timeout")

    def on_call_rejected(self, sender: UnitAddress, rejected: CallRejected):
        ctx = self.ctx
        leg = ctx.legs.get(rejected.leg_call_id)
        if leg is None:
            return
        if ctx.finished:
            leg.bye_pending = False
            leg.c_term = None
            self._maybe_finish()
            return
        if rejected.leg_call_id == ctx.call_id:
            leg.c_term = None
            self._reject(rejected.status, f"terminating side {rejected.status}")
        else:
            self._drop_leg(rejected.leg_call_id)

    def _drop_leg(self, leg_call_id: str):
        if self.ctx.legs.pop(leg_call_id, None) is not None and self.siph is not None:
            self.log("info", self.ctx.call_id, f"conference leg {leg_call_id} dropped")
            self.send(self.siph, CallReleased(leg_call_id))

    def _orig_peer_down(self, peer: UnitAddress):
        ctx = self.ctx
        leg = self._leg_by_c_term(peer)
        if leg is not None and leg.leg_call_id != ctx.call_id:
            if ctx.m_addr is not None:
                self.send(ctx.m_addr, MediaDetach(ctx.call_id, leg.leg_call_id))
            self._drop_leg(leg.leg_call_id)
            return
        if leg is not None:
            leg.c_term = None
        for name in ("t_addr", "a_addr", "m_addr"):
            if getattr(ctx, name) == peer:
                setattr(ctx, name, None)
        confirmed = ctx.state == "Confirmed"
        for other in ctx.legs.values():
            if other.c_term is not None:
                bye = self._leg_request("BYE", other, ctx.invite.cseq.number + 1)
                self.send(other.c_term, SipRelay(bye, "orig"))
                other.c_term = None
        if self.caller_bye is not None:
            self.send(self.siph, SendToUa(build_response(self.caller_bye, 200), ctx.caller))
            self._release(status=0)
            return
        if self.fabric.metrics is not None:
            self.fabric.metrics.record_abort(ctx.call_id, confirmed)
        self._release(status=503)

    # --- терминирующая сторона ---

    def on_start_terminating(self, sender: UnitAddress, start: StartTerminating):
        ctx = self.ctx
        ctx.call_id = start.leg_call_id
        ctx.callee = start.callee
        ctx.caller = start.invite.from_.uri
        ctx.invite = start.invite
        ctx.c_orig = start.c_orig
        ctx.m_addr = start.m_addr
        self.siph = start.siph
        self.link(start.c_orig)
        ctx.advance("Inviting")
        try:
            ctx.offer = parse_sdp(start.invite.body or "")
        except SdpError as e:
            self._term_reject(488, str(e))
            return
        self._fetch_profile(ctx.callee)

    def _callee_profile(self, answer: ProfileAnswer):
        if answer.profile is None:
            self._term_reject(404, f"callee {answer.impu} unknown")
            return
        if not answer.profile.registered:
            self._term_reject(480, f"callee {answer.impu} not registered")
            return
        self.ctx.profile = answer.profile
        types = ("T", "A") if answer.profile.has_mmtel else ("A",)
        self._query_nss(self.ctx.call_id, self.ctx.callee, types, "term-chain")

    def _build_terminating_chain(self, placement: Dict[str, str]):
        ctx = self.ctx
        if "T" in placement:
            ctx.t_addr = self._spawn_linked(placement["T"], "T")
            self.send(ctx.t_addr, TelephonyStart(ctx.call_id, ctx.callee, self.address, "term", self._services()))
        ctx.a_addr = self._spawn_linked(placement["A"], "A", role="term")
        self.send(ctx.a_addr, MediaJoin(ctx.call_id, ctx.offer, self.address, ctx.t_addr,
                                        ctx.m_addr, ctx.call_id))

    def _callee_media_ready(self, ready: MediaReady):
        ctx = self.ctx
        if ready.status != 200:
            self._term_reject(ready.status, "media negotiation failed")
            return
        ctx.answer = ready.answer
        ctx.codec = ready.answer.codecs[0]
        invite = replace(ctx.invite, body=serialize_sdp(ready.answer), content_type="application/sdp")
        ctx.invite = invite
        self.invite_delivered = True
        self.send(self.siph, DeliverInvite(invite, ctx.callee, self.address, ctx.c_orig))

    def _term_reject(self, status: int, reason: str = ""):
        ctx = self.ctx
        if ctx.state == "Done":
            return
        if reason:
            self.log("info", ctx.call_id, f"terminating reject {status}: {reason}")
        if ctx.c_orig is not None:
            self.send(ctx.c_orig, CallRejected(ctx.call_id, status, ctx.call_id))
        self._term_release()

    def _term_release(self):
        ctx = self.ctx
        if ctx.a_addr is not None and ctx.m_addr is not None:
            self.send(ctx.m_addr, MediaDetach(ctx.call_id, ctx.call_id))
        for address in (ctx.t_addr, ctx.a_addr):
            if address is not None:
                self.terminate(address)
        self._stop_timers()
        if ctx.state != "Done":
            ctx.state = "Done"
            ctx.history.append("Done")
        self.terminate()

    def _to_callee(self, msg: SipMessage):
        self.send(self.siph, SendToUa(msg, self.ctx.callee, "term"))

    def _from_callee(self, msg: SipMessage):
        ctx = self.ctx
        if msg.is_request:
            if msg.method == "BYE":
                if ctx.finished:
                    self._to_callee(build_response(msg, 200))
                    return
                ctx.advance("Terminating")
                self._stop_timers()
                self.term_bye = msg
                self.send(ctx.c_orig, SipRelay(msg, "term"))
            return
        if msg.cseq.method == "BYE":
            if ctx.state == "Terminating":
                self.send(ctx.c_orig, SipRelay(msg, "term"))
                self._term_release()
            return
        status = msg.status_code
        if ctx.finished:
            if ctx.state == "Terminating" and status >= 300 and self.orig_bye is not None:
                # INVITE так и не дошел до UA: ветвь закрывается без BYE
                self.send(ctx.c_orig, SipRelay(build_response(self.orig_bye, 200), "term"))
                self._term_release()
            return
        if status == 180 and ctx.state == "Inviting":
            ctx.advance("Ringing")
            self.send(ctx.c_orig, SipRelay(msg, "term"))
        elif status == 200:
            self.send(ctx.c_orig, SipRelay(msg, "term"))
        elif status >= 300:
            self._term_reject(status, f"callee answered {status}")

    def _from_originating(self, msg: SipMessage):
        ctx = self.ctx
        if msg.is_request and msg.method == "ACK":
            if ctx.state in ("Inviting", "Ringing"):
                ctx.advance("Confirmed")
                self._to_callee(replace(msg, call_id=ctx.call_id))
                self._start_audit()
        elif msg.is_request and msg.method == "BYE":
            if ctx.state == "Done":
                return
            if not self.invite_delivered:
                self.send(ctx.c_orig, SipRelay(build_response(msg, 200), "term"))
                self._term_release()
                return
            if ctx.state != "Terminating":
                ctx.advance("Terminating")
            self._stop_timers()
            self.orig_bye = msg
            self._to_callee(replace(msg, call_id=ctx.call_id))
        elif not msg.is_request and msg.cseq.method == "BYE" and self.term_bye is not None:
            self._to_callee(build_response(self.term_bye, 200))
            self._term_release()

    def _term_peer_down(self):
        ctx = self.ctx
        if ctx.state in ("Inviting", "Ringing", "Confirmed") and ctx.invite is not None:
            bye = build_request(
                "BYE", ctx.callee, ctx.caller, ctx.invite.from_.tag or make_tag(ctx.call_id, "orig"),
                ctx.callee, ctx.call_id, ctx.invite.cseq.number + 1, VIA,
            )
            self._to_callee(bye)
        self._term_release()
