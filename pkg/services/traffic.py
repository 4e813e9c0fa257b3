"""
Генератор нагрузки в стиле SIPp: эмулирует UA абонентов.

Регистрационный шторм в t=0, затем вызовы с заданной частотой между
случайными парами зарегистрированных абонентов, повторные регистрации
по кругу. Исходы вызовов фиксируются на стороне вызывающего UA.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError

from database.hss import DOMAIN
from database.metrics import MetricsStore
from errors import NegativeRate, ScenarioSyntaxError, SdpError, SipError
from handlers.messages import DtmfFromUa, SipFromUa
from services.ids import RESOURCE_UTILIZATION
from services.kernel import ms_to_us
from utils.formatters import format_duration
from utils.sdp import SdpBody, parse_sdp, serialize_sdp
from utils.sip_codec import SipMessage, build_request, build_response, make_tag, parse_message, serialize_message

logger = logging.getLogger(__name__)

US_PER_S = 1_000_000
UA_OFFER = ("PCMU", "PCMA", "TELEPHONE-EVENT")
NON_NEGATIVE = ("call_rate", "call_duration", "reregistration_rate", "warmup", "measurement_window",
                "answer_delay", "abandon_ratio", "conference_ratio", "ua_timeout")


class ScenarioConfig(BaseModel):
    """Профиль нагрузки; время в секундах, частоты в минуту"""
    name: str = "custom"
    call_rate: float = Field(default=30.0, ge=0)
    call_duration: float = Field(default=200.0, ge=0)
    subscriber_count: int = Field(default=200, ge=0)
    reregistration_rate: float = Field(default=20.0, ge=0)
    warmup: float = Field(default=60.0, ge=0)
    measurement_window: float = Field(default=600.0, ge=0)
    arrival: Literal["deterministic", "exponential"] = "deterministic"
    seed: int = 1
    answer_delay: float = Field(default=2.0, ge=0)
    abandon_ratio: float = Field(default=0.0, ge=0, le=1)
    conference_ratio: float = Field(default=0.0, ge=0, le=1)
    ua_timeout: float = Field(default=32.0, gt=0)

    @property
    def window_start_us(self) -> int:
        return int(round(self.warmup * US_PER_S))

    @property
    def window_end_us(self) -> int:
        return int(round((self.warmup + self.measurement_window) * US_PER_S))

    @property
    def expected_concurrency(self) -> float:
        """Закон Литтла: L = частота * длительность"""
        return self.call_rate / 60.0 * self.call_duration

    def with_rate(self, call_rate: float) -> "ScenarioConfig":
        return self.model_copy(update={"call_rate": call_rate, "name": f"{self.name}@{call_rate:g}"})


def parse_scenario(text: str, name: str = "custom") -> ScenarioConfig:
    values: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ScenarioSyntaxError(line_no, f"ожидается key = value: {line!r}")
        key = key.strip().replace("-", "_")
        if key not in ScenarioConfig.model_fields or key == "name":
            raise ScenarioSyntaxError(line_no, f"неизвестный ключ: {key}")
        values[key] = value.strip()
        if key in NON_NEGATIVE:
            try:
                number = float(values[key])
            except ValueError:
                raise ScenarioSyntaxError(line_no, f"некорректное число {key}={value.strip()!r}")
            if number < 0:
                raise NegativeRate(f"{key} < 0: {number:g}")
    try:
        return ScenarioConfig(name=name, **values)
    except ValidationError as e:
        error = e.errors()[0]
        raise ScenarioSyntaxError(0, f"{'.'.join(map(str, error['loc']))}: {error['msg']}")


def load_scenario(ref: str, scenario_dir: Path) -> ScenarioConfig:
    """Сценарий по пути или по имени файла в каталоге сценариев ("paper")"""
    path = Path(ref)
    if not path.suffix and not path.exists():
        path = Path(scenario_dir) / f"{ref}.scn"
    return parse_scenario(path.read_text(encoding="utf-8"), name=path.stem)


@dataclass
class UaCall:
    """Диалог глазами вызывающего UA"""
    call_id: str
    caller: int
    callee: int
    invite: SipMessage
    abandon: bool = False
    third_party: Optional[int] = None
    to_tag: Optional[str] = None
    answered: bool = False
    bye: Optional[SipMessage] = None
    done: bool = False
    timer: Optional[int] = None


@dataclass
class UaIncoming:
    """Входящий диалог вызываемого UA"""
    invite: SipMessage
    to_tag: str
    answer_timer: Optional[int] = None
    confirmed: bool = False


@dataclass
class UserAgent:
    index: int
    impu: str
    endpoint: str
    registered: bool = False
    reg_cseq: int = 0
    incoming: Dict[str, UaIncoming] = field(default_factory=dict)

    @property
    def media_address(self) -> str:
        return f"192.168.{self.index // 256}.{self.index % 256}"


class TrafficGenerator:
    """Эмуляция всех UA одного прогона"""

    def __init__(self, scenario: ScenarioConfig, system, metrics: MetricsStore):
        self.scenario = scenario
        self.system = system
        self.kernel = system.kernel
        self.fabric = system.fabric
        self.metrics = metrics
        self.logger = logging.getLogger(__name__)
        self.rng = self.kernel.random.stream("traffic")
        self.agents: List[UserAgent] = []
        self.by_endpoint: Dict[str, UserAgent] = {}
        self.calls: Dict[str, UaCall] = {}
        self.call_seq = 0
        self.rereg_cursor = 0
        self.stop_us = scenario.window_end_us
        self.unexpected = 0
        for index in range(1, scenario.subscriber_count + 1):
            impu = f"sip:user{index:04d}@{DOMAIN}"
            endpoint = self.kernel.add_user_agent(f"user{index:04d}")
            agent = UserAgent(index, impu, endpoint)
            self.agents.append(agent)
            self.by_endpoint[endpoint] = agent
        self.fabric.ua_gateway = self.deliver

    # --- планирование ---

    def start(self):
        for agent in self.agents:
            self.register(agent)
        if self.scenario.call_rate > 0:
            self.kernel.call_at(self._next_arrival(0), self._arrival)
        if self.scenario.reregistration_rate > 0 and self.agents:
            interval = int(round(60 * US_PER_S / self.scenario.reregistration_rate))
            self.kernel.call_at(interval, self._reregistration)

    def _next_arrival(self, now_us: int) -> int:
        mean_us = 60 * US_PER_S / self.scenario.call_rate
        if self.scenario.arrival == "exponential":
            return now_us + max(1, int(round(self.rng.expovariate(1.0 / mean_us))))
        return now_us + int(round(mean_us))

    def _arrival(self):
        now = self.kernel.now_us
        if now >= self.stop_us:
            return
        self.originate()
        self.kernel.call_at(self._next_arrival(now), self._arrival)

    def _reregistration(self):
        now = self.kernel.now_us
        if now >= self.stop_us:
            return
        agent = self.agents[self.rereg_cursor % len(self.agents)]
        self.rereg_cursor += 1
        self.register(agent)
        interval = int(round(60 * US_PER_S / self.scenario.reregistration_rate))
        self.kernel.call_later(interval, self._reregistration)

    @property
    def idle(self) -> bool:
        return all(call.done for call in self.calls.values())

    # --- отправка ---

    def _send(self, agent: UserAgent, msg: SipMessage):
        raw = serialize_message(msg)
        self.fabric.send(None, self.system.siph, SipFromUa(raw, agent.endpoint, msg.call_id),
                         src_endpoint=agent.endpoint)

    def _via(self, agent: UserAgent) -> str:
        return f"SIP/2.0/UDP {agent.endpoint[3:]}.ua.{DOMAIN}"

    def register(self, agent: UserAgent):
        agent.reg_cseq += 1
        call_id = f"reg-{agent.index:04d}-{agent.reg_cseq}"
        msg = build_request("REGISTER", f"sip:{DOMAIN}", agent.impu, make_tag(call_id, "reg"), agent.impu,
                            call_id, agent.reg_cseq, self._via(agent), contact=agent.endpoint)
        self._send(agent, msg)

    def _pick(self, exclude) -> Optional[UserAgent]:
        candidates = [a for a in self.agents if a.registered and a.index not in exclude]
        if not candidates:
            return None
        return candidates[self.rng.randrange(len(candidates))]

    def originate(self) -> Optional[str]:
        """Новый вызов между случайной парой зарегистрированных абонентов"""
        caller = self._pick(())
        callee = self._pick((caller.index,)) if caller else None
        if caller is None or callee is None:
            self.logger.debug("Недостаточно зарегистрированных абонентов для вызова")
            return None
        self.call_seq += 1
        call_id = f"call-{self.call_seq:06d}"
        offer = SdpBody(str(self.call_seq), caller.media_address, 20000, UA_OFFER)
        invite = build_request("INVITE", callee.impu, caller.impu, make_tag(call_id, "caller"), callee.impu,
                               call_id, 1, self._via(caller), contact=caller.endpoint,
                               body=serialize_sdp(offer), content_type="application/sdp")
        call = UaCall(call_id, caller.index, callee.index, invite)
        call.abandon = self.rng.random() < self.scenario.abandon_ratio
        if self.rng.random() < self.scenario.conference_ratio:
            third = self._pick((caller.index, callee.index))
            call.third_party = third.index if third else None
        self.calls[call_id] = call
        record = self.metrics.open_call(call_id, caller.impu, callee.impu, self.kernel.now_us)
        record.conference = call.third_party is not None
        call.timer = self.kernel.call_later(self._seconds(self.scenario.ua_timeout),
                                            lambda: self._setup_timeout(call))
        self._send(caller, invite)
        return call_id

    @staticmethod
    def _seconds(value: float) -> int:
        return int(round(value * US_PER_S))

    # --- прием ---

    def deliver(self, endpoint: str, raw: bytes):
        agent = self.by_endpoint.get(endpoint)
        if agent is None:
            return
        try:
            msg = parse_message(raw)
        except SipError as e:
            self.unexpected += 1
            self.logger.error(f"UA {endpoint}: некорректное сообщение: {e}")
            return
        if msg.call_id.startswith("reg-"):
            self._register_response(agent, msg)
            return
        call = self.calls.get(msg.call_id)
        if call is not None and call.caller == agent.index:
            self._caller_side(agent, call, msg)
        else:
            self._callee_side(agent, msg)

    def _register_response(self, agent: UserAgent, msg: SipMessage):
        if msg.is_request or msg.status_code < 200:
            return
        ok = msg.status_code == 200
        agent.registered = agent.registered or ok
        self.metrics.record_registration(ok)

    def _cancel_timer(self, call: UaCall):
        if call.timer is not None:
            self.kernel.cancel(call.timer)
            call.timer = None

    def _finish(self, call: UaCall):
        self._cancel_timer(call)
        call.done = True

    # --- вызывающая сторона ---

    def _caller_side(self, agent: UserAgent, call: UaCall, msg: SipMessage):
        now = self.kernel.now_us
        if msg.is_request:
            if msg.method == "BYE":
                self._send(agent, build_response(msg, 200))
                if call.done:
                    return
                if call.answered:
                    self.metrics.call_ended(call.call_id, now, dropped=True)
                else:
                    self.metrics.close_call(call.call_id, "failed", now, status=503, dropped=True)
                self._finish(call)
            return
        if call.done:
            return
        if msg.cseq.method == "BYE":
            if call.answered:
                self.metrics.call_ended(call.call_id, now)
            else:
                self.metrics.close_call(call.call_id, "abandoned", now, status=msg.status_code)
            self._finish(call)
            return
        status = msg.status_code
        if call.bye is not None:
            return
        if status == 180 and call.abandon:
            delay = self._seconds(self.scenario.answer_delay) // 2
            self.kernel.call_later(delay, lambda: self._hang_up(agent, call))
        elif status == 200 and not call.answered:
            self._answered(agent, call, msg)
        elif status >= 300:
            self.metrics.close_call(call.call_id, "failed", now, status=status, dropped=status == 503)
            self._finish(call)

    def _answered(self, agent: UserAgent, call: UaCall, msg: SipMessage):
        call.answered = True
        call.to_tag = msg.to.tag
        self._cancel_timer(call)
        self.metrics.call_answered(call.call_id, self.kernel.now_us)
        ack = self._in_dialog(agent, call, "ACK", call.invite.cseq.number)
        self._send(agent, ack)
        if call.third_party is not None and msg.body:
            self.kernel.call_later(self._seconds(self.scenario.answer_delay),
                                   lambda: self._dial_conference(agent, call, msg.body))
        call.timer = self.kernel.call_later(self._seconds(self.scenario.call_duration),
                                            lambda: self._hang_up(agent, call))

    def _in_dialog(self, agent: UserAgent, call: UaCall, method: str, cseq: int) -> SipMessage:
        callee = self.agents[call.callee - 1]
        return build_request(method, callee.impu, agent.impu, call.invite.from_.tag, callee.impu,
                             call.call_id, cseq, self._via(agent), to_tag=call.to_tag)

    def _hang_up(self, agent: UserAgent, call: UaCall):
        call.timer = None
        if call.done or call.bye is not None:
            return
        call.bye = self._in_dialog(agent, call, "BYE", call.invite.cseq.number + 1)
        self._send(agent, call.bye)
        call.timer = self.kernel.call_later(self._seconds(self.scenario.ua_timeout),
                                            lambda: self._bye_timeout(call))

    def _bye_timeout(self, call: UaCall):
        call.timer = None
        if call.done:
            return
        now = self.kernel.now_us
        if call.answered:
            self.metrics.call_ended(call.call_id, now, dropped=True)
        else:
            self.metrics.close_call(call.call_id, "abandoned", now)
        call.done = True

    def _setup_timeout(self, call: UaCall):
        call.timer = None
        if call.done or call.answered:
            return
        if call.bye is not None:
            self.metrics.close_call(call.call_id, "abandoned", self.kernel.now_us)
        else:
            self.metrics.close_call(call.call_id, "failed", self.kernel.now_us, status=408)
        call.done = True

    def _dial_conference(self, agent: UserAgent, call: UaCall, answer_sdp: str):
        if call.done or call.bye is not None:
            return
        try:
            sdp = parse_sdp(answer_sdp)
        except SdpError:
            return
        m_addr = self.fabric.media_endpoints.get((sdp.address, sdp.port))
        if m_addr is None:
            return
        third = self.agents[call.third_party - 1]
        digits = self.fabric.config["conference-digits"]
        self.fabric.send(None, m_addr, DtmfFromUa(call.call_id, digits, third.impu, "orig"),
                         src_endpoint=agent.endpoint)

    # --- вызываемая сторона ---

    def _callee_side(self, agent: UserAgent, msg: SipMessage):
        if not msg.is_request:
            return
        dialog = agent.incoming.get(msg.call_id)
        if msg.method == "INVITE":
            if dialog is not None:
                return
            to_tag = make_tag(msg.call_id, agent.impu, "uas")
            dialog = agent.incoming[msg.call_id] = UaIncoming(msg, to_tag)
            self._send(agent, build_response(msg, 180, to_tag=to_tag))
            dialog.answer_timer = self.kernel.call_later(
                self._seconds(self.scenario.answer_delay), lambda: self._answer(agent, msg.call_id))
        elif msg.method == "ACK":
            if dialog is not None:
                dialog.confirmed = True
        elif msg.method == "BYE":
            self._send(agent, build_response(msg, 200))
            if dialog is not None:
                if dialog.answer_timer is not None:
                    self.kernel.cancel(dialog.answer_timer)
                del agent.incoming[msg.call_id]

    def _answer(self, agent: UserAgent, call_id: str):
        dialog = agent.incoming.get(call_id)
        if dialog is None:
            return
        dialog.answer_timer = None
        answer = SdpBody(call_id, agent.media_address, 30000, UA_OFFER)
        self._send(agent, build_response(dialog.invite, 200, sdp=answer, to_tag=dialog.to_tag))


def run_traffic(scenario: ScenarioConfig, system, drain_limit_s: Optional[float] = None) -> MetricsStore:
    """Прогнать сценарий на развернутой системе и дождаться завершения вызовов"""
    metrics = MetricsStore(scenario.window_start_us, scenario.window_end_us)
    system.fabric.metrics = metrics
    system.ids.subscribe(RESOURCE_UTILIZATION, metrics.record_cpu)
    generator = TrafficGenerator(scenario, system, metrics)
    generator.start()
    kernel = system.kernel
    kernel.run_until(scenario.window_end_us)

    if drain_limit_s is None:
        drain_limit_s = scenario.call_duration + 3 * scenario.ua_timeout + scenario.answer_delay + 10
    deadline = scenario.window_end_us + ms_to_us(drain_limit_s * 1000)
    step = US_PER_S
    while kernel.now_us < deadline:
        if generator.idle and not system.per_call_units():
            break
        kernel.run_until(min(deadline, kernel.now_us + step))
    metrics.end_us = kernel.now_us

    pending = sum(1 for call in generator.calls.values() if not call.done)
    if pending:
        logger.warning(f"Незавершенных вызовов после дренажа: {pending}")
    metrics.counters.update(
        spawned=sum(system.fabric.spawned.values()),
        terminated=sum(system.fabric.terminated.values()),
        lost=sum(system.fabric.lost.values()),
        dead_letters=system.fabric.dead_letters,
        messages_sent=system.fabric.messages_sent,
        messages_handled=system.fabric.messages_handled,
        events_processed=kernel.events_processed,
        malformed_at_ua=generator.unexpected,
        calls_generated=generator.call_seq,
        pending_calls=pending,
    )
    logger.info(f"Сценарий {scenario.name}: вызовов {generator.call_seq}, "
                f"виртуальное время {format_duration(kernel.now_us / US_PER_S)}, событий {kernel.events_processed}")
    return metrics
