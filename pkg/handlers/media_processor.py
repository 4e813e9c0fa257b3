"""
M: медиаплоскость вызова. Кадры обрабатываются на глобальной сетке 20 мс,
одним событием на границу для всех сессий pouch;
отклонение завершения обработки от границы кадра пишется как выборка джиттера.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from handlers.base import Unit
from handlers.messages import (
    DtmfFromUa,
    MediaAttach,
    MediaDetach,
    MediaStart,
    PeerDown,
    TelephonyEvent,
)
from services.cmw import UnitAddress

FRAME_INTERVAL_US = 20_000
MIXING_MULTIPLIER = 1.5


def media_endpoint(kernel, m_addr: UnitAddress) -> Tuple[str, int]:
    """Адрес и порт RTP юнита M для SDP"""
    ordinal = kernel.pouches[m_addr.pouch_id].ordinal
    address = f"10.1.{ordinal // 256}.{ordinal % 256}"
    port = 10000 + (m_addr.instance_id * 2) % 50000
    return address, port


@dataclass
class MediaLeg:
    leg_id: str
    codec: str
    side: str
    c_addr: UnitAddress
    t_addr: Optional[UnitAddress] = None
    frames: int = 0


@dataclass
class MediaSession:
    call_id: str
    frame_interval_us: int = FRAME_INTERVAL_US
    legs: Dict[str, MediaLeg] = field(default_factory=dict)
    t0_us: Optional[int] = None
    tick_index: int = 0
    active: bool = False

    @property
    def mixing(self) -> bool:
        return len(self.legs) >= 3

    def frame_cost_us(self, per_leg_us: int) -> int:
        cost = per_leg_us * len(self.legs)
        if self.mixing:
            cost *= MIXING_MULTIPLIER
        return int(round(cost))

    def ideal_us(self, index: int) -> int:
        return self.t0_us + index * self.frame_interval_us


class MediaClock:
    """Сетка кадров pouch: одно событие на границу 20 мс для всех сессий M этого pouch"""

    def __init__(self, cmw, interval_us: int = FRAME_INTERVAL_US):
        self.cmw = cmw
        self.kernel = cmw.kernel
        self.interval_us = interval_us
        # порядок вставки задает порядок обработки кадров на границе
        self.members: Dict[int, "MediaProcessorUnit"] = {}
        self._event: Optional[int] = None
        self._fire_us: Optional[int] = None
        self.ticks = 0

    @classmethod
    def of(cls, cmw) -> "MediaClock":
        if cmw.media_clock is None:
            cmw.media_clock = cls(cmw)
        return cmw.media_clock

    def join(self, unit: "MediaProcessorUnit", t0_us: int):
        self.members[unit.address.instance_id] = unit
        self._arm(t0_us)

    def leave(self, unit: "MediaProcessorUnit"):
        self.members.pop(unit.address.instance_id, None)
        if not self.members and self._event is not None:
            self.kernel.cancel(self._event)
            self._event = self._fire_us = None

    def _arm(self, fire_us: int):
        if self._event is not None:
            if self._fire_us <= fire_us:
                return
            self.kernel.cancel(self._event)
        self._fire_us = fire_us
        self._event = self.kernel.call_at(fire_us, self.tick, target=self.cmw.pouch_id)

    def tick(self):
        """Кадры всех сессий, чья идеальная граница наступила, одной пачкой в FIFO pouch"""
        self._event = self._fire_us = None
        if not self.cmw.alive:
            return
        now = self.kernel.now_us
        due = [unit for unit in self.members.values() if unit.frame_due(now)]
        if due:
            self.ticks += 1
            per_leg = self.cmw.fabric.cost_us("m_frame")
            ends = self.kernel.execute_batch(self.cmw.pouch, [u.session.frame_cost_us(per_leg) for u in due])
            for unit, end in zip(due, ends):
                unit.frame_done(end)
        if self.members:
            self._arm(now + self.interval_us)


class MediaProcessorUnit(Unit):
    unit_type = "M"
    costs = {"DtmfFromUa": "m_frame"}

    def __init__(self, address: UnitAddress, cmw, call_id: str = "", **params: Any):
        super().__init__(address, cmw, **params)
        self.session = MediaSession(call_id)
        self.endpoint = media_endpoint(cmw.kernel, address)
        self.clock = MediaClock.of(cmw)
        self._linked = False

    def on_start(self):
        self.fabric.media_endpoints[self.endpoint] = self.address

    def on_terminate(self):
        self.session.active = False
        self.clock.leave(self)
        if self.fabric.media_endpoints.get(self.endpoint) == self.address:
            del self.fabric.media_endpoints[self.endpoint]

    def on_media_attach(self, sender: UnitAddress, attach: MediaAttach):
        self.session.legs[attach.leg_id] = MediaLeg(attach.leg_id, attach.codec, attach.side,
                                                    attach.c_addr, attach.t_addr)
        if attach.side == "orig" and not self._linked:
            self.link(attach.c_addr)
            self._linked = True
        self.log("debug", attach.call_id, f"leg {attach.leg_id} {attach.codec} legs={len(self.session.legs)}")

    def on_media_detach(self, sender: UnitAddress, detach: MediaDetach):
        self.session.legs.pop(detach.leg_id, None)

    def on_media_start(self, sender: UnitAddress, start: MediaStart):
        session = self.session
        if session.active:
            return
        session.active = True
        interval = session.frame_interval_us
        session.t0_us = -(-self.now_us // interval) * interval
        session.tick_index = 0
        self.clock.join(self, session.t0_us)

    def frame_due(self, now_us: int) -> bool:
        session = self.session
        return self.alive and session.active and session.ideal_us(session.tick_index) <= now_us

    def frame_done(self, end_us: int):
        """Кадр tick_index обработан к end_us; смещение от идеальной границы пишется как джиттер"""
        session = self.session
        ideal = session.ideal_us(session.tick_index)
        for leg in session.legs.values():
            leg.frames += 1
        session.tick_index += 1
        if self.fabric.metrics is not None:
            self.fabric.metrics.record_jitter(self.pouch_id, session.call_id, ideal, end_us - ideal)

    def on_dtmf_from_ua(self, sender: Optional[UnitAddress], dtmf: DtmfFromUa):
        leg = next((l for l in self.session.legs.values() if l.side == dtmf.side), None)
        if leg is None or leg.t_addr is None:
            self.log("debug", dtmf.call_id, f"DTMF {dtmf.digits} without T")
            return
        self.send(leg.t_addr, TelephonyEvent(dtmf.call_id, dtmf.digits, dtmf.target))

    def on_peer_down(self, sender: Optional[UnitAddress], event: PeerDown):
        self.terminate()
