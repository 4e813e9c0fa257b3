from typing import Any, Optional, Tuple

from database.hss import ADHOC_CONF
from errors import ServiceNotSubscribed
from handlers.base import Unit
from handlers.messages import (
    ConferenceRequest,
    MediaAvailable,
    PeerDown,
    TelephonyEvent,
    TelephonyStart,
)
from services.cmw import UnitAddress


class TelephonyServerUnit(Unit):
    """T: дополнительные услуги MMTEL; слушает DTMF и запускает ad-hoc конференцию"""
    unit_type = "T"
    costs = {"TelephonyStart": "t_event", "MediaAvailable": "t_event", "TelephonyEvent": "t_event"}

    def __init__(self, address: UnitAddress, cmw, **params: Any):
        super().__init__(address, cmw, **params)
        self.call_id = ""
        self.subscriber = ""
        self.side = ""
        self.services: Tuple[str, ...] = ()
        self.c_addr: Optional[UnitAddress] = None
        self.m_addr: Optional[UnitAddress] = None
        self.conferences = 0

    def on_telephony_start(self, sender: UnitAddress, start: TelephonyStart):
        self.call_id = start.call_id
        self.subscriber = start.subscriber
        self.side = start.side
        self.services = start.services
        self.c_addr = start.c_addr
        self.link(start.c_addr)

    def on_media_available(self, sender: UnitAddress, event: MediaAvailable):
        self.m_addr = event.m_addr

    def on_telephony_event(self, sender: UnitAddress, event: TelephonyEvent):
        if event.digits != self.config("conference-digits"):
            self.log("debug", event.call_id, f"DTMF {event.digits} ignored")
            return
        try:
            self.check_service(ADHOC_CONF)
        except ServiceNotSubscribed as e:
            self.log("info", event.call_id, str(e))
            return
        if self.c_addr is None or not event.target:
            return
        self.conferences += 1
        self.send(self.c_addr, ConferenceRequest(event.call_id, event.target))

    def check_service(self, service: str):
        if service not in self.services:
            raise ServiceNotSubscribed(self.subscriber, service)

    def on_peer_down(self, sender: Optional[UnitAddress], event: PeerDown):
        self.terminate()
