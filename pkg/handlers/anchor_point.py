from dataclasses import replace
from typing import Any, Optional

from errors import CmwError, KernelError, NoCommonCodec
from handlers.base import Unit
from handlers.media_processor import media_endpoint
from handlers.messages import (
    MediaAttach,
    MediaAvailable,
    MediaJoin,
    MediaOffer,
    MediaReady,
    PeerDown,
)
from services.cmw import UnitAddress
from utils.sdp import SdpBody, negotiate_codecs


class AnchorPointUnit(Unit):
    """A: согласует кодек и привязывает вызов к M"""
    unit_type = "A"
    costs = {"MediaOffer": "a_negotiate", "MediaJoin": "a_negotiate"}

    def __init__(self, address: UnitAddress, cmw, role: str = "orig", **params: Any):
        super().__init__(address, cmw, **params)
        self.role = role
        self.codec: Optional[str] = None
        self.m_addr: Optional[UnitAddress] = None

    def negotiate(self, offer: SdpBody) -> SdpBody:
        supported = self.config("supported-codecs")
        return negotiate_codecs(offer, supported, address="0.0.0.0", port=1024)

    def _answer_from_m(self, answer: SdpBody, m_addr: UnitAddress) -> SdpBody:
        address, port = media_endpoint(self.cmw.kernel, m_addr)
        return replace(answer, address=address, port=port, session_id=str(m_addr.instance_id))

    def on_media_offer(self, sender: UnitAddress, offer: MediaOffer):
        self.link(offer.c_addr)
        try:
            answer = self.negotiate(offer.offer)
        except NoCommonCodec as e:
            self.log("info", offer.call_id, f"488 {e}")
            self.send(offer.c_addr, MediaReady(offer.call_id, None, None, status=488))
            return
        try:
            m_addr = self.spawn(offer.m_pouch, "M", call_id=offer.call_id)
        except (CmwError, KernelError) as e:
            self.log("error", offer.call_id, f"M spawn failed: {e}")
            self.send(offer.c_addr, MediaReady(offer.call_id, None, None, status=500))
            return
        self.codec = answer.codecs[0]
        self.m_addr = m_addr
        self.send(m_addr, MediaAttach(offer.call_id, "orig", self.codec, "orig", offer.c_addr, offer.t_addr))
        self.send(offer.c_addr, MediaReady(offer.call_id, self._answer_from_m(answer, m_addr), m_addr))
        if offer.t_addr is not None:
            self.send(offer.t_addr, MediaAvailable(offer.call_id, m_addr))

    def on_media_join(self, sender: UnitAddress, join: MediaJoin):
        self.link(join.c_addr)
        try:
            answer = self.negotiate(join.offer)
        except NoCommonCodec as e:
            self.log("info", join.call_id, f"488 {e}")
            self.send(join.c_addr, MediaReady(join.call_id, None, None, status=488))
            return
        self.codec = answer.codecs[0]
        self.m_addr = join.m_addr
        self.send(join.m_addr, MediaAttach(join.call_id, join.leg_call_id, self.codec, "term",
                                           join.c_addr, join.t_addr))
        self.send(join.c_addr, MediaReady(join.call_id, self._answer_from_m(answer, join.m_addr), join.m_addr))
        if join.t_addr is not None:
            self.send(join.t_addr, MediaAvailable(join.call_id, join.m_addr))

    def on_peer_down(self, sender: Optional[UnitAddress], event: PeerDown):
        self.terminate()
