"""
Сообщения между юнитами. Все сообщения неизменяемы; call_id используется
для журнала и трассировки.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from database.hss import SubscriberProfile
from services.cmw import PeerDown, UnitAddress  # noqa: F401
from utils.sdp import SdpBody
from utils.sip_codec import SipMessage


# --- SIP между UA, SIPh и C ---

@dataclass(frozen=True)
class SipFromUa:
    """Сырые байты от UA, принятые SIPh"""
    raw: bytes
    ua_endpoint: str
    call_id: str = ""


@dataclass(frozen=True)
class SipRelay:
    """SIP-сообщение, переданное внутри ядра (SIPh <-> C, C <-> C)"""
    msg: SipMessage
    leg: str = "orig"

    @property
    def call_id(self) -> str:
        return self.msg.call_id


@dataclass(frozen=True)
class SendToUa:
    """C просит SIPh отправить сообщение абоненту"""
    msg: SipMessage
    impu: str
    leg: str = "orig"

    @property
    def call_id(self) -> str:
        return self.msg.call_id


@dataclass(frozen=True)
class DeliverInvite:
    """Терминирующий C передает INVITE вызываемому UA"""
    invite: SipMessage
    callee: str
    c_term: UnitAddress
    c_orig: UnitAddress

    @property
    def call_id(self) -> str:
        return self.invite.call_id


@dataclass(frozen=True)
class CallReleased:
    """Сессия завершена в ядре; SIPh освобождает диалог"""
    call_id: str
    status: int = 0
    confirmed: bool = False


# --- регистрация и профили ---

@dataclass(frozen=True)
class RegisterRequest:
    call_id: str
    impu: str
    binding: str
    siph: UnitAddress
    ua_msg: SipMessage


@dataclass(frozen=True)
class RegisterAnswer:
    call_id: str
    impu: str
    binding: str
    ok: bool
    ua_msg: SipMessage


@dataclass(frozen=True)
class ProfileRequest:
    call_id: str
    impu: str
    requester: UnitAddress


@dataclass(frozen=True)
class ProfileAnswer:
    call_id: str
    impu: str
    profile: Optional[SubscriberProfile]
    from_cache: bool = False


@dataclass(frozen=True)
class DiameterQuery:
    """H -> Diah: чтение профиля или сохранение регистрации"""
    call_id: str
    impu: str
    requester: UnitAddress
    reply_to: UnitAddress
    binding: Optional[str] = None


@dataclass(frozen=True)
class DiameterAnswer:
    call_id: str
    impu: str
    profile: Optional[SubscriberProfile]
    requester: UnitAddress
    binding: Optional[str] = None


# --- выбор pouch ---

@dataclass(frozen=True)
class NssQuery:
    call_id: str
    subscriber: str
    unit_types: Tuple[str, ...]
    purpose: str


@dataclass(frozen=True)
class NssAnswer:
    call_id: str
    subscriber: str
    placement: Dict[str, str]
    purpose: str
    error: str = ""


# --- сессия вызова ---

@dataclass(frozen=True)
class StartOriginating:
    invite: SipMessage
    caller: str
    callee: str
    siph: UnitAddress

    @property
    def call_id(self) -> str:
        return self.invite.call_id


@dataclass(frozen=True)
class StartTerminating:
    invite: SipMessage
    callee: str
    c_orig: UnitAddress
    m_addr: UnitAddress
    siph: UnitAddress
    leg_call_id: str

    @property
    def call_id(self) -> str:
        return self.leg_call_id


@dataclass(frozen=True)
class CallRejected:
    call_id: str
    status: int
    leg_call_id: str


@dataclass(frozen=True)
class TelephonyStart:
    call_id: str
    subscriber: str
    c_addr: UnitAddress
    side: str
    services: Tuple[str, ...]


@dataclass(frozen=True)
class TelephonyEvent:
    """DTMF, обнаруженный M в медиапотоке"""
    call_id: str
    digits: str
    target: str


@dataclass(frozen=True)
class ConferenceRequest:
    call_id: str
    third_party: str


@dataclass(frozen=True)
class MediaOffer:
    call_id: str
    offer: SdpBody
    c_addr: UnitAddress
    t_addr: Optional[UnitAddress]
    m_pouch: str


@dataclass(frozen=True)
class MediaJoin:
    call_id: str
    offer: SdpBody
    c_addr: UnitAddress
    t_addr: Optional[UnitAddress]
    m_addr: UnitAddress
    leg_call_id: str


@dataclass(frozen=True)
class MediaAttach:
    call_id: str
    leg_id: str
    codec: str
    side: str
    c_addr: UnitAddress
    t_addr: Optional[UnitAddress] = None


@dataclass(frozen=True)
class MediaReady:
    call_id: str
    answer: Optional[SdpBody]
    m_addr: Optional[UnitAddress]
    status: int = 200


@dataclass(frozen=True)
class MediaAvailable:
    call_id: str
    m_addr: UnitAddress


@dataclass(frozen=True)
class MediaStart:
    call_id: str


@dataclass(frozen=True)
class MediaDetach:
    call_id: str
    leg_id: str


@dataclass(frozen=True)
class DtmfFromUa:
    """Внутриполосный DTMF от UA, принятый M"""
    call_id: str
    digits: str
    target: str
    side: str = "orig"


# --- таймеры C ---

@dataclass(frozen=True)
class AuditTimer:
    call_id: str


@dataclass(frozen=True)
class SetupTimer:
    call_id: str

