"""SDP offer/answer: разбор, сборка и согласование кодеков."""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

from errors import MissingMediaLine, NoCommonCodec, SdpError, UnknownCodec

CODECS = ("PCMU", "PCMA", "G729", "TELEPHONE-EVENT")
TELEPHONE_EVENT = "TELEPHONE-EVENT"

STATIC_PAYLOADS: Dict[str, str] = {"0": "PCMU", "8": "PCMA", "18": "G729"}
PAYLOAD_TYPES: Dict[str, int] = {"PCMU": 0, "PCMA": 8, "G729": 18, TELEPHONE_EVENT: 101}
CLOCK_RATE = 8000


@dataclass(frozen=True)
class SdpBody:
    session_id: str
    address: str
    port: int
    codecs: Tuple[str, ...]


def parse_sdp(text: str) -> SdpBody:
    """Разбор подмножества v=/o=/c=/m=/a=rtpmap; порядок кодеков по m-строке"""
    session_id = "0"
    address = "0.0.0.0"
    payloads: Optional[List[str]] = None
    port = 0
    rtpmap: Dict[str, str] = {}

    for line in text.splitlines():
        line = line.strip()
        if line.startswith("o="):
            parts = line[2:].split()
            if len(parts) >= 2:
                session_id = parts[1]
        elif line.startswith("c="):
            parts = line[2:].split()
            if len(parts) >= 3:
                address = parts[2].split("/")[0]
        elif line.startswith("m="):
            parts = line[2:].split()
            if len(parts) < 3 or parts[0] != "audio" or not parts[1].isdigit():
                raise SdpError(f"Некорректная m-строка: {line!r}")
            port = int(parts[1])
            payloads = parts[3:]
        elif line.startswith("a=rtpmap:"):
            pt, _, encoding = line[len("a=rtpmap:"):].partition(" ")
            rtpmap[pt.strip()] = encoding.split("/")[0].strip().upper()

    if payloads is None:
        raise MissingMediaLine("В SDP нет m-строки")
    if not 1024 <= port <= 65535:
        raise SdpError(f"Порт вне диапазона: {port}")

    codecs: List[str] = []
    unknown: List[str] = []
    for pt in payloads:
        name = rtpmap.get(pt) or STATIC_PAYLOADS.get(pt)
        if name in CODECS:
            if name not in codecs:
                codecs.append(name)
        else:
            unknown.append(name or pt)
    if not codecs:
        raise UnknownCodec(unknown[0] if unknown else "")

    return SdpBody(session_id=session_id, address=address, port=port, codecs=tuple(codecs))


def serialize_sdp(sdp: SdpBody) -> str:
    pts = [str(PAYLOAD_TYPES[c]) for c in sdp.codecs]
    lines = [
        "v=0",
        f"o=unity {sdp.session_id} 1 IN IP4 {sdp.address}",
        "s=-",
        f"c=IN IP4 {sdp.address}",
        "t=0 0",
        f"m=audio {sdp.port} RTP/AVP {' '.join(pts)}",
    ]
    for codec, pt in zip(sdp.codecs, pts):
        lines.append(f"a=rtpmap:{pt} {codec.lower() if codec == TELEPHONE_EVENT else codec}/{CLOCK_RATE}")
        if codec == TELEPHONE_EVENT:
            lines.append(f"a=fmtp:{pt} 0-16")
    lines.append("a=ptime:20")
    return "\r\n".join(lines) + "\r\n"


def negotiate_codecs(
    offer: SdpBody,
    supported: Iterable[str],
    address: str,
    port: int,
    session_id: Optional[str] = None,
) -> SdpBody:
    """Ответ: первый предложенный кодек из поддерживаемых (+ telephone-event)"""
    supported_set = {c.upper() for c in supported}
    chosen = next(
        (c for c in offer.codecs if c != TELEPHONE_EVENT and c in supported_set),
        None,
    )
    if chosen is None:
        raise NoCommonCodec(f"Нет общего кодека: {list(offer.codecs)} / {sorted(supported_set)}")
    codecs = [chosen]
    if TELEPHONE_EVENT in offer.codecs and TELEPHONE_EVENT in supported_set:
        codecs.append(TELEPHONE_EVENT)
    return SdpBody(
        session_id=session_id or offer.session_id,
        address=address,
        port=port,
        codecs=tuple(codecs),
    )
