"""
Разбор, сборка и сериализация подмножества SIP (REGISTER/INVITE/ACK/BYE)
"""

import hashlib
import logging
import re
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from errors import (
    BadContentLength,
    BadCSeqMethod,
    InvariantViolation,
    MalformedStartLine,
    MissingMandatoryHeader,
    NotARequest,
    SipError,
)
from utils.sdp import SdpBody, serialize_sdp

logger = logging.getLogger(__name__)

SIP_VERSION = "SIP/2.0"
METHODS = ("REGISTER", "INVITE", "ACK", "BYE")

REASONS: Dict[int, str] = {
    100: "Trying",
    180: "Ringing",
    200: "OK",
    403: "Forbidden",
    404: "Not Found",
    408: "Request Timeout",
    480: "Temporarily Unavailable",
    481: "Call/Transaction Does Not Exist",
    488: "Not Acceptable Here",
    500: "Server Internal Error",
    503: "Service Unavailable",
}

# компактные формы имен заголовков
COMPACT_HEADERS = {
    "v": "via",
    "f": "from",
    "t": "to",
    "i": "call-id",
    "m": "contact",
    "c": "content-type",
    "l": "content-length",
}

CANONICAL_NAMES = {
    "via": "Via",
    "from": "From",
    "to": "To",
    "call-id": "Call-ID",
    "cseq": "CSeq",
    "contact": "Contact",
    "content-type": "Content-Type",
    "content-length": "Content-Length",
}

_REQUEST_LINE = re.compile(r"^([A-Za-z]+) (\S+) SIP/2\.0$")
_STATUS_LINE = re.compile(r"^SIP/2\.0 ([1-6]\d\d)(?: (.*))?$")
_NAME_ADDR = re.compile(r'^\s*(?:"([^"]*)"\s*|([^<"]*?)\s*)?<([^>]*)>\s*(.*)$')


@dataclass(frozen=True)
class NameAddr:
    """Значение From/To/Contact: URI, tag и прочие параметры"""
    uri: str
    tag: Optional[str] = None
    display: Optional[str] = None
    params: Tuple[str, ...] = ()

    def with_tag(self, tag: str) -> "NameAddr":
        return replace(self, tag=tag)

    def render(self) -> str:
        text = f"<{self.uri}>"
        if self.display:
            text = f'"{self.display}" {text}'
        for param in self.params:
            text += f";{param}"
        if self.tag is not None:
            text += f";tag={self.tag}"
        return text


@dataclass(frozen=True)
class CSeq:
    number: int
    method: str

    def render(self) -> str:
        return f"{self.number} {self.method}"


@dataclass(frozen=True)
class SipMessage:
    """SIP запрос или ответ"""
    kind: str
    call_id: str
    cseq: CSeq
    from_: NameAddr
    to: NameAddr
    method: Optional[str] = None
    request_uri: Optional[str] = None
    status_code: Optional[int] = None
    reason: Optional[str] = None
    via: Tuple[str, ...] = ()
    contact: Optional[NameAddr] = None
    content_type: Optional[str] = None
    body: Optional[str] = None
    extra_headers: Tuple[Tuple[str, str], ...] = ()

    @property
    def is_request(self) -> bool:
        return self.kind == "request"

    @property
    def content_length(self) -> int:
        return len(self.body.encode("utf-8")) if self.body else 0

    @property
    def dialog_key(self) -> "DialogKey":
        return DialogKey(self.call_id, self.from_.tag, self.to.tag)

    def summary(self) -> str:
        if self.is_request:
            return f"{self.method} {self.call_id}"
        return f"{self.status_code} {self.cseq.method} {self.call_id}"


@dataclass(frozen=True)
class DialogKey:
    """Ключ диалога: call-id, from-tag, to-tag (до ответа to-tag может отсутствовать)"""
    call_id: str
    from_tag: Optional[str] = None
    to_tag: Optional[str] = None

    def matches(self, other: "DialogKey") -> bool:
        if self.call_id != other.call_id:
            return False
        for mine, theirs in ((self.from_tag, other.from_tag), (self.to_tag, other.to_tag)):
            if mine is not None and theirs is not None and mine != theirs:
                return False
        return True


def _parse_name_addr(value: str, header: str) -> NameAddr:
    match = _NAME_ADDR.match(value)
    if match:
        display = match.group(1) if match.group(1) is not None else (match.group(2) or None)
        uri = match.group(3).strip()
        rest = match.group(4)
    else:
        # адрес без угловых скобок: параметры после ';' относятся к заголовку
        display = None
        uri, _, rest = value.strip().partition(";")
        rest = ";" + rest if rest else ""
        uri = uri.strip()
        if "<" in uri or ">" in uri:
            raise SipError(f"Некорректный адрес в заголовке {header}", value)
    if not uri:
        raise SipError(f"Пустой URI в заголовке {header}", value)

    tag = None
    params: List[str] = []
    for param in rest.split(";"):
        param = param.strip()
        if not param:
            continue
        key, eq, val = param.partition("=")
        if key.strip().lower() == "tag" and eq:
            tag = val.strip()
        else:
            params.append(param)
    return NameAddr(uri=uri, tag=tag, display=display or None, params=tuple(params))


def _parse_contact(value: str) -> NameAddr:
    """Contact: адрес с параметрами (expires, q) либо '*'"""
    if value.strip() == "*":
        return NameAddr("*")
    return _parse_name_addr(value, "Contact")


def _parse_cseq(value: str) -> CSeq:
    parts = value.split()
    if len(parts) != 2 or not parts[0].isdigit():
        raise SipError("Некорректный CSeq", value)
    method = parts[1].upper()
    if method not in METHODS:
        raise BadCSeqMethod("Неподдерживаемый метод в CSeq", value)
    return CSeq(int(parts[0]), method)


def _split_head(raw: bytes) -> Tuple[bytes, bytes]:
    for sep in (b"\r\n\r\n", b"\n\n"):
        idx = raw.find(sep)
        if idx >= 0:
            return raw[:idx], raw[idx + len(sep):]
    raise SipError("Нет пустой строки после заголовков")


def parse_message(raw: bytes) -> SipMessage:
    """Разбор SIP сообщения; любые ошибки возвращаются как SipError"""
    try:
        return _parse_message(raw)
    except SipError:
        raise
    except (ValueError, IndexError, UnicodeError) as e:
        raise SipError(f"Некорректное сообщение: {e}") from e


def _parse_message(raw: bytes) -> SipMessage:
    head, body_bytes = _split_head(raw)
    text = head.decode("utf-8")
    lines = text.replace("\r\n", "\n").split("\n")
    if not lines or not lines[0].strip():
        raise MalformedStartLine("Пустая стартовая строка", lines[0] if lines else "")

    start = lines[0].rstrip("\r")
    kind: str
    method = request_uri = reason = None
    status_code = None
    req = _REQUEST_LINE.match(start)
    if req:
        kind = "request"
        method = req.group(1).upper()
        request_uri = req.group(2)
        if method not in METHODS:
            raise MalformedStartLine("Неподдерживаемый метод", start)
    else:
        resp = _STATUS_LINE.match(start)
        if not resp:
            raise MalformedStartLine("Некорректная стартовая строка", start)
        kind = "response"
        status_code = int(resp.group(1))
        reason = resp.group(2) or REASONS.get(status_code, "")

    # свертка строк заголовков
    header_lines: List[str] = []
    for line in lines[1:]:
        line = line.rstrip("\r")
        if line[:1] in (" ", "\t") and header_lines:
            header_lines[-1] += " " + line.strip()
        elif line:
            header_lines.append(line)

    via: List[str] = []
    known: Dict[str, str] = {}
    extras: List[Tuple[str, str]] = []
    for line in header_lines:
        name, colon, value = line.partition(":")
        if not colon or not name.strip() or " " in name.strip():
            raise SipError("Некорректная строка заголовка", line)
        name = name.strip()
        value = value.strip()
        key = COMPACT_HEADERS.get(name.lower(), name.lower())
        if key == "via":
            via.extend(v.strip() for v in value.split(",") if v.strip())
        elif key in CANONICAL_NAMES:
            if key in known:
                raise SipError(f"Повтор заголовка {CANONICAL_NAMES[key]}", line)
            known[key] = value
        else:
            extras.append((name, value))

    for mandatory in ("call-id", "cseq", "from", "to"):
        if mandatory not in known:
            raise MissingMandatoryHeader(CANONICAL_NAMES[mandatory])

    call_id = known["call-id"]
    if not call_id:
        raise SipError("Пустой Call-ID", "Call-ID:")
    cseq = _parse_cseq(known["cseq"])
    if kind == "request" and cseq.method != method:
        raise BadCSeqMethod("Метод CSeq не совпадает с методом запроса", f"CSeq: {known['cseq']}")

    if "content-length" in known:
        cl_text = known["content-length"]
        if not cl_text.isdigit():
            raise BadContentLength("Некорректный Content-Length", f"Content-Length: {cl_text}")
        if int(cl_text) != len(body_bytes):
            raise BadContentLength(
                f"Content-Length {cl_text} не равен длине тела {len(body_bytes)}",
                f"Content-Length: {cl_text}",
            )
    body = body_bytes.decode("utf-8") if body_bytes else None

    contact = None
    if "contact" in known:
        contact = _parse_contact(known["contact"])

    return SipMessage(
        kind=kind,
        method=method,
        request_uri=request_uri,
        status_code=status_code,
        reason=reason,
        via=tuple(via),
        from_=_parse_name_addr(known["from"], "From"),
        to=_parse_name_addr(known["to"], "To"),
        call_id=call_id,
        cseq=cseq,
        contact=contact,
        content_type=known.get("content-type"),
        body=body,
        extra_headers=tuple(extras),
    )


def check_invariants(m: SipMessage):
    """Проверка инвариантов перед сериализацией"""
    if not m.call_id:
        raise InvariantViolation("Пустой Call-ID")
    if m.kind == "request":
        if m.method not in METHODS or not m.request_uri:
            raise InvariantViolation("Некорректный запрос", m.method)
        if m.cseq.method != m.method:
            raise InvariantViolation("Метод CSeq не совпадает с методом запроса", m.cseq.render())
    elif m.kind == "response":
        if m.status_code is None or not 100 <= m.status_code <= 699:
            raise InvariantViolation("Некорректный код ответа", str(m.status_code))
    else:
        raise InvariantViolation("Неизвестный вид сообщения", m.kind)


def serialize_message(m: SipMessage) -> bytes:
    """Сериализация в канонический порядок заголовков, CRLF"""
    check_invariants(m)
    if m.kind == "request":
        lines = [f"{m.method} {m.request_uri} {SIP_VERSION}"]
    else:
        reason = m.reason if m.reason is not None else REASONS.get(m.status_code, "")
        lines = [f"{SIP_VERSION} {m.status_code} {reason}".rstrip()]
    lines.extend(f"Via: {v}" for v in m.via)
    lines.append(f"From: {m.from_.render()}")
    lines.append(f"To: {m.to.render()}")
    lines.append(f"Call-ID: {m.call_id}")
    lines.append(f"CSeq: {m.cseq.render()}")
    if m.contact:
        lines.append(f"Contact: {'*' if m.contact.uri == '*' else m.contact.render()}")
    if m.content_type:
        lines.append(f"Content-Type: {m.content_type}")
    lines.append(f"Content-Length: {m.content_length}")
    lines.extend(f"{name}: {value}" for name, value in m.extra_headers)
    head = "\r\n".join(lines) + "\r\n\r\n"
    return head.encode("utf-8") + (m.body.encode("utf-8") if m.body else b"")


def make_tag(*parts: str) -> str:
    """Детерминированный tag для воспроизводимых прогонов"""
    return hashlib.blake2s("|".join(parts).encode("utf-8"), digest_size=4).hexdigest()


def build_request(
    method: str,
    request_uri: str,
    from_uri: str,
    from_tag: str,
    to_uri: str,
    call_id: str,
    cseq: int,
    via: str,
    to_tag: Optional[str] = None,
    contact: Optional[str] = None,
    body: Optional[str] = None,
    content_type: Optional[str] = None,
) -> SipMessage:
    return SipMessage(
        kind="request",
        method=method,
        request_uri=request_uri,
        via=(via,),
        from_=NameAddr(from_uri, from_tag),
        to=NameAddr(to_uri, to_tag),
        call_id=call_id,
        cseq=CSeq(cseq, method),
        contact=NameAddr(contact) if contact else None,
        content_type=content_type if body else None,
        body=body,
    )


def build_response(req: SipMessage, status: int, sdp: Optional[SdpBody] = None, to_tag: Optional[str] = None) -> SipMessage:
    """Ответ на запрос: копирует call-id, cseq, from, to, via"""
    if not req.is_request:
        raise NotARequest("Ответ можно построить только на запрос", req.summary())
    to = req.to
    if status >= 180 and to.tag is None:
        to = to.with_tag(to_tag or make_tag(req.call_id, req.from_.tag or "", "uas"))
    body = content_type = None
    if sdp is not None:
        body = serialize_sdp(sdp)
        content_type = "application/sdp"
    return SipMessage(
        kind="response",
        status_code=status,
        reason=REASONS.get(status, ""),
        via=req.via,
        from_=req.from_,
        to=to,
        call_id=req.call_id,
        cseq=req.cseq,
        content_type=content_type,
        body=body,
    )
