"""
Исключения Unity
"""

from typing import Optional


class UnityError(Exception):
    """Базовое исключение"""


# --- SIP / SDP ---

class SipError(UnityError):
    """Ошибка разбора или сборки SIP сообщения"""

    def __init__(self, message: str, line: Optional[str] = None):
        self.line = line
        if line is not None:
            message = f"{message}: {line!r}"
        super().__init__(message)


class MalformedStartLine(SipError):
    pass


class MissingMandatoryHeader(SipError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Отсутствует обязательный заголовок {name}")


class BadContentLength(SipError):
    pass


class BadCSeqMethod(SipError):
    pass


class InvariantViolation(SipError):
    pass


class NotARequest(SipError):
    pass


class SdpError(UnityError):
    pass


class MissingMediaLine(SdpError):
    pass


class UnknownCodec(SdpError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Неизвестный кодек: {name}")


class NoCommonCodec(SdpError):
    pass


# --- ядро симуляции ---

class KernelError(UnityError):
    pass


class SchedulingInPast(KernelError):
    pass


class PouchDead(KernelError):
    def __init__(self, pouch_id: str):
        self.pouch_id = pouch_id
        super().__init__(f"Pouch {pouch_id} недоступен")


class UnknownEndpoint(KernelError):
    pass


class WindowTooLarge(KernelError):
    pass


# --- CMW / IDS / NSS ---

class CmwError(UnityError):
    pass


class PinningViolation(CmwError):
    pass


class ServiceUnknown(CmwError):
    pass


class NoLiveInstance(CmwError):
    pass


class DuplicateCmw(CmwError):
    pass


class IdsError(UnityError):
    pass


class UnknownTopic(IdsError):
    pass


class NssError(UnityError):
    pass


class NoEligiblePouch(NssError):
    pass


class UnknownPouch(NssError):
    pass


# --- HSS ---

class ProfileNotFound(UnityError):
    def __init__(self, impu: str):
        self.impu = impu
        super().__init__(f"Профиль не найден: {impu}")


class ServiceNotSubscribed(UnityError):
    def __init__(self, impu: str, service: str):
        self.impu = impu
        self.service = service
        super().__init__(f"Услуга {service} не подключена у {impu}")


class CallStateError(UnityError):
    """Недопустимый переход состояния диалога"""
    pass


# --- конфигурация ---

class DescriptorError(UnityError):
    pass


class DescriptorSyntaxError(DescriptorError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"Строка {line_no}: {message}")


class UnknownUnitType(CmwError, DescriptorError):
    def __init__(self, unit_type: str):
        self.unit_type = unit_type
        super().__init__(f"Неизвестный тип юнита: {unit_type}")


class UncoveredUnitType(DescriptorError):
    pass


class PoolBoundsError(DescriptorError):
    pass


class ConfigError(UnityError):
    pass


class UnknownConfigKey(ConfigError):
    pass


class ScenarioError(UnityError):
    pass


class ScenarioSyntaxError(ScenarioError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"Строка {line_no}: {message}")


class NegativeRate(ScenarioError):
    pass


class MetricsError(UnityError):
    pass


class EmptyWindow(MetricsError):
    pass


class ReportError(UnityError):
    pass


class IoError(ReportError):
    pass


class ConservationError(UnityError):
    """Нарушение законов сохранения по итогам прогона"""
