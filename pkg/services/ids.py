"""
Information Distribution Service (publish/subscribe) и Log Gathering Service
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

from errors import UnknownTopic
from services.kernel import Kernel, us_to_ms
from utils.formatters import natural_key

RESOURCE_UTILIZATION = "resource-utilization"
RESOLVING_UPDATES = "resolving-updates"
SYSTEM_STATUS = "system-status"
GLOBAL_CONFIG = "global-config"
LOG_ENTRIES = "log-entries"

TOPICS = (RESOURCE_UTILIZATION, RESOLVING_UPDATES, SYSTEM_STATUS, GLOBAL_CONFIG, LOG_ENTRIES)

LOG_COLUMNS = ("t_ms", "pouch_id", "unit", "severity", "call_id", "text")


@dataclass(frozen=True)
class PouchStats:
    pouch_id: str
    t_us: int
    utilization: float
    unit_count: int
    dead_letters: int


@dataclass(frozen=True)
class SystemStatus:
    kind: str  # pouch-up | pouch-down | pouch-removed
    pouch_id: str


@dataclass(frozen=True)
class ConfigUpdate:
    key: str
    value: Any


@dataclass(frozen=True)
class LogEntry:
    t_us: int
    pouch_id: str
    unit: str
    severity: str
    call_id: str
    text: str


@dataclass
class Subscription:
    sub_id: int
    topic: str
    pouch_id: Optional[str]
    callback: Callable[[Any], None]
    active: bool = True
    # время последней доставки: подписчик получает сообщения в порядке публикации
    last_us: int = 0


class InformationDistributionService:
    """Шина publish/subscribe; сообщения без хранения и повтора"""

    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self.logger = logging.getLogger(__name__)
        self.topics = set(TOPICS)
        self._subscribers: Dict[str, List[Subscription]] = {t: [] for t in TOPICS}
        self._next_id = 0
        self.published: Dict[str, int] = {t: 0 for t in TOPICS}

    def register_topic(self, topic: str):
        if topic not in self.topics:
            self.topics.add(topic)
            self._subscribers[topic] = []
            self.published[topic] = 0

    def _check(self, topic: str):
        if topic not in self.topics:
            raise UnknownTopic(f"Неизвестный топик: {topic}")

    def subscribe(self, topic: str, callback: Callable[[Any], None],
                  pouch_id: Optional[str] = None) -> int:
        """Подписка; pouch_id=None: инфраструктурный подписчик вне pouch"""
        self._check(topic)
        self._next_id += 1
        self._subscribers[topic].append(Subscription(self._next_id, topic, pouch_id, callback))
        return self._next_id

    def unsubscribe(self, sub_id: int):
        for subs in self._subscribers.values():
            for sub in subs:
                if sub.sub_id == sub_id:
                    sub.active = False
            subs[:] = [s for s in subs if s.active]

    def publish(self, topic: str, message: Any, source: Optional[str] = None) -> int:
        """Разослать текущим подписчикам; возвращает число доставок"""
        self._check(topic)
        self.published[topic] += 1
        deliveries = 0
        for sub in list(self._subscribers[topic]):
            fire = max(self.kernel.now_us + self._delay(source, sub.pouch_id), sub.last_us)
            sub.last_us = fire
            target = sub.pouch_id or "kernel"
            self.kernel.call_at(fire, self._deliver(sub, message), target=target)
            deliveries += 1
        return deliveries

    def _delay(self, source: Optional[str], dest: Optional[str]) -> int:
        if source is None and dest is None:
            return 0
        if source is None or dest is None:
            return self.kernel.inter_us
        return self.kernel.delay_us(source, dest)

    @staticmethod
    def _deliver(sub: Subscription, message: Any) -> Callable[[], None]:
        def deliver():
            if sub.active:
                sub.callback(message)
        return deliver


class LogGatheringService:
    """Собирает записи журнала со всех pouch, сортирует и сводит в один файл"""

    def __init__(self, ids: Optional[InformationDistributionService] = None):
        self.logger = logging.getLogger(__name__)
        self.entries: List[Tuple[LogEntry, int]] = []
        self._arrival = 0
        if ids is not None:
            ids.subscribe(LOG_ENTRIES, self.collect)

    def collect(self, entry: LogEntry):
        self._arrival += 1
        self.entries.append((entry, self._arrival))

    def consolidated(self) -> List[LogEntry]:
        return consolidate_logs(e for e, _ in sorted(self.entries, key=lambda x: x[1]))


def consolidate_logs(entries: Iterable[LogEntry]) -> List[LogEntry]:
    """Порядок: (время, pouch-id, порядок поступления)"""
    indexed = [(e, i) for i, e in enumerate(entries)]
    indexed.sort(key=lambda x: (x[0].t_us, natural_key(x[0].pouch_id), x[1]))
    return [e for e, _ in indexed]


def format_log_tsv(entries: Iterable[LogEntry]) -> str:
    lines = ["\t".join(LOG_COLUMNS)]
    for e in entries:
        text = e.text.replace("\t", " ").replace("\n", " ")
        lines.append(f"{us_to_ms(e.t_us):.3f}\t{e.pouch_id}\t{e.unit}\t{e.severity}\t{e.call_id}\t{text}")
    return "\n".join(lines) + "\n"
