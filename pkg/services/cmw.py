"""
Cloud Middleware: по одному экземпляру на pouch.

Создает и завершает юниты, доставляет сообщения между ними независимо от
расположения, разрешает имена сервисов и публикует статистику pouch в IDS.
"""

import logging
from collections import Counter, deque
from dataclasses import dataclass
from typing import Any, Callable, Deque, Dict, List, Optional, Set, Tuple

from errors import (
    DuplicateCmw,
    NoLiveInstance,
    PinningViolation,
    PouchDead,
    ServiceUnknown,
    UnityError,
    UnknownUnitType,
)
from services.ids import (
    GLOBAL_CONFIG,
    LOG_ENTRIES,
    RESOLVING_UPDATES,
    RESOURCE_UTILIZATION,
    SYSTEM_STATUS,
    ConfigUpdate,
    InformationDistributionService,
    LogEntry,
    PouchStats,
    SystemStatus,
)
from services.kernel import Kernel, PouchHost, ms_to_us

logger = logging.getLogger(__name__)

SEVERITIES = ("debug", "info", "warning", "error")

DEFAULT_CONFIG: Dict[str, Any] = {
    "supported-codecs": ("PCMU", "PCMA", "G729", "TELEPHONE-EVENT"),
    "log-level": "info",
    "conference-digits": "*3",
    "monitoring-interval-ms": 1000.0,
}


@dataclass(frozen=True)
class UnitAddress:
    unit_type: str
    instance_id: int
    pouch_id: str

    def __str__(self) -> str:
        return f"{self.unit_type}#{self.instance_id}@{self.pouch_id}"


@dataclass(frozen=True)
class PeerDown:
    """Связанный юнит пропал вместе со своим pouch"""
    peer: UnitAddress
    call_id: str = ""


@dataclass(frozen=True)
class ResolvingUpdate:
    action: str  # add | remove | snapshot
    service_key: str = ""
    address: Optional[UnitAddress] = None
    table: Tuple[Tuple[str, Tuple[UnitAddress, ...]], ...] = ()
    for_pouch: Optional[str] = None


@dataclass(frozen=True)
class TraceRecord:
    t_us: int
    sender: Optional[UnitAddress]
    dest: Any  # UnitAddress или конечная точка UA
    kind: str
    call_id: str


@dataclass
class Envelope:
    sender: Optional[UnitAddress]
    payload: Any
    enqueued_us: int
    settled: bool = False


class Mailbox:
    """Очередь принятых, но еще не обработанных сообщений юнита"""

    def __init__(self, owner: UnitAddress):
        self.owner = owner
        self.pending: Deque[Envelope] = deque()

    def put(self, envelope: Envelope):
        self.pending.append(envelope)

    def take(self, envelope: Envelope):
        if self.pending and self.pending[0] is envelope:
            self.pending.popleft()
        else:
            self.pending.remove(envelope)

    def drain(self) -> List[Envelope]:
        items = list(self.pending)
        self.pending.clear()
        return items

    def __len__(self) -> int:
        return len(self.pending)


class ResolveTable:
    """Локальная копия таблицы разрешения имен сервисов"""

    def __init__(self):
        self.entries: Dict[str, List[UnitAddress]] = {}

    def apply(self, update: ResolvingUpdate):
        if update.action == "add":
            instances = self.entries.setdefault(update.service_key, [])
            if update.address not in instances:
                instances.append(update.address)
        elif update.action == "remove":
            instances = self.entries.get(update.service_key)
            if instances and update.address in instances:
                instances.remove(update.address)
        elif update.action == "snapshot":
            self.entries = {key: list(addrs) for key, addrs in update.table}

    def purge_pouch(self, pouch_id: str):
        for key, instances in self.entries.items():
            self.entries[key] = [a for a in instances if a.pouch_id != pouch_id]


class CmwFabric:
    """Все экземпляры CMW одной системы и общие счетчики"""

    def __init__(self, kernel: Kernel, ids: InformationDistributionService,
                 costs=None, config: Optional[Dict[str, Any]] = None,
                 factories: Optional[Dict[str, Callable[..., Any]]] = None,
                 pinning: Optional[Dict[str, Set[str]]] = None,
                 record_trace: bool = False):
        self.kernel = kernel
        self.ids = ids
        self.costs = costs
        self.config = dict(DEFAULT_CONFIG)
        if config:
            self.config.update(config)
        self.factories: Dict[str, Callable[..., Any]] = dict(factories or {})
        # тип юнита -> разрешенные pouch; None означает отсутствие ограничений
        self.pinning = pinning
        self.cmws: Dict[str, "CmwInstance"] = {}
        self.directory: Dict[str, List[UnitAddress]] = {}
        self.spawned: Counter = Counter()
        self.terminated: Counter = Counter()
        self.lost: Counter = Counter()
        self.messages_sent = 0
        self.messages_handled = 0
        self.dead_letters = 0
        self.trace: Optional[List[TraceRecord]] = [] if record_trace else None
        # внешние приемники: метрики, эмуляция UA
        self.metrics = None
        self.ua_gateway: Optional[Callable[[str, bytes], None]] = None
        # (адрес, порт) из SDP -> юнит M
        self.media_endpoints: Dict[Tuple[str, int], UnitAddress] = {}
        self._next_instance = 0
        self._cost_cache: Dict[str, int] = {}

    # --- экземпляры CMW ---

    def create_cmw(self, pouch: PouchHost, request_snapshot: bool = False) -> "CmwInstance":
        if pouch.pouch_id in self.cmws:
            raise DuplicateCmw(f"На pouch {pouch.pouch_id} уже работает CMW")
        cmw = CmwInstance(self, pouch)
        self.cmws[pouch.pouch_id] = cmw
        if request_snapshot:
            table = tuple((key, tuple(addrs)) for key, addrs in sorted(self.directory.items()))
            self.ids.publish(RESOLVING_UPDATES,
                             ResolvingUpdate("snapshot", table=table, for_pouch=pouch.pouch_id))
        return cmw

    def remove_cmw(self, pouch_id: str, lost: bool):
        """Остановить CMW вместе с pouch; живые юниты считаются потерянными"""
        cmw = self.cmws.pop(pouch_id, None)
        if cmw is None:
            return
        for unit in list(cmw.units.values()):
            if lost:
                self.lost[unit.address.unit_type] += 1
            cmw.discard_unit(unit.address, lost=lost)
        cmw.shutdown()

    def cmw_for(self, pouch_id: str) -> Optional["CmwInstance"]:
        return self.cmws.get(pouch_id)

    def cost_us(self, name: str) -> int:
        """Стоимость из модели (поле <name>_ms) в микросекундах"""
        cached = self._cost_cache.get(name)
        if cached is None:
            cached = ms_to_us(getattr(self.costs, f"{name}_ms"))
            self._cost_cache[name] = cached
        return cached

    def next_instance_id(self) -> int:
        self._next_instance += 1
        return self._next_instance

    def lookup(self, service_key: str) -> List[UnitAddress]:
        return list(self.directory.get(service_key, ()))

    def unit(self, address: UnitAddress):
        cmw = self.cmws.get(address.pouch_id)
        return cmw.units.get(address.instance_id) if cmw else None

    def live_units(self, unit_types=None) -> List[UnitAddress]:
        result = []
        for cmw in self.cmws.values():
            for unit in cmw.units.values():
                if unit_types is None or unit.address.unit_type in unit_types:
                    result.append(unit.address)
        return result

    # --- доставка ---

    def send(self, sender: Optional[UnitAddress], dest: UnitAddress, payload: Any,
             src_endpoint: Optional[str] = None):
        """Доставка сообщения независимо от расположения отправителя и получателя"""
        self.messages_sent += 1
        if self.trace is not None:
            self.trace.append(TraceRecord(self.kernel.now_us, sender, dest,
                                          type(payload).__name__, getattr(payload, "call_id", "")))
        source = src_endpoint or (sender.pouch_id if sender else dest.pouch_id)
        self.kernel.transmit(source, dest.pouch_id,
                             lambda: self._arrive(sender, dest, payload),
                             on_drop=lambda: self._dead_letter(dest, payload))

    def trace_external(self, sender: UnitAddress, endpoint: str, kind: str, call_id: str):
        if self.trace is not None:
            self.trace.append(TraceRecord(self.kernel.now_us, sender, endpoint, kind, call_id))

    def _arrive(self, sender: Optional[UnitAddress], dest: UnitAddress, payload: Any):
        cmw = self.cmws.get(dest.pouch_id)
        unit = cmw.units.get(dest.instance_id) if cmw else None
        if unit is None:
            self._dead_letter(dest, payload)
            return
        cmw.enqueue(unit, sender, payload)

    def _dead_letter(self, dest: UnitAddress, payload: Any):
        self.dead_letters += 1
        cmw = self.cmws.get(dest.pouch_id)
        if cmw is not None:
            cmw.dead_letters += 1
        logger.debug(f"Недоставленное сообщение {type(payload).__name__} для {dest}")


class CmwInstance:
    """CMW одного pouch"""

    def __init__(self, fabric: CmwFabric, pouch: PouchHost):
        self.fabric = fabric
        self.kernel = fabric.kernel
        self.ids = fabric.ids
        self.pouch = pouch
        self.pouch_id = pouch.pouch_id
        self.logger = logging.getLogger(__name__)
        self.units: Dict[int, Any] = {}
        self.mailboxes: Dict[int, Mailbox] = {}
        self.unit_counts: Counter = Counter()
        # общая сетка кадров юнитов M этого pouch, создается первым M
        self.media_clock: Optional[Any] = None
        self.resolve_table = ResolveTable()
        self.config: Dict[str, Any] = dict(fabric.config)
        self.dead_pouches: Set[str] = set()
        self.dead_letters = 0
        self.alive = True
        self._round_robin: Dict[str, int] = {}
        self._links: Dict[str, List[Tuple[UnitAddress, UnitAddress]]] = {}
        self._timers: Set[int] = set()
        self._subscriptions = [
            self.ids.subscribe(RESOLVING_UPDATES, self._on_resolving_update, self.pouch_id),
            self.ids.subscribe(SYSTEM_STATUS, self._on_system_status, self.pouch_id),
            self.ids.subscribe(GLOBAL_CONFIG, self._on_config, self.pouch_id),
        ]
        self._schedule_monitoring()

    def __repr__(self) -> str:
        return f"CmwInstance({self.pouch_id}, units={len(self.units)})"

    # --- жизненный цикл юнитов ---

    def spawn_unit(self, pouch_id: str, unit_type: str, **init: Any) -> UnitAddress:
        """Создать юнит на pouch_id; стоимость создания ставится в очередь его CPU"""
        fabric = self.fabric
        target = fabric.cmws.get(pouch_id)
        if target is None or not target.pouch.alive:
            raise PouchDead(pouch_id)
        factory = fabric.factories.get(unit_type)
        if factory is None:
            raise UnknownUnitType(unit_type)
        if fabric.pinning is not None and pouch_id not in fabric.pinning.get(unit_type, ()):
            raise PinningViolation(f"{unit_type} не может размещаться на {pouch_id}")

        address = UnitAddress(unit_type, fabric.next_instance_id(), pouch_id)
        unit = factory(address, target, **init)
        target.units[address.instance_id] = unit
        target.mailboxes[address.instance_id] = Mailbox(address)
        target.unit_counts[unit_type] += 1
        fabric.spawned[unit_type] += 1
        self.kernel.execute_work(target.pouch, fabric.cost_us("spawn"))

        service_key = getattr(unit, "service_key", None)
        if service_key:
            fabric.directory.setdefault(service_key, []).append(address)
            self.ids.publish(RESOLVING_UPDATES, ResolvingUpdate("add", service_key, address),
                             source=pouch_id)
        unit.on_start()
        return address

    def terminate_unit(self, address: UnitAddress):
        """Завершение юнита; повторный вызов ничего не делает"""
        target = self.fabric.cmws.get(address.pouch_id)
        if target is None or address.instance_id not in target.units:
            return
        target.discard_unit(address, lost=False)

    def discard_unit(self, address: UnitAddress, lost: bool):
        unit = self.units.pop(address.instance_id, None)
        if unit is None:
            return
        mailbox = self.mailboxes.pop(address.instance_id)
        self.unit_counts[address.unit_type] -= 1
        for envelope in mailbox.drain():
            envelope.settled = True
            self.fabric._dead_letter(address, envelope.payload)
        self.fabric.terminated[address.unit_type] += 1
        unit.alive = False
        service_key = getattr(unit, "service_key", None)
        if service_key:
            instances = self.fabric.directory.get(service_key, [])
            if address in instances:
                instances.remove(address)
            if not lost:
                self.ids.publish(RESOLVING_UPDATES, ResolvingUpdate("remove", service_key, address),
                                 source=self.pouch_id)
        unit.on_terminate()

    # --- сообщения ---

    def send_to_unit(self, sender: Optional[UnitAddress], dest: UnitAddress, payload: Any):
        self.fabric.send(sender, dest, payload)

    def enqueue(self, unit, sender: Optional[UnitAddress], payload: Any):
        mailbox = self.mailboxes[unit.address.instance_id]
        envelope = Envelope(sender, payload, self.kernel.now_us)
        mailbox.put(envelope)

        def run():
            if envelope.settled:
                return
            envelope.settled = True
            mailbox.take(envelope)
            self.fabric.messages_handled += 1
            unit.received_us = envelope.enqueued_us
            self._dispatch(unit, sender, payload)

        def drop():
            if not envelope.settled:
                envelope.settled = True
                self.fabric._dead_letter(unit.address, payload)

        self.kernel.execute_work(self.pouch, unit.cost_us(payload), completion=run, on_drop=drop)

    def _dispatch(self, unit, sender: Optional[UnitAddress], payload: Any):
        try:
            unit.handle(sender, payload)
        except UnityError as e:
            call_id = getattr(payload, "call_id", "")
            self.log(unit.address, "error", call_id, f"{type(e).__name__}: {e}")
            self.logger.error(f"Ошибка обработчика {unit.address}: {e}")

    def start_timer(self, address: UnitAddress, delay_us: int, payload: Any) -> int:
        """Таймер юнита: по срабатыванию payload обрабатывается как сообщение самому себе"""

        def fire():
            self._timers.discard(event_id)
            unit = self.units.get(address.instance_id)
            if unit is None:
                return

            def run():
                if unit.alive:
                    self._dispatch(unit, None, payload)

            self.kernel.execute_work(self.pouch, unit.cost_us(payload), completion=run)

        event_id = self.kernel.call_later(delay_us, fire, target=self.pouch_id)
        self._timers.add(event_id)
        return event_id

    def cancel_timer(self, event_id: Optional[int]):
        if event_id is not None and event_id in self._timers:
            self._timers.discard(event_id)
            self.kernel.cancel(event_id)

    # --- разрешение имен ---

    def resolve(self, service_key: str) -> UnitAddress:
        """Живой экземпляр сервиса; при нескольких выбор по кругу"""
        if service_key not in self.resolve_table.entries:
            raise ServiceUnknown(f"Сервис {service_key} не зарегистрирован")
        instances = [a for a in self.resolve_table.entries[service_key]
                     if a.pouch_id not in self.dead_pouches]
        if not instances:
            raise NoLiveInstance(f"Нет живых экземпляров {service_key}")
        index = self._round_robin.get(service_key, 0)
        self._round_robin[service_key] = index + 1
        return instances[index % len(instances)]

    def _on_resolving_update(self, update: ResolvingUpdate):
        if update.action == "snapshot" and update.for_pouch != self.pouch_id:
            return
        self.resolve_table.apply(update)

    # --- связи и отказы ---

    def link(self, watcher: UnitAddress, watched: UnitAddress):
        """watcher получит PeerDown, если pouch юнита watched откажет"""
        if watched.pouch_id == watcher.pouch_id:
            return
        self._links.setdefault(watched.pouch_id, []).append((watcher, watched))

    def _on_system_status(self, status: SystemStatus):
        if status.kind == "pouch-up":
            self.dead_pouches.discard(status.pouch_id)
            return
        self.dead_pouches.add(status.pouch_id)
        self.resolve_table.purge_pouch(status.pouch_id)
        for watcher, watched in self._links.pop(status.pouch_id, []):
            if watcher.instance_id in self.units:
                self.fabric.send(None, watcher, PeerDown(watched), src_endpoint=self.pouch_id)

    # --- конфигурация, мониторинг, журнал ---

    def _on_config(self, update: ConfigUpdate):
        self.config[update.key] = update.value

    def _monitoring_interval_us(self) -> int:
        return ms_to_us(float(self.config["monitoring-interval-ms"]))

    def _schedule_monitoring(self):
        self.kernel.call_later(self._monitoring_interval_us(), self.publish_pouch_stats,
                               target=self.pouch_id)

    def publish_pouch_stats(self):
        if not self.alive:
            return
        interval = self._monitoring_interval_us()
        window = min(interval, self.kernel.now_us, self.kernel.retention_us)
        stats = PouchStats(
            pouch_id=self.pouch_id,
            t_us=self.kernel.now_us,
            utilization=self.kernel.cpu_utilization(self.pouch, window) if window > 0 else 0.0,
            unit_count=len(self.units),
            dead_letters=self.dead_letters,
        )
        self.ids.publish(RESOURCE_UTILIZATION, stats, source=self.pouch_id)
        self._schedule_monitoring()

    def log(self, address: UnitAddress, severity: str, call_id: str, text: str):
        threshold = SEVERITIES.index(self.config.get("log-level", "info"))
        if SEVERITIES.index(severity) < threshold:
            return
        entry = LogEntry(self.kernel.now_us, self.pouch_id, str(address), severity, call_id, text)
        self.ids.publish(LOG_ENTRIES, entry, source=self.pouch_id)

    def shutdown(self):
        self.alive = False
        for event_id in list(self._timers):
            self.kernel.cancel(event_id)
        self._timers.clear()
        for sub_id in self._subscriptions:
            self.ids.unsubscribe(sub_id)
