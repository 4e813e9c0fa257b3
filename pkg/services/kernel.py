"""
Ядро дискретно-событийной симуляции: виртуальное время, модель одноядерного
CPU для каждого Pouch и модель сети между Pouch
"""

import hashlib
import heapq
import logging
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, List, Optional, Sequence, Set, Tuple

from pydantic import BaseModel, Field

from errors import PouchDead, SchedulingInPast, UnknownEndpoint, WindowTooLarge

US_PER_MS = 1000
KERNEL = "kernel"
UA_PREFIX = "UA:"


def ms_to_us(ms: float) -> int:
    """Миллисекунды -> целые микросекунды (фиксированная точка)"""
    return int(round(ms * US_PER_MS))


def us_to_ms(us: int) -> float:
    return us / US_PER_MS


class NetworkModel(BaseModel):
    """Задержки сети, мс"""
    intra_ms: float = Field(default=0.0, ge=0)
    inter_ms: float = Field(default=0.5, ge=0)
    ua_ms: float = Field(default=1.0, ge=0)


class VirtualClock:
    """Виртуальные часы, микросекунды"""

    def __init__(self):
        self.now_us = 0

    @property
    def now_ms(self) -> float:
        return us_to_ms(self.now_us)

    def advance(self, t_us: int):
        if t_us < self.now_us:
            raise SchedulingInPast(f"Откат времени: {t_us} < {self.now_us}")
        self.now_us = t_us


@dataclass
class Event:
    fire_us: int
    seq: int
    target: str = KERNEL
    payload: Optional[Callable[[], Any]] = None
    on_drop: Optional[Callable[[], Any]] = None


@dataclass
class PouchHost:
    """Вычислительный ресурс: одноядерная FIFO-очередь со скоростью speed"""
    pouch_id: str
    pool_id: str
    speed: float = 1.0
    ordinal: int = 0
    busy_until_us: int = 0
    cumulative_busy_us: int = 0
    alive: bool = True
    created_us: int = 0
    busy_intervals: Deque[Tuple[int, int]] = field(default_factory=deque, repr=False)


@dataclass
class RunStats:
    events_processed: int = 0
    dropped_deliveries: int = 0
    now_us: int = 0


class RandomStream:
    """Именованные независимые под-потоки случайных чисел от одного seed"""

    def __init__(self, seed: int):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self._streams: Dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        if name not in self._streams:
            digest = hashlib.sha256(f"{self.seed}:{name}".encode("utf-8")).digest()
            self._streams[name] = random.Random(int.from_bytes(digest[:8], "big"))
        return self._streams[name]


class Kernel:
    """Событийный цикл одного экземпляра симуляции"""

    def __init__(self, network: Optional[NetworkModel] = None, seed: int = 0,
                 utilization_retention_ms: float = 60000.0):
        self.logger = logging.getLogger(__name__)
        self.network = network or NetworkModel()
        self.clock = VirtualClock()
        self.random = RandomStream(seed)
        self.pouches: Dict[str, PouchHost] = {}
        self.user_agents: Set[str] = set()
        self.events_processed = 0
        self.dropped_deliveries = 0
        self.total_work_us = 0
        self._queue: list = []
        self._seq = 0
        self._cancelled: Set[int] = set()
        self._pending: Set[int] = set()
        self._retention_us = ms_to_us(utilization_retention_ms)
        self._intra_us = ms_to_us(self.network.intra_ms)
        self._inter_us = ms_to_us(self.network.inter_ms)
        self._ua_us = ms_to_us(self.network.ua_ms)

    @property
    def now_us(self) -> int:
        return self.clock.now_us

    @property
    def retention_us(self) -> int:
        return self._retention_us

    @property
    def inter_us(self) -> int:
        return self._inter_us

    # --- ресурсы ---

    def add_pouch(self, pouch_id: str, pool_id: str, speed: float, ordinal: int = 0) -> PouchHost:
        pouch = PouchHost(pouch_id=pouch_id, pool_id=pool_id, speed=speed,
                          ordinal=ordinal, created_us=self.now_us)
        self.pouches[pouch_id] = pouch
        self.logger.debug(f"Добавлен pouch {pouch_id} (пул {pool_id}, скорость {speed})")
        return pouch

    def kill_pouch(self, pouch_id: str):
        pouch = self._pouch(pouch_id)
        pouch.alive = False
        self.logger.info(f"Pouch {pouch_id} остановлен в t={self.clock.now_ms} мс")

    def add_user_agent(self, ua_id: str) -> str:
        endpoint = ua_id if ua_id.startswith(UA_PREFIX) else UA_PREFIX + ua_id
        self.user_agents.add(endpoint)
        return endpoint

    def _pouch(self, pouch_id: str) -> PouchHost:
        pouch = self.pouches.get(pouch_id)
        if pouch is None:
            raise UnknownEndpoint(f"Неизвестный pouch: {pouch_id}")
        return pouch

    # --- события ---

    def schedule(self, event: Event) -> int:
        """Поставить событие в очередь; порядковый номер назначает ядро"""
        if event.fire_us < self.now_us:
            raise SchedulingInPast(f"Событие на {event.fire_us} мкс раньше текущего {self.now_us}")
        self._seq += 1
        event.seq = self._seq
        self._pending.add(event.seq)
        # в куче кортежи (время, порядковый номер, событие)
        heapq.heappush(self._queue, (event.fire_us, event.seq, event))
        return event.seq

    def call_at(self, fire_us: int, payload: Callable[[], Any], target: str = KERNEL,
                on_drop: Optional[Callable[[], Any]] = None) -> int:
        return self.schedule(Event(fire_us=fire_us, seq=0, target=target,
                                   payload=payload, on_drop=on_drop))

    def call_later(self, delay_us: int, payload: Callable[[], Any], target: str = KERNEL) -> int:
        return self.call_at(self.now_us + delay_us, payload, target)

    def cancel(self, event_id: int):
        # отмена уже сработавшего события ничего не делает
        if event_id in self._pending:
            self._cancelled.add(event_id)

    def run_until(self, t_end_us: int) -> RunStats:
        """Обработать все события с fire_us <= t_end_us"""
        processed = 0
        queue = self._queue
        while queue and queue[0][0] <= t_end_us:
            event = heapq.heappop(queue)[2]
            self._pending.discard(event.seq)
            if event.seq in self._cancelled:
                self._cancelled.discard(event.seq)
                continue
            self.clock.advance(event.fire_us)
            if event.target != KERNEL and not event.target.startswith(UA_PREFIX):
                pouch = self.pouches.get(event.target)
                if pouch is not None and not pouch.alive:
                    self.dropped_deliveries += 1
                    if event.on_drop is not None:
                        event.on_drop()
                    continue
            processed += 1
            if event.payload is not None:
                event.payload()
        if t_end_us > self.now_us:
            self.clock.advance(t_end_us)
        self.events_processed += processed
        return RunStats(events_processed=processed,
                        dropped_deliveries=self.dropped_deliveries,
                        now_us=self.now_us)

    @property
    def pending_events(self) -> int:
        return len(self._queue)

    # --- CPU ---

    def execute_work(self, pouch: PouchHost, cost_us: int,
                     completion: Optional[Callable[[], Any]] = None,
                     on_drop: Optional[Callable[[], Any]] = None) -> int:
        """Поставить работу в FIFO-очередь pouch; вернуть время завершения"""
        if not pouch.alive:
            raise PouchDead(pouch.pouch_id)
        if cost_us < 0:
            raise ValueError(f"Отрицательная стоимость работы: {cost_us}")
        duration = int(round(cost_us / pouch.speed))
        start = max(self.now_us, pouch.busy_until_us)
        end = start + duration
        self._occupy(pouch, start, end)
        if completion is not None:
            self.call_at(end, completion, target=pouch.pouch_id, on_drop=on_drop)
        return end

    def execute_batch(self, pouch: PouchHost, costs_us: Sequence[int]) -> List[int]:
        """Несколько работ подряд без событий завершения; времена завершения каждой"""
        if not pouch.alive:
            raise PouchDead(pouch.pouch_id)
        start = end = max(self.now_us, pouch.busy_until_us)
        ends = []
        speed = pouch.speed
        for cost_us in costs_us:
            if cost_us < 0:
                raise ValueError(f"Отрицательная стоимость работы: {cost_us}")
            end += int(round(cost_us / speed))
            ends.append(end)
        self._occupy(pouch, start, end)
        return ends

    def _occupy(self, pouch: PouchHost, start: int, end: int):
        duration = end - start
        pouch.busy_until_us = end
        pouch.cumulative_busy_us += duration
        self.total_work_us += duration
        if duration:
            intervals = pouch.busy_intervals
            if intervals and intervals[-1][1] == start:
                intervals[-1] = (intervals[-1][0], end)
            else:
                intervals.append((start, end))
            horizon = self.now_us - self._retention_us
            while intervals and intervals[0][1] < horizon:
                intervals.popleft()

    def cpu_utilization(self, pouch: PouchHost, window_us: int) -> float:
        """Доля занятого времени pouch в окне [now - window, now]"""
        if window_us <= 0 or window_us > self.now_us or window_us > self._retention_us:
            raise WindowTooLarge(f"Окно {window_us} мкс при t={self.now_us} мкс")
        lo, hi = self.now_us - window_us, self.now_us
        busy = 0
        for start, end in reversed(pouch.busy_intervals):
            if end <= lo:
                break
            busy += max(0, min(end, hi) - max(start, lo))
        return min(1.0, busy / window_us)

    # --- сеть ---

    def delay_us(self, src: str, dst: str) -> int:
        for endpoint in (src, dst):
            if endpoint not in self.pouches and endpoint not in self.user_agents:
                raise UnknownEndpoint(f"Неизвестная конечная точка: {endpoint}")
        if src in self.user_agents or dst in self.user_agents:
            return self._ua_us
        if src == dst:
            return self._intra_us
        return self._inter_us

    def transmit(self, src: str, dst: str, payload: Callable[[], Any],
                 on_drop: Optional[Callable[[], Any]] = None) -> int:
        """Доставка через сеть; доставка на мертвый pouch отбрасывается"""
        fire = self.now_us + self.delay_us(src, dst)
        self.call_at(fire, payload, target=dst, on_drop=on_drop)
        return fire
