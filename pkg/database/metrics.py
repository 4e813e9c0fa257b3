"""
Хранилище измерений прогона: вызовы, загрузка CPU, джиттер медиа и счетчики.
Все отметки времени виртуальные, микросекунды.
"""

import logging
from array import array
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

from services.ids import PouchStats
from services.kernel import us_to_ms

OUTCOMES = ("established", "failed", "abandoned")


@dataclass
class CallRecord:
    """Вызов глазами эмулятора UA плюс отметки SIPh"""
    call_id: str
    caller: str
    callee: str
    t_start_us: int
    in_window: bool = False
    t_invite_rx_us: Optional[int] = None
    t_invite_tx_us: Optional[int] = None
    t_answer_us: Optional[int] = None
    t_end_us: Optional[int] = None
    outcome: str = "pending"
    final_status: Optional[int] = None
    dropped: bool = False
    conference: bool = False

    @property
    def setup_latency_us(self) -> Optional[int]:
        if self.t_invite_rx_us is None or self.t_invite_tx_us is None:
            return None
        return self.t_invite_tx_us - self.t_invite_rx_us

    @property
    def setup_latency_ms(self) -> Optional[float]:
        latency = self.setup_latency_us
        return None if latency is None else us_to_ms(latency)


@dataclass
class CpuSample:
    t_us: int
    pouch_id: str
    utilization: float
    concurrent_calls: int


@dataclass
class MediaTrace:
    """Отклонения кадров одного вызова внутри окна измерений"""
    pouch_id: str
    frames_total: int = 0
    first_k: Optional[int] = None
    offsets_us: array = field(default_factory=lambda: array("q"))

    def samples(self) -> Iterator[Tuple[int, int]]:
        for i, offset in enumerate(self.offsets_us):
            yield self.first_k + i, offset


class MetricsStore:
    def __init__(self, window_start_us: int = 0, window_end_us: Optional[int] = None):
        self.logger = logging.getLogger(__name__)
        self.window_start_us = window_start_us
        self.window_end_us = window_end_us
        self.calls: Dict[str, CallRecord] = {}
        self.cpu: List[CpuSample] = []
        self.media: Dict[str, MediaTrace] = {}
        self.concurrency: List[Tuple[int, int]] = []
        self.registrations: Counter = Counter()
        self.counters: Dict[str, int] = {}
        self.active_calls = 0
        self.aborts = 0
        self.end_us: Optional[int] = None

    def in_window(self, t_us: int) -> bool:
        if t_us < self.window_start_us:
            return False
        return self.window_end_us is None or t_us < self.window_end_us

    # --- вызовы ---

    def open_call(self, call_id: str, caller: str, callee: str, t_us: int) -> CallRecord:
        record = CallRecord(call_id, caller, callee, t_us, in_window=self.in_window(t_us))
        self.calls[call_id] = record
        return record

    def record_setup(self, call_id: str, t_rx_us: int, t_tx_us: int):
        record = self.calls.get(call_id)
        if record is not None:
            record.t_invite_rx_us = t_rx_us
            record.t_invite_tx_us = t_tx_us

    def call_answered(self, call_id: str, t_us: int):
        """Вызывающий получил 200: вызов установлен и занимает канал до завершения"""
        record = self.calls.get(call_id)
        if record is None or record.outcome != "pending":
            return
        record.outcome = "established"
        record.final_status = 200
        record.t_answer_us = t_us
        self.active_calls += 1
        self._concurrency_changed(t_us)

    def call_ended(self, call_id: str, t_us: int, dropped: bool = False):
        record = self.calls.get(call_id)
        if record is None or record.t_answer_us is None or record.t_end_us is not None:
            return
        record.t_end_us = t_us
        record.dropped = dropped
        self.active_calls -= 1
        self._concurrency_changed(t_us)

    def close_call(self, call_id: str, outcome: str, t_us: int, status: Optional[int] = None,
                   dropped: bool = False):
        """Исход вызова, не дошедшего до ответа"""
        if outcome not in OUTCOMES or outcome == "established":
            raise ValueError(f"Недопустимый исход: {outcome}")
        record = self.calls.get(call_id)
        if record is None or record.outcome != "pending":
            return
        record.outcome = outcome
        record.final_status = status
        record.dropped = dropped
        record.t_end_us = t_us

    def record_abort(self, call_id: str, confirmed: bool):
        self.aborts += 1

    def _concurrency_changed(self, t_us: int):
        self.concurrency.append((t_us, self.active_calls))

    def mean_concurrency(self, end_us: Optional[int] = None) -> float:
        """Среднее по времени число одновременных вызовов в окне"""
        lo = self.window_start_us
        hi = self.window_end_us if self.window_end_us is not None else end_us
        if hi is None or hi <= lo:
            return 0.0
        area = 0
        level, t_prev = 0, lo
        for t_us, value in self.concurrency:
            if t_us <= lo:
                level = value
                continue
            if t_us >= hi:
                break
            area += level * (t_us - t_prev)
            level, t_prev = value, t_us
        area += level * (hi - t_prev)
        return area / (hi - lo)

    def latency_samples_ms(self) -> List[float]:
        """Задержки установления для вызовов, принятых SIPh внутри окна"""
        result = []
        for record in self.calls.values():
            if record.setup_latency_us is not None and self.in_window(record.t_invite_rx_us):
                result.append(us_to_ms(record.setup_latency_us))
        return result

    def outcome_counts(self) -> Dict[str, int]:
        counts = Counter()
        for record in self.calls.values():
            if not record.in_window:
                continue
            counts["attempted"] += 1
            counts[record.outcome] += 1
            if record.dropped:
                counts["dropped"] += 1
        result = {key: counts.get(key, 0) for key in ("attempted",) + OUTCOMES + ("pending", "dropped")}
        return result

    # --- CPU ---

    def record_cpu(self, stats: PouchStats):
        if self.in_window(stats.t_us):
            self.cpu.append(CpuSample(stats.t_us, stats.pouch_id, stats.utilization, self.active_calls))

    # --- медиа ---

    def record_jitter(self, pouch_id: str, call_id: str, ideal_us: int, offset_us: int):
        trace = self.media.get(call_id)
        if trace is None:
            trace = self.media[call_id] = MediaTrace(pouch_id)
        k = trace.frames_total
        trace.frames_total += 1
        if self.in_window(ideal_us):
            if trace.first_k is None:
                trace.first_k = k
            trace.offsets_us.append(offset_us)

    def jitter_samples_ms(self) -> List[float]:
        return [us_to_ms(o) for trace in self.media.values() for o in trace.offsets_us]

    def jitter_by_pouch_ms(self) -> Dict[str, List[float]]:
        result: Dict[str, List[float]] = {}
        for trace in self.media.values():
            result.setdefault(trace.pouch_id, []).extend(us_to_ms(o) for o in trace.offsets_us)
        return result

    # --- регистрации ---

    def record_registration(self, ok: bool):
        self.registrations["ok" if ok else "failed"] += 1

    @property
    def empty(self) -> bool:
        return not self.cpu and not self.latency_samples_ms() and not any(
            len(t.offsets_us) for t in self.media.values())
