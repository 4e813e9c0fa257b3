"""
Node Selector Service: выбор pouch для юнита по абоненту и загрузке.

Размещение "липкое": хэш абонента выбирает домашний pouch среди отсортированных
живых кандидатов, поэтому все юниты одного абонента попадают на один pouch,
пока он не перегружен. При перегрузке берется следующий по кругу pouch под
порогом, а если таких нет, то наименее загруженный.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Optional, Set, Tuple

from errors import NoEligiblePouch, UnknownPouch
from services.ids import PouchStats
from utils.formatters import natural_key

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK_64 = 0xFFFFFFFFFFFFFFFF

DEFAULT_THRESHOLD = 0.85
STALE_INTERVALS = 3


def fnv1a_64(text: str) -> int:
    """FNV-1a, 64 бита, по UTF-8 байтам строки"""
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & MASK_64
    return h


@dataclass
class LoadView:
    """Последняя известная загрузка каждого pouch"""
    interval_us: int = 1_000_000
    samples: Dict[str, Tuple[float, int]] = field(default_factory=dict)
    dead: Set[str] = field(default_factory=set)

    def register(self, pouch_id: str, t_us: int):
        """Новый pouch считается свежим и свободным до первого отчета"""
        self.dead.discard(pouch_id)
        if pouch_id not in self.samples:
            self.samples[pouch_id] = (0.0, t_us)

    def mark_dead(self, pouch_id: str):
        self.dead.add(pouch_id)
        self.samples.pop(pouch_id, None)

    def live_pouches(self) -> List[str]:
        return sorted((p for p in self.samples if p not in self.dead), key=natural_key)

    def utilization(self, pouch_id: str, now_us: int) -> float:
        """Загрузка с учетом устаревания: нет отчета 3 интервала -> 1.0"""
        sample = self.samples.get(pouch_id)
        if sample is None:
            raise UnknownPouch(f"Неизвестный pouch: {pouch_id}")
        value, t_us = sample
        if now_us - t_us > STALE_INTERVALS * self.interval_us:
            return 1.0
        return value


@dataclass
class PlacementPolicy:
    mode: Literal["pinned", "distributed"] = "distributed"
    overload_threshold: float = DEFAULT_THRESHOLD
    # тип юнита -> допустимые pouch (только для pinned)
    eligible: Dict[str, List[str]] = field(default_factory=dict)

    def candidates(self, unit_type: str, live: Iterable[str]) -> List[str]:
        live = list(live)
        if self.mode == "pinned":
            allowed = set(self.eligible.get(unit_type, ()))
            live = [p for p in live if p in allowed]
        return sorted(live, key=natural_key)


def update_load_view(view: LoadView, stats: PouchStats) -> LoadView:
    """Учесть отчет о загрузке; отчеты от неизвестных pouch отклоняются"""
    if stats.pouch_id not in view.samples:
        raise UnknownPouch(f"Отчет от незарегистрированного pouch: {stats.pouch_id}")
    _, previous_t = view.samples[stats.pouch_id]
    if stats.t_us >= previous_t:
        view.samples[stats.pouch_id] = (stats.utilization, stats.t_us)
    return view


def select_pouch(subscriber: str, unit_type: str, load: LoadView,
                 policy: PlacementPolicy, now_us: Optional[int] = None) -> str:
    """Выбор pouch для юнита unit_type абонента subscriber"""
    eligible = policy.candidates(unit_type, load.live_pouches())
    if not eligible:
        raise NoEligiblePouch(f"Нет доступных pouch для {unit_type}")

    if now_us is None:
        now_us = max(t for _, t in load.samples.values())
    utilization = {p: load.utilization(p, now_us) for p in eligible}

    n = len(eligible)
    home = fnv1a_64(subscriber) % n
    if utilization[eligible[home]] <= policy.overload_threshold:
        return eligible[home]

    for step in range(1, n):
        candidate = eligible[(home + step) % n]
        if utilization[candidate] <= policy.overload_threshold:
            logger.debug(f"{unit_type}/{subscriber}: {eligible[home]} перегружен, выбран {candidate}")
            return candidate

    # все перегружены: наименее загруженный, при равенстве первый по порядку
    return min(eligible, key=lambda p: utilization[p])
