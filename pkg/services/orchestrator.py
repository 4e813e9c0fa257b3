"""
Meta Management and Orchestrator (MMO) и Element Manager (EM).

MMO разворачивает pouch по пулам из Descriptor, запускает базовые юниты и
следит за загрузкой через IDS, добавляя и убирая pouch. EM рассылает
конфигурацию юнитов через топик global-config.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

from database.hss import HssDatabase, generate_subscribers
from errors import ConfigError, ConservationError, UnknownConfigKey, UnknownEndpoint
from handlers import UNIT_FACTORIES
from services.cmw import DEFAULT_CONFIG, SEVERITIES, CmwFabric, UnitAddress
from services.descriptor import BASE_UNIT_TYPES, PER_CALL_UNIT_TYPES, Descriptor
from services.ids import (
    GLOBAL_CONFIG,
    RESOURCE_UTILIZATION,
    SYSTEM_STATUS,
    ConfigUpdate,
    InformationDistributionService,
    LogGatheringService,
    PouchStats,
    SystemStatus,
)
from services.kernel import Kernel, ms_to_us
from services.nss import PlacementPolicy
from utils.formatters import natural_key
from utils.sdp import CODECS

logger = logging.getLogger(__name__)


def pouch_name(ordinal: int) -> str:
    return f"CU{ordinal}"


@dataclass(frozen=True)
class ScaleDecision:
    action: str  # add-pouch | remove-pouch | none
    pool_id: str = ""
    pouch_id: str = ""
    reason: Tuple[Tuple[str, float], ...] = ()
    t_us: int = 0

    @property
    def mean_utilization(self) -> float:
        values = [u for _, u in self.reason]
        return sum(values) / len(values) if values else 0.0


NO_DECISION = ScaleDecision("none")


class ElementManager:
    """EM: проверка и рассылка ключей конфигурации юнитов"""

    def __init__(self, ids: InformationDistributionService, fabric: CmwFabric):
        self.ids = ids
        self.fabric = fabric
        self.logger = logging.getLogger(__name__)
        self.current: Dict[str, Any] = dict(fabric.config)

    def validate(self, key: str, value: Any) -> Any:
        if key not in DEFAULT_CONFIG:
            raise UnknownConfigKey(f"Неизвестный ключ конфигурации: {key}")
        if key == "supported-codecs":
            codecs = tuple(c.strip().upper() for c in (value.split(",") if isinstance(value, str) else value))
            unknown = [c for c in codecs if c not in CODECS]
            if not codecs or unknown:
                raise ConfigError(f"Некорректный набор кодеков: {value!r}")
            return codecs
        if key == "log-level":
            if value not in SEVERITIES:
                raise ConfigError(f"Некорректный уровень журнала: {value!r}")
            return value
        if key == "conference-digits":
            if not str(value):
                raise ConfigError("Пустая комбинация DTMF")
            return str(value)
        interval = float(value)
        if interval <= 0:
            raise ConfigError(f"Интервал мониторинга должен быть > 0: {value!r}")
        return interval

    def push_config(self, values: Mapping[str, Any]) -> Dict[str, Any]:
        """Проверить все ключи и опубликовать их; при ошибке ничего не рассылается"""
        checked = {key: self.validate(key, value) for key, value in values.items()}
        for key, value in checked.items():
            self.current[key] = value
            self.fabric.config[key] = value
            self.ids.publish(GLOBAL_CONFIG, ConfigUpdate(key, value))
            self.logger.debug(f"EM: {key}={value}")
        return checked


class MetaManager:
    """MMO: пулы pouch и эластичность по отчетам resource-utilization"""

    def __init__(self, system: "UnitySystem"):
        self.system = system
        self.descriptor = system.descriptor
        self.policy = system.descriptor.elasticity
        self.logger = logging.getLogger(__name__)
        self.reports: Dict[str, PouchStats] = {}
        self.decisions: List[ScaleDecision] = []
        self.last_scale_us: Optional[int] = None
        self.enabled = system.descriptor.mode == "distributed"
        self._subscription = system.ids.subscribe(RESOURCE_UTILIZATION, self.on_report)

    def on_report(self, stats: PouchStats):
        if stats.pouch_id in self.system.live_pouches():
            self.reports[stats.pouch_id] = stats

    def pool_counts(self) -> Dict[str, int]:
        counts = {pool.pool_id: 0 for pool in self.descriptor.pools}
        for pouch_id in self.system.live_pouches():
            counts[self.system.kernel.pouches[pouch_id].pool_id] += 1
        return counts

    def elasticity_tick(self, reports: Optional[Mapping[str, float]] = None,
                        now_us: Optional[int] = None) -> ScaleDecision:
        """Решение о масштабировании по последней загрузке каждого pouch"""
        if not self.enabled:
            return NO_DECISION
        now_us = self.system.kernel.now_us if now_us is None else now_us
        if reports is None:
            live = set(self.system.live_pouches())
            reports = {p: s.utilization for p, s in self.reports.items() if p in live}
        if not reports:
            return NO_DECISION
        snapshot = tuple(sorted(reports.items(), key=lambda x: natural_key(x[0])))
        mean = sum(reports.values()) / len(reports)
        cooldown_us = ms_to_us(self.policy.cooldown_ms)
        if self.last_scale_us is not None and now_us - self.last_scale_us < cooldown_us:
            return NO_DECISION

        counts = self.pool_counts()
        if mean > self.policy.cpu_high:
            headroom = {p.pool_id: p.max - counts[p.pool_id] for p in self.descriptor.pools}
            pool_id = max(headroom, key=lambda pid: headroom[pid])
            if headroom[pool_id] <= 0:
                return NO_DECISION
            self.last_scale_us = now_us
            return ScaleDecision("add-pouch", pool_id, reason=snapshot, t_us=now_us)

        if mean < self.policy.cpu_low:
            initial = {p.pool_id: p.pouches for p in self.descriptor.pools}
            for pouch_id in sorted(self.system.live_pouches(), key=natural_key, reverse=True):
                pool_id = self.system.kernel.pouches[pouch_id].pool_id
                if counts[pool_id] <= initial[pool_id] or not self.system.pouch_is_empty(pouch_id):
                    continue
                self.last_scale_us = now_us
                return ScaleDecision("remove-pouch", pool_id, pouch_id, reason=snapshot, t_us=now_us)
        return NO_DECISION

    def apply(self, decision: ScaleDecision):
        if decision.action == "none":
            return
        self.decisions.append(decision)
        if decision.action == "add-pouch":
            pouch_id = self.system.add_pouch(decision.pool_id)
            self.logger.info(f"MMO: добавлен {pouch_id} в пул {decision.pool_id}, "
                             f"средняя загрузка {decision.mean_utilization:.2f}")
        else:
            self.system.remove_pouch(decision.pouch_id)
            self.reports.pop(decision.pouch_id, None)
            self.logger.info(f"MMO: убран {decision.pouch_id}, средняя загрузка {decision.mean_utilization:.2f}")

    def start(self):
        if not self.enabled:
            return
        interval = ms_to_us(float(self.system.fabric.config["monitoring-interval-ms"]))
        # сдвиг на полинтервала: к моменту решения отчеты всех pouch уже доставлены
        self.system.kernel.call_later(interval + interval // 2, self._tick)

    def _tick(self):
        self.apply(self.elasticity_tick())
        interval = ms_to_us(float(self.system.fabric.config["monitoring-interval-ms"]))
        self.system.kernel.call_later(interval, self._tick)


@dataclass
class UnitySystem:
    """Развернутая система одного прогона"""
    descriptor: Descriptor
    kernel: Kernel
    ids: InformationDistributionService
    lgs: LogGatheringService
    fabric: CmwFabric
    hss: HssDatabase
    em: Optional[ElementManager] = None
    mmo: Optional[MetaManager] = None
    base_units: Dict[str, UnitAddress] = field(default_factory=dict)
    ordinals: Dict[str, int] = field(default_factory=dict)
    next_ordinal: int = 1
    killed: List[str] = field(default_factory=list)

    @property
    def siph(self) -> UnitAddress:
        return self.base_units["SIPh"]

    def live_pouches(self) -> List[str]:
        return sorted((p for p in self.fabric.cmws if self.kernel.pouches[p].alive), key=natural_key)

    def pouch_is_empty(self, pouch_id: str) -> bool:
        cmw = self.fabric.cmws.get(pouch_id)
        return cmw is not None and not cmw.units

    def create_pouch(self, pool_id: str, speed: float, announce: bool) -> str:
        ordinal = self.next_ordinal
        self.next_ordinal += 1
        pouch_id = pouch_name(ordinal)
        pouch = self.kernel.add_pouch(pouch_id, pool_id, speed, ordinal)
        self.ordinals[pouch_id] = ordinal
        self.fabric.create_cmw(pouch, request_snapshot=announce)
        if announce:
            self.ids.publish(SYSTEM_STATUS, SystemStatus("pouch-up", pouch_id))
        return pouch_id

    def add_pouch(self, pool_id: str) -> str:
        pool = next(p for p in self.descriptor.pools if p.pool_id == pool_id)
        return self.create_pouch(pool_id, pool.speed, announce=True)

    def remove_pouch(self, pouch_id: str):
        """Плановое удаление пустого pouch"""
        if not self.pouch_is_empty(pouch_id):
            raise ConfigError(f"Pouch {pouch_id} не пуст")
        self.ids.publish(SYSTEM_STATUS, SystemStatus("pouch-removed", pouch_id))
        self.fabric.remove_cmw(pouch_id, lost=False)
        self.kernel.kill_pouch(pouch_id)

    def kill_pouch(self, pouch_id: str):
        """Отказ pouch: все его юниты теряются, остальные CMW узнают об этом через IDS"""
        if pouch_id not in self.fabric.cmws:
            raise UnknownEndpoint(f"Нет работающего pouch {pouch_id}")
        self.kernel.kill_pouch(pouch_id)
        self.fabric.remove_cmw(pouch_id, lost=True)
        self.killed.append(pouch_id)
        self.ids.publish(SYSTEM_STATUS, SystemStatus("pouch-down", pouch_id))
        logger.info(f"Отказ {pouch_id}: потеряно юнитов {sum(self.fabric.lost.values())}")

    def per_call_units(self) -> List[UnitAddress]:
        return self.fabric.live_units(PER_CALL_UNIT_TYPES)

    def check_conservation(self):
        """Баланс созданных и завершенных юнитов после завершения всех вызовов"""
        fabric = self.fabric
        for unit_type in PER_CALL_UNIT_TYPES:
            if fabric.spawned[unit_type] != fabric.terminated[unit_type]:
                raise ConservationError(
                    f"{unit_type}: создано {fabric.spawned[unit_type]}, "
                    f"завершено {fabric.terminated[unit_type]}")
        live = self.per_call_units()
        if live:
            raise ConservationError(f"Остались юниты: {', '.join(map(str, live[:5]))}")


def _base_pouch(descriptor: Descriptor, unit_type: str, pouch_ids: List[str]) -> str:
    if descriptor.mode == "pinned":
        return pouch_name(descriptor.eligible_ordinals(unit_type)[0])
    return pouch_ids[0]


def deploy_system(descriptor: Descriptor, seed: int = 0, hss: Optional[HssDatabase] = None,
                  em_config: Optional[Mapping[str, Any]] = None,
                  record_trace: bool = False) -> UnitySystem:
    """Развернуть pouch по пулам, базовые юниты и подписки MMO"""
    kernel = Kernel(descriptor.network, seed=seed)
    ids = InformationDistributionService(kernel)
    lgs = LogGatheringService(ids)
    fabric = CmwFabric(kernel, ids, costs=descriptor.costs, factories=UNIT_FACTORIES,
                       record_trace=record_trace)
    system = UnitySystem(descriptor, kernel, ids, lgs, fabric,
                         hss if hss is not None else generate_subscribers())
    system.em = ElementManager(ids, fabric)
    if em_config:
        for key, value in em_config.items():
            fabric.config[key] = system.em.validate(key, value)
        system.em.current = dict(fabric.config)

    pouch_ids = [system.create_pouch(pool.pool_id, pool.speed, announce=False)
                 for pool in descriptor.pools for _ in range(pool.pouches)]

    policy = PlacementPolicy(mode=descriptor.mode)
    if descriptor.mode == "pinned":
        eligible = {t: [pouch_name(o) for o in descriptor.eligible_ordinals(t)]
                    for t in BASE_UNIT_TYPES + PER_CALL_UNIT_TYPES}
        policy.eligible = eligible
        fabric.pinning = {t: set(ids_) for t, ids_ in eligible.items()}

    bootstrap = fabric.cmws[pouch_ids[0]]
    init = {"NSS": {"policy": policy, "pouches": pouch_ids}, "Diah": {"hss": system.hss}}
    for unit_type in BASE_UNIT_TYPES:
        pouch_id = _base_pouch(descriptor, unit_type, pouch_ids)
        system.base_units[unit_type] = bootstrap.spawn_unit(pouch_id, unit_type, **init.get(unit_type, {}))

    # у всех CMW одинаковая таблица разрешения имен с момента старта
    for cmw in fabric.cmws.values():
        for key, addresses in fabric.directory.items():
            cmw.resolve_table.entries[key] = list(addresses)

    system.mmo = MetaManager(system)
    system.mmo.start()
    logger.info(f"Развернут {descriptor.name}: {len(pouch_ids)} pouch, режим {descriptor.mode}, "
                f"базовые юниты {', '.join(f'{t}@{a.pouch_id}' for t, a in system.base_units.items())}")
    return system
