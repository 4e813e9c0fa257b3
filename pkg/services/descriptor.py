"""
Descriptor: пулы платформенных ресурсов, модель размещения юнитов,
политика эластичности, модели стоимости и сети
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError

from errors import (
    DescriptorSyntaxError,
    PoolBoundsError,
    UncoveredUnitType,
    UnknownUnitType,
)
from services.kernel import NetworkModel

logger = logging.getLogger(__name__)

UNIT_TYPES = ("SIPh", "NSS", "H", "Diah", "C", "A", "T", "M")
BASE_UNIT_TYPES = ("SIPh", "NSS", "H", "Diah")
PER_CALL_UNIT_TYPES = ("C", "A", "T", "M")
GOLDEN_DESCRIPTORS = ("NO1", "NO2", "NO3", "NO4", "NO5", "DIST")

# краткая нотация размещения: S (SIPh), N (NSS), H (H и Diah)
TABLE_LETTERS = (("SIPh", "S"), ("NSS", "N"), ("H", "H"), ("C", "C"), ("T", "T"), ("M", "M"), ("A", "A"))


class CostModel(BaseModel):
    """Стоимость обработки, мс при эталонной скорости 1.0"""
    sip_ms: float = Field(default=1.0, ge=0)
    nss_ms: float = Field(default=0.2, ge=0)
    c_setup_ms: float = Field(default=2.0, ge=0)
    # учет сессий: каждый шаг C дорожает на c_session_ms за каждую другую сессию C на том же pouch
    c_session_ms: float = Field(default=0.1, ge=0)
    c_audit_ms: float = Field(default=1.0, ge=0)
    c_audit_interval_ms: float = Field(default=1000.0, gt=0)
    h_query_ms: float = Field(default=1.0, ge=0)
    h_cache_hit_ms: float = Field(default=0.1, ge=0)
    diah_ms: float = Field(default=1.5, ge=0)
    a_negotiate_ms: float = Field(default=0.5, ge=0)
    t_event_ms: float = Field(default=0.3, ge=0)
    m_frame_ms: float = Field(default=0.1, ge=0)
    spawn_ms: float = Field(default=0.5, ge=0)
    bye_ms: float = Field(default=0.5, ge=0)
    setup_timeout_ms: float = Field(default=32000.0, gt=0)


class ElasticityPolicy(BaseModel):
    cpu_high: float = Field(default=0.80, ge=0, le=1)
    cpu_low: float = Field(default=0.30, ge=0, le=1)
    cooldown_ms: float = Field(default=5000.0, ge=0)


class PoolSpec(BaseModel):
    pool_id: str
    pouches: int = Field(ge=0)
    max: int = Field(ge=0)
    speed: float = Field(default=1.0, ge=0.1)


class PinRule(BaseModel):
    types: Tuple[str, ...]
    ordinal: int = Field(ge=1)


class Descriptor(BaseModel):
    name: str = "custom"
    pools: List[PoolSpec]
    mode: Literal["pinned", "distributed"] = "distributed"
    pins: List[PinRule] = []
    elasticity: ElasticityPolicy = ElasticityPolicy()
    costs: CostModel = CostModel()
    network: NetworkModel = NetworkModel()

    @property
    def initial_pouch_count(self) -> int:
        return sum(p.pouches for p in self.pools)

    def pin_map(self) -> Dict[Tuple[str, ...], List[int]]:
        """Набор типов -> список порядковых номеров CU"""
        result: Dict[Tuple[str, ...], List[int]] = {}
        for rule in self.pins:
            result.setdefault(rule.types, []).append(rule.ordinal)
        return result

    def eligible_ordinals(self, unit_type: str) -> List[int]:
        return sorted({r.ordinal for r in self.pins if unit_type in r.types})

    def table_row(self) -> List[str]:
        """Строка размещения в краткой нотации (по одной ячейке на CU)"""
        row = []
        for ordinal in range(1, self.initial_pouch_count + 1):
            types = {t for r in self.pins if r.ordinal == ordinal for t in r.types}
            cell = "".join(letter for unit_type, letter in TABLE_LETTERS if unit_type in types)
            if "Diah" in types and "H" not in types:
                cell += "D"
            row.append(cell)
        return row

    def with_speed(self, speed: float) -> "Descriptor":
        pools = [p.model_copy(update={"speed": speed}) for p in self.pools]
        return self.model_copy(update={"pools": pools, "name": f"{self.name}@{speed:g}"})


def _parse_value(line_no: int, key: str, value: str, kind):
    try:
        result = kind(value)
    except ValueError:
        raise DescriptorSyntaxError(line_no, f"некорректное значение {key}={value!r}")
    if kind is float and not math.isfinite(result):
        raise DescriptorSyntaxError(line_no, f"значение должно быть конечным: {key}={value!r}")
    return result


def parse_descriptor(text: str, name: str = "custom") -> Descriptor:
    """Разбор текстового Descriptor с проверкой инвариантов"""
    pools: List[dict] = []
    deployment: Dict[str, str] = {}
    pins: List[PinRule] = []
    sections: Dict[str, Dict[str, float]] = {"elasticity": {}, "costs": {}, "network": {}}
    section: Optional[str] = None
    current_pool: Optional[dict] = None
    seen_pins = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise DescriptorSyntaxError(line_no, f"незакрытая секция: {line!r}")
            header = line[1:-1].split()
            if len(header) == 2 and header[0] == "pool":
                current_pool = {"pool_id": header[1], "_line": line_no}
                pools.append(current_pool)
                section = "pool"
            elif len(header) == 1 and header[0] in ("deployment", "elasticity", "costs", "network"):
                section = header[0]
                current_pool = None
            else:
                raise DescriptorSyntaxError(line_no, f"неизвестная секция: {line!r}")
            continue

        if section is None:
            raise DescriptorSyntaxError(line_no, "строка вне секции")

        if section == "deployment" and line.startswith("pin "):
            spec, arrow, target = line[4:].partition("->")
            if not arrow:
                raise DescriptorSyntaxError(line_no, "ожидается 'pin <типы> -> <номер>'")
            types = tuple(t.strip() for t in spec.split(",") if t.strip())
            if not types:
                raise DescriptorSyntaxError(line_no, "пустой список типов")
            for unit_type in types:
                if unit_type not in UNIT_TYPES:
                    raise UnknownUnitType(unit_type)
            ordinal = _parse_value(line_no, "pin", target.strip().removeprefix("CU"), int)
            if ordinal < 1:
                raise DescriptorSyntaxError(line_no, f"номер pouch начинается с 1: {ordinal}")
            for unit_type in types:
                if (unit_type, ordinal) in seen_pins:
                    raise DescriptorSyntaxError(line_no, f"повторная привязка {unit_type} -> {ordinal}")
                seen_pins.add((unit_type, ordinal))
            pins.append(PinRule(types=types, ordinal=ordinal))
            continue

        key, eq, value = line.partition("=")
        if not eq:
            raise DescriptorSyntaxError(line_no, f"ожидается key=value: {line!r}")
        key, value = key.strip(), value.strip()

        if section == "pool":
            kinds = {"pouches": int, "max": int, "speed": float}
            if key not in kinds:
                raise DescriptorSyntaxError(line_no, f"неизвестный ключ пула: {key}")
            current_pool[key] = _parse_value(line_no, key, value, kinds[key])
        elif section == "deployment":
            if key != "mode" or value not in ("pinned", "distributed"):
                raise DescriptorSyntaxError(line_no, f"некорректная строка deployment: {line!r}")
            deployment["mode"] = value
        elif section == "costs":
            if not key.endswith("_ms") or key not in CostModel.model_fields:
                raise DescriptorSyntaxError(line_no, f"неизвестная стоимость: {key}")
            sections["costs"][key] = _parse_value(line_no, key, value, float)
        elif section == "elasticity":
            if key not in ElasticityPolicy.model_fields:
                raise DescriptorSyntaxError(line_no, f"неизвестный ключ эластичности: {key}")
            sections["elasticity"][key] = _parse_value(line_no, key, value, float)
        elif section == "network":
            if key not in NetworkModel.model_fields:
                raise DescriptorSyntaxError(line_no, f"неизвестный ключ сети: {key}")
            sections["network"][key] = _parse_value(line_no, key, value, float)

    if not pools:
        raise DescriptorSyntaxError(0, "не задан ни один пул")

    pool_specs = []
    for pool in pools:
        line_no = pool.pop("_line")
        pool.setdefault("pouches", 0)
        pool.setdefault("max", pool["pouches"])
        if pool["pouches"] > pool["max"]:
            raise PoolBoundsError(f"Пул {pool['pool_id']}: pouches={pool['pouches']} > max={pool['max']}")
        try:
            pool_specs.append(PoolSpec(**pool))
        except ValidationError as e:
            raise DescriptorSyntaxError(line_no, f"пул {pool['pool_id']}: {e.errors()[0]['msg']}")

    mode = deployment.get("mode", "distributed")
    try:
        descriptor = Descriptor(
            name=name,
            pools=pool_specs,
            mode=mode,
            pins=pins if mode == "pinned" else [],
            elasticity=ElasticityPolicy(**sections["elasticity"]),
            costs=CostModel(**sections["costs"]),
            network=NetworkModel(**sections["network"]),
        )
    except ValidationError as e:
        raise DescriptorSyntaxError(0, e.errors()[0]["msg"])

    if descriptor.initial_pouch_count == 0:
        raise PoolBoundsError("Нет ни одного начального pouch: базовым юнитам негде разместиться")

    if descriptor.elasticity.cpu_low > descriptor.elasticity.cpu_high:
        raise DescriptorSyntaxError(0, "cpu_low больше cpu_high")

    if mode == "pinned":
        covered = {t for r in pins for t in r.types}
        missing = [t for t in UNIT_TYPES if t not in covered]
        if missing:
            raise UncoveredUnitType(f"Не привязаны типы: {', '.join(missing)}")
        total = descriptor.initial_pouch_count
        for rule in pins:
            if rule.ordinal > total:
                raise PoolBoundsError(f"Привязка к CU{rule.ordinal}, а pouch всего {total}")

    logger.debug(f"Descriptor {name}: режим {mode}, pouch {descriptor.initial_pouch_count}")
    return descriptor


def load_descriptor(ref: str, descriptor_dir: Path) -> Descriptor:
    """Загрузка по имени золотого файла (NO1..NO5, DIST) или по пути"""
    if ref in GOLDEN_DESCRIPTORS:
        path = Path(descriptor_dir) / f"{ref}.desc"
        name = ref
    else:
        path = Path(ref)
        name = path.stem
    text = path.read_text(encoding="utf-8")
    return parse_descriptor(text, name=name)
