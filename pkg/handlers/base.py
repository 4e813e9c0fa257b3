"""
Базовый класс юнита: адрес, доступ к CMW и диспетчеризация сообщений
по типу в методы on_<тип сообщения>.
"""

import logging
import re
from typing import Any, ClassVar, Dict, Optional

from services.cmw import CmwInstance, UnitAddress

_CAMEL = re.compile(r"(?<!^)(?=[A-Z])")


def handler_name(payload: Any) -> str:
    return "on_" + _CAMEL.sub("_", type(payload).__name__).lower()


class Unit:
    unit_type: ClassVar[str] = ""
    service_key: ClassVar[Optional[str]] = None
    # имя стоимости из CostModel по типу сообщения; по умолчанию без затрат
    costs: ClassVar[Dict[str, str]] = {}

    def __init__(self, address: UnitAddress, cmw: CmwInstance, **params: Any):
        self.address = address
        self.cmw = cmw
        self.fabric = cmw.fabric
        self.alive = True
        self.received_us = 0
        self.logger = logging.getLogger(f"unity.unit.{self.unit_type}")

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.address})"

    @property
    def pouch_id(self) -> str:
        return self.address.pouch_id

    @property
    def now_us(self) -> int:
        return self.cmw.kernel.now_us

    def cost_us(self, payload: Any) -> int:
        name = self.costs.get(type(payload).__name__)
        return self.fabric.cost_us(name) if name else 0

    def handle(self, sender: Optional[UnitAddress], payload: Any):
        method = getattr(self, handler_name(payload), None)
        if method is None:
            self.log("warning", getattr(payload, "call_id", ""),
                     f"unhandled {type(payload).__name__}")
            return
        method(sender, payload)

    # --- обертки над CMW ---

    def send(self, dest: UnitAddress, payload: Any):
        self.cmw.send_to_unit(self.address, dest, payload)

    def spawn(self, pouch_id: str, unit_type: str, **init: Any) -> UnitAddress:
        return self.cmw.spawn_unit(pouch_id, unit_type, **init)

    def terminate(self, address: Optional[UnitAddress] = None):
        self.cmw.terminate_unit(address or self.address)

    def resolve(self, service_key: str) -> UnitAddress:
        return self.cmw.resolve(service_key)

    def link(self, peer: UnitAddress):
        self.cmw.link(self.address, peer)

    def start_timer(self, delay_us: int, payload: Any) -> int:
        return self.cmw.start_timer(self.address, delay_us, payload)

    def cancel_timer(self, event_id: Optional[int]):
        self.cmw.cancel_timer(event_id)

    def config(self, key: str) -> Any:
        return self.cmw.config[key]

    def log(self, severity: str, call_id: str, text: str):
        self.cmw.log(self.address, severity, call_id, text)

    # --- жизненный цикл ---

    def on_start(self):
        pass

    def on_terminate(self):
        pass
