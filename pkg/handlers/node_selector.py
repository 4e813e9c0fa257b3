"""
Юнит NSS: держит представление о загрузке pouch и отвечает на запросы
размещения юнитов
"""

from typing import Any, Dict, Iterable, Optional

from errors import NoEligiblePouch, UnknownPouch
from handlers.base import Unit
from handlers.messages import NssAnswer, NssQuery
from services.cmw import UnitAddress
from services.ids import RESOURCE_UTILIZATION, SYSTEM_STATUS, PouchStats, SystemStatus
from services.kernel import ms_to_us
from services.nss import LoadView, PlacementPolicy, select_pouch, update_load_view


class NodeSelectorUnit(Unit):
    unit_type = "NSS"
    service_key = "NSS"
    costs = {"NssQuery": "nss"}

    def __init__(self, address: UnitAddress, cmw, policy: Optional[PlacementPolicy] = None,
                 pouches: Iterable[str] = (), **params: Any):
        super().__init__(address, cmw, **params)
        self.policy = policy or PlacementPolicy()
        interval_us = ms_to_us(float(self.config("monitoring-interval-ms")))
        self.view = LoadView(interval_us=interval_us)
        for pouch_id in pouches:
            self.view.register(pouch_id, self.now_us)
        self._subscriptions = []

    def on_start(self):
        ids = self.cmw.ids
        self._subscriptions = [
            ids.subscribe(RESOURCE_UTILIZATION, self._on_stats, self.pouch_id),
            ids.subscribe(SYSTEM_STATUS, self._on_status, self.pouch_id),
        ]

    def on_terminate(self):
        for sub_id in self._subscriptions:
            self.cmw.ids.unsubscribe(sub_id)

    def _on_stats(self, stats: PouchStats):
        try:
            update_load_view(self.view, stats)
        except UnknownPouch:
            self.logger.debug(f"Отчет от неизвестного pouch {stats.pouch_id} пропущен")

    def _on_status(self, status: SystemStatus):
        if status.kind == "pouch-up":
            self.view.register(status.pouch_id, self.now_us)
        else:
            self.view.mark_dead(status.pouch_id)

    def place(self, subscriber: str, unit_types: Iterable[str]) -> Dict[str, str]:
        return {t: select_pouch(subscriber, t, self.view, self.policy, self.now_us) for t in unit_types}

    def on_nss_query(self, sender: UnitAddress, query: NssQuery):
        try:
            placement = self.place(query.subscriber, query.unit_types)
        except NoEligiblePouch as e:
            self.log("warning", query.call_id, f"no eligible pouch: {e}")
            self.send(sender, NssAnswer(query.call_id, query.subscriber, {}, query.purpose, error=str(e)))
            return
        self.send(sender, NssAnswer(query.call_id, query.subscriber, placement, query.purpose))
