from typing import Any, Dict, List, Tuple

from errors import CmwError
from handlers.base import Unit
from handlers.messages import (
    DiameterAnswer,
    DiameterQuery,
    ProfileAnswer,
    ProfileRequest,
    RegisterAnswer,
    RegisterRequest,
)
from database.hss import SubscriberProfile
from services.cmw import UnitAddress


class HssFrontendUnit(Unit):
    """H: выдает профили абонентов, кэшируя их отдельно для каждого запрашивающего pouch"""
    unit_type = "H"
    service_key = "HSS-frontend"
    costs = {"RegisterRequest": "h_query"}

    def __init__(self, address: UnitAddress, cmw, **params: Any):
        super().__init__(address, cmw, **params)
        self.cache: Dict[Tuple[str, str], SubscriberProfile] = {}
        self.pending_registrations: Dict[Tuple[str, str], RegisterRequest] = {}
        self.hits = 0
        self.misses = 0

    def cost_us(self, payload: Any) -> int:
        if isinstance(payload, ProfileRequest):
            if (payload.requester.pouch_id, payload.impu) in self.cache:
                return self.fabric.cost_us("h_cache_hit")
            return self.fabric.cost_us("h_query")
        return super().cost_us(payload)

    def on_profile_request(self, sender: UnitAddress, request: ProfileRequest):
        key = (request.requester.pouch_id, request.impu)
        profile = self.cache.get(key)
        if profile is not None:
            self.hits += 1
            self.send(request.requester, ProfileAnswer(request.call_id, request.impu, profile, from_cache=True))
            return
        self.misses += 1
        self._query(DiameterQuery(request.call_id, request.impu, request.requester, self.address))

    def on_register_request(self, sender: UnitAddress, request: RegisterRequest):
        self.pending_registrations[(request.call_id, request.impu)] = request
        self._query(DiameterQuery(request.call_id, request.impu, request.siph, self.address,
                                  binding=request.binding))

    def _query(self, query: DiameterQuery):
        try:
            diah = self.resolve("Diameter")
        except CmwError as e:
            self.log("error", query.call_id, f"diameter unavailable: {e}")
            self._answer(DiameterAnswer(query.call_id, query.impu, None, query.requester, query.binding))
            return
        self.send(diah, query)

    def on_diameter_answer(self, sender: UnitAddress, answer: DiameterAnswer):
        self._answer(answer)

    def _answer(self, answer: DiameterAnswer):
        if answer.binding is None:
            if answer.profile is not None:
                self.cache[(answer.requester.pouch_id, answer.impu)] = answer.profile
            self.send(answer.requester, ProfileAnswer(answer.call_id, answer.impu, answer.profile))
            return

        request = self.pending_registrations.pop((answer.call_id, answer.impu), None)
        if request is None:
            return
        self.invalidate(answer.impu)
        self.send(request.siph, RegisterAnswer(answer.call_id, answer.impu, answer.binding,
                                               ok=answer.profile is not None, ua_msg=request.ua_msg))

    def invalidate(self, impu: str):
        for key in [k for k in self.cache if k[1] == impu]:
            del self.cache[key]
