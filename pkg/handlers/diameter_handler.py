from typing import Any, Optional

from database.hss import HssDatabase
from errors import ProfileNotFound
from handlers.base import Unit
from handlers.messages import DiameterAnswer, DiameterQuery
from services.cmw import UnitAddress


class DiameterHandlerUnit(Unit):
    """Diah: обращения к HSS (внутренний конверт вместо Diameter AVP)"""
    unit_type = "Diah"
    service_key = "Diameter"
    costs = {"DiameterQuery": "diah"}

    def __init__(self, address: UnitAddress, cmw, hss: Optional[HssDatabase] = None, **params: Any):
        super().__init__(address, cmw, **params)
        self.hss = hss if hss is not None else HssDatabase()

    def query(self, impu: str, binding: Optional[str] = None):
        """Профиль из HSS; при binding сохраняется регистрация"""
        if binding is not None:
            return self.hss.store_binding(impu, binding)
        return self.hss.get_profile(impu)

    def on_diameter_query(self, sender: UnitAddress, query: DiameterQuery):
        try:
            profile = self.query(query.impu, query.binding)
        except ProfileNotFound:
            self.log("info", query.call_id, f"profile not found {query.impu}")
            profile = None
        self.send(query.reply_to, DiameterAnswer(query.call_id, query.impu, profile,
                                                 query.requester, query.binding))
