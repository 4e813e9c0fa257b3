"""
Функциональные юниты IMS, исполняемые внутри CMW
"""

from .base import Unit
from .sip_handler import SipHandlerUnit
from .node_selector import NodeSelectorUnit
from .hss_frontend import HssFrontendUnit
from .diameter_handler import DiameterHandlerUnit
from .call_session import CallSessionUnit
from .anchor_point import AnchorPointUnit
from .telephony_server import TelephonyServerUnit
from .media_processor import MediaProcessorUnit

# тип юнита -> фабрика (address, cmw, **init)
UNIT_FACTORIES = {
    cls.unit_type: cls
    for cls in (
        SipHandlerUnit,
        NodeSelectorUnit,
        HssFrontendUnit,
        DiameterHandlerUnit,
        CallSessionUnit,
        AnchorPointUnit,
        TelephonyServerUnit,
        MediaProcessorUnit,
    )
}

__all__ = [
    'Unit',
    'UNIT_FACTORIES',
    'SipHandlerUnit',
    'NodeSelectorUnit',
    'HssFrontendUnit',
    'DiameterHandlerUnit',
    'CallSessionUnit',
    'AnchorPointUnit',
    'TelephonyServerUnit',
    'MediaProcessorUnit'
]
