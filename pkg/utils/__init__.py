"""
Утилиты: кодеки SIP/SDP, форматирование и статистика
"""

from .formatters import (
    natural_key,
    format_ms,
    format_us,
    format_duration,
    format_table_row
)

__all__ = [
    'natural_key',
    'format_ms',
    'format_us',
    'format_duration',
    'format_table_row'
]
