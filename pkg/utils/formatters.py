import re
from typing import Iterable, Optional, Tuple


def natural_key(text: str) -> Tuple:
    """Ключ сортировки с учетом чисел: CU2 < CU10"""
    return tuple(int(part) if part.isdigit() else part for part in re.split(r"(\d+)", text))


def format_ms(value: Optional[float], digits: int = 3) -> str:
    """Миллисекунды для CSV; пустая ячейка для отсутствующего значения"""
    if value is None:
        return ""
    return f"{value:.{digits}f}"


def format_us(value: Optional[int]) -> str:
    """Целые микросекунды как миллисекунды с тремя знаками, без округления"""
    if value is None:
        return ""
    sign = "-" if value < 0 else ""
    value = abs(value)
    return f"{sign}{value // 1000}.{value % 1000:03d}"


def format_duration(seconds: float) -> str:
    """Форматирование продолжительности для журнала"""
    seconds = int(seconds)
    if seconds < 60:
        return f"{seconds} сек"
    if seconds < 3600:
        return f"{seconds // 60} мин {seconds % 60} сек"
    hours = seconds // 3600
    minutes = (seconds % 3600) // 60
    return f"{hours} ч {minutes} мин"


def format_table_row(name: str, cells: Iterable[str]) -> str:
    """Строка размещения: NO1 | SN | HD | C | ..."""
    return " | ".join([name] + [cell or "-" for cell in cells])
