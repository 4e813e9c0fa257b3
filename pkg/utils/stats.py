"""Описательная статистика для сводок прогона."""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


def mean(values: Sequence[float]) -> Optional[float]:
    if not len(values):
        return None
    return float(np.mean(values))


def stddev(values: Sequence[float]) -> Optional[float]:
    """Стандартное отклонение генеральной совокупности"""
    if not len(values):
        return None
    return float(np.std(values))


def percentile(values: Sequence[float], q: float) -> Optional[float]:
    """Процентиль по ближайшему рангу, q в (0, 100]"""
    if not len(values):
        return None
    return float(np.percentile(values, q, method="inverted_cdf"))


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float, float]:
    """МНК: (наклон, сдвиг, R²); при постоянном x наклон 0 и R² 0"""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) != len(y) or len(x) < 2 or np.unique(x).size < 2:
        return 0.0, (float(y.mean()) if len(y) else 0.0), 0.0
    slope, intercept = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    if ss_tot == 0:
        return float(slope), float(intercept), 1.0
    return float(slope), float(intercept), max(0.0, 1.0 - ss_res / ss_tot)


def ranks(values: Sequence[float]) -> List[float]:
    """Ранги с 1; равные значения получают средний ранг"""
    order = sorted(range(len(values)), key=lambda i: values[i])
    result = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            result[order[k]] = avg
        i = j + 1
    return result


def spearman(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Ранговая корреляция Спирмена (Пирсон по рангам)"""
    if len(xs) != len(ys) or len(xs) < 2:
        return None
    rx, ry = ranks(xs), ranks(ys)
    if len(set(rx)) < 2 or len(set(ry)) < 2:
        return None
    return float(np.corrcoef(rx, ry)[0, 1])


def describe(values: Sequence[float]) -> Dict[str, Optional[float]]:
    return {
        "count": len(values),
        "mean": mean(values),
        "stddev": stddev(values),
        "p95": percentile(values, 95),
    }
