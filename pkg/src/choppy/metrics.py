"""Per-position truncation metrics.

Every function maps a label vector ``y`` (+1 relevant, -1 not) to the vector
``C`` where ``C[k-1]`` is the metric obtained by returning the top ``k`` results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

F1 = "f1"
PRECISION = "precision"
DCG = "dcg"
METRIC_KINDS = (F1, PRECISION, DCG)


@dataclass(frozen=True)
class MetricVector:
    kind: str
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def as_labels(y) -> np.ndarray:
    """Validate and return ``y`` as an int8 array of +1/-1."""
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("label vector must be a non-empty 1-D sequence")
    if not np.all((arr == 1) | (arr == -1)):
        bad = arr[(arr != 1) & (arr != -1)][0]
        raise ValueError(f"labels must be +1 or -1, found {bad!r}")
    return arr.astype(np.int8)


def relevance_to_label(level: int) -> int:
    """Graded qrels level to a binary label: positive levels are relevant."""
    return 1 if level > 0 else -1


def dcg_vector(y) -> np.ndarray:
    """Penalized DCG: non-relevant results subtract their discounted gain."""
    y = as_labels(y)
    ranks = np.arange(1, len(y) + 1)
    return np.cumsum(y / np.log2(ranks + 1.0))


def precision_vector(y) -> np.ndarray:
    y = as_labels(y)
    hits = np.cumsum(y == 1)
    return hits / np.arange(1, len(y) + 1)


def f1_vector(y, relevant_total: Optional[int] = None) -> np.ndarray:
    """F1 of every prefix.

    Recall is measured against ``relevant_total`` when given, otherwise
    against the number of relevant labels inside ``y``. With no relevant
    documents every entry is 0.
    """
    y = as_labels(y)
    hits = np.cumsum(y == 1).astype(np.float64)
    total = int(hits[-1]) if relevant_total is None else int(relevant_total)
    if total < hits[-1]:
        raise ValueError(
            f"relevant_total={total} is smaller than the {int(hits[-1])} relevant labels in the list"
        )
    if total == 0:
        return np.zeros(len(y))
    k = np.arange(1, len(y) + 1)
    # 2PR/(P+R) with P=hits/k, R=hits/total simplifies to 2*hits/(k+total)
    return 2.0 * hits / (k + total)


def metric_vector(y, kind: str, relevant_total: Optional[int] = None) -> np.ndarray:
    if kind == F1:
        return f1_vector(y, relevant_total)
    if kind == PRECISION:
        return precision_vector(y)
    if kind == DCG:
        return dcg_vector(y)
    raise ValueError(f"unknown metric {kind!r}; choose from {', '.join(METRIC_KINDS)}")


def oracle_cutoff(c) -> tuple[int, float]:
    """Best 1-based cut position and its value; earliest position on ties."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("metric vector must be non-empty")
    k = int(np.argmax(c))
    return k + 1, float(c[k])


def value_at(c, k: int) -> float:
    """Metric at cut ``k``, clamped to the list end."""
    if k < 1:
        raise ValueError(f"cut position must be >= 1, got {k}")
    return float(c[min(k, len(c)) - 1])
