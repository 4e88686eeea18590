"""Fixed-k, Greedy-k and Oracle truncation policies, plus model evaluation.

All policies produce an :class:`EvalReport` so baseline and model rows line
up in the same table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .metrics import oracle_cutoff, value_at

# BiCut rows of the reference Robust04 table; annotation only.
BICUT_REFERENCE_F1 = {"bm25": 0.244, "drmm": 0.262}


@dataclass
class QueryResult:
    query_id: str
    k: int
    value: float


@dataclass
class EvalReport:
    policy: str
    metric: str
    per_query: list = field(default_factory=list)
    chosen_k: Optional[int] = None

    @property
    def mean(self) -> float:
        if not self.per_query:
            return float("nan")
        return float(np.mean([r.value for r in self.per_query]))

    def records(self) -> list[dict]:
        """Machine-readable rows: one summary row then one row per query."""
        head = {"policy": self.policy, "metric": self.metric, "mean": self.mean,
                "n_queries": len(self.per_query)}
        if self.chosen_k is not None:
            head["k"] = self.chosen_k
        rows = [head]
        rows += [{"policy": self.policy, "query_id": r.query_id, "k": r.k, "value": r.value}
                 for r in self.per_query]
        return rows

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())


def format_table(reports: Sequence[EvalReport]) -> str:
    """Fixed-width summary with one row per policy."""
    if not reports:
        return ""
    width = max(12, max(len(r.policy) for r in reports))
    metric = reports[0].metric
    lines = [f"{'policy':<{width}}  {metric:>10}  {'queries':>7}",
             "-" * (width + 21)]
    for r in reports:
        lines.append(f"{r.policy:<{width}}  {r.mean:>10.4f}  {len(r.per_query):>7d}")
    return "\n".join(lines) + "\n"


def fixed_k_eval(k: int, examples, metric: str) -> EvalReport:
    """Cut every list at ``k`` (or at its end when shorter)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    report = EvalReport(policy=f"Fixed-k ({k})", metric=metric, chosen_k=k)
    for ex in examples:
        c = ex.metric(metric)
        report.per_query.append(QueryResult(ex.query_id, min(k, len(c)), value_at(c, k)))
    return report


def mean_curve(examples, metric: str, n: Optional[int] = None) -> np.ndarray:
    """Mean over queries of C_k for k = 1..n, clamping short lists to their last value."""
    vecs = [ex.metric(metric) for ex in examples]
    if not vecs:
        raise ValueError("need at least one query")
    n = n or max(len(v) for v in vecs)
    acc = np.zeros(n)
    for v in vecs:
        m = min(len(v), n)
        acc[:m] += v[:m]
        acc[m:] += v[m - 1]
    return acc / len(vecs)


def greedy_k(train_examples, metric: str, n: Optional[int] = None) -> int:
    """The single cut maximizing the mean train metric; smallest k on ties."""
    return int(np.argmax(mean_curve(train_examples, metric, n))) + 1


def greedy_eval(train_examples, test_examples, metric: str) -> EvalReport:
    k = greedy_k(train_examples, metric)
    report = fixed_k_eval(k, test_examples, metric)
    report.policy = "Greedy-k"
    return report


def oracle_eval(examples, metric: str) -> EvalReport:
    report = EvalReport(policy="Oracle", metric=metric)
    for ex in examples:
        k, value = oracle_cutoff(ex.metric(metric))
        report.per_query.append(QueryResult(ex.query_id, k, value))
    return report


def model_eval(examples, model_config, params, metric: str, policy: str = "Choppy",
               batch_size: int = 64) -> EvalReport:
    """Cut each list at the model's argmax position."""
    from .model import predict_many

    examples = list(examples)
    dists = predict_many([ex.scores for ex in examples], model_config, params, batch_size)
    report = EvalReport(policy=policy, metric=metric)
    for ex, dist in zip(examples, dists):
        k = dist.argmax()
        report.per_query.append(QueryResult(ex.query_id, k, value_at(ex.metric(metric), k)))
    return report
