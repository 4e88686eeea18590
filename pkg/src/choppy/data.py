"""TREC run/qrels ingestion, dataset caching, splitting and synthetic data."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Union

import numpy as np

from .metrics import METRIC_KINDS, as_labels, metric_vector, relevance_to_label

logger = logging.getLogger(__name__)

TOP_N = 300


class DataError(ValueError):
    """Malformed input data."""


@dataclass
class RankedList:
    """One query's results in non-increasing score order with ±1 labels."""

    query_id: str
    scores: np.ndarray
    labels: np.ndarray
    doc_ids: list
    relevant_total: Optional[int] = None
    _metrics: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = as_labels(self.labels)
        self.doc_ids = list(self.doc_ids)
        if not (len(self.scores) == len(self.labels) == len(self.doc_ids)):
            raise DataError(
                f"query {self.query_id}: {len(self.scores)} scores, {len(self.labels)} labels, "
                f"{len(self.doc_ids)} doc ids"
            )
        if np.any(np.diff(self.scores) > 0):
            raise DataError(f"query {self.query_id}: scores are not in descending order")

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def n_relevant(self) -> int:
        return int(np.sum(self.labels == 1))

    def metric(self, kind: str) -> np.ndarray:
        """Cached metric vector C_1..C_len for this list."""
        if kind not in self._metrics:
            self._metrics[kind] = metric_vector(self.labels, kind, self.relevant_total)
        return self._metrics[kind]

    def attach_metrics(self, kinds: Iterable[str] = METRIC_KINDS) -> None:
        for k in kinds:
            self.metric(k)

    def to_record(self) -> dict:
        rec = {
            "qid": self.query_id,
            "doc_ids": self.doc_ids,
            "scores": [float(s) for s in self.scores],
            "labels": [int(y) for y in self.labels],
        }
        if self.relevant_total is not None:
            rec["relevant_total"] = int(self.relevant_total)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "RankedList":
        return cls(
            query_id=str(rec["qid"]),
            scores=np.array(rec["scores"], dtype=np.float64),
            labels=np.array(rec["labels"]),
            doc_ids=rec["doc_ids"],
            relevant_total=rec.get("relevant_total"),
        )


@dataclass
class Dataset:
    examples: list
    split: str = "all"

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def query_ids(self) -> list:
        return [ex.query_id for ex in self.examples]

    def by_id(self, qid: str) -> RankedList:
        for ex in self.examples:
            if ex.query_id == qid:
                return ex
        raise KeyError(qid)


# ---------------------------------------------------------------------------
# TREC formats
# ---------------------------------------------------------------------------

def _lines(source: Union[str, IO]) -> Iterable[tuple[int, str]]:
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            yield from enumerate(fh, start=1)
    else:
        yield from enumerate(source, start=1)


def _where(source) -> str:
    return source if isinstance(source, str) else getattr(source, "name", "<stream>")


def parse_trec_run(source: Union[str, IO]) -> dict:
    """Read ``qid Q0 docid rank score tag`` lines.

    Returns ``{qid: [(docid, score), ...]}`` with each list sorted by score
    descending, then rank ascending. Blank lines are skipped.
    """
    rows: dict[str, list] = {}
    where = _where(source)
    for lineno, line in _lines(source):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise DataError(f"{where}:{lineno}: expected 6 columns, got {len(parts)}")
        qid, _, docid, rank, score, _tag = parts
        try:
            score_f = float(score)
        except ValueError:
            raise DataError(f"{where}:{lineno}: score {score!r} is not numeric") from None
        if not np.isfinite(score_f):
            raise DataError(f"{where}:{lineno}: score {score!r} is not finite")
        try:
            rank_i = int(rank)
        except ValueError:
            raise DataError(f"{where}:{lineno}: rank {rank!r} is not an integer") from None
        rows.setdefault(qid, []).append((score_f, rank_i, lineno, docid))
    out = {}
    for qid, items in rows.items():
        items.sort(key=lambda r: (-r[0], r[1], r[2]))
        out[qid] = [(docid, score) for score, _, _, docid in items]
    return out


def parse_qrels(source: Union[str, IO]) -> dict:
    """Read ``qid iter docid rel`` lines into ``{(qid, docid): rel}``."""
    qrels: dict[tuple, int] = {}
    where = _where(source)
    for lineno, line in _lines(source):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise DataError(f"{where}:{lineno}: expected 4 columns, got {len(parts)}")
        qid, _, docid, rel = parts
        try:
            level = int(rel)
        except ValueError:
            raise DataError(f"{where}:{lineno}: relevance {rel!r} is not an integer") from None
        key = (qid, docid)
        if key in qrels:
            logger.warning("%s:%d: duplicate judgment for %s/%s, keeping the last",
                           where, lineno, qid, docid)
        qrels[key] = level
    return qrels


def relevant_totals(qrels: dict) -> dict:
    """Number of relevant judgments per query."""
    totals: dict[str, int] = {}
    for (qid, _), level in qrels.items():
        totals.setdefault(qid, 0)
        if level > 0:
            totals[qid] += 1
    return totals


def build_dataset(run: dict, qrels: dict, top_n: int = TOP_N,
                  qrels_recall: bool = False) -> Dataset:
    """Join a parsed run with qrels, keeping the top ``top_n`` results per query.

    Unjudged documents are non-relevant. With ``qrels_recall`` the F1 recall
    denominator is the query's relevant count in the qrels instead of within
    the truncated list.
    """
    if not run:
        raise DataError("run contains no queries")
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    totals = relevant_totals(qrels) if qrels_recall else {}
    examples = []
    for qid in sorted(run):
        items = run[qid][:top_n]
        if not items:
            logger.warning("query %s has no retrieved documents; dropped", qid)
            continue
        doc_ids = [d for d, _ in items]
        labels = [relevance_to_label(qrels.get((qid, d), 0)) for d in doc_ids]
        total = None
        if qrels_recall:
            total = max(totals.get(qid, 0), sum(1 for y in labels if y == 1))
        ex = RankedList(qid, np.array([s for _, s in items]), np.array(labels), doc_ids, total)
        ex.attach_metrics()
        examples.append(ex)
    if not examples:
        raise DataError("no query has any retrieved documents")
    return Dataset(examples)


def write_run(dataset: Dataset, fh: IO, tag: str = "choppy") -> None:
    for ex in dataset:
        for rank, (d, s) in enumerate(zip(ex.doc_ids, ex.scores), start=1):
            fh.write(f"{ex.query_id} Q0 {d} {rank} {float(s)!r} {tag}\n")


def write_qrels(dataset: Dataset, fh: IO) -> None:
    for ex in dataset:
        for d, y in zip(ex.doc_ids, ex.labels):
            fh.write(f"{ex.query_id} 0 {d} {1 if y == 1 else 0}\n")


# ---------------------------------------------------------------------------
# cache file: one JSON record per query
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps(ex.to_record()) + "\n")


def load_dataset(path: str, split: str = "all") -> Dataset:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ex = RankedList.from_record(rec)
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            ex.attach_metrics()
            examples.append(ex)
    if not examples:
        raise DataError(f"{path}: dataset is empty")
    return Dataset(examples, split)


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

def split_train_test(dataset: Dataset, fraction: float = 0.8,
                     seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random query-level split; ``round(fraction * len)`` queries go to train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if len(dataset) < 2:
        raise ValueError("need at least 2 queries to split")
    ids = dataset.query_ids()
    if len(set(ids)) != len(ids):
        raise DataError("dataset has duplicate query ids")
    n_train = int(round(fraction * len(dataset)))
    n_train = min(max(n_train, 1), len(dataset) - 1)
    order = np.random.default_rng(seed).permutation(len(dataset))
    train = [dataset.examples[i] for i in sorted(order[:n_train])]
    test = [dataset.examples[i] for i in sorted(order[n_train:])]
    return Dataset(train, "train"), Dataset(test, "test")


# ---------------------------------------------------------------------------
# synthetic mixture data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_queries: int = 100
    list_length: int = TOP_N
    rel_loc: float = 2.0
    rel_spread: float = 1.0
    nonrel_loc: float = 0.0
    nonrel_spread: float = 1.0
    min_relevant: int = 5
    max_relevant: int = 50
    seed: int = 0
    id_prefix: str = "q"

    def __post_init__(self):
        if self.n_queries < 1 or self.list_length < 1:
            raise ValueError("n_queries and list_length must be >= 1")
        if not self.rel_loc > self.nonrel_loc:
            raise ValueError("relevant location must exceed the non-relevant location")
        if self.rel_spread < 0 or self.nonrel_spread < 0:
            raise ValueError("spreads must be non-negative")
        if not 0 <= self.min_relevant <= self.max_relevant <= self.list_length:
            raise ValueError("need 0 <= min_relevant <= max_relevant <= list_length")


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Per query: R ~ U{min..max} Gaussian relevant scores, the rest non-relevant."""
    rng = np.random.default_rng(cfg.seed)
    width = len(str(cfg.n_queries - 1))
    examples = []
    for q in range(cfg.n_queries):
        r = int(rng.integers(cfg.min_relevant, cfg.max_relevant + 1))
        rel = rng.normal(cfg.rel_loc, cfg.rel_spread, size=r)
        non = rng.normal(cfg.nonrel_loc, cfg.nonrel_spread, size=cfg.list_length - r)
        scores = np.concatenate([rel, non])
        labels = np.concatenate([np.ones(r, dtype=np.int8), -np.ones(len(non), dtype=np.int8)])
        order = np.argsort(-scores, kind="stable")
        qid = f"{cfg.id_prefix}{q:0{width}d}"
        doc_ids = [f"{qid}-d{i}" for i in order]
        ex = RankedList(qid, scores[order], labels[order], doc_ids)
        ex.attach_metrics()
        examples.append(ex)
    return Dataset(examples)
