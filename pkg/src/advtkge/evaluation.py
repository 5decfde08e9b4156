"""Filtered link-prediction ranking and MR / MRR / Hits@N."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import FilterIndex

SLOTS = ("head", "tail")


@dataclass(frozen=True)
class RankMetrics:
    mr: float
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    query_count: int

    @classmethod
    def from_ranks(cls, ranks) -> "RankMetrics":
        r = np.asarray(ranks, dtype=np.float64)
        if r.size == 0:
            raise ValueError("no ranks to aggregate")
        # fsum: correctly rounded, so the result does not depend on query order
        n = r.size
        return cls(
            mr=math.fsum(r) / n,
            mrr=math.fsum(1.0 / r) / n,
            hits1=float((r <= 1).mean()),
            hits3=float((r <= 3).mean()),
            hits10=float((r <= 10).mean()),
            query_count=int(r.size),
        )

    def as_dict(self):
        return asdict(self)

    CSV_HEADER = "mr,mrr,hits1,hits3,hits10,query_count"

    def csv_row(self) -> str:
        return f"{self.mr!r},{self.mrr!r},{self.hits1!r},{self.hits3!r},{self.hits10!r},{self.query_count}"

    def table(self) -> str:
        return "\n".join(
            [
                f"{'MR':>8} {'MRR':>8} {'Hits@1':>8} {'Hits@3':>8} {'Hits@10':>8} {'queries':>8}",
                f"{self.mr:8.2f} {self.mrr:8.4f} {self.hits1:8.4f} {self.hits3:8.4f} {self.hits10:8.4f} {self.query_count:8d}",
            ]
        )


def rank_from_outputs(outputs: np.ndarray, true_id: int, filtered=()) -> float:
    """Rank of ``true_id`` given higher-is-better outputs over all entities.

    Filtered entities (other than the true one) are dropped; ties with the
    true entity take the mean position of the tied group.
    """
    keep = np.ones(outputs.shape[0], dtype=bool)
    if filtered:
        keep[list(filtered)] = False
    keep[true_id] = True
    target = outputs[true_id]
    out = outputs[keep]
    better = int((out > target).sum())
    equal = int((out == target).sum())
    return better + (equal + 1) / 2.0


def rank_entity(model, quad, slot: str, filter_index: FilterIndex | None) -> float:
    q = np.asarray(quad, dtype=np.int64).reshape(1, 4)
    outputs = model.kind.orientation * model.score_all(q, slot)[0]
    true_id = int(q[0, 0] if slot == "head" else q[0, 2])
    filtered = filter_index.truths(q[0], slot) if filter_index is not None else ()
    return rank_from_outputs(outputs, true_id, filtered)


def _chunk_size(model, budget=2_000_000):
    return max(1, budget // max(1, model.n_entities * model.entity_width))


def rank_queries(model, quads, slot: str, filter_index: FilterIndex | None, workers: int = 1) -> np.ndarray:
    """Filtered ranks for every quad in ``slot``, in input order."""
    q = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    step = _chunk_size(model)
    col = 0 if slot == "head" else 2

    def run(start):
        block = q[start:start + step]
        outputs = model.kind.orientation * model.score_all(block, slot)
        ranks = np.empty(len(block))
        for i, row in enumerate(block):
            filtered = filter_index.truths(row, slot) if filter_index is not None else ()
            ranks[i] = rank_from_outputs(outputs[i], int(row[col]), filtered)
        return ranks

    starts = range(0, len(q), step)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts) if parts else np.empty(0)


def evaluate_split(model, quads, filter_index: FilterIndex | None, workers: int = 1, return_ranks=False):
    """Head and tail queries for each quad; metrics over all 2n ranks."""
    q = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    if len(q) == 0:
        raise ValueError("cannot evaluate an empty split")
    head = rank_queries(model, q, "head", filter_index, workers)
    tail = rank_queries(model, q, "tail", filter_index, workers)
    metrics = RankMetrics.from_ranks(np.concatenate([head, tail]))
    if return_ranks:
        return metrics, {"head": head, "tail": tail}
    return metrics
