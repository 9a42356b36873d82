"""Top-K ranking metrics and the per-user evaluation harness.

Metric definitions (ranks are 1-indexed, relevance is binary):

* HR@K    — 1 if any relevant item sits in the first K positions.
* NDCG@K  — sum of 1/log2(rank+1) over relevant hits in the top K,
            divided by the same sum for an ideal front-loaded ordering
            (min(|relevant|, K) terms).
* AP@K    — (1/min(|relevant|, K)) * sum over relevant positions j <= K
            of precision@j. The harness reports the mean over users.

Candidates are ranked by score descending, ties broken by ascending
item index, which keeps every report reproducible.
"""

import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricReport:
    k: int
    map_at_k: float
    ndcg_at_k: float
    hr_at_k: float
    users_evaluated: int
    users_skipped: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "map": self.map_at_k,
                "ndcg": self.ndcg_at_k,
                "hr": self.hr_at_k,
                "users_evaluated": self.users_evaluated,
                "users_skipped": self.users_skipped,
            }
        )


def rank_candidates(items, scores) -> list:
    """Items sorted best-first: score descending, index ascending on ties."""
    items = list(items)
    scores = list(scores)
    if len(items) != len(scores):
        raise ValueError(f"{len(items)} items with {len(scores)} scores")
    if len(set(items)) != len(items):
        raise ValueError("candidate list contains duplicate items")
    return [item for _, item in sorted(zip(scores, items), key=lambda p: (-p[0], p[1]))]


def _check_metric_args(relevant, k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise ValueError("relevant set must be nonempty")


def hit_rate_at_k(ranked, relevant, k: int) -> float:
    """Per-user hit indicator; the harness averages these into HR@K."""
    _check_metric_args(relevant, k)
    return 1.0 if any(item in relevant for item in ranked[:k]) else 0.0


def ndcg_at_k(ranked, relevant, k: int) -> float:
    _check_metric_args(relevant, k)
    dcg = 0.0
    for j, item in enumerate(ranked[:k], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(j + 1)
    ideal_hits = min(len(relevant), k)
    idcg = sum(1.0 / math.log2(j + 1) for j in range(1, ideal_hits + 1))
    return dcg / idcg


def map_at_k(ranked, relevant, k: int) -> float:
    _check_metric_args(relevant, k)
    hits = 0
    precision_sum = 0.0
    for j, item in enumerate(ranked[:k], start=1):
        if item in relevant:
            hits += 1
            precision_sum += hits / j
    return precision_sum / min(len(relevant), k)


def evaluate(model, split, k: int) -> MetricReport:
    """Score each held-out positive against its sampled negatives.

    Context-aware models get the positive's (hour, weekday); everything
    else is scored context-free. Per-user metrics use the singleton
    relevant set {positive} and are averaged unweighted.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not split.test:
        raise ValueError("split has an empty test set")
    if model.num_users != split.train.num_users or model.num_items != split.train.num_items:
        raise ValueError(
            f"model covers {model.num_users} users x {model.num_items} items, "
            f"dataset has {split.train.num_users} x {split.train.num_items}"
        )
    hr_sum = ndcg_sum = ap_sum = 0.0
    for case in split.test:
        candidates = [case.item] + [int(x) for x in case.negatives]
        ctx = (case.hour, case.weekday) if model.uses_context else None
        scores = model.predict_batch(case.user, candidates, ctx)
        ranked = rank_candidates(candidates, scores)
        relevant = {case.item}
        hr_sum += hit_rate_at_k(ranked, relevant, k)
        ndcg_sum += ndcg_at_k(ranked, relevant, k)
        ap_sum += map_at_k(ranked, relevant, k)
    n = len(split.test)
    return MetricReport(
        k=k,
        map_at_k=ap_sum / n,
        ndcg_at_k=ndcg_sum / n,
        hr_at_k=hr_sum / n,
        users_evaluated=n,
        users_skipped=split.skipped_users,
    )
