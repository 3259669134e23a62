"""Retrieval-quality metrics and experiment reports.

Recall@K and median first-relevant rank over text-to-flow or flow-to-flow
retrieval, with relevance defined either as the query's own episode or as
any episode sharing its archetype label (excluding the query itself).
``evaluate`` builds an index over the whole dataset, queries it with the
validation episodes, and also scores a text-embedding-only baseline arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset, filter_episodes, split
from .errors import DataFormatError, UsageError
from .pooler import PoolerParams
from .retrieval import EmbeddingIndex, build_index, ranked_indices
from .training import normalize_rows

PROTOCOLS = ("text-to-flow", "flow-to-flow")
RELEVANCES = ("exact-episode", "same-archetype")


@dataclass
class EvalSpec:
    """What to measure: cutoffs, query protocol, and relevance definition."""

    ks: list[int] = field(default_factory=lambda: [1, 5, 10])
    protocol: str = "text-to-flow"
    relevance: str = "exact-episode"
    train_fraction: float = 0.9

    def __post_init__(self):
        if not self.ks or any(k < 1 for k in self.ks):
            raise UsageError(f"ks must be >= 1, got {self.ks}")
        if sorted(self.ks) != list(self.ks):
            raise UsageError(f"ks must be sorted ascending, got {self.ks}")
        if self.protocol not in PROTOCOLS:
            raise UsageError(
                f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}"
            )
        if self.relevance not in RELEVANCES:
            raise UsageError(
                f"relevance must be one of {RELEVANCES}, got {self.relevance!r}"
            )
        if not 0.0 < self.train_fraction < 1.0:
            raise UsageError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


def recall_at_k(
    rank_lists: list[list[str]], truth: list[set[str]], k: int
) -> float:
    """Fraction of queries whose top-k contains at least one relevant id."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if len(rank_lists) != len(truth):
        raise UsageError(
            f"{len(rank_lists)} rank lists vs {len(truth)} truth sets"
        )
    if not rank_lists:
        raise UsageError("need at least one query")
    hits = 0
    for ranked, relevant in zip(rank_lists, truth):
        if not relevant:
            raise UsageError("every query needs at least one relevant id")
        if any(eid in relevant for eid in ranked[:k]):
            hits += 1
    return hits / len(rank_lists)


def first_relevant_rank(ranked: list[str], relevant: set[str]) -> float:
    """1-based rank of the first relevant id; inf when none appears."""
    for pos, eid in enumerate(ranked, start=1):
        if eid in relevant:
            return float(pos)
    return math.inf


def median_rank(rank_lists: list[list[str]], truth: list[set[str]]) -> float:
    """Median of per-query first-relevant ranks.

    For an even number of queries the median is the mean of the two middle
    values (so ranks {1, 3} give 2.0 and {1, 2, 6, 11} give 4.0).
    """
    if len(rank_lists) != len(truth):
        raise UsageError(
            f"{len(rank_lists)} rank lists vs {len(truth)} truth sets"
        )
    if not rank_lists:
        raise UsageError("need at least one query")
    ranks = []
    for ranked, relevant in zip(rank_lists, truth):
        if not relevant:
            raise UsageError("every query needs at least one relevant id")
        ranks.append(first_relevant_rank(ranked, relevant))
    ranks.sort()
    n = len(ranks)
    if n % 2 == 1:
        return ranks[n // 2]
    return (ranks[n // 2 - 1] + ranks[n // 2]) / 2.0


def _rank_lists_for_queries(
    index: EmbeddingIndex, queries: np.ndarray
) -> list[list[str]]:
    """Full descending-score rankings for each query row, ties by id."""
    scores = normalize_rows(queries.astype(np.float32)) @ index.matrix.T
    out = []
    for row in scores:
        order = ranked_indices(row, index._id_rank)
        out.append([index.ids[i] for i in order])
    return out


def _truth_sets(val_eps, all_eps, relevance: str) -> list[set[str]]:
    by_label: dict[str, set[str]] = {}
    for ep in all_eps:
        if ep.archetype_label is not None:
            by_label.setdefault(ep.archetype_label, set()).add(ep.id)
    truth = []
    for ep in val_eps:
        if relevance == "exact-episode":
            truth.append({ep.id})
            continue
        if ep.archetype_label is None:
            raise UsageError(
                f"episode {ep.id} has no archetype label; same-archetype "
                f"relevance needs labeled data"
            )
        siblings = by_label[ep.archetype_label] - {ep.id}
        if not siblings:
            raise UsageError(
                f"episode {ep.id} is the only member of archetype "
                f"{ep.archetype_label}; no relevant ids"
            )
        truth.append(siblings)
    return truth


def evaluate(
    params: PoolerParams,
    dataset: Dataset,
    spec: EvalSpec,
    checkpoint_id: str = "",
) -> dict:
    """Index the whole dataset, query with the validation episodes, report.

    Under same-archetype relevance the query's own episode can never be
    relevant, so it is removed from the candidate ranking entirely (for
    flow-to-flow it would otherwise trivially rank first).  The report also
    carries a text-embedding-only baseline arm over the same queries and
    truth sets.
    """
    usable = filter_episodes(dataset.episodes, 1, params.config.max_len)
    if not usable:
        raise DataFormatError("no episodes usable at the pooler's max_len")
    filtered = Dataset(
        episodes=usable, split_seed=dataset.split_seed, meta=dataset.meta
    )
    _, val_eps = split(filtered, spec.train_fraction, dataset.split_seed)
    if not val_eps:
        raise DataFormatError("validation split is empty")

    index = build_index(params, filtered, model_id=checkpoint_id)
    truth = _truth_sets(val_eps, usable, spec.relevance)

    if spec.protocol == "text-to-flow":
        queries = np.stack([ep.text_embedding for ep in val_eps])
    else:
        queries = np.stack(
            [index.matrix[index.row_of(ep.id)] for ep in val_eps]
        )
    rank_lists = _rank_lists_for_queries(index, queries)

    drop_self = spec.relevance == "same-archetype"
    if drop_self:
        rank_lists = [
            [eid for eid in ranked if eid != ep.id]
            for ranked, ep in zip(rank_lists, val_eps)
        ]

    recall = {str(k): recall_at_k(rank_lists, truth, k) for k in spec.ks}
    med = median_rank(rank_lists, truth)

    # Baseline arm: retrieval over raw text embeddings, same queries/truth.
    text_index = EmbeddingIndex(
        ids=[ep.id for ep in usable],
        matrix=normalize_rows(np.stack([ep.text_embedding for ep in usable])),
        metadata={},
        model_id="text-only",
    )
    base_queries = np.stack([ep.text_embedding for ep in val_eps])
    base_lists = _rank_lists_for_queries(text_index, base_queries)
    if drop_self:
        base_lists = [
            [eid for eid in ranked if eid != ep.id]
            for ranked, ep in zip(base_lists, val_eps)
        ]
    baseline = {
        "label": "baseline: text-only, stored provider embeddings",
        "recall": {str(k): recall_at_k(base_lists, truth, k) for k in spec.ks},
        "median_rank": median_rank(base_lists, truth),
    }

    return {
        "protocol": spec.protocol,
        "relevance": spec.relevance,
        "ks": list(spec.ks),
        "n_queries": len(val_eps),
        "n_index": len(index),
        "recall": recall,
        "median_rank": med,
        "checkpoint_id": checkpoint_id,
        "dataset_meta": dict(dataset.meta),
        "baseline": baseline,
    }
