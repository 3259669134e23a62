from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uflow.dataio import SynthConfig, synth_dataset
from uflow.errors import UsageError
from uflow.evalkit import (
    EvalSpec,
    evaluate,
    first_relevant_rank,
    median_rank,
    recall_at_k,
)
from uflow.pooler import PoolerConfig, init_params


def _lists(first_ranks: list[int], depth: int = 15):
    """Rank lists where query i's relevant id sits at first_ranks[i]."""
    rank_lists, truth = [], []
    for qi, r in enumerate(first_ranks):
        ids = [f"junk-{qi}-{j}" for j in range(depth)]
        ids[r - 1] = f"rel-{qi}"
        rank_lists.append(ids)
        truth.append({f"rel-{qi}"})
    return rank_lists, truth


# --- recall@k ---------------------------------------------------------------------

def test_recall_perfect_ranking():
    lists, truth = _lists([1, 1, 1])
    assert recall_at_k(lists, truth, 1) == 1.0


def test_recall_threshold():
    lists, truth = _lists([7])
    assert recall_at_k(lists, truth, 5) == 0.0
    assert recall_at_k(lists, truth, 10) == 1.0


def test_recall_hand_counted():
    lists, truth = _lists([1, 2, 6, 11])
    assert recall_at_k(lists, truth, 5) == 0.5


def test_recall_errors():
    lists, truth = _lists([1])
    with pytest.raises(UsageError):
        recall_at_k(lists, truth, 0)
    with pytest.raises(UsageError):
        recall_at_k(lists, [set()], 1)
    with pytest.raises(UsageError):
        recall_at_k([], [], 1)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=14), min_size=1, max_size=8))
def test_recall_monotone_in_k(first_ranks):
    lists, truth = _lists(first_ranks)
    values = [recall_at_k(lists, truth, k) for k in range(1, 16)]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert values[-1] == 1.0  # depth covers every planted rank


# --- median rank -------------------------------------------------------------------

def test_median_two_point():
    lists, truth = _lists([1, 3])
    assert median_rank(lists, truth) == 2.0


def test_median_all_rank_one():
    lists, truth = _lists([1, 1, 1])
    assert median_rank(lists, truth) == 1.0


def test_median_even_count_mean_of_middle_two():
    lists, truth = _lists([1, 2, 6, 11])
    assert median_rank(lists, truth) == 4.0


def test_median_at_least_one():
    lists, truth = _lists([3, 5, 9])
    assert median_rank(lists, truth) >= 1.0


def test_first_relevant_rank_missing_is_inf():
    assert first_relevant_rank(["a", "b"], {"zz"}) == math.inf


# --- evaluate ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def eval_dataset():
    return synth_dataset(
        SynthConfig(n_archetypes=4, n_episodes=120, noise_sigma=0.1, seed=21)
    )


def test_evaluate_report_shape_and_determinism(eval_dataset):
    params = init_params(PoolerConfig(), 3)
    spec = EvalSpec(ks=[1, 5], protocol="text-to-flow", relevance="same-archetype")
    a = evaluate(params, eval_dataset, spec, checkpoint_id="ck")
    b = evaluate(params, eval_dataset, spec, checkpoint_id="ck")
    assert a == b
    assert a["protocol"] == "text-to-flow"
    assert a["relevance"] == "same-archetype"
    assert a["n_queries"] == 12
    assert set(a["recall"]) == {"1", "5"}
    assert a["checkpoint_id"] == "ck"
    assert a["median_rank"] >= 1.0
    assert a["baseline"]["label"].startswith("baseline")
    assert a["dataset_meta"] == eval_dataset.meta


def test_evaluate_recall_monotone_in_k(eval_dataset):
    params = init_params(PoolerConfig(), 4)
    spec = EvalSpec(ks=[1, 5, 10], protocol="flow-to-flow", relevance="same-archetype")
    rep = evaluate(params, eval_dataset, spec)
    r = [rep["recall"][str(k)] for k in (1, 5, 10)]
    assert r[0] <= r[1] <= r[2]
    assert all(0.0 <= v <= 1.0 for v in r)


def test_evaluate_exact_episode_flow_to_flow_is_perfect(eval_dataset):
    # The query's own row is in the index and ranks first.
    params = init_params(PoolerConfig(), 5)
    spec = EvalSpec(ks=[1], protocol="flow-to-flow", relevance="exact-episode")
    rep = evaluate(params, eval_dataset, spec)
    assert rep["recall"]["1"] == 1.0
    assert rep["median_rank"] == 1.0


def test_evaluate_untrained_text_retrieval_near_chance(eval_dataset):
    params = init_params(PoolerConfig(), 123)
    spec = EvalSpec(ks=[1], protocol="text-to-flow", relevance="same-archetype")
    rep = evaluate(params, eval_dataset, spec)
    assert rep["recall"]["1"] <= 3 * (1 / 4)


def test_evaluate_baseline_text_only_is_strong_on_synthetic(eval_dataset):
    # Same-archetype episodes share identical toy text embeddings, so the
    # text-only arm is near-perfect by construction.
    params = init_params(PoolerConfig(), 6)
    spec = EvalSpec(ks=[1], protocol="text-to-flow", relevance="same-archetype")
    rep = evaluate(params, eval_dataset, spec)
    assert rep["baseline"]["recall"]["1"] >= 0.9


def test_evaluate_requires_labels_for_same_archetype(eval_dataset):
    from uflow.dataio import Dataset, Episode

    eps = [
        Episode(
            id=ep.id,
            description=ep.description,
            screens=ep.screens,
            text_embedding=ep.text_embedding,
            archetype_label=None,
        )
        for ep in eval_dataset.episodes[:20]
    ]
    unlabeled = Dataset(episodes=eps, split_seed=1)
    params = init_params(PoolerConfig(), 7)
    with pytest.raises(UsageError):
        evaluate(
            params,
            unlabeled,
            EvalSpec(ks=[1], protocol="text-to-flow", relevance="same-archetype"),
        )


def test_eval_spec_validation():
    with pytest.raises(UsageError):
        EvalSpec(ks=[5, 1])
    with pytest.raises(UsageError):
        EvalSpec(ks=[0])
    with pytest.raises(UsageError):
        EvalSpec(protocol="nope")
    with pytest.raises(UsageError):
        EvalSpec(relevance="nope")
