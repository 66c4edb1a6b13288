"""Shared fixtures: synthetic stores, the big seeded ANN workloads.

The heavy builds are session-scoped so the recall, connectivity, and
property tests share one graph. Acceptance tests are moved to the end of
the collection so the suite-time check in there sees the whole run.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from rarank import HnswIndex, store_from_arrays

SESSION_START = time.perf_counter()


def pytest_collection_modifyitems(config, items):
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    return (matrix / np.linalg.norm(matrix, axis=1, keepdims=True)).astype(np.float32)


def exact_topk_ids(store, queries: np.ndarray, k: int) -> list[list[int]]:
    """Ground-truth ids per query by full similarity scan, (sim desc, id asc)."""
    sims = queries @ store.vectors.T
    out = []
    for row in sims:
        order = np.lexsort((store.ids, -row))[:k]
        out.append([int(store.ids[i]) for i in order])
    return out


def make_clustered(n: int, dim: int, n_classes: int, noise: float, seed: int):
    """Unit vectors around class centers; ``noise`` is the norm ratio of the
    noise component to the unit center, so difficulty is dimension-independent
    (cos to the own center is roughly 1/sqrt(1 + noise^2))."""
    rng = np.random.default_rng(seed)
    centers = unit_rows(rng.standard_normal((n_classes, dim)))
    assignments = rng.integers(0, n_classes, size=n)
    direction = unit_rows(rng.standard_normal((n, dim)))
    return unit_rows(centers[assignments] + noise * direction), assignments, centers


@pytest.fixture(scope="session")
def ann10k():
    """10,000 seeded random unit vectors (d=64), default index, 1,000 queries."""
    rng = np.random.default_rng(42)
    vectors = unit_rows(rng.standard_normal((10_000, 64)))
    labels = [f"class_{i % 50:02d}" for i in range(10_000)]
    store = store_from_arrays(vectors, labels, renormalize=False)
    index = HnswIndex(seed=7).fit(store)
    queries = unit_rows(rng.standard_normal((1_000, 64)))
    truth = exact_topk_ids(store, queries, 10)
    return store, index, queries, truth


@pytest.fixture(scope="session")
def clustered576():
    """5,000 clustered vectors at d=576, indexed through the 9x reduction."""
    vectors, assignments, _ = make_clustered(5_000, 576, 80, noise=0.35, seed=11)
    labels = [f"cat_{int(a):02d}" for a in assignments]
    store = store_from_arrays(vectors, labels, renormalize=False)
    index = HnswIndex(seed=3).fit(store)
    rng = np.random.default_rng(12)
    picks = rng.integers(0, len(vectors), size=500)
    jitter = rng.standard_normal((500, 576))
    jitter /= np.linalg.norm(jitter, axis=1, keepdims=True)
    queries = unit_rows(vectors[picks] + 0.3 * jitter)
    truth = exact_topk_ids(store, queries, 10)
    return store, index, queries, truth


@pytest.fixture()
def small_store():
    rng = np.random.default_rng(5)
    vectors = unit_rows(rng.standard_normal((60, 16)))
    labels = [f"lbl{i % 6}" for i in range(60)]
    return store_from_arrays(vectors, labels, renormalize=False)
