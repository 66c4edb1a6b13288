"""End-to-end retrieve-and-rank classifier with a fit/predict surface.

``fit`` ingests labeled embeddings into an indexed memory (image-to-image
mode) or one text embedding per class (image-to-text mode); ``predict`` runs
retrieval and hands the top-k candidates to the configured ranker backend.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import InvariantViolation
from .index import HnswIndex
from .rank import IdentityRanker, Prediction, PromptStyle, RankerBackend, rerank
from .retrieve import (
    CandidateList,
    RetrievalMode,
    TextBank,
    retrieve_categories_i2i,
    retrieve_categories_i2t,
)
from .store import Modality, store_from_arrays
from .validation import as_matrix, normalize_rows


class RetrieveRankClassifier(BaseEstimator):
    """Retrieval-augmented classifier: nearest memories propose, a ranker decides.

    Parameters
    ----------
    k : int
        Candidate categories handed to the ranker (5 by default; 4-shot runs
        conventionally use 4).
    mode : str
        "i2i" retrieves nearest stored images; "i2t" scores class text
        embeddings directly.
    backend : RankerBackend or None
        Candidate orderer; None means identity (pure retrieval).
    """

    def __init__(
        self,
        k: int = 5,
        mode: str = "i2i",
        backend: RankerBackend | None = None,
        prompt_style: str = "plain",
        m: int = 16,
        ef_construction: int = 200,
        ef_search: int = 256,
        seed: int = 0,
        reduce: bool | str = "auto",
        out_dim: int | None = None,
    ):
        self.k = k
        self.mode = mode
        self.backend = backend
        self.prompt_style = prompt_style
        self.m = m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.seed = seed
        self.reduce = reduce
        self.out_dim = out_dim

    def fit(self, X, y: Sequence[str]) -> "RetrieveRankClassifier":
        X = as_matrix(X)
        labels = [str(name) for name in y]
        if len(labels) != X.shape[0]:
            raise InvariantViolation(f"{X.shape[0]} vectors but {len(labels)} labels")
        mode = RetrievalMode(self.mode)
        if mode is RetrievalMode.IMAGE_TO_IMAGE:
            self.store_ = store_from_arrays(X, labels, modality=Modality.IMAGE)
            self.index_ = HnswIndex(
                m=self.m,
                ef_construction=self.ef_construction,
                ef_search=self.ef_search,
                seed=self.seed,
                reduce=self.reduce,
                out_dim=self.out_dim,
            ).fit(self.store_)
            self.bank_ = None
        else:
            if len(set(labels)) != len(labels):
                raise InvariantViolation("i2t mode expects one vector per class")
            store = store_from_arrays(X, labels, modality=Modality.TEXT)
            self.store_ = store
            self.index_ = None
            self.bank_ = TextBank.from_store(store)
        self.mode_ = mode
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "mode_"):
            raise NotFittedError("RetrieveRankClassifier is not fitted")

    def retrieve(self, Q) -> list[CandidateList]:
        """Top-k candidate categories for each query row."""
        self._check_fitted()
        Q = normalize_rows(as_matrix(Q, self.store_.dimension))
        if self.mode_ is RetrievalMode.IMAGE_TO_IMAGE:
            return [retrieve_categories_i2i(self.index_, q, self.k) for q in Q]
        return [retrieve_categories_i2t(self.bank_, q, self.k) for q in Q]

    def predict_detailed(
        self,
        Q,
        image_refs: Sequence[str] | None = None,
        query_ids: Sequence[int] | None = None,
    ) -> list[Prediction]:
        self._check_fitted()
        backend = self.backend if self.backend is not None else IdentityRanker()
        style = PromptStyle(self.prompt_style)
        out = []
        for i, candidates in enumerate(self.retrieve(Q)):
            out.append(
                rerank(
                    candidates,
                    backend,
                    style=style,
                    image_ref=None if image_refs is None else image_refs[i],
                    query_id=None if query_ids is None else int(query_ids[i]),
                )
            )
        return out

    def predict(self, Q, **kwargs) -> np.ndarray:
        """Final category per query row."""
        return np.array([p.category for p in self.predict_detailed(Q, **kwargs)], dtype=object)
