"""Embed/rank backends: deterministic mock and real-model wrappers."""
from __future__ import annotations

import base64
import hashlib
import io
import threading

import numpy as np


def _unit(vec: np.ndarray) -> list[float]:
    norm = float(np.linalg.norm(vec))
    return (vec / max(norm, 1e-12)).astype(np.float32).tolist()


class MockBackend:
    """Pure function of (request, seed): hash-derived unit embeddings and a
    lexicographic ranking, deterministic and obviously non-oracle."""

    def __init__(self, seed: int, dim: int):
        self.seed = int(seed)
        self.dim = int(dim)

    @property
    def ready(self) -> bool:
        return True

    def embed(self, items) -> tuple[int, list[list[float]]]:
        vectors = []
        for item in items:
            digest = hashlib.sha256(
                f"{self.seed}|{item.kind}|".encode("utf-8") + item.payload.encode("utf-8")
            ).digest()
            rng = np.random.default_rng(np.random.PCG64(int.from_bytes(digest[:8], "little")))
            vectors.append(_unit(rng.standard_normal(self.dim)))
        return self.dim, vectors

    def rank(self, image_ref: str, candidates: list[str], k: int, style: str) -> list[str]:
        return sorted(candidates)


class RealBackend:
    """Wraps a sentence-transformers embedder (and optionally an MLLM ranker).

    Models load lazily in a background thread; endpoints answer 503 until
    loading finishes. Any embedder producing comparable image/text vectors
    satisfies the contract.
    """

    def __init__(self, embed_model: str, ranker_model: str | None = None):
        self.embed_model_name = embed_model
        self.ranker_model_name = ranker_model
        self._model = None
        self._ranker = None
        self._error: str | None = None
        self._lock = threading.Lock()
        self._loader: threading.Thread | None = None

    def start_loading(self) -> None:
        with self._lock:
            if self._loader is None:
                self._loader = threading.Thread(target=self._load, daemon=True)
                self._loader.start()

    def _load(self) -> None:
        try:
            from sentence_transformers import SentenceTransformer

            model = SentenceTransformer(self.embed_model_name)
            with self._lock:
                self._model = model
        except Exception as exc:  # not ready stays 503; reason kept for /healthz
            with self._lock:
                self._error = f"embedder load failed: {exc}"
            return
        if self.ranker_model_name:
            try:
                from transformers import pipeline

                ranker = pipeline("image-text-to-text", model=self.ranker_model_name)
                with self._lock:
                    self._ranker = ranker
            except Exception as exc:
                with self._lock:
                    self._error = f"ranker load failed: {exc}"

    @property
    def ready(self) -> bool:
        self.start_loading()
        with self._lock:
            return self._model is not None

    @property
    def error(self) -> str | None:
        with self._lock:
            return self._error

    def embed(self, items) -> tuple[int, list[list[float]]]:
        from PIL import Image

        with self._lock:
            model = self._model
        inputs = []
        for item in items:
            if item.kind == "image":
                inputs.append(Image.open(io.BytesIO(base64.b64decode(item.payload))).convert("RGB"))
            else:
                inputs.append(item.payload)
        encoded = model.encode(inputs, normalize_embeddings=True)
        return int(encoded.shape[1]), [_unit(np.asarray(row)) for row in encoded]

    def rank(self, image_ref: str, candidates: list[str], k: int, style: str) -> list[str]:
        with self._lock:
            ranker = self._ranker
        if ranker is None:
            raise RuntimeError("no ranker model configured")
        prompt = build_ranking_prompt_text(candidates, style)
        answer = ranker(image_ref, text=prompt, max_new_tokens=128)
        text = answer[0]["generated_text"] if isinstance(answer, list) else str(answer)
        ordered = [name for name in candidates if name.lower() in text.lower()]
        return ordered or list(candidates)


_COUNT_WORDS = (
    "one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen twenty twenty-one "
    "twenty-two twenty-three twenty-four twenty-five twenty-six twenty-seven "
    "twenty-eight twenty-nine thirty thirty-one thirty-two"
).split()


def build_ranking_prompt_text(candidates: list[str], style: str) -> str:
    """Ranking prompt for real-mode MLLMs, mirroring the engine's template."""
    k = len(candidates)
    text = (
        "Please play the role of a classification expert, and sort the provided "
        f"categories from high to low according to the top {k} similarity with "
        f"the input image. Here are the optional categories:[{', '.join(candidates)}]."
    )
    if style == "in_context":
        letters = [chr(ord("A") + i) for i in range(min(k, 26))]
        placeholders = ", ".join(f"'category {c}'" for c in letters)
        count = _COUNT_WORDS[k - 1] if 0 < k <= len(_COUNT_WORDS) else str(k)
        text += (
            f" Your answer should follow the following format, like:[{placeholders}]."
            f" Only choose {count} categories, and no further information."
        )
    return text
