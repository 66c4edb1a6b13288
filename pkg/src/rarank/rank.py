"""Prompt building, ranker backends, output validation, final prediction.

The ranker is a pluggable backend behind a text contract: it receives the
candidate categories and answers with an ordering. Answers are validated
strictly against the candidate set (names outside the list or duplicates
invalidate the verdict) while tolerating surrounding prose and case drift;
an invalid or unreachable ranker falls back to retrieval order, so the
pipeline is never worse than its retrieval top-1.
"""
from __future__ import annotations

import abc
import enum
import json
import re
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import requests

from .errors import BackendUnreachable, InvariantViolation, TooManyCandidates
from .retrieve import CandidateList

MAX_CANDIDATES = 32

_PLAIN_TEMPLATE = (
    "Please play the role of a classification expert, and sort the provided "
    "categories from high to low according to the top {k} similarity with the "
    "input image. Here are the optional categories:{categories}."
)
_ANSWER_FORMAT = (
    " Your answer should follow the following format, like:[{placeholders}]."
    " Only choose {count} categories, and no further information."
)

_NUMBER_WORDS = (
    "one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen twenty twenty-one "
    "twenty-two twenty-three twenty-four twenty-five twenty-six twenty-seven "
    "twenty-eight twenty-nine thirty thirty-one thirty-two"
).split()


class PromptStyle(enum.Enum):
    PLAIN = "plain"
    IN_CONTEXT = "in_context"


class PredictionSource(enum.Enum):
    RANKER = "ranker"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class RankingPrompt:
    text: str
    candidates: tuple[str, ...]
    k: int
    style: PromptStyle


@dataclass(frozen=True)
class RankerVerdict:
    """Validated backend answer; ``ordering`` is non-empty only when valid."""

    ordering: tuple[str, ...]
    raw: str
    valid: bool


@dataclass(frozen=True)
class Prediction:
    category: str
    source: PredictionSource
    candidates: CandidateList
    verdict: RankerVerdict | None
    error: str | None = None

    def ordering(self) -> tuple[str, ...]:
        """Full predicted ordering for top-k metrics.

        A valid partial verdict is completed by appending the missing
        candidates in retrieval order; anything else is retrieval order.
        """
        names = self.candidates.names
        if self.verdict is not None and self.verdict.valid and self.verdict.ordering:
            ranked = list(self.verdict.ordering)
            ranked.extend(n for n in names if n not in self.verdict.ordering)
            return tuple(ranked)
        return names


def render_category_list(names: Sequence[str]) -> str:
    return "[" + ", ".join(names) + "]"


def _placeholder_names(k: int) -> list[str]:
    letters = [chr(ord("A") + i) for i in range(26)]
    letters += ["A" + chr(ord("A") + i) for i in range(26)]
    return [f"category {letters[i]}" for i in range(k)]


def build_ranking_prompt(
    candidates: CandidateList | Sequence[str], style: PromptStyle = PromptStyle.PLAIN
) -> RankingPrompt:
    """Render the ranking prompt; every candidate name appears verbatim once."""
    names = tuple(candidates.names if isinstance(candidates, CandidateList) else candidates)
    if not names:
        raise InvariantViolation("cannot build a prompt without candidates")
    if len(names) > MAX_CANDIDATES:
        raise TooManyCandidates(f"{len(names)} candidates (limit {MAX_CANDIDATES})")
    k = len(names)
    text = _PLAIN_TEMPLATE.format(k=k, categories=render_category_list(names))
    if style is PromptStyle.IN_CONTEXT:
        placeholders = ", ".join(f"'{p}'" for p in _placeholder_names(k))
        text += _ANSWER_FORMAT.format(placeholders=placeholders, count=_NUMBER_WORDS[k - 1])
    return RankingPrompt(text=text, candidates=names, k=k, style=style)


_BRACKET_RE = re.compile(r"\[(.*?)\]", re.DOTALL)
_QUOTED_RE = re.compile(r"'([^']*)'|\"([^\"]*)\"")


def parse_ranking(raw: str, candidates: CandidateList | Sequence[str]) -> RankerVerdict:
    """Extract and validate the first bracketed list in ``raw``.

    Quoted names are preferred; an unquoted list splits on commas. Matching
    against the candidate set is case-insensitive but the returned ordering
    uses the candidates' canonical casing. Any name outside the set, any
    duplicate, or a missing list yields valid=False.
    """
    names = tuple(candidates.names if isinstance(candidates, CandidateList) else candidates)
    canonical = {name.lower(): name for name in names}
    match = _BRACKET_RE.search(raw or "")
    if match is None:
        return RankerVerdict(ordering=(), raw=raw, valid=False)
    body = match.group(1)
    if "'" in body or '"' in body:
        parts = [a or b for a, b in _QUOTED_RE.findall(body)]
    else:
        parts = body.split(",")
    parsed = [p.strip() for p in parts if p.strip()]
    if not parsed:
        return RankerVerdict(ordering=(), raw=raw, valid=False)
    ordering: list[str] = []
    for name in parsed:
        hit = canonical.get(name.lower())
        if hit is None or hit in ordering:
            return RankerVerdict(ordering=(), raw=raw, valid=False)
        ordering.append(hit)
    return RankerVerdict(ordering=tuple(ordering), raw=raw, valid=True)


class RankerBackend(abc.ABC):
    """Contract for anything that can order candidate categories."""

    @abc.abstractmethod
    def rank(self, prompt: RankingPrompt, *, image_ref: str | None = None,
             query_id: int | None = None) -> str:
        """Return the backend's raw textual answer to the prompt."""


class IdentityRanker(RankerBackend):
    """Echoes the candidate order; end-to-end this equals pure retrieval."""

    def rank(self, prompt, *, image_ref=None, query_id=None) -> str:
        return render_category_list(prompt.candidates)


class OracleRanker(RankerBackend):
    """Test double that surfaces the hidden ground truth when retrievable.

    Converts hit@k into top-1: whenever the true category is among the
    candidates it is answered first, otherwise candidate order is kept.
    """

    def __init__(self, truth: Mapping[int, str]):
        self.truth = dict(truth)

    def rank(self, prompt, *, image_ref=None, query_id=None) -> str:
        names = list(prompt.candidates)
        answer = self.truth.get(query_id)
        if answer in names:
            names.remove(answer)
            names.insert(0, answer)
        return render_category_list(names)


class RemoteRanker(RankerBackend):
    """HTTP backend: POST {url}/rank with the wire-contract JSON body.

    Request: {"image_ref": str, "candidates": [str], "k": int,
    "style": "plain"|"in_context"}; response: {"ranking": [str]}. Any 4xx/5xx
    or transport failure counts as unreachable and is retried with backoff
    before giving up. In-flight requests are capped by a semaphore.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 8,
    ):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._gate = threading.Semaphore(max_in_flight)
        self._local = threading.local()

    @property
    def _session(self) -> requests.Session:
        # One session per thread; requests sessions are not thread-safe.
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def rank(self, prompt, *, image_ref=None, query_id=None) -> str:
        body = {
            "image_ref": image_ref if image_ref is not None else str(query_id or ""),
            "candidates": list(prompt.candidates),
            "k": prompt.k,
            "style": prompt.style.value,
        }
        last_error = "no attempt made"
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = self._session.post(f"{self.url}/rank", json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code != 200:
                last_error = f"HTTP {resp.status_code}"
                continue
            try:
                payload = resp.json()
                ranking = payload["ranking"]
            except (ValueError, KeyError, TypeError):
                # Contract violation in a 200 answer: surface the body so the
                # parser records an invalid verdict instead of retrying.
                return resp.text
            return json.dumps(ranking)
        raise BackendUnreachable(f"{self.url}/rank failed after {self.retries + 1} attempts: {last_error}")


def rerank(
    candidates: CandidateList,
    backend: RankerBackend,
    *,
    style: PromptStyle = PromptStyle.PLAIN,
    image_ref: str | None = None,
    query_id: int | None = None,
) -> Prediction:
    """Ask the backend to order the candidates and pick the final category.

    A valid non-empty verdict wins; anything else (parse failure, names
    beyond the list, unreachable backend) falls back to retrieval order. The
    predicted category is always a member of the candidate list.
    """
    if len(candidates) == 0:
        raise InvariantViolation("cannot rerank an empty candidate list")
    prompt = build_ranking_prompt(candidates, style)
    try:
        raw = backend.rank(prompt, image_ref=image_ref, query_id=query_id)
    except BackendUnreachable as exc:
        return Prediction(
            category=candidates.names[0],
            source=PredictionSource.FALLBACK,
            candidates=candidates,
            verdict=None,
            error=str(exc),
        )
    verdict = parse_ranking(raw, candidates)
    if verdict.valid and verdict.ordering:
        return Prediction(
            category=verdict.ordering[0],
            source=PredictionSource.RANKER,
            candidates=candidates,
            verdict=verdict,
        )
    return Prediction(
        category=candidates.names[0],
        source=PredictionSource.FALLBACK,
        candidates=candidates,
        verdict=verdict,
    )
