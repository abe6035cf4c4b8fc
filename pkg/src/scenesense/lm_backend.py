"""Model-access layer: string scorers and text embedders.

Two capabilities, both pluggable:
  * scorer: text -> log-probability-like score (higher = more probable)
  * embedder: text -> fixed-dimension vector

Deterministic mock implementations cover tests and offline runs; HTTP
clients talk to an external inference service for real runs. Scores are
sums of token log-probabilities (natural log) unless a wrapper normalizes
by length; a "pseudo_log_likelihood" semantics tag is reserved for
masked-LM scorers, which no built-in backend provides.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import requests

from .cooccurrence import CooccurrenceTable, sum_log_conditionals
from .errors import AuthError, BackendError, ProtocolError, ValidationError
from .validation import check_positive

API_KEY_ENV = "SCENESENSE_API_KEY"

SCORE_SEMANTICS = (
    "sum_token_logprob",
    "mean_token_logprob_per_word",
    "conditional_log_product",
    "hash_mock",
    "table_lookup",
    "pseudo_log_likelihood",
)


@dataclass(frozen=True)
class BackendMetadata:
    name: str
    semantics: str


class LmScorer(Protocol):
    metadata: BackendMetadata

    def score(self, text: str) -> float: ...

    def batch_score(self, texts: Sequence[str]) -> list[float]: ...


class TextEmbedder(Protocol):
    metadata: BackendMetadata

    @property
    def dimension(self) -> int | None: ...

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class _BatchFromSingle:
    """Mixin providing batch_score in terms of score."""

    def batch_score(self, texts: Sequence[str]) -> list[float]:
        return [self.score(t) for t in texts]


# ---------------------------------------------------------------------------
# Mock scorers


class TableScorer(_BatchFromSingle):
    """Exact-match lookup table with a default for anything else."""

    def __init__(self, entries: dict[str, float], default_score: float = -100.0, name: str = "table-mock"):
        self.entries = dict(entries)
        self.default_score = default_score
        self.metadata = BackendMetadata(name=name, semantics="table_lookup")

    def score(self, text: str) -> float:
        return self.entries.get(text, self.default_score)


class ShiftedScorer(_BatchFromSingle):
    """Adds a constant to every score of a base scorer.

    Downstream argmaxes and softmaxes must be invariant to this shift.
    """

    def __init__(self, base: LmScorer, offset: float):
        self.base = base
        self.offset = offset
        self.metadata = base.metadata

    def score(self, text: str) -> float:
        return self.base.score(text) + self.offset

    def batch_score(self, texts: Sequence[str]) -> list[float]:
        return [s + self.offset for s in self.base.batch_score(texts)]


class LengthNormalizedScorer(_BatchFromSingle):
    """Divides the base score by the whitespace token count of the text.

    Token counts are not available over the wire, so word count stands in
    for them; use only when comparing strings of similar tokenization.
    """

    def __init__(self, base: LmScorer):
        self.base = base
        self.metadata = BackendMetadata(name=base.metadata.name, semantics="mean_token_logprob_per_word")

    def score(self, text: str) -> float:
        return self.base.score(text) / max(1, len(text.split()))


class HashScorer(_BatchFromSingle):
    """Deterministic pseudo-random scores in [-10, 0], keyed by text.

    Useful as an arbitrary but reproducible stand-in when no table or
    service is available.
    """

    def __init__(self, seed: int = 0):
        self._key = str(seed).encode()
        self.metadata = BackendMetadata(name=f"hash-scorer-{seed}", semantics="hash_mock")

    def score(self, text: str) -> float:
        digest = hashlib.blake2b(text.encode(), key=self._key, digest_size=8).digest()
        return -10.0 * (int.from_bytes(digest, "little") / 2**64)


_ZERO_SHOT_QUERY_RE = re.compile(r"^A room containing (?P<objects>.+) is called an? (?P<room>.+)\.$")


def parse_zero_shot_query(text: str) -> tuple[list[str], str] | None:
    """Invert the label-query template back into (object labels, room label)."""
    match = _ZERO_SHOT_QUERY_RE.match(text)
    if match is None:
        return None
    blob = match.group("objects")
    if ", " in blob:
        parts = blob.split(", ")
        last = parts[-1]
        if last.startswith("and "):
            last = last[4:]
        objects = [*parts[:-1], last]
    elif " and " in blob:
        objects = blob.split(" and ", 1)
    else:
        objects = [blob]
    return objects, match.group("room")


class ConditionalTableScorer(_BatchFromSingle):
    """Scores label-query strings as the sum of log conditionals.

    For a query naming objects o_1..o_k and room r, the score is
    sum_i log p(r | o_i) read from a co-occurrence table. Objects sum in
    sorted order, matching the statistical classifier's accumulation, so
    score-argmax classification is bit-for-bit identical to the
    statistical baseline. That exact equivalence is what makes this a
    useful test oracle.
    """

    def __init__(self, table: CooccurrenceTable, strict: bool = False, default_score: float = -1000.0):
        self.table = table
        self.strict = strict
        self.default_score = default_score
        self._room_index = {r: i for i, r in enumerate(table.label_space.room_labels)}
        self.metadata = BackendMetadata(name="conditional-mock", semantics="conditional_log_product")

    def score(self, text: str) -> float:
        parsed = parse_zero_shot_query(text)
        if parsed is None:
            if self.strict:
                raise ValidationError(f"not a label-query string: {text!r}")
            return self.default_score
        objects, room = parsed
        j = self._room_index.get(room)
        if j is None:
            if self.strict:
                raise ValidationError(f"unknown room label {room!r} in query {text!r}")
            return self.default_score
        return float(sum_log_conditionals(self.table, sorted(objects))[j])


def mock_scorer_from_conditionals(
    table: CooccurrenceTable, strict: bool = False, default_score: float = -1000.0
) -> ConditionalTableScorer:
    return ConditionalTableScorer(table, strict=strict, default_score=default_score)


# ---------------------------------------------------------------------------
# Mock embedders


class HashEmbedder:
    """Feature-hashed unigrams and bigrams, L2-normalized.

    Deterministic across runs and platforms for a given seed. Texts that
    share more tokens tend to land closer in cosine similarity, which is
    the property downstream heads rely on.
    """

    def __init__(self, dimension: int = 256, seed: int = 0):
        check_positive(dimension, "dimension")
        self._dimension = int(dimension)
        self._key = str(seed).encode()
        self.metadata = BackendMetadata(name=f"hash-embedder-{dimension}-{seed}", semantics="hash_mock")

    @property
    def dimension(self) -> int:
        return self._dimension

    def embed(self, text: str) -> np.ndarray:
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        vec = np.zeros(self._dimension)
        for gram in grams:
            digest = hashlib.blake2b(gram.encode(), key=self._key, digest_size=16).digest()
            idx = int.from_bytes(digest[:8], "little") % self._dimension
            sign = 1.0 if digest[8] & 1 else -1.0
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        return vec / norm if norm > 0 else vec

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


def hash_embedder(dimension: int, seed: int = 0) -> HashEmbedder:
    return HashEmbedder(dimension=dimension, seed=seed)


class TableEmbedder:
    """Exact-match text -> vector lookup; unknown texts get a zero vector."""

    def __init__(self, entries: dict[str, Sequence[float]], dimension: int):
        check_positive(dimension, "dimension")
        self._dimension = int(dimension)
        self.entries = {k: np.asarray(v, dtype=float) for k, v in entries.items()}
        for text, vec in self.entries.items():
            if vec.shape != (dimension,):
                raise ValidationError(f"entry for {text!r} has shape {vec.shape}, expected ({dimension},)")
        self.metadata = BackendMetadata(name="table-embedder", semantics="table_lookup")

    @property
    def dimension(self) -> int:
        return self._dimension

    def embed(self, text: str) -> np.ndarray:
        vec = self.entries.get(text)
        return vec.copy() if vec is not None else np.zeros(self._dimension)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


# ---------------------------------------------------------------------------
# HTTP backends

TRANSIENT_STATUSES = frozenset({429, 500, 502, 503, 504})


class _HttpClient:
    """Shared POST-with-retry machinery for the scoring and embedding APIs.

    Transient failures (connection errors, 5xx, 429) are retried with
    exponential backoff up to max_attempts total tries; auth rejections and
    other 4xx are not. A semaphore caps concurrent in-flight requests
    across all calling threads.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        batch_size: int = 32,
        max_in_flight: int = 4,
    ):
        if not endpoint:
            raise ValidationError("endpoint must be a nonempty URL")
        check_positive(max_attempts, "max_attempts")
        check_positive(batch_size, "batch_size")
        check_positive(max_in_flight, "max_in_flight")
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.max_attempts = int(max_attempts)
        self.backoff = backoff
        self.batch_size = int(batch_size)
        self.max_in_flight = int(max_in_flight)
        self._flight = threading.BoundedSemaphore(self.max_in_flight)
        self._local = threading.local()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _post(self, path: str, payload: dict) -> dict:
        request_id = uuid.uuid4().hex
        headers = {"X-Request-Id": request_id}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.endpoint}{path}"
        last_error: BackendError | None = None
        for attempt in range(self.max_attempts):
            if attempt > 0:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            with self._flight:
                try:
                    response = self._session().post(url, json=payload, headers=headers, timeout=self.timeout)
                except requests.RequestException as exc:
                    last_error = BackendError(f"transport failure calling {url}: {exc}", request_id)
                    continue
            if response.status_code == 200:
                try:
                    body = response.json()
                except ValueError as exc:
                    raise ProtocolError(f"non-JSON response from {url}", request_id) from exc
                if not isinstance(body, dict):
                    raise ProtocolError(f"response from {url} is not a JSON object", request_id)
                return body
            if response.status_code in (401, 403):
                raise AuthError(f"authentication rejected by {url} (HTTP {response.status_code})", request_id)
            if response.status_code in TRANSIENT_STATUSES:
                last_error = BackendError(f"HTTP {response.status_code} from {url}", request_id)
                continue
            raise BackendError(
                f"HTTP {response.status_code} from {url}: {response.text[:200]}", request_id
            )
        assert last_error is not None
        raise last_error

    def _chunks(self, items: list) -> list[list]:
        return [items[i : i + self.batch_size] for i in range(0, len(items), self.batch_size)]

    def _map_chunks(self, fn, chunks: list[list]) -> list[list]:
        if len(chunks) <= 1:
            return [fn(c) for c in chunks]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(fn, chunks))


class HttpScorer(_HttpClient):
    """POST {endpoint}/score with {"model", "prompts"}; expects {"scores"}.

    Scores are summed token log-probabilities in natural log. Batches are
    split into chunks of at most batch_size prompts; chunk order (and hence
    score order) is preserved.
    """

    def __init__(self, endpoint: str, model: str, **kwargs):
        super().__init__(endpoint, model, **kwargs)
        self.metadata = BackendMetadata(name=model, semantics="sum_token_logprob")

    def score(self, text: str) -> float:
        return self.batch_score([text])[0]

    def batch_score(self, texts: Sequence[str]) -> list[float]:
        texts = list(texts)
        if not texts:
            return []
        results = self._map_chunks(self._score_chunk, self._chunks(texts))
        return [s for chunk in results for s in chunk]

    def _score_chunk(self, prompts: list[str]) -> list[float]:
        body = self._post("/score", {"model": self.model, "prompts": prompts})
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(prompts):
            raise ProtocolError(
                f"expected {len(prompts)} scores, got {type(scores).__name__} "
                f"of length {len(scores) if isinstance(scores, list) else 'n/a'}"
            )
        try:
            return [float(s) for s in scores]
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"non-numeric score in response: {exc}") from exc


class HttpEmbedder(_HttpClient):
    """POST {endpoint}/embed with {"model", "texts"}; expects {"embeddings"}.

    The vector dimension is learned from the first response and enforced on
    every later one.
    """

    def __init__(self, endpoint: str, model: str, **kwargs):
        super().__init__(endpoint, model, **kwargs)
        self.metadata = BackendMetadata(name=model, semantics="sum_token_logprob")
        self._dimension: int | None = None
        self._dim_lock = threading.Lock()

    @property
    def dimension(self) -> int | None:
        return self._dimension

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        texts = list(texts)
        if not texts:
            return []
        results = self._map_chunks(self._embed_chunk, self._chunks(texts))
        return [v for chunk in results for v in chunk]

    def _embed_chunk(self, texts: list[str]) -> list[np.ndarray]:
        body = self._post("/embed", {"model": self.model, "texts": texts})
        embeddings = body.get("embeddings")
        if not isinstance(embeddings, list) or len(embeddings) != len(texts):
            raise ProtocolError(f"expected {len(texts)} embeddings, got {embeddings!r:.80}")
        vectors = []
        for vec in embeddings:
            arr = np.asarray(vec, dtype=float)
            if arr.ndim != 1:
                raise ProtocolError("embedding is not a flat vector")
            with self._dim_lock:
                if self._dimension is None:
                    self._dimension = int(arr.size)
            if arr.size != self._dimension:
                raise ProtocolError(
                    f"embedding dimension changed: expected {self._dimension}, got {arr.size}"
                )
            vectors.append(arr)
        return vectors


def http_scorer(endpoint: str, model: str, api_key: str | None = None, **kwargs) -> HttpScorer:
    return HttpScorer(endpoint, model, api_key=api_key, **kwargs)


def http_embedder(endpoint: str, model: str, api_key: str | None = None, **kwargs) -> HttpEmbedder:
    return HttpEmbedder(endpoint, model, api_key=api_key, **kwargs)
