"""Embedding-based retrieval over seed examples and object seeds.

The index is deliberately small and exact: similarity search is a full
scan with cosine scores and a stable sort, so ranking is reproducible
bit-for-bit and ties resolve by insertion order.  Embeddings come from
one of three interchangeable backends: a remote service, a disk cache
in front of any backend, or a dependency-free hashing embedder good
enough for tests and offline work.
"""

from __future__ import annotations

import hashlib
import json
import math
import pathlib
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass

import requests

from arcforge.model import ObjectSeed, SeedExample


class EmbeddingError(Exception):
    """An embedding backend failed or returned an unusable payload."""


@dataclass(frozen=True)
class EmbeddingVector:
    model_id: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise EmbeddingError("embedding has no components")


def dot(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    total = 0.0
    for i in range(len(a)):
        total += a[i] * b[i]
    return total


def l2_norm(a: Sequence[float]) -> float:
    return math.sqrt(dot(a, a))


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    norm_a = l2_norm(a)
    norm_b = l2_norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return dot(a, b) / (norm_a * norm_b)


# ---------------------------------------------------------------------------
# the index
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IndexEntry:
    key: str  # the text that was embedded
    vector: tuple[float, ...]
    payload: object


@dataclass(frozen=True)
class VectorIndex:
    """Immutable full-scan index; grow it with :meth:`with_added`."""

    model_id: str
    entries: tuple[IndexEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def top_k(self, query: Sequence[float], k: int) -> list[tuple[IndexEntry, float]]:
        """The ``k`` most-similar entries, ties broken by insertion order.

        Entries whose vector has zero norm score 0.0; a zero-norm query
        is an error.
        """
        if k < 0:
            raise ValueError("k must be non-negative")
        query_norm = l2_norm(query)
        if query_norm == 0.0:
            raise ValueError("cannot search with a zero-norm query vector")
        scores: list[float] = []
        for entry in self.entries:
            entry_norm = l2_norm(entry.vector)
            if entry_norm == 0.0:
                scores.append(0.0)
            else:
                scores.append(dot(entry.vector, query) / (entry_norm * query_norm))
        order = sorted(range(len(scores)), key=lambda i: -scores[i])
        return [(self.entries[i], scores[i]) for i in order[:k]]

    def with_added(
        self, embedder, items: Iterable[object], key_of: Callable[[object], str]
    ) -> "VectorIndex":
        """A new index with ``items`` appended (existing keys are kept)."""
        known = {entry.key for entry in self.entries}
        added = list(self.entries)
        for item in items:
            key = key_of(item)
            if key in known:
                continue
            known.add(key)
            vector = embedder.embed(key)
            if vector.model_id != self.model_id:
                raise EmbeddingError(
                    f"index built with {self.model_id!r}, embedder is {vector.model_id!r}"
                )
            added.append(IndexEntry(key=key, vector=vector.values, payload=item))
        return VectorIndex(model_id=self.model_id, entries=tuple(added))


def build_index(
    embedder, items: Iterable[object], key_of: Callable[[object], str]
) -> VectorIndex:
    """Embed ``key_of(item)`` per item, deduplicating on the key text.

    The first item with a given key wins; later duplicates are dropped.
    """
    return VectorIndex(model_id=embedder.model_id, entries=()).with_added(
        embedder, items, key_of
    )


def index_seed_examples(embedder, seeds: Iterable[SeedExample]) -> VectorIndex:
    return build_index(embedder, seeds, lambda seed: seed.description)


def index_object_seeds(embedder, seeds: Iterable[ObjectSeed]) -> VectorIndex:
    """Index object seeds by name; only explicit objects are stored."""
    explicit = [seed for seed in seeds if seed.kind == "explicit"]
    return build_index(embedder, explicit, lambda seed: seed.name)


# ---------------------------------------------------------------------------
# seed lookup by name
# ---------------------------------------------------------------------------


def normalize_name(name: str) -> str:
    """Casefold and collapse separators so 'Signal_Source ' == 'signal source'."""
    return " ".join(name.casefold().replace("_", " ").replace("-", " ").split())


def build_seed_catalog(seeds: Iterable[ObjectSeed]) -> dict[str, ObjectSeed]:
    catalog: dict[str, ObjectSeed] = {}
    for seed in seeds:
        key = normalize_name(seed.name)
        if key not in catalog:
            catalog[key] = seed
    return catalog


def lookup_object_seed(
    catalog: dict[str, ObjectSeed], name: str
) -> ObjectSeed | None:
    """Find a stored seed whose normalized name matches, else ``None``."""
    return catalog.get(normalize_name(name))


# ---------------------------------------------------------------------------
# embedding backends
# ---------------------------------------------------------------------------


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Append-only JSON-lines cache keyed by (sha256(text), model id)."""

    def __init__(self, path: str | pathlib.Path) -> None:
        self.path = pathlib.Path(path)
        self._memory: dict[tuple[str, str], tuple[float, ...]] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    values = tuple(float(v) for v in doc["values"])
                    self._memory[(doc["key"], doc["model_id"])] = values
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    continue  # a torn or stale line should not poison the cache

    def get(self, model_id: str, text: str) -> tuple[float, ...] | None:
        return self._memory.get((text_key(text), model_id))

    def put(self, model_id: str, text: str, values: Sequence[float]) -> None:
        key = text_key(text)
        stored = tuple(float(v) for v in values)
        if (key, model_id) in self._memory:
            return
        self._memory[(key, model_id)] = stored
        record = {
            "key": key,
            "model_id": model_id,
            "dim": len(stored),
            "values": list(stored),
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, separators=(",", ":")) + "\n")

    def __len__(self) -> int:
        return len(self._memory)


class HashEmbedder:
    """Deterministic character-trigram embedder with no model behind it.

    Each trigram of the padded, casefolded text is hashed into one of
    ``dim`` signed buckets; the bag is L2-normalized.  Shared substrings
    produce nonzero similarity ('amp' lands inside 'amplifier'), which
    is all retrieval tests need.  Texts shorter than one trigram embed
    to the zero vector.
    """

    def __init__(self, dim: int = 64, model_id: str = "hash-trigram-v1") -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.model_id = model_id

    def embed(self, text: str) -> EmbeddingVector:
        padded = f" {text.casefold()} "
        buckets = [0.0] * self.dim
        for i in range(len(padded) - 2):
            digest = hashlib.sha256(padded[i : i + 3].encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            buckets[bucket] += sign
        norm = l2_norm(buckets)
        if norm > 0.0:
            buckets = [v / norm for v in buckets]
        return EmbeddingVector(model_id=self.model_id, values=tuple(buckets))

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self.embed(text) for text in texts]


class CachedEmbedder:
    """Read-through cache wrapper around any embedder."""

    def __init__(self, inner, cache: EmbeddingCache) -> None:
        self.inner = inner
        self.cache = cache
        self.model_id = inner.model_id

    def embed(self, text: str) -> EmbeddingVector:
        hit = self.cache.get(self.model_id, text)
        if hit is not None:
            return EmbeddingVector(model_id=self.model_id, values=hit)
        vector = self.inner.embed(text)
        self.cache.put(self.model_id, text, vector.values)
        return vector

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self.embed(text) for text in texts]


class LiveEmbedder:
    """Remote embedding service client (OpenAI-style /embeddings route)."""

    def __init__(
        self,
        model_id: str,
        base_url: str,
        api_key: str,
        timeout_s: float = 30.0,
        post: Callable = requests.post,
    ) -> None:
        self.model_id = model_id
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout_s = timeout_s
        self._post = post

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            return []
        response = self._post(
            f"{self.base_url}/embeddings",
            json={"model": self.model_id, "input": list(texts)},
            headers={"Authorization": f"Bearer {self.api_key}"},
            timeout=self.timeout_s,
        )
        if response.status_code != 200:
            raise EmbeddingError(
                f"embedding service returned {response.status_code}: {response.text[:200]}"
            )
        try:
            rows = response.json()["data"]
            vectors = [
                EmbeddingVector(
                    model_id=self.model_id,
                    values=tuple(float(v) for v in row["embedding"]),
                )
                for row in rows
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbeddingError(f"unusable embedding payload: {exc}") from None
        if len(vectors) != len(texts):
            raise EmbeddingError(
                f"asked for {len(texts)} embeddings, received {len(vectors)}"
            )
        return vectors
