"""Text encoders: the contract, a deterministic offline encoder, and an HTTP client.

An encoder maps a batch of texts to float32 vectors of a fixed
dimensionality. Similarity downstream is raw inner product; vectors are
not normalized unless the encoder is configured to do so.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence, runtime_checkable

import httpx
import numpy as np

from .errors import ConfigError, TransportError
from .httpclient import post_json

ROLE_APPROX = "approx"
ROLE_EXACT = "exact"

API_KEY_ENV = "DENSERAG_API_KEY"


@dataclass(frozen=True)
class EncoderSpec:
    """Identity and shape of an encoder.

    ``role`` says which retrieval stage the encoder feeds: "approx" for
    the ANN index, "exact" for the on-disk exact store.
    """

    name: str
    dim: int
    role: str = ROLE_APPROX
    normalize: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"encoder dim must be >= 1, got {self.dim}")
        if self.role not in (ROLE_APPROX, ROLE_EXACT):
            raise ConfigError(f"encoder role must be approx|exact, got {self.role!r}")


@runtime_checkable
class Encoder(Protocol):
    spec: EncoderSpec

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


def _finalize(vectors: np.ndarray, spec: EncoderSpec) -> np.ndarray:
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[1] != spec.dim:
        raise ConfigError(
            f"encoder {spec.name!r} produced shape {vectors.shape}, expected (n, {spec.dim})"
        )
    if spec.normalize:
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        np.divide(vectors, norms, out=vectors, where=norms > 0)
    return vectors


def _stable_bucket(token: str, buckets: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


class HashedEncoder:
    """Deterministic hermetic encoder: hashed bag-of-words through a random projection.

    Tokens are lowercased whitespace words hashed into ``buckets`` slots;
    the count vector is projected through a fixed matrix drawn from a
    seeded RNG. Identical (dim, seed, buckets, text) produce bitwise
    identical vectors in any process. Texts sharing more tokens have
    larger inner products in expectation; empty text maps to the zero
    vector.
    """

    def __init__(
        self,
        dim: int,
        seed: int,
        role: str = ROLE_APPROX,
        buckets: int = 4096,
        normalize: bool = False,
        name: str | None = None,
    ):
        if buckets < 1:
            raise ConfigError(f"buckets must be >= 1, got {buckets}")
        self.spec = EncoderSpec(
            name=name or f"hashed-bow-d{dim}-s{seed}",
            dim=dim,
            role=role,
            normalize=normalize,
        )
        self.buckets = buckets
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._projection = (
            rng.standard_normal((buckets, dim)) / np.sqrt(dim)
        ).astype(np.float32)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.spec.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            for token in text.lower().split():
                out[row] += self._projection[_stable_bucket(token, self.buckets)]
        return _finalize(out, self.spec)


def test_encoder(dim: int, seed: int, role: str = ROLE_APPROX, **kwargs) -> HashedEncoder:
    """Build the deterministic offline stand-in for a neural encoder."""
    return HashedEncoder(dim=dim, seed=seed, role=role, **kwargs)


class PrecomputedEncoder:
    """Encoder backed by an exact text -> vector table.

    Used where encoder outputs must reproduce stored vectors bit for bit,
    e.g. the recompute-on-the-fly exact-rerank path.
    """

    def __init__(self, table: Mapping[str, np.ndarray], dim: int, role: str = ROLE_EXACT,
                 name: str = "precomputed"):
        self.spec = EncoderSpec(name=name, dim=dim, role=role)
        self._table = {k: np.asarray(v, dtype=np.float32) for k, v in table.items()}

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        try:
            rows = [self._table[t] for t in texts]
        except KeyError as exc:
            raise ConfigError(f"no precomputed vector for text {exc.args[0]!r}") from exc
        if not rows:
            return np.zeros((0, self.spec.dim), dtype=np.float32)
        return _finalize(np.stack(rows), self.spec)


class RemoteEncoder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint.

    Requests are batched; transient failures are retried with exponential
    backoff. A batch that still fails raises TransportError carrying the
    global indices of the texts whose embeddings were lost.
    """

    def __init__(
        self,
        name: str,
        dim: int,
        base_url: str,
        role: str = ROLE_APPROX,
        normalize: bool = False,
        api_key: str | None = None,
        batch_size: int = 64,
        max_retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ):
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        self.spec = EncoderSpec(name=name, dim=dim, role=role, normalize=normalize)
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.spec.dim), dtype=np.float32)
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            try:
                payload = post_json(
                    self._client,
                    f"{self.base_url}/embeddings",
                    {"model": self.spec.name, "input": batch},
                    headers=self._headers(),
                    max_retries=self.max_retries,
                    backoff=self.backoff,
                )
            except TransportError as exc:
                raise TransportError(
                    str(exc), failed_indices=range(start, start + len(batch))
                ) from exc
            rows = payload["data"]
            if len(rows) != len(batch):
                raise TransportError(
                    f"embeddings endpoint returned {len(rows)} vectors for "
                    f"{len(batch)} inputs",
                    failed_indices=range(start, start + len(batch)),
                )
            for item in rows:
                vec = np.asarray(item["embedding"], dtype=np.float32)
                if vec.shape != (self.spec.dim,):
                    raise ConfigError(
                        f"endpoint returned dim {vec.shape} vector, expected {self.spec.dim}"
                    )
                out[start + item["index"]] = vec
        return _finalize(out, self.spec)
