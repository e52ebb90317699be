"""Reducing ranked external documents (web search results) to k chunks.

Three strategies:

- aggregate_rank: pool every chunk from every document, rank globally by
  inner product with the query.
- rank_extract: keep each document's single best chunk, preserving the
  documents' search order.
- break-down: ask an LM to rewrite the query as up to three search
  queries, then aggregate-rank over the union, scoring each chunk by its
  best subquery.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .corpus import Document, chunk_document
from .embed import Encoder
from .errors import ConfigError

MAX_SUBQUERIES = 3

# Subquery rewrite instruction, reproduced exactly; {query} is the
# substitution site and is separated from the instruction by a blank line.
BREAKDOWN_PROMPT_TEMPLATE = (
    "{query}\n\n"
    'Rewrite the above question as up to three unique search queries to use with a '
    'search engine to find helpful relevant information to solve the above problem. '
    'Only output the generated search queries as a json dict with key "search_queries" '
    "pointing to the list of generated search queries. Do not exceed three search queries."
)


@dataclass(frozen=True)
class ExternalDocument:
    """One search result: its rank (1-based), source URL, and parsed text."""

    rank: int
    url: str
    text: str


@dataclass(frozen=True)
class RankedChunk:
    """A chunk of an external document with its retrieval score."""

    doc_rank: int
    position: int  # chunk index within its document
    text: str
    score: float


def chunk_external(doc: ExternalDocument, c: int) -> list[str]:
    """Split a document into chunks of at most c words (same contract as
    corpus chunking)."""
    passages = chunk_document(Document(doc_id=doc.url, text=doc.text), chunk_size=c)
    return [p.text for p in passages]


def _all_chunks(docs: Sequence[ExternalDocument], c: int) -> list[tuple[int, int, str]]:
    chunks = []
    for doc in docs:
        for position, text in enumerate(chunk_external(doc, c)):
            chunks.append((doc.rank, position, text))
    return chunks


def _rank_chunks(
    chunks: list[tuple[int, int, str]],
    scores: np.ndarray,
    k: int,
) -> list[RankedChunk]:
    order = sorted(
        range(len(chunks)),
        key=lambda i: (-scores[i], chunks[i][0], chunks[i][1]),
    )
    return [
        RankedChunk(
            doc_rank=chunks[i][0],
            position=chunks[i][1],
            text=chunks[i][2],
            score=float(scores[i]),
        )
        for i in order[:k]
    ]


def aggregate_rank(
    docs: Sequence[ExternalDocument],
    query_text: str,
    encoder: Encoder,
    c: int = 512,
    k: int = 3,
) -> list[RankedChunk]:
    """Pool chunks across all documents and keep the top k by inner product.

    Ties break by (doc rank, chunk position). All-empty documents yield
    an empty result.
    """
    if not docs:
        raise ConfigError("aggregate_rank requires at least one document")
    chunks = _all_chunks(docs, c)
    if not chunks:
        return []
    vectors = encoder.encode([text for _, _, text in chunks])
    query = encoder.encode([query_text])[0]
    scores = vectors @ query.astype(np.float64)
    return _rank_chunks(chunks, scores, k)


def rank_extract(
    docs: Sequence[ExternalDocument],
    query_text: str,
    encoder: Encoder,
    c: int = 512,
) -> list[RankedChunk]:
    """Best chunk per document, output in search-result order.

    Within a document, tied chunks resolve to the earliest position; a
    document with no words contributes nothing.
    """
    if not docs:
        raise ConfigError("rank_extract requires at least one document")
    query = encoder.encode([query_text])[0].astype(np.float64)
    out = []
    for doc in sorted(docs, key=lambda d: d.rank):
        texts = chunk_external(doc, c)
        if not texts:
            continue
        scores = encoder.encode(texts) @ query
        best = int(np.argmax(scores))  # argmax keeps the earliest position on ties
        out.append(
            RankedChunk(
                doc_rank=doc.rank, position=best, text=texts[best], score=float(scores[best])
            )
        )
    return out


def build_breakdown_prompt(query_text: str) -> str:
    """Fill the subquery-rewrite template."""
    return BREAKDOWN_PROMPT_TEMPLATE.format(query=query_text)


def parse_breakdown(lm_output: str, query_text: str) -> list[str]:
    """Extract up to three subqueries; fall back to the original query.

    Looks for the first JSON object with a "search_queries" list of
    strings, truncated to three entries. Any parse failure returns
    [query_text].
    """
    decoder = json.JSONDecoder()
    start = lm_output.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(lm_output, start)
        except ValueError:
            obj = None
        if isinstance(obj, dict):
            queries = obj.get("search_queries")
            if isinstance(queries, list):
                strings = [q for q in queries if isinstance(q, str) and q.strip()]
                if strings:
                    return strings[:MAX_SUBQUERIES]
        start = lm_output.find("{", start + 1)
    return [query_text]


def breakdown_rank(
    docs: Sequence[ExternalDocument],
    subqueries: Sequence[str],
    encoder: Encoder,
    c: int = 512,
    k: int = 3,
) -> list[RankedChunk]:
    """Aggregate-rank over the union of subquery retrievals.

    Each chunk is scored by its best inner product across the subqueries,
    then ranked globally with the aggregate_rank tie-breaks.
    """
    if not docs:
        raise ConfigError("breakdown_rank requires at least one document")
    if not subqueries:
        raise ConfigError("breakdown_rank requires at least one subquery")
    chunks = _all_chunks(docs, c)
    if not chunks:
        return []
    vectors = encoder.encode([text for _, _, text in chunks])
    queries = encoder.encode(list(subqueries)).astype(np.float64)
    scores = (vectors @ queries.T).max(axis=1)
    return _rank_chunks(chunks, scores, k)


def read_external_documents(path) -> Iterator[ExternalDocument]:
    """Read JSONL search results: {"rank": int, "url": str, "text": str}."""
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            yield ExternalDocument(
                rank=int(obj["rank"]),
                url=str(obj.get("url", "")),
                text=str(obj.get("text", "")),
            )
