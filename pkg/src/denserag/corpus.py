"""Corpus preparation: fixed-size word chunking and n-gram decontamination.

Documents are split into passages of at most ``chunk_size`` whitespace
words. Contamination against a set of evaluation queries is detected with
token n-gram Jaccard similarity (thresholded) or, in strict mode, any
shared n-gram at all.

A "word" is a maximal run of non-whitespace characters. For n-gram
matching, tokens are additionally lowercased and stripped of leading and
trailing punctuation.
"""
from __future__ import annotations

import json
import string
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

DEFAULT_CHUNK_SIZE = 256
DEFAULT_NGRAM = 13
DEFAULT_THRESHOLD = 0.7

PARAGRAPH_DELIMITER = "\n\n"


@dataclass(frozen=True)
class Document:
    doc_id: str
    source: str = ""
    text: str = ""


@dataclass(frozen=True)
class Passage:
    passage_id: int
    doc_id: str
    text: str
    word_count: int


@dataclass(frozen=True)
class NgramSet:
    """Set of token n-grams; each gram is a tuple of n normalized tokens."""

    n: int
    grams: frozenset[tuple[str, ...]]

    def __len__(self) -> int:
        return len(self.grams)


def tokenize(text: str) -> list[str]:
    """Split into words (maximal runs of non-whitespace)."""
    return text.split()


def normalize_token(token: str) -> str:
    return token.lower().strip(string.punctuation)


def chunk_document(
    doc: Document, chunk_size: int = DEFAULT_CHUNK_SIZE, start_id: int = 0
) -> list[Passage]:
    """Split a document into passages of at most ``chunk_size`` words.

    Every passage except possibly the last has exactly ``chunk_size``
    words; joining the passages' tokens reproduces the document's token
    sequence. An empty document yields an empty list.
    """
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    tokens = tokenize(doc.text)
    passages = []
    for i, lo in enumerate(range(0, len(tokens), chunk_size)):
        chunk = tokens[lo : lo + chunk_size]
        passages.append(
            Passage(
                passage_id=start_id + i,
                doc_id=doc.doc_id,
                text=" ".join(chunk),
                word_count=len(chunk),
            )
        )
    return passages


def chunk_corpus(
    docs: Iterable[Document], chunk_size: int = DEFAULT_CHUNK_SIZE
) -> Iterator[Passage]:
    """Chunk a document stream, assigning dense global passage ids in order."""
    next_id = 0
    for doc in docs:
        for passage in chunk_document(doc, chunk_size, start_id=next_id):
            yield passage
            next_id += 1


def ngram_set(text: str, n: int = DEFAULT_NGRAM) -> NgramSet:
    """All contiguous n-token windows over the normalized token stream.

    Text with fewer than n tokens yields the empty set.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    tokens = [normalize_token(t) for t in tokenize(text)]
    grams = frozenset(
        tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)
    )
    return NgramSet(n=n, grams=grams)


def jaccard(a: NgramSet, b: NgramSet) -> float:
    """|a ∩ b| / |a ∪ b|; 0.0 when both sets are empty."""
    if a.n != b.n:
        raise ValueError(f"mismatched n-gram lengths: {a.n} vs {b.n}")
    if not a.grams and not b.grams:
        return 0.0
    inter = len(a.grams & b.grams)
    union = len(a.grams | b.grams)
    return inter / union


def decontaminate_datastore(
    passages: Sequence[Passage],
    queries: Sequence[str],
    n: int = DEFAULT_NGRAM,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[Passage]:
    """Drop passages whose n-gram Jaccard with any query exceeds ``threshold``.

    Comparison is strict (> threshold removes). Survivors keep their
    original order and passage ids. Queries with fewer than n tokens have
    an empty n-gram set and can never trigger removal.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    query_grams = [g for g in (ngram_set(q, n) for q in queries) if g.grams]
    if not query_grams:
        return list(passages)

    # Inverted index gram -> query positions, so clean passages only pay
    # for their own gram set.
    gram_to_queries: dict[tuple[str, ...], set[int]] = defaultdict(set)
    for qi, qg in enumerate(query_grams):
        for gram in qg.grams:
            gram_to_queries[gram].add(qi)

    kept = []
    for passage in passages:
        pg = ngram_set(passage.text, n)
        candidates: set[int] = set()
        for gram in pg.grams:
            hits = gram_to_queries.get(gram)
            if hits:
                candidates |= hits
        contaminated = any(
            jaccard(pg, query_grams[qi]) > threshold for qi in candidates
        )
        if not contaminated:
            kept.append(passage)
    return kept


def decontaminate_strict(
    document_text: str, query: str, n: int = DEFAULT_NGRAM
) -> str:
    """Remove every paragraph sharing any n-gram with the query.

    Paragraphs are delimited by a blank line (the literal two-character
    sequence newline-newline); survivors are rejoined with the same
    delimiter.
    """
    query_grams = ngram_set(query, n).grams
    paragraphs = document_text.split(PARAGRAPH_DELIMITER)
    kept = [
        p for p in paragraphs if not (ngram_set(p, n).grams & query_grams)
    ]
    return PARAGRAPH_DELIMITER.join(kept)


def read_documents(path) -> Iterator[Document]:
    """Read JSONL documents: {"id": str, "source": str, "text": str}."""
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            yield Document(
                doc_id=str(obj["id"]),
                source=obj.get("source", ""),
                text=obj.get("text", ""),
            )


def write_passages(passages: Iterable[Passage], path) -> int:
    """Write JSONL passages: {"passage_id": int, "doc_id": str, "text": str}."""
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for p in passages:
            f.write(
                json.dumps(
                    {"passage_id": p.passage_id, "doc_id": p.doc_id, "text": p.text},
                    ensure_ascii=False,
                )
                + "\n"
            )
            count += 1
    return count


def read_passages(path) -> Iterator[Passage]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            text = obj.get("text", "")
            yield Passage(
                passage_id=int(obj["passage_id"]),
                doc_id=str(obj.get("doc_id", "")),
                text=text,
                word_count=len(tokenize(text)),
            )
