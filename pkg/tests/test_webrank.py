import numpy as np
import pytest

from denserag.embed import HashedEncoder
from denserag.errors import ConfigError
from denserag.webrank import (
    BREAKDOWN_PROMPT_TEMPLATE,
    ExternalDocument,
    aggregate_rank,
    breakdown_rank,
    build_breakdown_prompt,
    chunk_external,
    parse_breakdown,
    rank_extract,
)

ENC = HashedEncoder(dim=48, seed=21, buckets=65536)


def doc(rank, text, url=None):
    return ExternalDocument(rank=rank, url=url or f"http://example.test/{rank}", text=text)


def words(n, prefix="w"):
    return " ".join(f"{prefix}{i}" for i in range(n))


class TestChunkExternal:
    def test_1100_words_at_512(self):
        chunks = chunk_external(doc(1, words(1100)), c=512)
        assert [len(c.split()) for c in chunks] == [512, 512, 76]

    def test_single_chunk(self):
        chunks = chunk_external(doc(1, words(512)), c=512)
        assert len(chunks) == 1

    def test_empty_document(self):
        assert chunk_external(doc(1, ""), c=512) == []


class TestAggregateRank:
    def test_verbatim_query_chunk_ranks_first(self):
        query = "the smoot hale comet returns every seventy years"
        documents = [
            doc(1, words(40, "alpha") + " " + query + " " + words(40, "beta")),
            doc(2, words(120, "gamma")),
        ]
        # oracle check on the constructed instance: the chunk containing
        # the query really has the max inner product
        chunks = [
            (d.rank, i, c)
            for d in documents
            for i, c in enumerate(chunk_external(d, 64))
        ]
        vectors = ENC.encode([c for _, _, c in chunks])
        scores = vectors @ ENC.encode([query])[0].astype(np.float64)
        best = max(range(len(chunks)), key=lambda i: scores[i])
        assert query in chunks[best][2]

        out = aggregate_rank(documents, query, ENC, c=64, k=3)
        assert query in out[0].text

    def test_k_larger_than_total_returns_all_sorted(self):
        documents = [doc(1, words(10)), doc(2, words(5, "z"))]
        out = aggregate_rank(documents, "w1 w2", ENC, c=4, k=100)
        total = len(chunk_external(documents[0], 4)) + len(chunk_external(documents[1], 4))
        assert len(out) == total
        assert [c.score for c in out] == sorted((c.score for c in out), reverse=True)

    def test_identical_chunks_tie_break_by_doc_rank(self):
        same = "identical text in both documents"
        out = aggregate_rank([doc(2, same), doc(1, same)], "identical text", ENC, c=16, k=2)
        assert [c.doc_rank for c in out] == [1, 2]

    def test_all_empty_documents(self):
        assert aggregate_rank([doc(1, ""), doc(2, " ")], "q", ENC, c=8, k=3) == []

    def test_no_documents_rejected(self):
        with pytest.raises(ConfigError):
            aggregate_rank([], "q", ENC, c=8, k=3)

    def test_single_doc_degenerates_to_rank_extract_best(self):
        text = words(50, "alpha") + " magic keyword here " + words(50, "beta")
        d = doc(1, text)
        top = aggregate_rank([d], "magic keyword", ENC, c=16, k=1)
        best = rank_extract([d], "magic keyword", ENC, c=16)
        assert top[0] == best[0]


class TestRankExtract:
    def test_one_chunk_per_doc_in_search_order(self):
        documents = [doc(3, words(30, "c")), doc(1, words(30, "a")), doc(2, words(30, "b"))]
        out = rank_extract(documents, "a1 b1 c1", ENC, c=10)
        assert [c.doc_rank for c in out] == [1, 2, 3]

    def test_single_chunk_documents_pass_through(self):
        documents = [doc(1, "only one chunk"), doc(2, "another single")]
        out = rank_extract(documents, "one", ENC, c=16)
        assert [c.text for c in out] == ["only one chunk", "another single"]

    def test_tied_chunks_keep_earliest_position(self):
        repeated = "same tokens again"
        d = doc(1, f"{repeated} {repeated}")
        out = rank_extract([d], "same tokens", ENC, c=3)
        assert out[0].position == 0

    def test_empty_doc_contributes_nothing(self):
        documents = [doc(1, ""), doc(2, "real content here")]
        out = rank_extract(documents, "content", ENC, c=8)
        assert [c.doc_rank for c in out] == [2]


class TestBreakdown:
    def test_prompt_contains_query_and_instruction(self):
        prompt = build_breakdown_prompt("why is the sky blue?")
        assert prompt.startswith("why is the sky blue?\n\n")
        assert prompt.endswith("Do not exceed three search queries.")
        assert '"search_queries"' in BREAKDOWN_PROMPT_TEMPLATE

    def test_parse_two(self):
        out = parse_breakdown('{"search_queries": ["a", "b"]}', "orig")
        assert out == ["a", "b"]

    def test_parse_truncates_to_three(self):
        out = parse_breakdown(
            '{"search_queries": ["a", "b", "c", "d", "e"]}', "orig"
        )
        assert out == ["a", "b", "c"]

    def test_malformed_falls_back_to_original(self):
        assert parse_breakdown("no json", "orig") == ["orig"]
        assert parse_breakdown('{"other": 1}', "orig") == ["orig"]
        assert parse_breakdown('{"search_queries": []}', "orig") == ["orig"]

    def test_json_inside_prose(self):
        out = parse_breakdown(
            'Here you go:\n{"search_queries": ["only one"]}\nthanks', "orig"
        )
        assert out == ["only one"]

    def test_breakdown_rank_unions_subqueries(self):
        documents = [
            doc(1, words(30, "alpha") + " unique marker phrase"),
            doc(2, words(30, "beta") + " different signal text"),
        ]
        out = breakdown_rank(
            documents, ["unique marker phrase", "different signal text"], ENC, c=8, k=2
        )
        assert {c.doc_rank for c in out} == {1, 2}
