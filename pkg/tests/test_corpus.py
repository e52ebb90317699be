import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denserag.corpus import (
    Document,
    chunk_corpus,
    chunk_document,
    decontaminate_datastore,
    decontaminate_strict,
    jaccard,
    ngram_set,
)


def make_doc(n_words, doc_id="d0"):
    return Document(doc_id=doc_id, text=" ".join(f"w{i}" for i in range(n_words)))


# independent oracle: sliding-window grams computed from scratch
def brute_grams(text, n):
    toks = [t.lower().strip(string.punctuation) for t in text.split()]
    return {tuple(toks[i : i + n]) for i in range(len(toks) - n + 1)}


def brute_jaccard(text_a, text_b, n):
    a, b = brute_grams(text_a, n), brute_grams(text_b, n)
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


class TestChunkDocument:
    def test_600_words_chunk_256(self):
        passages = chunk_document(make_doc(600), chunk_size=256)
        assert [p.word_count for p in passages] == [256, 256, 88]

    def test_exact_fit_is_identity(self):
        doc = make_doc(256)
        passages = chunk_document(doc, chunk_size=256)
        assert len(passages) == 1
        assert passages[0].text.split() == doc.text.split()

    def test_empty_document(self):
        assert chunk_document(Document(doc_id="d", text=""), 256) == []

    def test_chunk_size_must_be_positive(self):
        with pytest.raises(ValueError):
            chunk_document(make_doc(3), chunk_size=0)

    @given(
        words=st.lists(st.sampled_from(["a", "bb", "ccc", "x1"]), max_size=200),
        chunk_size=st.integers(min_value=1, max_value=50),
    )
    def test_partition_property(self, words, chunk_size):
        doc = Document(doc_id="d", text=" ".join(words))
        passages = chunk_document(doc, chunk_size)
        rejoined = [t for p in passages for t in p.text.split()]
        assert rejoined == doc.text.split()
        assert all(1 <= p.word_count <= chunk_size for p in passages)
        assert all(p.word_count == len(p.text.split()) for p in passages)
        # all but the last chunk are full
        assert all(p.word_count == chunk_size for p in passages[:-1])

    def test_corpus_ids_dense_and_increasing(self):
        docs = [make_doc(5, "a"), make_doc(0, "b"), make_doc(7, "c")]
        passages = list(chunk_corpus(docs, chunk_size=3))
        assert [p.passage_id for p in passages] == list(range(len(passages)))
        assert [p.doc_id for p in passages] == ["a", "a", "c", "c", "c"]


class TestNgramSet:
    def test_single_window(self):
        assert len(ngram_set(" ".join(f"w{i}" for i in range(13)), 13)) == 1

    def test_below_window_length(self):
        assert len(ngram_set(" ".join(f"w{i}" for i in range(12)), 13)) == 0

    def test_sliding_window_count(self):
        assert len(ngram_set(" ".join(f"w{i}" for i in range(15)), 13)) == 3

    def test_normalization(self):
        a = ngram_set("The Cat, sat. on (the) mat", 3)
        b = ngram_set("the cat sat on the mat", 3)
        assert a == b

    def test_gram_width(self):
        grams = ngram_set("a b c d e", 3).grams
        assert all(len(g) == 3 for g in grams)


class TestJaccard:
    def test_identity(self):
        a = ngram_set("a b c d", 2)
        assert jaccard(a, a) == 1.0

    def test_disjoint(self):
        assert jaccard(ngram_set("a b c", 2), ngram_set("x y z", 2)) == 0.0

    def test_partial_overlap(self):
        # grams {ab, bc} vs {bc, cd}: 1 shared of 3 total
        a = ngram_set("a b c", 2)
        b = ngram_set("b c d", 2)
        assert jaccard(a, b) == pytest.approx(1 / 3)

    def test_both_empty(self):
        assert jaccard(ngram_set("", 2), ngram_set("a", 2)) == 0.0

    def test_mismatched_n(self):
        with pytest.raises(ValueError):
            jaccard(ngram_set("a b c", 2), ngram_set("a b c", 3))

    @given(
        a=st.lists(st.sampled_from("abcdef"), min_size=2, max_size=30),
        b=st.lists(st.sampled_from("abcdef"), min_size=2, max_size=30),
    )
    def test_symmetric_and_bounded(self, a, b):
        ga, gb = ngram_set(" ".join(a), 2), ngram_set(" ".join(b), 2)
        assert jaccard(ga, gb) == jaccard(gb, ga)
        assert 0.0 <= jaccard(ga, gb) <= 1.0
        assert (jaccard(ga, ga) == 1.0) == bool(ga.grams)


QUERY_20 = " ".join(f"q{i}" for i in range(20))


def passage_from_query_prefix(n_tokens, passage_id=0):
    from denserag.corpus import Passage

    text = " ".join(f"q{i}" for i in range(n_tokens))
    return Passage(passage_id=passage_id, doc_id="d", text=text, word_count=n_tokens)


def clean_passage(passage_id, n_tokens=30):
    from denserag.corpus import Passage

    text = " ".join(f"p{passage_id}t{i}" for i in range(n_tokens))
    return Passage(passage_id=passage_id, doc_id="d", text=text, word_count=n_tokens)


class TestDecontaminateDatastore:
    def test_exact_copy_removed(self):
        planted = passage_from_query_prefix(20, passage_id=0)
        kept = decontaminate_datastore([planted, clean_passage(1)], [QUERY_20])
        assert [p.passage_id for p in kept] == [1]

    def test_no_shared_gram_kept(self):
        passages = [clean_passage(i) for i in range(5)]
        kept = decontaminate_datastore(passages, [QUERY_20])
        assert kept == passages

    def test_constructed_similarity_075_removed_05_kept(self):
        # 18-token prefix of a 20-token query: 6 of its grams hit all-8
        # query grams -> jaccard 6/8; 16-token prefix -> 4/8
        p075 = passage_from_query_prefix(18, passage_id=0)
        p050 = passage_from_query_prefix(16, passage_id=1)
        assert brute_jaccard(p075.text, QUERY_20, 13) == pytest.approx(0.75)
        assert brute_jaccard(p050.text, QUERY_20, 13) == pytest.approx(0.50)
        kept = decontaminate_datastore([p075, p050], [QUERY_20], threshold=0.7)
        assert [p.passage_id for p in kept] == [1]

    def test_short_query_never_removes(self):
        passages = [passage_from_query_prefix(20)]
        kept = decontaminate_datastore(passages, ["q0 q1 q2"], n=13)
        assert kept == passages

    def test_order_and_ids_preserved(self):
        passages = [clean_passage(i) for i in range(10)]
        passages[4] = passage_from_query_prefix(20, passage_id=4)
        kept = decontaminate_datastore(passages, [QUERY_20])
        assert [p.passage_id for p in kept] == [0, 1, 2, 3, 5, 6, 7, 8, 9]

    @given(seed=st.integers(min_value=0, max_value=50))
    @settings(max_examples=20, deadline=None)
    def test_exact_copy_always_removed_below_one(self, seed):
        # soundness: a passage equal to a >= n word query dies at any t < 1
        query = " ".join(f"s{seed}w{i}" for i in range(13 + seed % 5))
        planted = passage_from_query_prefix(0)
        planted = type(planted)(
            passage_id=0, doc_id="d", text=query, word_count=len(query.split())
        )
        for threshold in (0.0, 0.5, 0.99):
            kept = decontaminate_datastore([planted], [query], threshold=threshold)
            assert kept == []

    def test_threshold_monotonicity(self):
        passages = [
            passage_from_query_prefix(20, 0),  # J = 1.0
            passage_from_query_prefix(18, 1),  # J = 0.75
            passage_from_query_prefix(16, 2),  # J = 0.5
            clean_passage(3),  # J = 0.0
        ]
        removed_at = {}
        for threshold in (0.0, 0.4, 0.6, 0.8, 1.0):
            kept_ids = {
                p.passage_id
                for p in decontaminate_datastore(passages, [QUERY_20], threshold=threshold)
            }
            removed_at[threshold] = {p.passage_id for p in passages} - kept_ids
        thresholds = sorted(removed_at)
        for lo, hi in zip(thresholds, thresholds[1:]):
            assert removed_at[hi] <= removed_at[lo]


class TestJsonlIO:
    def test_document_and_passage_roundtrip(self, tmp_path):
        import json

        from denserag.corpus import read_documents, read_passages, write_passages

        doc_path = tmp_path / "docs.jsonl"
        doc_path.write_text(
            json.dumps({"id": "d1", "source": "s", "text": "one two three"}) + "\n"
            + json.dumps({"id": "d2", "text": ""}) + "\n"
        )
        docs = list(read_documents(doc_path))
        assert [d.doc_id for d in docs] == ["d1", "d2"]
        assert docs[1].source == ""

        passages = list(chunk_corpus(docs, chunk_size=2))
        out_path = tmp_path / "passages.jsonl"
        assert write_passages(passages, out_path) == 2
        back = list(read_passages(out_path))
        assert back == passages


class TestDecontaminateStrict:
    def test_contaminated_paragraph_removed(self):
        contaminated = " ".join(f"q{i}" for i in range(13))
        doc = f"clean one two three\n\n{contaminated}\n\nanother clean paragraph"
        out = decontaminate_strict(doc, QUERY_20)
        assert out == "clean one two three\n\nanother clean paragraph"

    def test_no_overlap_is_identity(self):
        doc = "alpha beta gamma\n\ndelta epsilon zeta"
        assert decontaminate_strict(doc, QUERY_20) == doc

    def test_all_contaminated_yields_empty(self):
        para = " ".join(f"q{i}" for i in range(14))
        doc = f"{para}\n\n{para}"
        assert decontaminate_strict(doc, QUERY_20) == ""

    def test_overlap_is_any_not_threshold(self):
        # one shared 13-gram inside a long clean paragraph still kills it
        shared = " ".join(f"q{i}" for i in range(13))
        filler = " ".join(f"z{i}" for i in range(200))
        doc = f"{filler} {shared} {filler}"
        assert decontaminate_strict(doc, QUERY_20) == ""
