import numpy as np
import pytest

from denserag.embed import PrecomputedEncoder
from denserag.errors import (
    BadMagicError,
    BadVersionError,
    ConfigError,
    DataError,
    TruncatedError,
    UnknownIdError,
)
from denserag.exact import ExactStore, OnTheFlyStore, exact_rerank, write_store
from helpers import as_ids


@pytest.fixture()
def store_1000(tmp_path):
    rng = np.random.default_rng(0)
    ids = np.arange(1000, dtype=np.int64)
    vectors = rng.standard_normal((1000, 16)).astype(np.float32)
    store = write_store(ids, vectors, tmp_path / "store.cds")
    yield store, vectors
    store.close()


def brute_rerank(ids, vectors, query, candidates, k):
    """Independent oracle: python sort over exact float64 inner products."""
    row_of = {int(pid): i for i, pid in enumerate(ids)}
    scored = [
        (float(vectors[row_of[c]].astype(np.float64) @ np.asarray(query, dtype=np.float64)), c)
        for c in candidates
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [pid for _, pid in scored[:k]]


class TestWriteRead:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(1)
        vectors = rng.standard_normal((20, 8)).astype(np.float32)
        store = write_store(range(20), vectors, tmp_path / "s.cds")
        for i in (0, 7, 19):
            assert store.read_rows([i])[0].tobytes() == vectors[i].tobytes()
        store.close()

    def test_duplicate_id(self, tmp_path):
        with pytest.raises(DataError):
            write_store([1, 1], np.zeros((2, 4), dtype=np.float32), tmp_path / "s.cds")

    def test_empty_store(self, tmp_path):
        store = write_store([], np.zeros((0, 4), dtype=np.float32), tmp_path / "s.cds")
        assert store.count == 0
        with pytest.raises(UnknownIdError):
            store.read_rows([0])
        store.close()

    def test_request_order(self, tmp_path):
        vectors = np.array([[1.0], [2.0]], dtype=np.float32)
        store = write_store([10, 20], vectors, tmp_path / "s.cds")
        out = store.read_rows([20, 10])
        assert out[:, 0].tolist() == [2.0, 1.0]
        store.close()

    def test_unknown_id_names_it(self, tmp_path):
        store = write_store([1], np.zeros((1, 2), dtype=np.float32), tmp_path / "s.cds")
        with pytest.raises(UnknownIdError) as excinfo:
            store.read_rows([42])
        assert excinfo.value.passage_id == 42
        store.close()

    def test_repeated_id_in_request(self, tmp_path):
        vectors = np.array([[3.0]], dtype=np.float32)
        store = write_store([5], vectors, tmp_path / "s.cds")
        out = store.read_rows([5, 5])
        assert out[:, 0].tolist() == [3.0, 3.0]
        store.close()

    def test_reopen_bitwise_equal(self, tmp_path):
        rng = np.random.default_rng(2)
        vectors = rng.standard_normal((5, 6)).astype(np.float32)
        path = tmp_path / "s.cds"
        write_store(range(5), vectors, path).close()
        with ExactStore(path) as store:
            assert store.read_rows(list(range(5))).tobytes() == vectors.tobytes()


class TestStoreFormatErrors:
    def _write(self, tmp_path):
        path = tmp_path / "s.cds"
        write_store([1, 2], np.ones((2, 3), dtype=np.float32), path).close()
        return path

    def test_bad_magic(self, tmp_path):
        path = self._write(tmp_path)
        data = bytearray(path.read_bytes())
        data[:8] = b"XXXXXXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            ExactStore(path)

    def test_bad_version(self, tmp_path):
        path = self._write(tmp_path)
        data = bytearray(path.read_bytes())
        data[8:12] = (7).to_bytes(4, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(BadVersionError):
            ExactStore(path)

    def test_truncated(self, tmp_path):
        path = self._write(tmp_path)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(TruncatedError):
            ExactStore(path)


class TestExactRerank:
    def test_restriction_equals_brute_force(self, store_1000):
        store, vectors = store_1000
        rng = np.random.default_rng(3)
        for _ in range(50):
            query = rng.standard_normal(16).astype(np.float32)
            size = int(rng.integers(1, 60))
            candidates = [int(c) for c in rng.choice(1000, size=size, replace=False)]
            k = int(rng.integers(1, size + 5))
            got = exact_rerank(store, query, candidates, k)
            expected = brute_rerank(store.ids, vectors, query, candidates, k)
            assert as_ids(got) == expected
            assert all(r.stage == "exact" for r in got)

    def test_single_candidate_always_returned(self, store_1000):
        store, _ = store_1000
        query = np.zeros(16, dtype=np.float32)
        out = exact_rerank(store, query, [321], k=5)
        assert as_ids(out) == [321]

    def test_k_at_least_candidates_sorts_all(self, store_1000):
        store, vectors = store_1000
        rng = np.random.default_rng(4)
        query = rng.standard_normal(16).astype(np.float32)
        candidates = [3, 1, 4, 1 + 4, 9, 2, 6]
        out = exact_rerank(store, query, candidates, k=100)
        assert len(out) == len(candidates)
        assert sorted(as_ids(out)) == sorted(candidates)
        scores = [r.score for r in out]
        assert scores == sorted(scores, reverse=True)

    def test_score_independent_of_candidate_set(self, store_1000):
        store, _ = store_1000
        query = np.random.default_rng(5).standard_normal(16).astype(np.float32)
        small = exact_rerank(store, query, [10, 20], k=2)
        large = exact_rerank(store, query, list(range(50)), k=50)
        by_id = {r.passage_id: r.score for r in large}
        for r in small:
            assert r.score == by_id[r.passage_id]

    def test_unknown_candidate(self, store_1000):
        store, _ = store_1000
        with pytest.raises(UnknownIdError):
            exact_rerank(store, np.zeros(16, dtype=np.float32), [99999], k=1)

    def test_dimension_mismatch(self, store_1000):
        store, _ = store_1000
        with pytest.raises(ConfigError):
            exact_rerank(store, np.zeros(8, dtype=np.float32), [0], k=1)

    def test_empty_candidates(self, store_1000):
        store, _ = store_1000
        with pytest.raises(ConfigError):
            exact_rerank(store, np.zeros(16, dtype=np.float32), [], k=1)


class TestReadLatency:
    def test_thousand_point_reads_are_fast(self, tmp_path):
        # second-stage budget: reading K=1000 rows must be cheap
        import time

        rng = np.random.default_rng(9)
        vectors = rng.standard_normal((2000, 128)).astype(np.float32)
        store = write_store(range(2000), vectors, tmp_path / "big.cds")
        wanted = [int(i) for i in rng.choice(2000, size=1000, replace=False)]
        t0 = time.monotonic()
        rows = store.read_rows(wanted)
        elapsed = time.monotonic() - t0
        assert rows.shape == (1000, 128)
        assert elapsed < 1.0, f"1000 point reads took {elapsed:.3f}s"
        store.close()


class TestOnTheFlyStore:
    def test_matches_disk_path_bitwise(self, tmp_path):
        rng = np.random.default_rng(6)
        vectors = rng.standard_normal((10, 4)).astype(np.float32)
        texts = {i: f"passage {i}" for i in range(10)}
        encoder = PrecomputedEncoder(
            {texts[i]: vectors[i] for i in range(10)}, dim=4
        )
        disk = write_store(range(10), vectors, tmp_path / "s.cds")
        fly = OnTheFlyStore(encoder, texts)
        query = rng.standard_normal(4).astype(np.float32)
        candidates = [8, 1, 5]
        a = exact_rerank(disk, query, candidates, k=3)
        b = exact_rerank(fly, query, candidates, k=3)
        assert a == b
        disk.close()

    def test_unknown_id(self):
        fly = OnTheFlyStore(PrecomputedEncoder({}, dim=2), {})
        with pytest.raises(UnknownIdError):
            fly.read_rows([3])
