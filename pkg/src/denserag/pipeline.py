"""Two-stage retrieval orchestration and generator-input assembly.

Stage one retrieves K candidates from one or more IVFPQ indexes with the
approx-role encoder; stage two reranks them by exact inner product with
the exact-role encoder against the on-disk store; an optional third stage
reranks with an LM helpfulness score or the gold-answer oracle.

The generator input concatenates the selected passages in reverse order
(most relevant passage closest to the query), then in-context examples,
the query, and an optional reasoning guideline, with blank lines between
segments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ann import STAGE_ANN, IvfPqIndex, ScoredPassage, SearchParams
from .embed import Encoder
from .errors import ConfigError, StageError
from .exact import exact_rerank
from .rerank import ChatClient, LikelihoodProvider, QueryBundle, lm_rerank, oracle_rerank

RERANK_NONE = "none"
RERANK_LM = "lm"
RERANK_ORACLE = "oracle"

DEFAULT_EXTERNAL_CHUNK_SIZE = 512


@dataclass
class PipelineConfig:
    """Knobs for the full retrieval flow."""

    params: SearchParams = field(default_factory=SearchParams)
    rerank_mode: str = RERANK_NONE
    rerank_pool: int | None = None  # pool fed to the LM/oracle stage; defaults to K
    external_chunk_size: int = DEFAULT_EXTERNAL_CHUNK_SIZE

    def __post_init__(self):
        if self.rerank_mode not in (RERANK_NONE, RERANK_LM, RERANK_ORACLE):
            raise ConfigError(f"unknown rerank mode: {self.rerank_mode!r}")
        if self.external_chunk_size < 1:
            raise ConfigError(
                f"external chunk size must be >= 1, got {self.external_chunk_size}"
            )
        if self.rerank_mode != RERANK_NONE and self.params.k_rerank is None:
            self.params.k_rerank = 3


@dataclass(frozen=True)
class GeneratorInput:
    """Ordered text segments fed to the generator."""

    segments: tuple[str, ...]

    @property
    def text(self) -> str:
        return "\n\n".join(self.segments)


def merge_candidates(
    per_index: Sequence[Sequence[ScoredPassage]], K: int
) -> list[ScoredPassage]:
    """Merge per-index ANN results by score; ties by (index ordinal, id)."""
    rows = [
        (-sp.score, ordinal, sp.passage_id, sp)
        for ordinal, results in enumerate(per_index)
        for sp in results
    ]
    rows.sort(key=lambda r: r[:3])
    return [r[3] for r in rows[:K]]


class RetrievalEngine:
    """Read-only retrieval state shared across queries.

    ``texts`` (passage_id -> text) is required for LM/oracle reranking and
    for building generator inputs with passage bodies.
    """

    def __init__(
        self,
        indexes: IvfPqIndex | Sequence[IvfPqIndex],
        store,
        approx_encoder: Encoder,
        exact_encoder: Encoder,
        config: PipelineConfig | None = None,
        texts: Mapping[int, str] | None = None,
        scorer: ChatClient | None = None,
        likelihood: LikelihoodProvider | None = None,
    ):
        self.indexes = [indexes] if isinstance(indexes, IvfPqIndex) else list(indexes)
        if not self.indexes:
            raise ConfigError("need at least one index")
        self.store = store
        self.approx_encoder = approx_encoder
        self.exact_encoder = exact_encoder
        self.config = config or PipelineConfig()
        self.texts = texts
        self.scorer = scorer
        self.likelihood = likelihood
        for index in self.indexes:
            if index.dim != approx_encoder.spec.dim:
                raise ConfigError(
                    f"index dim {index.dim} != approx encoder dim {approx_encoder.spec.dim}"
                )
        if store is not None and store.dim != exact_encoder.spec.dim:
            raise ConfigError(
                f"store dim {store.dim} != exact encoder dim {exact_encoder.spec.dim}"
            )

    def _encode(self, encoder: Encoder, text: str, stage: str) -> np.ndarray:
        try:
            return encoder.encode([text])[0]
        except Exception as exc:
            raise StageError(stage, exc) from exc

    def ann_candidates(self, query_vector: np.ndarray, params: SearchParams) -> list[ScoredPassage]:
        """Stage one: top-K ANN candidates merged across indexes."""
        try:
            per_index = [idx.search(query_vector, params) for idx in self.indexes]
        except Exception as exc:
            raise StageError(STAGE_ANN, exc) from exc
        if len(per_index) == 1:
            return list(per_index[0])
        return merge_candidates(per_index, params.K)

    def two_stage_search(
        self,
        query_text: str,
        bundle: QueryBundle | None = None,
        params: SearchParams | None = None,
    ) -> list[ScoredPassage]:
        """ANN -> exact rerank -> optional LM/oracle rerank."""
        params = params or self.config.params
        params.validate()
        mode = self.config.rerank_mode

        q_approx = self._encode(self.approx_encoder, query_text, STAGE_ANN)
        candidates = self.ann_candidates(q_approx, params)
        if not candidates:
            return []

        q_exact = self._encode(self.exact_encoder, query_text, "exact")
        pool_size = params.k if mode == RERANK_NONE else (self.config.rerank_pool or params.K)
        try:
            pool = exact_rerank(
                self.store, q_exact, [c.passage_id for c in candidates], pool_size
            )
        except Exception as exc:
            raise StageError("exact", exc) from exc

        if mode == RERANK_NONE:
            return pool[: params.k]
        if self.texts is None:
            raise ConfigError("reranking requires passage texts")
        k_rerank = params.k_rerank or 3
        bundle = bundle or QueryBundle(query=query_text)
        if mode == RERANK_LM:
            if self.scorer is None:
                raise ConfigError("lm reranking requires a chat client")
            try:
                return lm_rerank(self.scorer, bundle, pool, k_rerank, self.texts)
            except ConfigError:
                raise
            except Exception as exc:
                raise StageError("lm_rerank", exc) from exc
        if self.likelihood is None:
            raise ConfigError("oracle reranking requires a likelihood provider")
        try:
            return oracle_rerank(self.likelihood, bundle, pool, k_rerank, self.texts)
        except ConfigError:
            raise
        except Exception as exc:
            raise StageError("oracle", exc) from exc

    def generator_input(
        self, passages: Sequence[ScoredPassage], bundle: QueryBundle
    ) -> GeneratorInput:
        if self.texts is None:
            raise ConfigError("generator input requires passage texts")
        return assemble_prompt(passages, self.texts, bundle)

    def ask(
        self,
        query_text: str,
        bundle: QueryBundle | None = None,
        params: SearchParams | None = None,
    ) -> tuple[list[ScoredPassage], GeneratorInput]:
        """Retrieve and assemble the generator input for one query."""
        bundle = bundle or QueryBundle(query=query_text)
        passages = self.two_stage_search(query_text, bundle=bundle, params=params)
        return passages, self.generator_input(passages, bundle)


def assemble_prompt(
    passages: Sequence[ScoredPassage],
    texts: Mapping[int, str],
    bundle: QueryBundle,
) -> GeneratorInput:
    """Build the generator input from most-relevant-first passages.

    Passages are emitted in reverse order so the most relevant one sits
    adjacent to the examples/query block, then examples in given order,
    the query, and the guideline when present.
    """
    segments = [texts[p.passage_id] for p in reversed(passages)]
    segments.extend(bundle.examples)
    segments.append(bundle.query)
    if bundle.guideline is not None:
        segments.append(bundle.guideline)
    return GeneratorInput(segments=tuple(segments))
