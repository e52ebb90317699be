"""Two-stage dense retrieval: in-memory IVFPQ ANN plus on-disk exact rerank,
with corpus chunking/decontamination, LM and oracle reranking, and
generator-input assembly."""

from .ann import (
    CoarseQuantizer,
    IvfPqIndex,
    PqCodebook,
    ScoredPassage,
    SearchParams,
    adc_tables,
    default_ncluster,
    default_train_count,
    deserialize,
    flat_search,
    load_index,
    save_index,
    serialize,
    train_coarse,
    train_pq,
)
from .corpus import (
    Document,
    NgramSet,
    Passage,
    chunk_corpus,
    chunk_document,
    decontaminate_datastore,
    decontaminate_strict,
    jaccard,
    ngram_set,
)
from .embed import (
    EncoderSpec,
    HashedEncoder,
    PrecomputedEncoder,
    RemoteEncoder,
    test_encoder,
)
from .exact import ExactStore, OnTheFlyStore, exact_rerank, write_store
from .kmeans import KMeansResult, kmeans
from .pipeline import (
    GeneratorInput,
    PipelineConfig,
    RetrievalEngine,
    assemble_prompt,
    merge_candidates,
)
from .rerank import (
    HttpChatClient,
    HttpLikelihoodClient,
    QueryBundle,
    RerankScore,
    build_rerank_prompt,
    lm_rerank,
    oracle_rerank,
    parse_score,
)
from .webrank import (
    ExternalDocument,
    RankedChunk,
    aggregate_rank,
    breakdown_rank,
    build_breakdown_prompt,
    chunk_external,
    parse_breakdown,
    rank_extract,
)

__version__ = "0.1.0"
