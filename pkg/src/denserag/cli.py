"""Command-line interface.

Hermetic by default: without --base-url the embed-related commands use the
deterministic hashed test encoder, so the whole retrieval flow runs
offline. Remote encoders and LMs are OpenAI-compatible HTTP endpoints;
API keys come from the DENSERAG_API_KEY environment variable.
"""
from __future__ import annotations

import json
import math

import click
import numpy as np

from . import ann, corpus, exact, webrank
from .embed import HashedEncoder, RemoteEncoder
from .pipeline import PipelineConfig, RetrievalEngine
from .rerank import HttpChatClient, HttpLikelihoodClient, QueryBundle


def _encoder_from_options(name, dim, seed, role, base_url, buckets):
    if base_url:
        return RemoteEncoder(name=name, dim=dim, base_url=base_url, role=role)
    return HashedEncoder(dim=dim, seed=seed, role=role, buckets=buckets, name=name or None)


encoder_options = [
    click.option("--encoder", "encoder_name", default="", help="Encoder/model name."),
    click.option("--dim", type=int, default=64, show_default=True, help="Vector dimensionality."),
    click.option("--seed", type=int, default=0, show_default=True, help="Test-encoder seed."),
    click.option("--base-url", default="", help="Remote embeddings endpoint; omit for the offline test encoder."),
    click.option("--buckets", type=int, default=4096, show_default=True, help="Test-encoder hash buckets."),
]


def add_options(options):
    def wrap(f):
        for option in reversed(options):
            f = option(f)
        return f

    return wrap


@click.group()
def main():
    """Two-stage dense retrieval toolkit."""


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--chunk-size", type=int, default=256, show_default=True)
def chunk(input_path, output_path, chunk_size):
    """Split JSONL documents into fixed-word JSONL passages."""
    docs = corpus.read_documents(input_path)
    count = corpus.write_passages(corpus.chunk_corpus(docs, chunk_size), output_path)
    click.echo(f"wrote {count} passages to {output_path}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True),
              help="Plain text file, one query per line.")
@click.option("--ngram", type=int, default=13, show_default=True)
@click.option("--threshold", type=float, default=0.7, show_default=True)
@click.option("--strict", is_flag=True,
              help="Drop any paragraph sharing an n-gram with any query (ignores --threshold).")
def decontaminate(input_path, output_path, queries_path, ngram, threshold, strict):
    """Remove evaluation contamination from JSONL passages."""
    with open(queries_path, encoding="utf-8") as f:
        queries = [line.strip() for line in f if line.strip()]
    passages = list(corpus.read_passages(input_path))
    if strict:
        kept = []
        for p in passages:
            text = p.text
            for q in queries:
                text = corpus.decontaminate_strict(text, q, n=ngram)
                if not text:
                    break
            if text:
                kept.append(
                    corpus.Passage(
                        passage_id=p.passage_id,
                        doc_id=p.doc_id,
                        text=text,
                        word_count=len(corpus.tokenize(text)),
                    )
                )
    else:
        kept = corpus.decontaminate_datastore(passages, queries, n=ngram, threshold=threshold)
    corpus.write_passages(kept, output_path)
    click.echo(f"kept {len(kept)} of {len(passages)} passages")


@main.command()
@add_options(encoder_options)
@click.option("--role", type=click.Choice(["approx", "exact"]), default="approx", show_default=True)
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="JSONL passages to encode.")
@click.option("--output", "output_path", required=True, type=click.Path(),
              help="Vector store file (CDSEXACT format).")
def embed(encoder_name, dim, seed, base_url, buckets, role, input_path, output_path):
    """Encode passages into a binary vector store."""
    encoder = _encoder_from_options(encoder_name, dim, seed, role, base_url, buckets)
    passages = list(corpus.read_passages(input_path))
    ids = [p.passage_id for p in passages]
    vectors = encoder.encode([p.text for p in passages])
    exact.write_store(ids, vectors, output_path).close()
    click.echo(f"encoded {len(ids)} passages at dim {encoder.spec.dim} -> {output_path}")


@main.command("build-index")
@click.option("--vectors", "vectors_path", required=True, type=click.Path(exists=True),
              help="Vector store file to index (CDSEXACT format).")
@click.option("--out", "output_path", required=True, type=click.Path())
@click.option("--ncluster", type=int, default=0,
              help="Coarse clusters; default round(sqrt(N)).")
@click.option("--subquantizers", "m_sub", type=int, required=True, help="PQ subquantizer count M.")
@click.option("--nbits", type=int, default=8, show_default=True)
@click.option("--train-samples", type=float, default=0.05, show_default=True,
              help="Training sample fraction of N.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-iters", type=int, default=25, show_default=True)
def build_index(vectors_path, output_path, ncluster, m_sub, nbits, train_samples, seed, max_iters):
    """Train an IVFPQ index over a vector store and add every row."""
    with exact.ExactStore(vectors_path) as store:
        ids = store.ids
        vectors = store.read_rows(list(ids))
    n = len(ids)
    if not ncluster:
        ncluster = ann.default_ncluster(n)
    train_count = min(n, max(ncluster, math.ceil(train_samples * n)))
    rng = np.random.default_rng(seed)
    sample = vectors[rng.choice(n, size=train_count, replace=False)]
    index = ann.IvfPqIndex.train(
        sample, ncluster=ncluster, M=m_sub, nbits=nbits, seed=seed, max_iters=max_iters
    )
    index.add(ids, vectors)
    ann.save_index(index, output_path)
    click.echo(
        f"indexed {n} vectors: ncluster={ncluster} M={m_sub} nbits={nbits} -> {output_path}"
    )


@main.command()
@add_options(encoder_options)
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("--K", "K", type=int, default=1000, show_default=True)
@click.option("--nprobe", type=int, default=8, show_default=True)
def search(encoder_name, dim, seed, base_url, buckets, index_path, query, K, nprobe):
    """ANN-only search; prints JSON results."""
    index = ann.load_index(index_path)
    encoder = _encoder_from_options(encoder_name, index.dim, seed, "approx", base_url, buckets)
    params = ann.SearchParams(K=K, k=min(K, index.n_total or 1), nprobe=nprobe)
    results = index.search(encoder.encode([query])[0], params)
    click.echo(json.dumps(
        [{"passage_id": r.passage_id, "score": r.score, "stage": r.stage} for r in results]
    ))


@main.group("exact-store")
def exact_store_group():
    """Exact-store maintenance commands."""


@exact_store_group.command("write")
@click.option("--input", "vectors_path", required=True, type=click.Path(exists=True),
              help="Raw little-endian float32 rows.")
@click.option("--ids", "ids_path", required=True, type=click.Path(exists=True),
              help="Raw little-endian uint64 passage ids.")
@click.option("--dim", type=int, required=True)
@click.option("--out", "output_path", required=True, type=click.Path())
def exact_store_write(vectors_path, ids_path, dim, output_path):
    """Pack raw vector/id files into a store file."""
    ids = np.fromfile(ids_path, dtype="<u8").astype(np.int64)
    vectors = np.fromfile(vectors_path, dtype="<f4").reshape(len(ids), dim)
    exact.write_store(ids, vectors, output_path).close()
    click.echo(f"wrote {len(ids)} rows of dim {dim} to {output_path}")


@main.command()
@add_options(encoder_options)
@click.option("--index", "index_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--passages", "passages_path", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("-k", "k", type=int, default=10, show_default=True)
@click.option("-K", "K", type=int, default=1000, show_default=True)
@click.option("--nprobe", type=int, default=8, show_default=True)
@click.option("--rerank", "rerank_mode", type=click.Choice(["lm", "oracle"]), default=None)
@click.option("--k-rerank", type=int, default=3, show_default=True)
@click.option("--rerank-pool", type=int, default=0, help="Candidates fed to the reranker; default K.")
@click.option("--exact-dim", type=int, default=0, help="Exact-encoder dim; default store dim.")
@click.option("--exact-seed", type=int, default=0, show_default=True)
@click.option("--lm-base-url", default="", help="Chat endpoint for reranking/generation.")
@click.option("--lm-model", default="", help="Chat/likelihood model name.")
@click.option("--gold-answer", default=None, help="Gold answer (oracle reranking).")
@click.option("--example", "examples", multiple=True, help="In-context example; repeatable.")
@click.option("--guideline", default=None, help="CoT guideline appended after the query.")
@click.option("--no-generate", is_flag=True, default=False,
              help="Skip the generation call even when an LM is configured.")
def ask(encoder_name, dim, seed, base_url, buckets, index_paths, store_path, passages_path,
        query, k, K, nprobe, rerank_mode, k_rerank, rerank_pool, exact_dim, exact_seed,
        lm_base_url, lm_model, gold_answer, examples, guideline, no_generate):
    """Full two-stage retrieval; prints JSON with passages and generator input."""
    indexes = [ann.load_index(p) for p in index_paths]
    store = exact.ExactStore(store_path)
    texts = {p.passage_id: p.text for p in corpus.read_passages(passages_path)}

    approx = _encoder_from_options(encoder_name, indexes[0].dim, seed, "approx", base_url, buckets)
    exact_enc = _encoder_from_options(
        encoder_name, exact_dim or store.dim, exact_seed, "exact", base_url, buckets
    )
    scorer = likelihood = None
    if rerank_mode == "lm":
        if not lm_base_url:
            raise click.UsageError("--rerank lm requires --lm-base-url")
        scorer = HttpChatClient(model=lm_model or "generator", base_url=lm_base_url)
    elif rerank_mode == "oracle":
        if not lm_base_url:
            raise click.UsageError("--rerank oracle requires --lm-base-url")
        if gold_answer is None:
            raise click.UsageError("--rerank oracle requires --gold-answer")
        likelihood = HttpLikelihoodClient(model=lm_model or "generator", base_url=lm_base_url)

    params = ann.SearchParams(K=K, k=k, nprobe=nprobe, k_rerank=k_rerank)
    config = PipelineConfig(
        params=params,
        rerank_mode=rerank_mode or "none",
        rerank_pool=rerank_pool or None,
    )
    engine = RetrievalEngine(
        indexes, store, approx, exact_enc, config=config, texts=texts,
        scorer=scorer, likelihood=likelihood,
    )
    bundle = QueryBundle(
        query=query, examples=tuple(examples), guideline=guideline, gold_answer=gold_answer
    )
    passages, generator_input = engine.ask(query, bundle=bundle)
    payload = {
        "query": query,
        "passages": [
            {"passage_id": p.passage_id, "score": p.score, "stage": p.stage,
             "text": texts.get(p.passage_id, "")}
            for p in passages
        ],
        "generator_input": generator_input.text,
    }
    if lm_base_url and not no_generate:
        generator = HttpChatClient(model=lm_model or "generator", base_url=lm_base_url)
        payload["answer"] = generator.complete(generator_input.text)
    store.close()
    click.echo(json.dumps(payload, ensure_ascii=False))


@main.command("web-rank")
@add_options(encoder_options)
@click.option("--docs", "docs_path", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("--strategy", type=click.Choice(["aggregate", "extract", "breakdown"]),
              default="aggregate", show_default=True)
@click.option("--c", "chunk_size", type=int, default=512, show_default=True)
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--subquery", "subqueries", multiple=True,
              help="Explicit breakdown subquery; repeatable. Skips the LM call.")
@click.option("--lm-base-url", default="", help="Chat endpoint for breakdown decomposition.")
@click.option("--lm-model", default="", help="Chat model for breakdown decomposition.")
def web_rank(encoder_name, dim, seed, base_url, buckets, docs_path, query, strategy,
             chunk_size, k, subqueries, lm_base_url, lm_model):
    """Rank external search-result documents into top-k chunks."""
    docs = list(webrank.read_external_documents(docs_path))
    encoder = _encoder_from_options(encoder_name, dim, seed, "approx", base_url, buckets)
    if strategy == "aggregate":
        chunks = webrank.aggregate_rank(docs, query, encoder, c=chunk_size, k=k)
    elif strategy == "extract":
        chunks = webrank.rank_extract(docs, query, encoder, c=chunk_size)[:k]
    else:
        if subqueries:
            subs = list(subqueries)[: webrank.MAX_SUBQUERIES]
        elif lm_base_url:
            client = HttpChatClient(model=lm_model or "generator", base_url=lm_base_url)
            output = client.complete(webrank.build_breakdown_prompt(query))
            subs = webrank.parse_breakdown(output, query)
        else:
            raise click.UsageError("--strategy breakdown needs --subquery or --lm-base-url")
        chunks = webrank.breakdown_rank(docs, subs, encoder, c=chunk_size, k=k)
    click.echo(json.dumps(
        [
            {"doc_rank": ch.doc_rank, "position": ch.position,
             "score": ch.score, "text": ch.text}
            for ch in chunks
        ],
        ensure_ascii=False,
    ))


if __name__ == "__main__":
    main()
