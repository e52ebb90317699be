"""Third-stage reranking: LM helpfulness scoring and gold-answer likelihood gain.

The LM path prompts a chat model for a 1-10 helpfulness score per
candidate passage and keeps the top k_rerank. The oracle path scores each
passage by how much it raises the probability a model assigns to the gold
answer, an upper bound on what reranking could achieve.

Both paths are selection-only (no new ids) and break score ties by the
candidates' original order.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence, runtime_checkable

import httpx

from .ann import STAGE_LM_RERANK, STAGE_ORACLE, ScoredPassage
from .embed import API_KEY_ENV
from .errors import ConfigError, TransportError
from .httpclient import post_json

SCORE_MIN = 1.0
SCORE_MAX = 10.0
PARSE_FAILURE_SCORE = 0.0  # deliberately below the valid 1..10 range
PARSE_FAILURE_REASON = "parse_failure"

# Scoring instruction, reproduced exactly; substitution sites are
# {full_text} (the question) and {retrieval_text} (the candidate passage).
RERANK_PROMPT_TEMPLATE = """\
# Instruction
You are an expert evaluator. Your task is to evaluate how much the context can help solve the question and arrive at the correct answer.
We will provide you with the question and the context. You should first read the question carefully, and then evaluate the helpfulness of the context based on the scoring criteria provided below.

# Question
{full_text}

# Context
{retrieval_text}

# Scoring Criteria
Before outputting the score, provide a short reason for the decision, citing specific chunks of text from the context if applicable. Output the score in the range of 1~10, where 1 means the response is extremely unhelpful and 10 means the response is extremely helpful.
Here are more detailed criteria for the scores:

- Score 1~2: The provided context is largely off-topic and provides minimal or no helpful information. Its content is very distant from the question at hand.
- Score 3~4: The provided context has a weak connection to the problem. While it may mention related concepts or offer minor insights, it does not contribute meaningfully to solving the question.
- Score 5~6: The provided context contains some relevant information, but it doesn’t directly help in solving the question. It may provide background context or partial information that needs further clarification.
- Score 7~8: The provided context is highly relevant and addresses most aspects of the question. It provides clear and actionable information, though there may still be minor gaps or missing details.
- Score 9~10: The provided context is entirely relevant and offers thorough, accurate, and comprehensive information that directly solves the question. It covers all aspects necessary to fully address the question with precision.

Please output your reason and score as a JSON object."""


@dataclass(frozen=True)
class QueryBundle:
    """A query plus the optional context the generator receives with it.

    ``gold_answer`` is only meaningful (and required) for oracle reranking.
    """

    query: str
    examples: tuple[str, ...] = ()
    guideline: str | None = None
    gold_answer: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))


@dataclass
class RerankScore:
    passage_id: int | None
    score: float
    reason: str = ""


@runtime_checkable
class ChatClient(Protocol):
    def complete(self, prompt: str) -> str: ...


@runtime_checkable
class LikelihoodProvider(Protocol):
    def probability(self, context: str, answer: str) -> float: ...


def build_rerank_prompt(query_full_text: str, passage_text: str) -> str:
    """Fill the scoring template; everything else is preserved verbatim."""
    return RERANK_PROMPT_TEMPLATE.format(
        full_text=query_full_text, retrieval_text=passage_text
    )


def parse_score(lm_output: str) -> tuple[float, str]:
    """Extract (score, reason) from reranker output.

    Takes the first JSON object carrying a numeric "score", clamped to
    [1, 10]. Any failure yields the sentinel score 0 with reason
    "parse_failure", which sorts below every valid score.
    """
    start = lm_output.find("{")
    decoder = json.JSONDecoder()
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(lm_output, start)
        except ValueError:
            obj = None
        if isinstance(obj, dict):
            score = obj.get("score")
            if isinstance(score, (int, float)) and not isinstance(score, bool):
                clamped = min(SCORE_MAX, max(SCORE_MIN, float(score)))
                reason = obj.get("reason")
                return clamped, reason if isinstance(reason, str) else ""
        start = lm_output.find("{", start + 1)
    return PARSE_FAILURE_SCORE, PARSE_FAILURE_REASON


def _score_one(scorer: ChatClient, bundle: QueryBundle, text: str) -> tuple[float, str]:
    prompt = build_rerank_prompt(bundle.query, text)
    try:
        output = scorer.complete(prompt)
    except TransportError:
        return PARSE_FAILURE_SCORE, "transport_failure"
    return parse_score(output)


def lm_rerank(
    scorer: ChatClient,
    bundle: QueryBundle,
    candidates: Sequence[ScoredPassage],
    k_rerank: int,
    texts: Mapping[int, str],
    max_concurrency: int = 1,
) -> list[ScoredPassage]:
    """Keep the k_rerank candidates the LM scores as most helpful.

    Ties and sentinel scores fall back to the candidates' original order.
    Scoring calls are independent; with ``max_concurrency`` > 1 they are
    issued in parallel, and results are still assembled in candidate
    order.
    """
    if not candidates:
        raise ConfigError("lm_rerank requires a nonempty candidate list")
    if k_rerank < 1:
        raise ConfigError(f"k_rerank must be >= 1, got {k_rerank}")
    passage_texts = [texts[c.passage_id] for c in candidates]
    if max_concurrency > 1:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            scored = list(
                pool.map(lambda t: _score_one(scorer, bundle, t), passage_texts)
            )
    else:
        scored = [_score_one(scorer, bundle, t) for t in passage_texts]
    ranked = sorted(
        (
            (score, rank, c.passage_id)
            for rank, (c, (score, _)) in enumerate(zip(candidates, scored))
        ),
        key=lambda item: (-item[0], item[1]),
    )
    return [
        ScoredPassage(passage_id=pid, score=score, stage=STAGE_LM_RERANK)
        for score, _, pid in ranked[:k_rerank]
    ]


ORACLE_CONTEXT_SEPARATOR = "\n"


def oracle_rerank(
    provider: LikelihoodProvider,
    bundle: QueryBundle,
    candidates: Sequence[ScoredPassage],
    k_rerank: int,
    texts: Mapping[int, str],
) -> list[ScoredPassage]:
    """Keep the k_rerank candidates with the largest gold-answer likelihood gain.

    gain(p) = P(answer | passage + query) - P(answer | query), with the
    baseline computed once per query. Negative gains are not filtered;
    ties fall back to original candidate order.
    """
    if bundle.gold_answer is None:
        raise ConfigError("oracle reranking requires bundle.gold_answer")
    if not candidates:
        raise ConfigError("oracle_rerank requires a nonempty candidate list")
    if k_rerank < 1:
        raise ConfigError(f"k_rerank must be >= 1, got {k_rerank}")
    baseline = provider.probability(bundle.query, bundle.gold_answer)
    gains = []
    for rank, c in enumerate(candidates):
        context = texts[c.passage_id] + ORACLE_CONTEXT_SEPARATOR + bundle.query
        gain = provider.probability(context, bundle.gold_answer) - baseline
        gains.append((gain, rank, c.passage_id))
    gains.sort(key=lambda item: (-item[0], item[1]))
    return [
        ScoredPassage(passage_id=pid, score=gain, stage=STAGE_ORACLE)
        for gain, _, pid in gains[:k_rerank]
    ]


class HttpChatClient:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Scoring uses temperature 0 so rerank runs are repeatable; the same
    client doubles as the generator.
    """

    def __init__(
        self,
        model: str,
        base_url: str,
        api_key: str | None = None,
        temperature: float = 0.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, prompt: str) -> str:
        payload = post_json(
            self._client,
            f"{self.base_url}/chat/completions",
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": self.temperature,
            },
            headers=self._headers(),
            max_retries=self.max_retries,
            backoff=self.backoff,
        )
        return payload["choices"][0]["message"]["content"]


class HttpLikelihoodClient:
    """Likelihood provider over a completion-with-logprobs endpoint.

    Requests echoed logprobs for context + answer and sums the token
    logprobs at offsets inside the answer region; the returned probability
    is exp of that sum.
    """

    def __init__(
        self,
        model: str,
        base_url: str,
        api_key: str | None = None,
        max_retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_retries = max_retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def probability(self, context: str, answer: str) -> float:
        payload = post_json(
            self._client,
            f"{self.base_url}/completions",
            {
                "model": self.model,
                "prompt": context + answer,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
            },
            headers=self._headers(),
            max_retries=self.max_retries,
            backoff=self.backoff,
        )
        logprobs = payload["choices"][0]["logprobs"]
        offsets = logprobs["text_offset"]
        token_logprobs = logprobs["token_logprobs"]
        total = 0.0
        for offset, lp in zip(offsets, token_logprobs):
            if offset >= len(context) and lp is not None:
                total += lp
        return math.exp(total)
