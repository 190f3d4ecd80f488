"""Plan-decorated few-shot prompting against a chat-completion endpoint.

Builds prompts that bracket the planned spans with <e>...</e> tags and
instruct the model to summarize only the tagged content, with in-context
exemplars decorated by their oracle plans. All network effects sit behind
a small client interface; a file-backed replay client makes the whole
module runnable offline and deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .abstractor import Candidate
from .corpus import Document
from .plans import ContentPlan, NULL_PLAN

log = logging.getLogger(__name__)

FOCUSED_INSTRUCTION = ("Summarize the content in between the HTML tags <e> and </e> "
                       "in one to three sentences.")
UNFOCUSED_INSTRUCTION = "Summarize the article in three sentences."

DEFAULT_TEMPERATURE = 0.3
HIGH_TEMPERATURE = 0.7
BASELINE_NUCLEUS = 0.8
DEFAULT_EXEMPLARS = 3

API_KEY_ENV = "PLANSUM_API_KEY"


def decorate_text(doc: Document, plan: ContentPlan) -> str:
    """Insert <e>...</e> around the planned spans of the raw document text."""
    plan.validate_for(doc)
    chosen = plan.as_set()
    out = []
    cursor = 0
    for i, span in enumerate(doc.edus):
        out.append(doc.text[cursor:span.char_start])
        segment_text = doc.text[span.char_start:span.char_end]
        if i in chosen:
            lead = len(segment_text) - len(segment_text.lstrip())
            trail = len(segment_text) - len(segment_text.rstrip())
            core = segment_text[lead:len(segment_text) - trail or None]
            out.append(segment_text[:lead] + "<e>" + core + "</e>"
                       + (segment_text[len(segment_text) - trail:] if trail else ""))
        else:
            out.append(segment_text)
        cursor = span.char_end
    out.append(doc.text[cursor:])
    return "".join(out)


@dataclass(frozen=True)
class PromptSpec:
    instruction: str
    exemplars: tuple[tuple[str, str], ...]
    target: str
    temperature: float = DEFAULT_TEMPERATURE
    nucleus_p: float | None = None
    max_candidates: int = 16
    draw_index: int = 0
    plan: ContentPlan | None = None
    doc_id: str = ""

    def render(self) -> str:
        blocks = [self.instruction, ""]
        for article, summary in self.exemplars:
            blocks.append(f"Article: {article}")
            blocks.append(f"Summary: {summary}")
            blocks.append("")
        blocks.append(f"Article: {self.target}")
        blocks.append("Summary:")
        return "\n".join(blocks)


def build_prompt(doc: Document, plan: ContentPlan,
                 exemplar_pool: Sequence[tuple[Document, ContentPlan]],
                 rng_seed: int, n_exemplars: int = DEFAULT_EXEMPLARS,
                 temperature: float = DEFAULT_TEMPERATURE,
                 draw_index: int = 0) -> PromptSpec:
    """Few-shot prompt for one plan, with a fresh exemplar draw per seed."""
    for ex_doc, ex_plan in exemplar_pool:
        if not ex_doc.reference:
            raise ValueError(f"exemplar doc {ex_doc.id!r} has no reference summary")
        ex_plan.validate_for(ex_doc)
    rng = random.Random(rng_seed)
    if not exemplar_pool:
        log.warning("empty exemplar pool; building a zero-shot prompt")
        picked = []
    else:
        picked = rng.sample(list(exemplar_pool), min(n_exemplars, len(exemplar_pool)))
    focused = not plan.is_empty
    exemplars = tuple(
        (decorate_text(ex_doc, ex_plan) if focused else ex_doc.text, ex_doc.reference)
        for ex_doc, ex_plan in picked)
    return PromptSpec(
        instruction=FOCUSED_INSTRUCTION if focused else UNFOCUSED_INSTRUCTION,
        exemplars=exemplars,
        target=decorate_text(doc, plan) if focused else doc.text,
        temperature=temperature,
        draw_index=draw_index,
        plan=plan,
        doc_id=doc.id,
    )


def baseline_prompts(doc: Document, mode: str,
                     exemplar_pool: Sequence[tuple[Document, ContentPlan]],
                     rng_seed: int, num_candidates: int = 16) -> list[PromptSpec]:
    """Unfocused prompt sets: one at 0.3, or 16 at 0.7, or 16 from a 0.8 nucleus."""
    if mode not in ("single", "temperature", "nucleus"):
        raise ValueError(f"unknown baseline mode {mode!r}")
    base = build_prompt(doc, NULL_PLAN, exemplar_pool, rng_seed)
    if mode == "single":
        return [base]
    prompts = []
    for i in range(num_candidates):
        if mode == "temperature":
            spec = PromptSpec(base.instruction, base.exemplars, base.target,
                              temperature=HIGH_TEMPERATURE, draw_index=i,
                              doc_id=doc.id, max_candidates=num_candidates)
        else:
            spec = PromptSpec(base.instruction, base.exemplars, base.target,
                              temperature=1.0, nucleus_p=BASELINE_NUCLEUS, draw_index=i,
                              doc_id=doc.id, max_candidates=num_candidates)
        prompts.append(spec)
    return prompts


def focused_prompts(doc: Document, plans: Sequence[ContentPlan],
                    exemplar_pool: Sequence[tuple[Document, ContentPlan]],
                    rng_seed: int) -> list[PromptSpec]:
    """One focused prompt per generated plan (a null plan falls back to unfocused)."""
    return [build_prompt(doc, plan, exemplar_pool, rng_seed, draw_index=i,
                         temperature=DEFAULT_TEMPERATURE)
            for i, plan in enumerate(plans)]


class ClientError(RuntimeError):
    """Transport-level failure (connection, HTTP status, rate limit)."""


class MalformedResponseError(RuntimeError):
    """The endpoint answered but not with usable text."""


class CompletionClient(Protocol):
    def complete(self, prompt: str, *, temperature: float,
                 nucleus_p: float | None = None, draw_index: int = 0) -> str: ...


def request_key(prompt: str, temperature: float, nucleus_p: float | None,
                draw_index: int) -> str:
    payload = json.dumps({
        "prompt": prompt,
        "temperature": temperature,
        "nucleus_p": nucleus_p,
        "draw_index": draw_index,
    }, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class HttpChatClient:
    """OpenAI-style chat-completion client.

    POSTs {"model", "messages", "temperature", "top_p"} and reads
    choices[0].message.content. The API key comes from the environment.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = API_KEY_ENV,
                 timeout: float = 60.0):
        import os
        import requests

        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self._session = requests.Session()
        self._api_key = os.environ.get(api_key_env, "")
        if not self._api_key:
            log.warning("environment variable %s is empty; requests will be unauthenticated",
                        api_key_env)

    def complete(self, prompt: str, *, temperature: float,
                 nucleus_p: float | None = None, draw_index: int = 0) -> str:
        import requests

        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        if nucleus_p is not None:
            body["top_p"] = nucleus_p
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        try:
            resp = self._session.post(self.endpoint, json=body, headers=headers,
                                      timeout=self.timeout)
        except requests.RequestException as exc:
            raise ClientError(f"transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ClientError(f"retryable HTTP status {resp.status_code}")
        if resp.status_code != 200:
            raise MalformedResponseError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected response shape: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponseError("response content is not a string")
        return content


class ReplayClient:
    """JSONL cache of request-hash -> response; optionally records through.

    In strict (no inner client) mode a cache miss is a ClientError, so
    tests run with zero network access.
    """

    def __init__(self, path: str | Path, inner: CompletionClient | None = None):
        self.path = Path(path)
        self.inner = inner
        self._cache: dict[str, str] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        record = json.loads(line)
                        self._cache[record["key"]] = record["response"]

    def complete(self, prompt: str, *, temperature: float,
                 nucleus_p: float | None = None, draw_index: int = 0) -> str:
        key = request_key(prompt, temperature, nucleus_p, draw_index)
        if key in self._cache:
            return self._cache[key]
        if self.inner is None:
            raise ClientError(f"replay cache miss for request {key[:12]}… and no live client")
        response = self.inner.complete(prompt, temperature=temperature,
                                       nucleus_p=nucleus_p, draw_index=draw_index)
        self._cache[key] = response
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "response": response}, ensure_ascii=False) + "\n")
        return response


class SpanEchoClient:
    """Deterministic offline stub: echoes the tagged spans of the target article.

    For unfocused prompts it echoes the target's first sentence, so every
    prompt gets a stable, content-bearing reply.
    """

    def complete(self, prompt: str, *, temperature: float,
                 nucleus_p: float | None = None, draw_index: int = 0) -> str:
        target = prompt.rsplit("Article: ", 1)[-1]
        target = target.rsplit("\nSummary:", 1)[0]
        spans = []
        cursor = 0
        while True:
            start = target.find("<e>", cursor)
            if start < 0:
                break
            end = target.find("</e>", start)
            if end < 0:
                break
            spans.append(target[start + 3:end])
            cursor = end + 4
        if spans:
            return " ".join(s.strip() for s in spans)
        return target.split(".")[0].strip() + "."


def generate_focused(client: CompletionClient, prompts: Sequence[PromptSpec], *,
                     max_retries: int = 3, backoff: float = 0.5,
                     sleep: Callable[[float], None] = time.sleep,
                     max_in_flight: int = 1) -> list[Candidate]:
    """One candidate per prompt; transport failures retry with backoff.

    Prompts that still fail, or that yield unusable text, come back as
    invalid candidates carrying the error, excluded from ranking.
    """

    def run_one(indexed: tuple[int, PromptSpec]) -> Candidate:
        i, spec = indexed
        rendered = spec.render()
        last_error = "no attempt made"
        for attempt in range(max_retries):
            try:
                text = client.complete(rendered, temperature=spec.temperature,
                                       nucleus_p=spec.nucleus_p,
                                       draw_index=spec.draw_index)
                if not isinstance(text, str) or not text.strip():
                    raise MalformedResponseError("empty or non-text response")
                return Candidate(doc_id=spec.doc_id, method="llm", beam_index=i,
                                 text=text.strip(), plan=spec.plan, log_likelihood=0.0)
            except ClientError as exc:
                last_error = str(exc)
                log.warning("prompt %d attempt %d failed: %s", i, attempt + 1, exc)
                if attempt + 1 < max_retries:
                    sleep(backoff * (2 ** attempt))
            except MalformedResponseError as exc:
                last_error = str(exc)
                log.warning("prompt %d returned a malformed response: %s", i, exc)
                break
        return Candidate(doc_id=spec.doc_id, method="llm", beam_index=i, text="",
                         plan=spec.plan, invalid=True, error=last_error)

    indexed = list(enumerate(prompts))
    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return list(pool.map(run_one, indexed))
    return [run_one(item) for item in indexed]
