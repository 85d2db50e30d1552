"""Chain-of-thought curation: prompt construction, a pluggable
text-generation client, and export of curated training records.

Two prompt roles exist. A generation prompt embeds the question, the
correct answer, and the serialized reasoning paths; a pruning prompt
embeds the question and the raw chain and asks for the essential steps
only. All pipeline tests run against the deterministic mock client; the
HTTP client is only exercised via a loopback stub.
"""

from __future__ import annotations

import hashlib
import json
import os
import string
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .errors import ClientError, ContentError, PromptError
from .kg_store import Graph
from .path_engine import serialize_path
from .qa_forge import QAItem

ROLE_PLACEHOLDERS = {
    "generation": {"question", "answer", "paths"},
    "pruning": {"question", "chain"},
}

NO_PATHS_MARKER = "(no reasoning paths available)"

PATHS_SECTION = "Reasoning paths:"
CHAIN_SECTION = "Reasoning chain:"
ANSWER_SECTION = "Correct answer:"
INSTRUCTIONS_SECTION = "Instructions:"

# Stamp used by the pure mock client so exports stay byte-identical.
MOCK_STAMP = "1970-01-01T00:00:00+00:00"


def _placeholders(body: str) -> set[str]:
    names = set()
    for _, name, _, _ in string.Formatter().parse(body):
        if name:
            names.add(name)
    return names


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLE_PLACEHOLDERS:
            raise PromptError(f"unknown template role {self.role!r}")
        missing = ROLE_PLACEHOLDERS[self.role] - _placeholders(self.body)
        if missing:
            raise PromptError(
                f"template {self.name!r} is missing placeholders: {sorted(missing)}"
            )


def load_template(path: str | Path, role: str) -> PromptTemplate:
    p = Path(path)
    return PromptTemplate(name=p.stem, body=p.read_text(encoding="utf-8"), role=role)


def _render(template: PromptTemplate, values: dict[str, str]) -> str:
    try:
        return template.body.format(**values)
    except (KeyError, IndexError) as exc:
        raise PromptError(
            f"unresolved placeholder in template {template.name!r}: {exc}"
        ) from exc


def render_generation_prompt(template: PromptTemplate, question: str,
                             answer: str, paths_text: str) -> str:
    if template.role != "generation":
        raise PromptError(f"template {template.name!r} does not have role 'generation'")
    return _render(template, {
        "question": question,
        "answer": answer,
        "paths": paths_text if paths_text.strip() else NO_PATHS_MARKER,
    })


def build_generation_prompt(item: QAItem, template: PromptTemplate, graph: Graph) -> str:
    return render_generation_prompt(template, item.question, graph.name(item.answer),
                                    serialize_paths_block(item, graph))


def serialize_paths_block(item: QAItem, graph: Graph) -> str:
    if not item.paths:
        return NO_PATHS_MARKER
    return "\n".join(serialize_path(p, graph) for p in item.paths)


def build_pruning_prompt(question: str, chain: str, template: PromptTemplate) -> str:
    if template.role != "pruning":
        raise PromptError(f"template {template.name!r} does not have role 'pruning'")
    if not chain.strip():
        raise PromptError("cannot build a pruning prompt for an empty chain")
    return _render(template, {"question": question, "chain": chain})


@dataclass(frozen=True)
class DecodeOptions:
    temperature: float = 0.0
    max_tokens: int = 512


class TextGenClient(Protocol):
    name: str

    def complete(self, prompt: str, options: DecodeOptions) -> str: ...

    def provenance_stamp(self) -> str: ...


def _section(prompt: str, header: str) -> str | None:
    """Text between a section header line and the instructions block."""
    if header not in prompt:
        return None
    after = prompt.split(header, 1)[1]
    for stop in (INSTRUCTIONS_SECTION,):
        if stop in after:
            after = after.split(stop, 1)[0]
    return after.strip("\n").strip()


def _first_line(text: str | None) -> str:
    if not text:
        return ""
    return text.splitlines()[0].strip()


def synthesize_mock_chain(prompt: str) -> str:
    """Deterministic chain synthesis for generation prompts built from the
    shipped default template. Falls back to a digest-tagged stub when the
    expected sections are absent."""
    paths = _section(prompt, PATHS_SECTION)
    answer = _first_line(_section(prompt, ANSWER_SECTION))
    if paths is None or not answer:
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        return f"Mock chain for prompt {digest}."
    lines = ["Step 1: restate the question and identify the head entity."]
    step = 2
    for path_line in paths.splitlines():
        if path_line.strip():
            lines.append(f"Step {step}: follow {path_line.strip()}")
            step += 1
    lines.append("Additional knowledge: background recalled outside the paths.")
    lines.append(f"Conclusion: the answer is {answer}.")
    return "\n".join(lines)


def prune_mock_chain(prompt: str) -> str:
    """Deterministic pruning: drop lines flagged as additional knowledge
    from the embedded chain section."""
    chain = _section(prompt, CHAIN_SECTION)
    if chain is None:
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        return f"Mock pruned chain for prompt {digest}."
    kept = [line for line in chain.splitlines()
            if not line.strip().startswith("Additional knowledge")]
    return "\n".join(kept)


class MockClient:
    """Table-driven deterministic client; a pure function of the prompt.

    Exact table hits win; otherwise the prompt is routed to the pruning or
    generation synthesizer based on which section markers it carries.
    """

    name = "mock"

    def __init__(self, table: dict[str, str] | None = None,
                 fallback: Callable[[str], str] | None = None):
        self.table = dict(table or {})
        self.fallback = fallback

    def complete(self, prompt: str, options: DecodeOptions) -> str:
        if prompt in self.table:
            return self.table[prompt]
        if self.fallback is not None:
            return self.fallback(prompt)
        if CHAIN_SECTION in prompt:
            return prune_mock_chain(prompt)
        return synthesize_mock_chain(prompt)

    def provenance_stamp(self) -> str:
        return MOCK_STAMP


class HTTPClient:
    """Minimal text-completion client: one JSON POST per call, bearer
    token from an environment variable, 3 attempts with exponential
    backoff before the record (not the batch) fails."""

    name = "http"

    def __init__(self, url: str, token_env: str = "PATHFORGE_TOKEN",
                 text_field: str = "text", retries: int = 3,
                 backoff: float = 0.25, timeout: float = 30.0):
        self.url = url
        self.token_env = token_env
        self.text_field = text_field
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout

    def complete(self, prompt: str, options: DecodeOptions) -> str:
        headers = {}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "prompt": prompt,
            "max_tokens": options.max_tokens,
            "temperature": options.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(1, self.retries + 1):
            try:
                resp = requests.post(self.url, json=body, headers=headers,
                                     timeout=self.timeout)
                resp.raise_for_status()
                payload = resp.json()
                text = payload.get(self.text_field)
                if not isinstance(text, str):
                    raise ClientError(
                        f"response is missing text field {self.text_field!r}",
                        attempts=attempt,
                    )
                return text
            except ClientError:
                raise
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2 ** (attempt - 1)))
        raise ClientError(
            f"transport failure after {self.retries} attempts: {last_error}",
            attempts=self.retries,
        )

    def provenance_stamp(self) -> str:
        return datetime.now(timezone.utc).isoformat()


def generate_cot(client: TextGenClient, prompt: str, options: DecodeOptions) -> str:
    chain = client.complete(prompt, options)
    if not chain.strip():
        raise ContentError("client returned an empty completion")
    return chain


def prune_cot(client: TextGenClient, prompt: str, options: DecodeOptions) -> str:
    pruned = client.complete(prompt, options)
    if not pruned.strip():
        raise ContentError("client returned an empty pruned chain")
    return pruned


@dataclass(frozen=True)
class CoTRecord:
    item_id: str
    question: str
    answer: str
    paths_text: str
    chain_raw: str
    chain_pruned: str
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "question": self.question,
            "answer": self.answer,
            "paths_text": self.paths_text,
            "chain_raw": self.chain_raw,
            "chain_pruned": self.chain_pruned,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "CoTRecord":
        return cls(
            item_id=raw["item_id"],
            question=raw["question"],
            answer=raw["answer"],
            paths_text=raw["paths_text"],
            chain_raw=raw["chain_raw"],
            chain_pruned=raw["chain_pruned"],
            provenance=raw["provenance"],
        )


def curate(
    item_id: str,
    question: str,
    answer: str,
    paths_text: str,
    generation_template: PromptTemplate,
    pruning_template: PromptTemplate,
    client: TextGenClient,
    options: DecodeOptions,
) -> CoTRecord:
    gen_prompt = render_generation_prompt(generation_template, question, answer, paths_text)
    chain = generate_cot(client, gen_prompt, options)
    prune_prompt = build_pruning_prompt(question, chain, pruning_template)
    pruned = prune_cot(client, prune_prompt, options)
    return CoTRecord(
        item_id=item_id,
        question=question,
        answer=answer,
        paths_text=paths_text,
        chain_raw=chain,
        chain_pruned=pruned,
        provenance={
            "client": client.name,
            "temperature": options.temperature,
            "max_tokens": options.max_tokens,
            "generated_at": client.provenance_stamp(),
        },
    )


def curate_item(
    item: QAItem,
    graph: Graph,
    generation_template: PromptTemplate,
    pruning_template: PromptTemplate,
    client: TextGenClient,
    options: DecodeOptions,
) -> CoTRecord:
    return curate(item.id, item.question, graph.name(item.answer),
                  serialize_paths_block(item, graph),
                  generation_template, pruning_template, client, options)


def run_pipeline(
    items: Sequence[QAItem],
    graph: Graph,
    generation_template: PromptTemplate,
    pruning_template: PromptTemplate,
    client: TextGenClient,
    options: DecodeOptions = DecodeOptions(),
) -> tuple[list[CoTRecord], list[tuple[str, str]]]:
    """Curate every item, continuing past per-record failures. Records
    come back in canonical item-id order regardless of completion order."""
    records: list[CoTRecord] = []
    failures: list[tuple[str, str]] = []
    for item in sorted(items, key=lambda it: it.id):
        try:
            records.append(curate_item(item, graph, generation_template,
                                        pruning_template, client, options))
        except (ClientError, ContentError, PromptError) as exc:
            failures.append((item.id, str(exc)))
    return records, failures


def export_sft_records(records: Sequence[CoTRecord], destination: str | Path) -> int:
    """Write one JSON record per line, atomically: a partial write never
    leaves a torn corpus behind."""
    path = Path(destination)
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    try:
        with tmp.open("w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
                count += 1
    except Exception:
        tmp.unlink(missing_ok=True)
        raise
    tmp.replace(path)
    return count


def read_sft_records(source: str | Path) -> list[CoTRecord]:
    with Path(source).open(encoding="utf-8") as fh:
        return [CoTRecord.from_json(json.loads(line)) for line in fh if line.strip()]
