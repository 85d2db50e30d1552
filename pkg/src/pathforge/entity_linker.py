"""Dictionary entity linking: extract mentions from text and map them to
graph nodes.

Matching is greedy longest-match over normalized token windows. All
normalization lives here so the graph can store names verbatim.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import SchemaError
from .kg_store import Graph, NodeId


def normalize(text: str) -> str:
    """Lowercase, strip punctuation to spaces, collapse whitespace, trim."""
    out = []
    for ch in text:
        if ch.isalnum():
            out.append(ch.lower())
        else:
            out.append(" ")
    return " ".join("".join(out).split())


def _tokenize(text: str) -> list[tuple[str, int, int]]:
    """Normalized tokens with their original character offsets."""
    tokens: list[tuple[str, int, int]] = []
    start = None
    for i, ch in enumerate(text):
        if ch.isalnum():
            if start is None:
                start = i
        else:
            if start is not None:
                tokens.append((text[start:i].lower(), start, i))
                start = None
    if start is not None:
        tokens.append((text[start:].lower(), start, len(text)))
    return tokens


@dataclass(frozen=True)
class EntityMention:
    surface: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError("mention span must be non-empty")


@dataclass(frozen=True)
class LinkResult:
    mention: EntityMention
    candidates: tuple[NodeId, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("a LinkResult must carry at least one candidate")
        if list(self.candidates) != sorted(set(self.candidates)):
            raise ValueError("candidates must be sorted and unique")


@dataclass
class Lexicon:
    entries: dict[str, frozenset[NodeId]]
    max_token_span: int

    def __len__(self) -> int:
        return len(self.entries)


def read_alias_table(path: str | Path, delimiter: str = ",") -> list[tuple[str, str]]:
    """Read the optional two-column (alias, canonical name) file."""
    pairs: list[tuple[str, str]] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise SchemaError(f"alias file row {lineno}: expected 2 columns, got {len(row)}")
            pairs.append((row[0], row[1]))
    return pairs


def build_lexicon(graph: Graph, extra_aliases: Iterable[tuple[str, str]] = ()) -> Lexicon:
    """One entry per distinct normalized name or alias; surface collisions
    merge their candidate sets.

    extra_aliases pairs attach an alias to every node whose normalized
    name already matches the canonical string; unknown canonicals are
    skipped (augmentation is best-effort by design).
    """
    staged: dict[str, set[NodeId]] = {}
    for node in graph.nodes:
        for surface in (node.name, *node.aliases):
            key = normalize(surface)
            if key:
                staged.setdefault(key, set()).add(node.id)
    for alias, canonical in extra_aliases:
        targets = staged.get(normalize(canonical))
        if targets:
            key = normalize(alias)
            if key:
                staged.setdefault(key, set()).update(targets)
    entries = {k: frozenset(v) for k, v in staged.items()}
    max_span = max((len(k.split()) for k in entries), default=0)
    return Lexicon(entries=entries, max_token_span=max_span)


def extract_and_map(text: str, lexicon: Lexicon) -> list[LinkResult]:
    """Greedy longest-match left-to-right scan; mention spans never overlap."""
    tokens = _tokenize(text)
    results: list[LinkResult] = []
    i = 0
    while i < len(tokens):
        matched = False
        max_w = min(lexicon.max_token_span, len(tokens) - i)
        for w in range(max_w, 0, -1):
            window = " ".join(tok for tok, _, _ in tokens[i:i + w])
            ids = lexicon.entries.get(window)
            if ids:
                start = tokens[i][1]
                end = tokens[i + w - 1][2]
                mention = EntityMention(surface=text[start:end], start=start, end=end)
                results.append(LinkResult(mention=mention, candidates=tuple(sorted(ids))))
                i += w
                matched = True
                break
        if not matched:
            i += 1
    return results


def map_answer_options(options: Sequence[str], lexicon: Lexicon) -> list[set[NodeId]]:
    """Whole-string linking for the four answer options; an option that
    does not normalize to a lexicon key yields an empty set."""
    if len(options) != 4:
        raise ValueError(f"expected exactly 4 options, got {len(options)}")
    out: list[set[NodeId]] = []
    for option in options:
        ids = lexicon.entries.get(normalize(option))
        out.append(set(ids) if ids else set())
    return out
