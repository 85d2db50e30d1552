"""Benchmark synthesis: head-relation questions, distractor options,
difficulty labels, and head-entity-disjoint splits.

Every random choice flows from an explicit corpus seed through stable
per-item sub-seeds, so a corpus regenerates byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import GenerationError
from .kg_store import Graph, NodeId
from .path_engine import (
    DifficultyLevel,
    PathTemplate,
    PruningPolicy,
    ReasoningPath,
    classify_difficulty,
    enumerate_paths,
    prune_paths,
    serialize_path,
)

TASK_CATEGORIES = (
    "Indication",
    "Bioprocess",
    "OffLabelUse",
    "DiseaseProtein",
    "SideEffect",
    "Contraindication",
    "DrugDrugInteraction",
)


@dataclass(frozen=True)
class CategorySpec:
    category: str
    head_type: str
    relation: str
    answer_type: str
    question_template: str
    difficulty_hint: DifficultyLevel

    def __post_init__(self) -> None:
        if self.category not in TASK_CATEGORIES:
            raise ValueError(f"unknown task category {self.category!r}")
        if self.question_template.count("{head}") != 1:
            raise ValueError("question_template must contain exactly one {head}")


@dataclass(frozen=True)
class QAItem:
    id: str
    question: str
    options: tuple[str, str, str, str]
    correct_index: int
    head: NodeId
    relation: str
    answer: NodeId
    category: str
    difficulty: DifficultyLevel
    paths: tuple[ReasoningPath, ...] = ()
    unmined: bool = False

    def __post_init__(self) -> None:
        if len(set(self.options)) != 4:
            raise ValueError(f"options must be 4 distinct strings: {self.options}")
        if not 0 <= self.correct_index <= 3:
            raise ValueError(f"correct_index out of range: {self.correct_index}")


@dataclass
class GenerationResult:
    items: list[QAItem]
    shortfall: bool = False


@dataclass
class DatasetSplit:
    sft: list[QAItem] = field(default_factory=list)
    rl: list[QAItem] = field(default_factory=list)
    test: list[QAItem] = field(default_factory=list)

    def named(self) -> list[tuple[str, list[QAItem]]]:
        return [("sft", self.sft), ("rl", self.rl), ("test", self.test)]

    def all_items(self) -> list[QAItem]:
        return self.sft + self.rl + self.test


@dataclass
class DatasetStats:
    rows: dict[tuple[str, str, str], int]
    total: int


def _derive_rng(seed: int, *parts) -> random.Random:
    digest = hashlib.sha256(repr((seed,) + parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def load_category_specs(path: str | Path) -> list[CategorySpec]:
    with Path(path).open(encoding="utf-8") as fh:
        raw = json.load(fh)
    specs = []
    for entry in raw:
        specs.append(CategorySpec(
            category=entry["category"],
            head_type=entry["head_type"],
            relation=entry["relation"],
            answer_type=entry["answer_type"],
            question_template=entry["question_template"],
            difficulty_hint=DifficultyLevel.from_label(entry["difficulty_hint"]),
        ))
    return specs


def default_category_specs() -> list[CategorySpec]:
    """The seven shipped task categories; users can point the CLI at an
    edited copy of the packaged file instead."""
    with resources.as_file(resources.files("pathforge.data") / "category_specs.json") as p:
        return load_category_specs(p)


def _true_tails(graph: Graph, head: NodeId, relation: str) -> set[NodeId]:
    return set(graph.out_index.get((head, relation), ()))


def _distractor_pool(graph: Graph, head: NodeId, relation: str, answer: NodeId) -> list[NodeId]:
    answer_type = graph.node(answer).node_type
    answer_name = graph.name(answer)
    tails = _true_tails(graph, head, relation)
    pool = []
    for nid in graph.nodes_of_type(answer_type):
        if nid in tails or nid == head:
            continue
        if graph.name(nid) == answer_name:
            continue
        pool.append(nid)
    return pool


def sample_distractors(
    graph: Graph, head: NodeId, relation: str, answer: NodeId, seed: int
) -> tuple[NodeId, NodeId, NodeId]:
    """Three nodes of the answer's type that are not true tails of
    (head, relation), pairwise distinct by name, sampled uniformly."""
    pool = _distractor_pool(graph, head, relation, answer)
    rng = random.Random(seed)
    shuffled = list(pool)
    rng.shuffle(shuffled)
    picked: list[NodeId] = []
    names = {graph.name(answer)}
    for nid in shuffled:
        name = graph.name(nid)
        if name in names:
            continue
        names.add(name)
        picked.append(nid)
        if len(picked) == 3:
            return (picked[0], picked[1], picked[2])
    raise GenerationError(
        f"fewer than 3 eligible distractors for "
        f"({graph.name(head)}, {relation}, {graph.name(answer)})"
    )


def _eligible(graph: Graph, head: NodeId, relation: str, answer: NodeId) -> bool:
    pool = _distractor_pool(graph, head, relation, answer)
    names = {graph.name(n) for n in pool} - {graph.name(answer)}
    return len(names) >= 3


def _item_id(category: str, head: NodeId, answer: NodeId) -> str:
    return f"{category.lower()}-h{head:04d}-a{answer:04d}"


def generate_qa(
    graph: Graph,
    spec: CategorySpec,
    count: int,
    seed: int,
    max_per_head: int | None = None,
) -> GenerationResult:
    """Synthesize up to `count` items for one category.

    Heads of the category's head type are sampled without replacement
    first; tails are then sampled per head under a derived sub-seed. When
    fewer eligible triples exist than requested, all of them are returned
    and the shortfall flag is set.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    eligible: dict[NodeId, list[NodeId]] = {}
    for head in graph.nodes_of_type(spec.head_type):
        tails = [
            t for t in graph.out_index.get((head, spec.relation), ())
            if graph.node(t).node_type == spec.answer_type
            and _eligible(graph, head, spec.relation, t)
        ]
        if tails:
            eligible[head] = tails

    heads = sorted(eligible)
    _derive_rng(seed, "heads", spec.category).shuffle(heads)

    chosen: dict[NodeId, list[NodeId]] = {}
    produced = 0
    for head in heads:
        if produced >= count:
            break
        tails = sorted(eligible[head])
        _derive_rng(seed, "tails", spec.category, head).shuffle(tails)
        if max_per_head is not None:
            tails = tails[:max_per_head]
        tails = tails[: count - produced]
        if tails:
            chosen[head] = sorted(tails)
            produced += len(tails)

    items: list[QAItem] = []
    for head in sorted(chosen):
        head_name = graph.name(head)
        for tail in chosen[head]:
            item_id = _item_id(spec.category, head, tail)
            dseed = _derive_rng(seed, "distractors", item_id).getrandbits(32)
            distractors = sample_distractors(graph, head, spec.relation, tail, dseed)
            correct_index = _derive_rng(seed, "position", item_id).randrange(4)
            options: list[str] = []
            d_iter = iter(distractors)
            for slot in range(4):
                if slot == correct_index:
                    options.append(graph.name(tail))
                else:
                    options.append(graph.name(next(d_iter)))
            items.append(QAItem(
                id=item_id,
                question=spec.question_template.format(head=head_name),
                options=(options[0], options[1], options[2], options[3]),
                correct_index=correct_index,
                head=head,
                relation=spec.relation,
                answer=tail,
                category=spec.category,
                difficulty=spec.difficulty_hint,
            ))
    return GenerationResult(items=items, shortfall=produced < count)


def split_by_head(
    items: Sequence[QAItem], ratios: Sequence[float], seed: int
) -> DatasetSplit:
    """Assign whole head-entity groups to sft/rl/test so that item counts
    approximate the ratios (greedy largest-remaining-deficit rule)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be 3 non-negative reals: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    groups: dict[NodeId, list[QAItem]] = {}
    for item in items:
        groups.setdefault(item.head, []).append(item)
    heads = sorted(groups)
    _derive_rng(seed, "split").shuffle(heads)

    total = len(items)
    targets = [r * total for r in ratios]
    assigned = [0.0, 0.0, 0.0]
    buckets: list[list[QAItem]] = [[], [], []]
    for head in heads:
        deficits = [targets[i] - assigned[i] for i in range(3)]
        winner = max(range(3), key=lambda i: (deficits[i], -i))
        buckets[winner].extend(groups[head])
        assigned[winner] += len(groups[head])
    for bucket in buckets:
        bucket.sort(key=lambda it: it.id)
    return DatasetSplit(sft=buckets[0], rl=buckets[1], test=buckets[2])


def attach_paths_and_difficulty(
    items: Sequence[QAItem],
    graph: Graph,
    templates: Sequence[PathTemplate],
    max_d: int,
    prune_k: int = 10,
    allow_inverse: bool = False,
    jobs: int = 1,
) -> list[QAItem]:
    """Mine and prune supporting paths per item; difficulty becomes the
    classification of the cheapest path found, or stays at the category
    hint (with the unmined flag) when nothing connects within max_d."""
    out: list[QAItem] = []
    for item in items:
        result = enumerate_paths(
            graph, {item.head}, {item.answer}, templates, max_d,
            allow_inverse=allow_inverse, jobs=jobs,
        )
        pruned = prune_paths(result.paths, PruningPolicy(k=prune_k))
        if pruned:
            min_d = min(p.complexity for p in pruned)
            out.append(replace(item, paths=tuple(pruned),
                               difficulty=classify_difficulty(min_d), unmined=False))
        else:
            out.append(replace(item, paths=(), unmined=True))
    return out


def dataset_stats(data: DatasetSplit | Sequence[QAItem]) -> DatasetStats:
    """Item counts per (split, category, difficulty)."""
    if isinstance(data, DatasetSplit):
        named = data.named()
    else:
        named = [("all", list(data))]
    rows: dict[tuple[str, str, str], int] = {}
    total = 0
    for split_name, items in named:
        for item in items:
            key = (split_name, item.category, item.difficulty.label)
            rows[key] = rows.get(key, 0) + 1
            total += 1
    return DatasetStats(rows=dict(sorted(rows.items())), total=total)


def item_to_record(item: QAItem, graph: Graph) -> dict:
    return {
        "id": item.id,
        "question": item.question,
        "options": list(item.options),
        "correct_index": item.correct_index,
        "head": graph.name(item.head),
        "head_id": item.head,
        "relation": item.relation,
        "answer": graph.name(item.answer),
        "answer_id": item.answer,
        "category": item.category,
        "difficulty": item.difficulty.label,
        "unmined": item.unmined,
        "paths": [serialize_path(p, graph) for p in item.paths],
    }


def write_corpus(items: Iterable[QAItem], graph: Graph, destination: str | Path) -> int:
    """One JSON record per line; rewriting the same corpus is
    byte-identical."""
    path = Path(destination)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item_to_record(item, graph), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_corpus(source: str | Path) -> list[dict]:
    with Path(source).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
