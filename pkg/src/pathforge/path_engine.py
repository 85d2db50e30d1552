"""Template-constrained path mining between question and answer nodes.

Three structural templates are supported: a single linear chain, a
divergent pair (side chain plus main chain from the same anchor), and a
convergent pair (two distinct chains from anchor to terminal). Complexity
d of a path is its total edge count over all branches, which reduces to
chain length for linear paths and grows with breadth for the others.

Search is depth-bounded DFS per branch with a per-branch visited set;
dead subtrees are cut by a reverse-BFS distance map toward the terminal.
Results are always deduplicated and sorted by a canonical key, so output
is deterministic regardless of worker count.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .kg_store import Graph, NodeId

Step = tuple[str, NodeId]


class TemplateKind(str, enum.Enum):
    LINEAR = "linear"
    DIVERGENT = "divergent"
    CONVERGENT = "convergent"


class DifficultyLevel(enum.IntEnum):
    BASIC = 1
    MEDIUM = 2
    HARD = 3

    @property
    def label(self) -> str:
        return self.name.title()

    @classmethod
    def from_label(cls, label: str) -> "DifficultyLevel":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown difficulty level {label!r}") from None


@dataclass(frozen=True)
class PathTemplate:
    kind: TemplateKind
    branch_lengths: tuple[int, ...]

    def __post_init__(self) -> None:
        expected = 1 if self.kind is TemplateKind.LINEAR else 2
        if len(self.branch_lengths) != expected:
            raise ValueError(
                f"{self.kind.value} template needs {expected} branch length(s), "
                f"got {self.branch_lengths}"
            )
        if any(length < 1 for length in self.branch_lengths):
            raise ValueError("branch lengths must be >= 1")

    @property
    def total_edges(self) -> int:
        return sum(self.branch_lengths)


@dataclass(frozen=True)
class Branch:
    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class ReasoningPath:
    anchor: NodeId
    terminal: NodeId
    kind: TemplateKind
    branches: tuple[Branch, ...]
    complexity: int


@dataclass(frozen=True)
class SearchLimits:
    max_branch_length: int = 8
    max_results: int = 100_000


@dataclass(frozen=True)
class PruningPolicy:
    k: int


@dataclass
class PathSearchResult:
    paths: list[ReasoningPath]
    truncated: bool = False

    def __iter__(self):
        return iter(self.paths)

    def __len__(self) -> int:
        return len(self.paths)


def complexity(path: ReasoningPath) -> int:
    """Total edge count across all branches."""
    return sum(len(b.steps) for b in path.branches)


def classify_difficulty(d: int) -> DifficultyLevel:
    if d < 1:
        raise ValueError(f"complexity must be >= 1, got {d}")
    if d <= 5:
        return DifficultyLevel.BASIC
    if d <= 7:
        return DifficultyLevel.MEDIUM
    return DifficultyLevel.HARD


def _branch_key(anchor: NodeId, branch: Branch) -> str:
    parts = [str(anchor)]
    for rel, nid in branch.steps:
        parts.append(f"-{rel}->{nid}")
    return "".join(parts)


def canonical_key(path: ReasoningPath) -> str:
    """Deterministic global ordering key; branches sorted so that the two
    orientations of an unordered branch pair collapse together."""
    branches = sorted(_branch_key(path.anchor, b) for b in path.branches)
    return f"{path.kind.value}#{'||'.join(branches)}"


def _make_path(anchor: NodeId, terminal: NodeId, kind: TemplateKind,
               branches: tuple[Branch, ...]) -> ReasoningPath:
    total = sum(len(b.steps) for b in branches)
    return ReasoningPath(anchor=anchor, terminal=terminal, kind=kind,
                         branches=branches, complexity=total)


def _dist_to_target(graph: Graph, target: NodeId, max_len: int,
                    allow_inverse: bool) -> dict[NodeId, int]:
    """BFS distances toward `target` along reversed traversal steps."""
    preds = graph.reverse_traversal_adj(allow_inverse)
    dist = {target: 0}
    frontier = [target]
    depth = 0
    while frontier and depth < max_len:
        depth += 1
        nxt = []
        for node in frontier:
            for p in preds.get(node, ()):
                if p not in dist:
                    dist[p] = depth
                    nxt.append(p)
        frontier = nxt
    return dist


def _chains_to(graph: Graph, u: NodeId, v: NodeId, lengths: set[int],
               allow_inverse: bool) -> dict[int, list[tuple[Step, ...]]]:
    """All simple chains u -> v whose edge count is in `lengths`, grouped
    by length. The anchor counts as visited, so u == v yields nothing."""
    max_len = max(lengths)
    adj = graph.traversal_adj(allow_inverse)
    dist = _dist_to_target(graph, v, max_len, allow_inverse)
    out: dict[int, list[tuple[Step, ...]]] = {length: [] for length in lengths}
    if dist.get(u, max_len + 1) > max_len:
        return out
    steps: list[Step] = []
    visited = {u}

    def walk(node: NodeId, depth: int) -> None:
        for rel, nb in adj.get(node, ()):
            if nb in visited:
                continue
            remaining = max_len - depth - 1
            if dist.get(nb, max_len + 1) > remaining:
                continue
            steps.append((rel, nb))
            if nb == v:
                if depth + 1 in out:
                    out[depth + 1].append(tuple(steps))
                # a simple chain cannot return to v, so never extend past it
            elif depth + 1 < max_len:
                visited.add(nb)
                walk(nb, depth + 1)
                visited.remove(nb)
            steps.pop()

    walk(u, 0)
    return out


def _free_chains(graph: Graph, u: NodeId, length: int,
                 allow_inverse: bool) -> list[tuple[Step, ...]]:
    """All simple chains of exactly `length` edges from u, any terminal."""
    adj = graph.traversal_adj(allow_inverse)
    chains: list[tuple[Step, ...]] = []
    steps: list[Step] = []
    visited = {u}

    def walk(node: NodeId, depth: int) -> None:
        for rel, nb in adj.get(node, ()):
            if nb in visited:
                continue
            steps.append((rel, nb))
            if depth + 1 == length:
                chains.append(tuple(steps))
            else:
                visited.add(nb)
                walk(nb, depth + 1)
                visited.remove(nb)
            steps.pop()

    walk(u, 0)
    return chains


def _search_pair(graph: Graph, u: NodeId, v: NodeId,
                 templates: Sequence[PathTemplate],
                 allow_inverse: bool) -> list[ReasoningPath]:
    """All paths between one (u, v) pair for a set of templates. Target
    chains are enumerated once for the union of needed lengths, so adding
    templates does not multiply search work."""
    graph.node(u)
    graph.node(v)
    target_lengths: set[int] = set()
    side_lengths: set[int] = set()
    for t in templates:
        if t.kind is TemplateKind.LINEAR:
            target_lengths.add(t.branch_lengths[0])
        elif t.kind is TemplateKind.DIVERGENT:
            side_lengths.add(t.branch_lengths[0])
            target_lengths.add(t.branch_lengths[1])
        else:
            target_lengths.update(t.branch_lengths)
    chains = (_chains_to(graph, u, v, target_lengths, allow_inverse)
              if target_lengths else {})
    sides = {s: _free_chains(graph, u, s, allow_inverse) for s in side_lengths}

    found: dict[str, ReasoningPath] = {}

    def add(path: ReasoningPath) -> None:
        found.setdefault(canonical_key(path), path)

    for t in templates:
        if t.kind is TemplateKind.LINEAR:
            for chain in chains[t.branch_lengths[0]]:
                add(_make_path(u, v, TemplateKind.LINEAR, (Branch(chain),)))
        elif t.kind is TemplateKind.DIVERGENT:
            side_len, main_len = t.branch_lengths
            mains = chains[main_len]
            if mains:
                for main in mains:
                    for side in sides[side_len]:
                        add(_make_path(u, v, TemplateKind.DIVERGENT,
                                       (Branch(side), Branch(main))))
        else:
            len_a, len_b = t.branch_lengths
            for ca in chains[len_a]:
                for cb in chains[len_b]:
                    if ca == cb:
                        continue
                    add(_make_path(u, v, TemplateKind.CONVERGENT,
                                   (Branch(ca), Branch(cb))))
    return sorted(found.values(), key=canonical_key)


def instantiate(
    graph: Graph,
    template: PathTemplate,
    u: NodeId,
    v: NodeId,
    limits: SearchLimits = SearchLimits(),
    allow_inverse: bool = False,
) -> PathSearchResult:
    """All paths conforming to `template` with anchor u and terminal v,
    sorted by canonical key. Sets the truncation flag instead of silently
    dropping anything past max_results."""
    if any(length > limits.max_branch_length for length in template.branch_lengths):
        raise ValueError(
            f"template branch lengths {template.branch_lengths} exceed "
            f"max_branch_length={limits.max_branch_length}"
        )
    paths = _search_pair(graph, u, v, [template], allow_inverse)
    if len(paths) > limits.max_results:
        return PathSearchResult(paths=paths[:limits.max_results], truncated=True)
    return PathSearchResult(paths=paths, truncated=False)


def enumerate_paths(
    graph: Graph,
    q_nodes: Iterable[NodeId],
    a_nodes: Iterable[NodeId],
    templates: Sequence[PathTemplate],
    max_d: int,
    limits: SearchLimits = SearchLimits(),
    allow_inverse: bool = False,
    jobs: int = 1,
) -> PathSearchResult:
    """Union of instantiations over all (u, v) pairs and templates with
    complexity <= max_d. Pairs may be searched by parallel workers; the
    merged result is sorted after the fact, so output does not depend on
    the jobs setting."""
    q = sorted(set(q_nodes))
    a = sorted(set(a_nodes))
    if not q or not a:
        raise ValueError("question and answer node sets must be non-empty")
    if max_d < 1:
        raise ValueError(f"max_d must be >= 1, got {max_d}")
    usable = [t for t in templates if t.total_edges <= max_d]

    def search_pair(pair: tuple[NodeId, NodeId]) -> list[ReasoningPath]:
        u, v = pair
        return _search_pair(graph, u, v, usable, allow_inverse)

    pairs = [(u, v) for u in q for v in a]
    if jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(search_pair, pairs))
    else:
        chunks = [search_pair(p) for p in pairs]

    merged: dict[str, ReasoningPath] = {}
    for chunk in chunks:
        for path in chunk:
            merged.setdefault(canonical_key(path), path)
    paths = sorted(merged.values(), key=canonical_key)
    if len(paths) > limits.max_results:
        return PathSearchResult(paths=paths[:limits.max_results], truncated=True)
    return PathSearchResult(paths=paths, truncated=False)


def validate(path: ReasoningPath, graph: Graph) -> bool:
    """True iff the path satisfies every structural invariant against the
    graph: real (possibly inverse-labelled) edges, simple branches, and
    the template's anchor/terminal side conditions."""
    try:
        graph.node(path.anchor)
        graph.node(path.terminal)
    except ValueError:
        return False
    if path.complexity != sum(len(b.steps) for b in path.branches):
        return False

    def branch_ok(branch: Branch) -> bool:
        if not branch.steps:
            return False
        cur = path.anchor
        seen = {cur}
        for rel, nxt in branch.steps:
            if not graph.has_traversal(cur, rel, nxt):
                return False
            if nxt in seen:
                return False
            seen.add(nxt)
            cur = nxt
        return True

    if not all(branch_ok(b) for b in path.branches):
        return False
    ends = [b.steps[-1][1] for b in path.branches]
    if path.kind is TemplateKind.LINEAR:
        return len(path.branches) == 1 and ends[0] == path.terminal
    if path.kind is TemplateKind.DIVERGENT:
        return len(path.branches) == 2 and ends[1] == path.terminal
    if path.kind is TemplateKind.CONVERGENT:
        return (len(path.branches) == 2
                and ends[0] == path.terminal and ends[1] == path.terminal
                and path.branches[0].steps != path.branches[1].steps)
    return False


def prune_paths(paths: Iterable[ReasoningPath], policy: PruningPolicy) -> list[ReasoningPath]:
    """Deduplicate, sort by (complexity, canonical key), keep the first k."""
    unique: dict[str, ReasoningPath] = {}
    for path in paths:
        unique.setdefault(canonical_key(path), path)
    ordered = sorted(unique.values(), key=lambda p: (p.complexity, canonical_key(p)))
    return ordered[: policy.k]


def default_templates(max_d: int, side_max: int = 2) -> list[PathTemplate]:
    """The registry of the three structural kinds, expanded to every
    branch-length assignment whose total stays within max_d. Divergent
    side chains are capped at side_max edges to bound fan-out."""
    templates: list[PathTemplate] = []
    for length in range(1, max_d + 1):
        templates.append(PathTemplate(TemplateKind.LINEAR, (length,)))
    for side in range(1, side_max + 1):
        for main in range(1, max_d - side + 1):
            templates.append(PathTemplate(TemplateKind.DIVERGENT, (side, main)))
    for a in range(1, max_d):
        for b in range(a, max_d - a + 1):
            templates.append(PathTemplate(TemplateKind.CONVERGENT, (a, b)))
    return templates


def serialize_path(path: ReasoningPath, graph: Graph) -> str:
    """One human-auditable line: kind, d, then each branch rendered as a
    "name -[relation]-> name" chain from the anchor."""
    rendered = []
    for branch in path.branches:
        parts = [graph.name(path.anchor)]
        for rel, nid in branch.steps:
            parts.append(f"-[{rel}]-> {graph.name(nid)}")
        rendered.append(" ".join(parts))
    return f"{path.kind.value}\t{path.complexity}\t" + " || ".join(rendered)
