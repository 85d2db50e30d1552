from __future__ import annotations

import csv
import hashlib
import random

import pytest

from pathforge.errors import GenerationError
from pathforge.kg_store import build_graph
from pathforge.path_engine import DifficultyLevel, default_templates
from pathforge.qa_forge import (
    CategorySpec,
    QAItem,
    attach_paths_and_difficulty,
    dataset_stats,
    default_category_specs,
    generate_qa,
    sample_distractors,
    split_by_head,
    write_corpus,
)


def spec_by_category(category):
    return next(s for s in default_category_specs() if s.category == category)


def indication_spec():
    return spec_by_category("Indication")


# ----------------------------------------------------------------- generate_qa


def test_count_zero_yields_empty(fixture_graph):
    assert generate_qa(fixture_graph, indication_spec(), 0, seed=1).items == []


def test_dalfampridine_item_matches_illustration(fixture_graph):
    result = generate_qa(fixture_graph, indication_spec(), 100, seed=3)
    ms = fixture_graph.find_nodes("multiple sclerosis")[0]
    dal = fixture_graph.find_nodes("Dalfampridine")[0]
    match = [it for it in result.items if it.head == dal and it.answer == ms]
    assert len(match) == 1
    item = match[0]
    assert item.question == "Which disease can be treated with Dalfampridine?"
    assert item.options[item.correct_index] == "multiple sclerosis"
    assert item.category == "Indication"


def _fixture_eligible_indication_count(path):
    """Independent triple-scan oracle over the raw fixture file."""
    rows = list(csv.DictReader(open(path, newline="", encoding="utf-8")))
    names_by_type = {}
    for row in rows:
        names_by_type.setdefault(row["x_type"], set()).add(row["x_name"])
        names_by_type.setdefault(row["y_type"], set()).add(row["y_name"])
    count = 0
    for row in rows:
        if row["relation"] != "indication" or row["x_type"] != "drug":
            continue
        if row["y_type"] != "disease":
            continue
        tails = {r["y_name"] for r in rows
                 if r["x_name"] == row["x_name"] and r["relation"] == "indication"}
        pool = names_by_type["disease"] - tails - {row["x_name"]}
        if len(pool) >= 3:
            count += 1
    return count


def test_generate_qa_count_equals_triple_scan_oracle(fixture_graph, fixture_path):
    expected = _fixture_eligible_indication_count(fixture_path)
    result = generate_qa(fixture_graph, indication_spec(), 100, seed=5)
    assert len(result.items) == expected
    assert result.shortfall is True


def test_generate_qa_no_shortfall_when_supply_sufficient(fixture_graph):
    result = generate_qa(fixture_graph, indication_spec(), 2, seed=5)
    assert len(result.items) == 2 and result.shortfall is False


def test_generate_qa_max_per_head(fixture_graph):
    result = generate_qa(fixture_graph, indication_spec(), 100, seed=5, max_per_head=1)
    heads = [it.head for it in result.items]
    assert len(heads) == len(set(heads))


def test_generate_qa_is_deterministic(fixture_graph):
    a = generate_qa(fixture_graph, indication_spec(), 6, seed=42).items
    b = generate_qa(fixture_graph, indication_spec(), 6, seed=42).items
    assert a == b
    c = generate_qa(fixture_graph, indication_spec(), 6, seed=43).items
    assert a != c


# ------------------------------------------------------------ sample_distractors


def forced_graph():
    # exactly 4 diseases; answer linked, the other 3 unlinked to head
    nodes = [("drug", "d"), ("disease", "answer"), ("disease", "x"),
             ("disease", "y"), ("disease", "z")]
    return build_graph(nodes, [(0, "treats", 1)])


def test_forced_distractor_set():
    graph = forced_graph()
    for seed in range(10):
        picked = sample_distractors(graph, 0, "treats", 1, seed)
        assert sorted(graph.name(n) for n in picked) == ["x", "y", "z"]


def test_true_tails_never_sampled_over_seed_sweep():
    nodes = [("drug", "d"), ("disease", "a1"), ("disease", "a2")]
    nodes += [("disease", f"dis{i}") for i in range(6)]
    edges = [(0, "treats", 1), (0, "treats", 2)]
    graph = build_graph(nodes, edges)
    for seed in range(1000):
        picked = sample_distractors(graph, 0, "treats", 1, seed)
        assert 1 not in picked and 2 not in picked
        assert len(set(picked)) == 3


def test_insufficient_distractors_identifies_triple():
    nodes = [("drug", "d"), ("disease", "answer"), ("disease", "x"), ("disease", "y")]
    graph = build_graph(nodes, [(0, "treats", 1)])
    with pytest.raises(GenerationError, match=r"\(d, treats, answer\)"):
        sample_distractors(graph, 0, "treats", 1, seed=0)


# ----------------------------------------------------------------- split_by_head


def _dummy_item(head, idx):
    return QAItem(
        id=f"dummy-h{head:04d}-a{idx:04d}",
        question=f"q{idx}?",
        options=(f"o{idx}a", f"o{idx}b", f"o{idx}c", f"o{idx}d"),
        correct_index=idx % 4,
        head=head,
        relation="r",
        answer=1000 + idx,
        category="Indication",
        difficulty=DifficultyLevel.BASIC,
    )


def test_single_head_lands_in_one_split():
    items = [_dummy_item(7, i) for i in range(9)]
    split = split_by_head(items, (0.4, 0.3, 0.3), seed=2)
    sizes = sorted(len(part) for _, part in split.named())
    assert sizes == [0, 0, 9]


def _oracle_greedy_split(items, ratios, seed):
    """Independent re-implementation of the documented assignment rule."""
    groups = {}
    for item in items:
        groups.setdefault(item.head, []).append(item)
    heads = sorted(groups)
    digest = hashlib.sha256(repr((seed, "split")).encode("utf-8")).digest()
    random.Random(int.from_bytes(digest[:8], "big")).shuffle(heads)
    total = len(items)
    targets = [r * total for r in ratios]
    assigned = [0.0, 0.0, 0.0]
    buckets = [[], [], []]
    for head in heads:
        deficits = [targets[i] - assigned[i] for i in range(3)]
        best = deficits.index(max(deficits))
        buckets[best].extend(groups[head])
        assigned[best] += len(groups[head])
    return [sorted(b, key=lambda it: it.id) for b in buckets]


def test_ten_heads_match_greedy_oracle():
    items = [_dummy_item(head, head) for head in range(10)]
    split = split_by_head(items, (0.5, 0.3, 0.2), seed=99)
    oracle = _oracle_greedy_split(items, (0.5, 0.3, 0.2), seed=99)
    assert [split.sft, split.rl, split.test] == oracle


def test_paper_ratios_on_synthetic_corpus():
    # 200 heads with 1-4 items each, split at the published proportions
    rng = random.Random(0)
    items = []
    idx = 0
    for head in range(200):
        for _ in range(rng.randint(1, 4)):
            items.append(_dummy_item(head, idx))
            idx += 1
    ratios = (3500 / 6710, 1500 / 6710, 1710 / 6710)
    split = split_by_head(items, ratios, seed=11)
    total = len(items)
    max_group = 4
    for (name, part), ratio in zip(split.named(), ratios):
        assert abs(len(part) - ratio * total) <= max_group, name
    heads = [set(it.head for it in part) for _, part in split.named()]
    assert not (heads[0] & heads[1]) and not (heads[0] & heads[2]) \
        and not (heads[1] & heads[2])


def test_published_corpus_sizing_on_6710_items():
    # a corpus of exactly 6,710 items lands within one head-group of the
    # published 3,500 / 1,500 / 1,710 sizes
    rng = random.Random(1)
    items = []
    idx = 0
    head = 0
    while idx < 6710:
        group = min(rng.randint(1, 8), 6710 - idx)
        for _ in range(group):
            items.append(_dummy_item(head, idx))
            idx += 1
        head += 1
    ratios = (3500 / 6710, 1500 / 6710, 1710 / 6710)
    split = split_by_head(items, ratios, seed=4)
    max_group = 8
    for part, target in zip((split.sft, split.rl, split.test), (3500, 1500, 1710)):
        assert abs(len(part) - target) <= max_group
    assert len(split.sft) + len(split.rl) + len(split.test) == 6710


def test_split_rejects_bad_ratios():
    items = [_dummy_item(0, 0)]
    with pytest.raises(ValueError):
        split_by_head(items, (0.5, 0.5), seed=1)
    with pytest.raises(ValueError):
        split_by_head(items, (0.7, 0.2, 0.2), seed=1)


# ------------------------------------------- attach_paths_and_difficulty


def test_directly_connected_item_is_basic(fixture_graph):
    items = generate_qa(fixture_graph, indication_spec(), 3, seed=1).items
    mined = attach_paths_and_difficulty(items, fixture_graph,
                                        default_templates(5), max_d=5)
    for item in mined:
        assert not item.unmined
        assert item.paths
        assert item.difficulty is DifficultyLevel.BASIC
        assert min(p.complexity for p in item.paths) == 1


def _chain_graph(n_edges):
    nodes = [("t", f"c{i}") for i in range(n_edges + 1)]
    nodes += [("t", "optA"), ("t", "optB"), ("t", "optC")]
    edges = [(i, "step", i + 1) for i in range(n_edges)]
    return build_graph(nodes, edges)


def _chain_item(n_edges):
    return QAItem(
        id="chain-h0000-a0008",
        question="q?",
        options=(f"c{n_edges}", "optA", "optB", "optC"),
        correct_index=0,
        head=0,
        relation="step",
        answer=n_edges,
        category="Contraindication",
        difficulty=DifficultyLevel.HARD,
    )


def test_min_complexity_eight_is_hard():
    graph = _chain_graph(8)
    mined = attach_paths_and_difficulty([_chain_item(8)], graph,
                                        default_templates(8), max_d=8)
    (item,) = mined
    assert not item.unmined
    assert min(p.complexity for p in item.paths) == 8
    assert item.difficulty is DifficultyLevel.HARD


def test_disconnected_pair_keeps_hint_and_sets_unmined():
    graph = build_graph(
        [("t", "a"), ("t", "b"), ("t", "o1"), ("t", "o2"), ("t", "o3")],
        [(2, "r", 3)],
    )
    item = QAItem(id="x-h0000-a0001", question="q?", options=("b", "o1", "o2", "o3"),
                  correct_index=0, head=0, relation="r", answer=1,
                  category="SideEffect", difficulty=DifficultyLevel.MEDIUM)
    (mined,) = attach_paths_and_difficulty([item], graph, default_templates(4), max_d=4)
    assert mined.unmined
    assert mined.paths == ()
    assert mined.difficulty is DifficultyLevel.MEDIUM


# ----------------------------------------------------------------- dataset_stats


def test_dataset_stats_empty():
    stats = dataset_stats([])
    assert stats.rows == {} and stats.total == 0


def test_dataset_stats_matches_tally_oracle(fixture_graph):
    items = []
    for spec in default_category_specs():
        items.extend(generate_qa(fixture_graph, spec, 20, seed=7).items)
    split = split_by_head(items, (0.5, 0.25, 0.25), seed=7)
    stats = dataset_stats(split)
    tally = {}
    for name, part in split.named():
        for item in part:
            key = (name, item.category, item.difficulty.label)
            tally[key] = tally.get(key, 0) + 1
    assert stats.rows == dict(sorted(tally.items()))
    assert stats.total == sum(stats.rows.values()) == len(items)


# ------------------------------------------------------- corpus-level invariants


def _full_corpus(graph, seed):
    items = []
    for spec in default_category_specs():
        items.extend(generate_qa(graph, spec, 20, seed=seed).items)
    return sorted(items, key=lambda it: it.id)


def test_corpus_has_exactly_one_correct_option(fixture_graph):
    for item in _full_corpus(fixture_graph, 7):
        assert len(set(item.options)) == 4
        answer_name = fixture_graph.name(item.answer)
        assert item.options[item.correct_index] == answer_name
        assert item.options.count(answer_name) == 1


def test_corpus_has_no_leaked_distractors(fixture_graph):
    for item in _full_corpus(fixture_graph, 7):
        true_tail_names = {
            fixture_graph.name(t)
            for t in fixture_graph.out_index.get((item.head, item.relation), ())
        }
        for i, option in enumerate(item.options):
            if i == item.correct_index:
                continue
            assert option not in true_tail_names


def test_corpus_files_are_byte_identical_across_runs(fixture_graph, tmp_path):
    first = tmp_path / "c1.jsonl"
    second = tmp_path / "c2.jsonl"
    write_corpus(_full_corpus(fixture_graph, 7), fixture_graph, first)
    write_corpus(_full_corpus(fixture_graph, 7), fixture_graph, second)
    assert first.read_bytes() == second.read_bytes()


def test_correct_index_is_roughly_uniform(fixture_graph):
    counts = [0, 0, 0, 0]
    for seed in range(8):
        for item in _full_corpus(fixture_graph, seed):
            counts[item.correct_index] += 1
    n = sum(counts)
    expected = n / 4
    chi2 = sum((c - expected) ** 2 / expected for c in counts)
    assert chi2 < 16.27, counts  # chi-square 99.9% critical value, df=3


def test_category_spec_validation():
    with pytest.raises(ValueError):
        CategorySpec(category="Nope", head_type="drug", relation="r",
                     answer_type="disease", question_template="{head}?",
                     difficulty_hint=DifficultyLevel.BASIC)
    with pytest.raises(ValueError):
        CategorySpec(category="Indication", head_type="drug", relation="r",
                     answer_type="disease", question_template="no placeholder",
                     difficulty_hint=DifficultyLevel.BASIC)
