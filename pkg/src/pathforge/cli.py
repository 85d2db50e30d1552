"""Single entry-point command wiring the pipeline stages together.

Exit codes are a stable contract: 0 success, 2 schema error, 3 entity
linking, 4 QA generation, 5 CoT curation, 6 scoring input, 7 malformed
GRPO group. Every command writes a run manifest plus delimited reports
with a rendered figure alongside.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

from . import __version__
from . import entity_linker, kg_store, path_engine, qa_forge, report
from .config import PipelineConfig, RunManifest, StageTimer, load_config
from .cot_pipeline import (
    DecodeOptions,
    HTTPClient,
    MockClient,
    curate,
    export_sft_records,
    load_template,
)
from .errors import (
    ClientError,
    ContentError,
    GenerationError,
    GroupInputError,
    LinkingError,
    PromptError,
    SchemaError,
    ScoringInputError,
)
from .reward_grpo import (
    GRPOConfig,
    Matching,
    PolicyDist,
    ResponseGroup,
    ToyGroup,
    grpo_gradient_check,
    grpo_objective,
    kl_divergence,
    score_lines,
)

EXIT_SCHEMA = 2
EXIT_LINKING = 3
EXIT_GENERATION = 4
EXIT_COT = 5
EXIT_SCORING = 6
EXIT_GRPO = 7


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathforge",
        description="KG path mining, QA benchmark synthesis, CoT curation, "
                    "and reward/GRPO evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"pathforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="override the corpus seed")
        p.add_argument("--jobs", type=int, help="parallel workers for path search")
        p.add_argument("--max-d", type=int, dest="max_d", help="complexity bound")
        p.add_argument("--client", choices=["mock", "http"], help="text-gen client")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("kg-stats", help="load the graph and report its statistics")
    common(p)

    p = sub.add_parser("mine", help="mine reasoning paths for a question or a corpus")
    common(p)
    p.add_argument("--question", help="question text to link and mine")
    p.add_argument("--answer", help="answer text to link and mine")
    p.add_argument("--corpus", help="QA corpus (one JSON record per line)")

    p = sub.add_parser("gen-qa", help="synthesize the QA corpus and splits")
    common(p)

    p = sub.add_parser("cot", help="generate and prune reasoning chains for a corpus")
    common(p)
    p.add_argument("--corpus", required=True, help="QA corpus to curate")

    p = sub.add_parser("score", help="score responses against gold answers")
    common(p)
    p.add_argument("--responses", required=True,
                   help="JSONL file with a 'text' field per line")
    p.add_argument("--gold", required=True, help="plain text file, one gold per line")
    p.add_argument("--matching", choices=["option", "name"])

    p = sub.add_parser("grpo-eval", help="evaluate objective and advantages per group")
    common(p)
    p.add_argument("--groups", required=True, help="JSONL file, one group per line")
    p.add_argument("--grad-check", action="store_true",
                   help="also run the toy-policy gradient check per group")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "max_d", None) is not None:
        cfg.max_d = args.max_d
    if getattr(args, "client", None) is not None:
        cfg.client = args.client
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "matching", None) is not None:
        cfg.matching = args.matching
    return cfg


def _load_graph(cfg: PipelineConfig) -> kg_store.Graph:
    cfg.validate(require_graph=True)
    options = kg_store.LoadOptions(delimiter=cfg.delimiter,
                                   materialize_inverse=cfg.materialize_inverse)
    return kg_store.load_graph(cfg.graph_path, options)


def _lexicon(cfg: PipelineConfig, graph: kg_store.Graph) -> entity_linker.Lexicon:
    aliases = entity_linker.read_alias_table(cfg.alias_file) if cfg.alias_file else ()
    return entity_linker.build_lexicon(graph, aliases)


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _make_client(cfg: PipelineConfig):
    if cfg.client == "http":
        return HTTPClient(url=cfg.endpoint, token_env=cfg.token_env,
                          text_field=cfg.text_field, retries=cfg.retries)
    return MockClient()


def _write_run_manifest(cfg: PipelineConfig, out: Path, stage: str,
                        inputs: list, outputs: list, seconds: float) -> None:
    manifest = RunManifest(config_hash=cfg.digest(), tool_version=__version__)
    manifest.record_stage(stage, inputs, outputs, seconds)
    manifest.write(out / "run_manifest.json")


def cmd_kg_stats(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    timer = StageTimer()
    graph = _load_graph(cfg)
    stats = kg_store.graph_stats(graph)
    out = _out_dir(cfg)
    print(f"nodes: {stats.node_count}")
    print(f"edges: {stats.edge_count}")
    print("node types:")
    for t, n in stats.nodes_per_type.items():
        print(f"  {t}: {n}")
    print("relations:")
    for r, n in stats.edges_per_relation.items():
        print(f"  {r}: {n}")
    rows = [("total", "nodes", stats.node_count), ("total", "edges", stats.edge_count)]
    rows += [("node_type", t, n) for t, n in stats.nodes_per_type.items()]
    rows += [("relation", r, n) for r, n in stats.edges_per_relation.items()]
    csv_path = out / "kg_stats.csv"
    fig_path = out / "kg_stats.png"
    report.write_csv(csv_path, ("kind", "key", "count"), rows)
    report.render_graph_stats(stats, fig_path)
    _write_run_manifest(cfg, out, "kg-stats", [cfg.graph_path], [csv_path, fig_path],
                        timer.elapsed())
    return 0


def _mine_lines(graph, q_ids, a_ids, cfg: PipelineConfig) -> list[str]:
    templates = path_engine.default_templates(cfg.max_d, side_max=cfg.side_max)
    result = path_engine.enumerate_paths(
        graph, q_ids, a_ids, templates, cfg.max_d,
        limits=path_engine.SearchLimits(max_branch_length=max(cfg.max_d, 1),
                                        max_results=cfg.max_results),
        allow_inverse=cfg.allow_inverse, jobs=cfg.jobs,
    )
    pruned = path_engine.prune_paths(result.paths,
                                     path_engine.PruningPolicy(k=cfg.prune_k))
    return [
        f"{path_engine.serialize_path(p, graph)}"
        f"\t{path_engine.classify_difficulty(p.complexity).label}"
        for p in pruned
    ]


def cmd_mine(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    timer = StageTimer()
    graph = _load_graph(cfg)
    out = _out_dir(cfg)
    lines: list[str] = []
    complexities: list[int] = []
    inputs: list = [cfg.graph_path]

    if args.corpus:
        inputs.append(args.corpus)
        for record in qa_forge.read_corpus(args.corpus):
            lines.append(f"# item {record['id']}")
            item_lines = _mine_lines(graph, [record["head_id"]],
                                     [record["answer_id"]], cfg)
            lines.extend(item_lines)
            complexities.extend(int(l.split("\t")[1]) for l in item_lines)
    elif args.question and args.answer:
        lexicon = _lexicon(cfg, graph)
        q_links = entity_linker.extract_and_map(args.question, lexicon)
        a_links = entity_linker.extract_and_map(args.answer, lexicon)
        if not q_links or not a_links:
            side = "question" if not q_links else "answer"
            raise LinkingError(f"no entity in the {side} text links to the graph")
        q_ids = sorted({c for lr in q_links for c in lr.candidates})
        a_ids = sorted({c for lr in a_links for c in lr.candidates})
        lines.append(f"# query {args.question!r} -> {args.answer!r}")
        item_lines = _mine_lines(graph, q_ids, a_ids, cfg)
        lines.extend(item_lines)
        complexities.extend(int(l.split("\t")[1]) for l in item_lines)
    else:
        raise SchemaError("mine requires either --corpus or both --question and --answer")

    paths_file = out / "paths.txt"
    paths_file.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    fig_path = out / "path_complexity.png"
    report.render_histogram(complexities, fig_path, "mined path complexity d",
                            bins=range(1, cfg.max_d + 3))
    print(f"mined {len(complexities)} paths -> {paths_file}")
    _write_run_manifest(cfg, out, "mine", inputs, [paths_file, fig_path], timer.elapsed())
    return 0


def cmd_gen_qa(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    timer = StageTimer()
    graph = _load_graph(cfg)
    out = _out_dir(cfg)
    specs = qa_forge.load_category_specs(cfg.resolved_category_specs())

    items: list[qa_forge.QAItem] = []
    requested = 0
    for spec in specs:
        result = qa_forge.generate_qa(
            graph, spec, cfg.count_per_category, cfg.seed,
            max_per_head=cfg.max_per_head or None,
        )
        requested += cfg.count_per_category
        items.extend(result.items)
    missing_fraction = 1.0 - (len(items) / requested) if requested else 0.0
    if missing_fraction > cfg.shortfall_tolerance + 1e-12:
        raise GenerationError(
            f"generated {len(items)} of {requested} requested items; "
            f"missing fraction {missing_fraction:.3f} exceeds tolerance "
            f"{cfg.shortfall_tolerance:.3f}"
        )

    templates = path_engine.default_templates(cfg.max_d, side_max=cfg.side_max)
    items = qa_forge.attach_paths_and_difficulty(
        items, graph, templates, cfg.max_d, prune_k=cfg.prune_k,
        allow_inverse=cfg.allow_inverse, jobs=cfg.jobs,
    )
    items.sort(key=lambda it: it.id)
    split = qa_forge.split_by_head(items, cfg.ratios, cfg.seed)

    corpus_path = out / "corpus.jsonl"
    qa_forge.write_corpus(items, graph, corpus_path)
    split_paths = {}
    for name, part in split.named():
        split_paths[name] = out / f"{name}.jsonl"
        qa_forge.write_corpus(part, graph, split_paths[name])

    stats = qa_forge.dataset_stats(split)
    csv_path = out / "dataset_stats.csv"
    report.write_csv(csv_path, ("split", "category", "difficulty", "count"),
                     [(s, c, d, n) for (s, c, d), n in stats.rows.items()])
    fig_path = out / "dataset_stats.png"
    report.render_dataset_stats(stats, fig_path)

    dataset_manifest = {
        "seed": cfg.seed,
        "config_hash": cfg.digest(),
        "category_specs_sha256": hashlib.sha256(
            Path(cfg.resolved_category_specs()).read_bytes()).hexdigest(),
        "total_items": len(items),
        "split_sizes": {name: len(part) for name, part in split.named()},
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(dataset_manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")

    for (s, c, d), n in stats.rows.items():
        print(f"{s}\t{c}\t{d}\t{n}")
    print(f"total: {len(items)} items; splits: "
          + ", ".join(f"{k}={len(v)}" for k, v in split.named()))
    _write_run_manifest(
        cfg, out, "gen-qa", [cfg.graph_path],
        [corpus_path, *split_paths.values(), csv_path, fig_path, manifest_path],
        timer.elapsed(),
    )
    return 0


def cmd_cot(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    timer = StageTimer()
    cfg.validate(require_graph=False)
    out = _out_dir(cfg)
    gen_template = load_template(cfg.resolved_generation_template(), "generation")
    prune_template = load_template(cfg.resolved_pruning_template(), "pruning")
    client = _make_client(cfg)
    options = DecodeOptions(temperature=cfg.temperature, max_tokens=cfg.max_tokens)

    records = []
    failures = []
    corpus = sorted(qa_forge.read_corpus(args.corpus), key=lambda r: r["id"])
    for record in corpus:
        paths_text = "\n".join(record.get("paths", []))
        try:
            records.append(curate(
                record["id"], record["question"], record["answer"], paths_text,
                gen_template, prune_template, client, options,
            ))
        except (ClientError, ContentError) as exc:
            failures.append((record["id"], str(exc)))

    records_path = out / "cot_records.jsonl"
    count = export_sft_records(records, records_path)
    fig_path = out / "chain_lengths.png"
    report.render_histogram(
        [len(r.chain_pruned.splitlines()) for r in records], fig_path,
        "pruned chain length (lines)",
    )
    print(f"curated {count} records, {len(failures)} failures -> {records_path}")
    for item_id, message in failures:
        print(f"  failed {item_id}: {message}", file=sys.stderr)
    _write_run_manifest(cfg, out, "cot", [args.corpus], [records_path, fig_path],
                        timer.elapsed())
    return EXIT_COT if failures else 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    timer = StageTimer()
    out = _out_dir(cfg)
    try:
        response_lines = Path(args.responses).read_text(encoding="utf-8").splitlines()
        gold_lines = Path(args.gold).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ScoringInputError(str(exc)) from exc
    responses = []
    for lineno, line in enumerate(response_lines, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            responses.append(payload["text"])
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise ScoringInputError(f"responses line {lineno}: {exc}") from exc
    golds = [line for line in gold_lines if line.strip()]
    if len(responses) != len(golds):
        raise ScoringInputError(
            f"length mismatch: {len(responses)} responses vs {len(golds)} gold lines"
        )
    breakdowns, accuracy = score_lines(list(zip(responses, golds)),
                                       Matching(cfg.matching))
    csv_path = out / "score_report.csv"
    report.write_csv(
        csv_path, ("line", "format", "answer", "total"),
        [(i + 1, b.format, b.answer, b.total) for i, b in enumerate(breakdowns)],
    )
    fig_path = out / "reward_totals.png"
    report.render_reward_counts([b.total for b in breakdowns], fig_path)
    mean_reward = (sum(b.total for b in breakdowns) / len(breakdowns)) if breakdowns else 0.0
    print(f"accuracy: {accuracy:.4f}")
    print(f"mean_reward: {mean_reward:.4f}")
    _write_run_manifest(cfg, out, "score", [args.responses, args.gold],
                        [csv_path, fig_path], timer.elapsed())
    return 0


def _parse_group(payload: dict, cfg: PipelineConfig):
    try:
        new = PolicyDist(tuple(payload["new"]))
        old = PolicyDist(tuple(payload["old"]))
        ref = PolicyDist(tuple(payload["ref"]))
        group = ResponseGroup.from_policies(
            payload["responses"], payload["rewards"], new, old, ref,
        ).with_advantages(cfg.std_floor)
    except (KeyError, TypeError, ValueError) as exc:
        raise GroupInputError(f"malformed group: {exc}") from exc
    return group, new, old, ref


def cmd_grpo_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    timer = StageTimer()
    out = _out_dir(cfg)
    try:
        lines = Path(args.groups).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise GroupInputError(str(exc)) from exc

    summary_rows = []
    advantage_rows = []
    all_advantages: list[float] = []
    grad_errors: list[float] = []
    for idx, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GroupInputError(f"groups line {idx + 1}: {exc}") from exc
        group, new, old, ref = _parse_group(payload, cfg)
        grpo_cfg = GRPOConfig(epsilon=cfg.epsilon, beta=cfg.beta,
                              group_size=group.size, std_floor=cfg.std_floor)
        objective = grpo_objective(group, grpo_cfg, new, old, ref)
        kl = kl_divergence(new, ref)
        mean_reward = sum(group.rewards) / group.size
        summary_rows.append((idx + 1, group.size, repr(objective),
                             repr(kl), repr(mean_reward)))
        assert group.advantages is not None
        for i in range(group.size):
            ratio = group.p_new[i] / group.p_old[i]
            advantage_rows.append((idx + 1, i, group.rewards[i],
                                   repr(group.advantages[i]), repr(ratio)))
            all_advantages.append(group.advantages[i])
        if args.grad_check:
            if any(p <= 0 for p in new.probabilities):
                print(f"group {idx + 1}: gradient check skipped (zero probability)")
            else:
                theta = [math.log(p) for p in new.probabilities]
                toy = ToyGroup(responses=group.responses, rewards=group.rewards,
                               old=old, ref=ref)
                grad_errors.append(grpo_gradient_check(theta, toy, grpo_cfg))

    summary_path = out / "grpo_report.csv"
    report.write_csv(summary_path, ("group", "size", "objective", "kl", "mean_reward"),
                     summary_rows)
    adv_path = out / "advantages.csv"
    report.write_csv(adv_path, ("group", "index", "reward", "advantage", "ratio"),
                     advantage_rows)
    fig_path = out / "advantages.png"
    report.render_histogram(all_advantages, fig_path, "group-normalized advantages")
    print(f"evaluated {len(summary_rows)} groups -> {summary_path}")
    if args.grad_check and grad_errors:
        print(f"gradient check: max relative error {max(grad_errors):.3e} "
              f"over {len(grad_errors)} groups")
    _write_run_manifest(cfg, out, "grpo-eval", [args.groups],
                        [summary_path, adv_path, fig_path], timer.elapsed())
    return 0


HANDLERS = {
    "kg-stats": cmd_kg_stats,
    "mine": cmd_mine,
    "gen-qa": cmd_gen_qa,
    "cot": cmd_cot,
    "score": cmd_score,
    "grpo-eval": cmd_grpo_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = HANDLERS[args.command]
    try:
        return handler(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except LinkingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LINKING
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except (PromptError, ClientError, ContentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COT
    except ScoringInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCORING
    except GroupInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GRPO


def entrypoint() -> None:
    sys.exit(main())
