"""Pipeline configuration (INI file with sections, flag overrides) and
the per-run manifest."""

from __future__ import annotations

import configparser
import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

from .errors import SchemaError

MAX_SEED = 2**64 - 1


def packaged_data(name: str) -> Path:
    with resources.as_file(resources.files("pathforge.data") / name) as p:
        return Path(p)


@dataclass
class PipelineConfig:
    graph_path: str = ""
    delimiter: str = ","
    materialize_inverse: bool = False
    alias_file: str = ""

    max_d: int = 5
    prune_k: int = 10
    side_max: int = 2
    max_results: int = 100_000
    allow_inverse: bool = False
    jobs: int = 1

    category_specs: str = ""
    count_per_category: int = 20
    max_per_head: int = 0  # 0 means unlimited
    ratios: tuple[float, float, float] = (3500 / 6710, 1500 / 6710, 1710 / 6710)
    shortfall_tolerance: float = 1.0  # allowed missing fraction of the request
    seed: int = 7

    client: str = "mock"
    endpoint: str = ""
    token_env: str = "PATHFORGE_TOKEN"
    text_field: str = "text"
    generation_template: str = ""
    pruning_template: str = ""
    temperature: float = 0.0
    max_tokens: int = 512
    retries: int = 3

    epsilon: float = 0.2
    beta: float = 0.0
    std_floor: float = 1e-6
    matching: str = "option"

    out_dir: str = "out"

    def resolved_category_specs(self) -> Path:
        return Path(self.category_specs) if self.category_specs else packaged_data("category_specs.json")

    def resolved_generation_template(self) -> Path:
        return (Path(self.generation_template) if self.generation_template
                else packaged_data("prompt_generation.txt"))

    def resolved_pruning_template(self) -> Path:
        return (Path(self.pruning_template) if self.pruning_template
                else packaged_data("prompt_pruning.txt"))

    def validate(self, require_graph: bool = True) -> None:
        if not 0 <= self.seed <= MAX_SEED:
            raise SchemaError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if require_graph:
            if not self.graph_path:
                raise SchemaError("no graph path configured")
            if not Path(self.graph_path).exists():
                raise SchemaError(f"graph file not found: {self.graph_path}")
        for label, p in (("alias file", self.alias_file),
                         ("category specs", self.category_specs),
                         ("generation template", self.generation_template),
                         ("pruning template", self.pruning_template)):
            if p and not Path(p).exists():
                raise SchemaError(f"{label} not found: {p}")
        if self.client not in ("mock", "http"):
            raise SchemaError(f"unknown client {self.client!r}")
        if self.client == "http" and not self.endpoint:
            raise SchemaError("http client requires an endpoint")

    def digest(self) -> str:
        """Hash of the semantic configuration. The output directory is
        excluded: it does not affect artifact content."""
        payload = asdict(self)
        payload.pop("out_dir")
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode("utf-8")
        ).hexdigest()


def _get(parser: configparser.ConfigParser, section: str, option: str, fallback):
    if not parser.has_option(section, option):
        return fallback
    raw = parser.get(section, option)
    if isinstance(fallback, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(fallback, int):
        return int(raw)
    if isinstance(fallback, float):
        return float(raw)
    return raw


def load_config(path: str | Path) -> PipelineConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise SchemaError(f"config file not found: {path}")
    cfg = PipelineConfig()
    cfg.graph_path = _get(parser, "graph", "path", cfg.graph_path)
    cfg.delimiter = _get(parser, "graph", "delimiter", cfg.delimiter)
    if cfg.delimiter == "\\t" or cfg.delimiter == "tab":
        cfg.delimiter = "\t"
    cfg.materialize_inverse = _get(parser, "graph", "materialize_inverse",
                                   cfg.materialize_inverse)
    cfg.alias_file = _get(parser, "graph", "alias_file", cfg.alias_file)

    cfg.max_d = _get(parser, "mining", "max_d", cfg.max_d)
    cfg.prune_k = _get(parser, "mining", "prune_k", cfg.prune_k)
    cfg.side_max = _get(parser, "mining", "side_max", cfg.side_max)
    cfg.max_results = _get(parser, "mining", "max_results", cfg.max_results)
    cfg.allow_inverse = _get(parser, "mining", "allow_inverse", cfg.allow_inverse)
    cfg.jobs = _get(parser, "mining", "jobs", cfg.jobs)

    cfg.category_specs = _get(parser, "qa", "category_specs", cfg.category_specs)
    cfg.count_per_category = _get(parser, "qa", "count_per_category",
                                  cfg.count_per_category)
    cfg.max_per_head = _get(parser, "qa", "max_per_head", cfg.max_per_head)
    if parser.has_option("qa", "ratios"):
        parts = [float(x) for x in parser.get("qa", "ratios").split(",")]
        if len(parts) != 3:
            raise SchemaError(f"ratios must have 3 components, got {parts}")
        cfg.ratios = (parts[0], parts[1], parts[2])
    cfg.shortfall_tolerance = _get(parser, "qa", "shortfall_tolerance",
                                   cfg.shortfall_tolerance)
    cfg.seed = _get(parser, "qa", "seed", cfg.seed)

    cfg.client = _get(parser, "cot", "client", cfg.client)
    cfg.endpoint = _get(parser, "cot", "endpoint", cfg.endpoint)
    cfg.token_env = _get(parser, "cot", "token_env", cfg.token_env)
    cfg.text_field = _get(parser, "cot", "text_field", cfg.text_field)
    cfg.generation_template = _get(parser, "cot", "generation_template",
                                   cfg.generation_template)
    cfg.pruning_template = _get(parser, "cot", "pruning_template", cfg.pruning_template)
    cfg.temperature = _get(parser, "cot", "temperature", cfg.temperature)
    cfg.max_tokens = _get(parser, "cot", "max_tokens", cfg.max_tokens)
    cfg.retries = _get(parser, "cot", "retries", cfg.retries)

    cfg.epsilon = _get(parser, "grpo", "epsilon", cfg.epsilon)
    cfg.beta = _get(parser, "grpo", "beta", cfg.beta)
    cfg.std_floor = _get(parser, "grpo", "std_floor", cfg.std_floor)
    cfg.matching = _get(parser, "grpo", "matching", cfg.matching)

    cfg.out_dir = _get(parser, "output", "dir", cfg.out_dir)
    return cfg


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    stages: dict[str, dict] = field(default_factory=dict)

    def record_stage(self, name: str, inputs: list[str | Path],
                     outputs: list[str | Path], seconds: float) -> None:
        self.stages[name] = {
            "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).exists()},
            "outputs": {str(p): sha256_file(p) for p in outputs if Path(p).exists()},
            "seconds": round(seconds, 6),
        }

    def write(self, destination: str | Path) -> None:
        """Atomic write: rename over the destination only when complete."""
        path = Path(destination)
        tmp = path.with_suffix(path.suffix + ".tmp")
        payload = {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "stages": self.stages,
        }
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
        tmp.replace(path)


class StageTimer:
    def __init__(self) -> None:
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start
