"""pathforge: knowledge-graph path mining, QA benchmark synthesis,
chain-of-thought curation, and verifiable-reward / GRPO numerics."""

__version__ = "0.1.0"
