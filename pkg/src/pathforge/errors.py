"""Exception types shared across the toolkit.

Each class maps onto one stage of the pipeline so the CLI can translate
failures into its stable exit-code contract.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all pathforge errors."""


class SchemaError(ToolkitError):
    """Malformed input table, snapshot, or configuration."""


class LinkingError(ToolkitError):
    """Question or answer text could not be linked to any graph node."""


class GenerationError(ToolkitError):
    """QA synthesis failed, e.g. not enough distractors for a triple."""


class PromptError(ToolkitError):
    """Prompt template is unusable: missing or unresolved placeholders."""


class ClientError(ToolkitError):
    """Text-generation client failure after exhausting retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ContentError(ToolkitError):
    """Client returned unusable content (e.g. an empty completion)."""


class ScoringInputError(ToolkitError):
    """Misaligned or unreadable response/gold files."""


class GroupInputError(ToolkitError):
    """Malformed response group for the policy-optimization numerics."""
