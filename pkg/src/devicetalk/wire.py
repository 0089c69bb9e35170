"""Prompt rendering and model-output parsing for the device wire format.

Prompts and completions use literal delimiter tokens: the command inside
[COMMAND][/COMMAND], immutable sensor values inside [SENSORS][/SENSORS],
mutable settings (with the state name) inside [SETTINGS][/SETTINGS], and
explanation text inside [EXPLANATION][/EXPLANATION]. An action prompt ends
at an open [SETTINGS] marker for the model to complete; an explanation
prompt shows the full state and ends at an open [EXPLANATION] marker.
Devices without sensors get no sensor block at all.

Extraction is first-match and non-nested: the payload is whatever sits
between the first open token and the first close token after it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from devicetalk.statemodel import RESERVED_STATE_KEY, Action, Snapshot, Template, split_snapshot

COMMAND_OPEN, COMMAND_CLOSE = "[COMMAND]", "[/COMMAND]"
SENSORS_OPEN, SENSORS_CLOSE = "[SENSORS]", "[/SENSORS]"
SETTINGS_OPEN, SETTINGS_CLOSE = "[SETTINGS]", "[/SETTINGS]"
EXPLANATION_OPEN, EXPLANATION_CLOSE = "[EXPLANATION]", "[/EXPLANATION]"


class PromptKind(str, Enum):
    ACTION = "action"
    EXPLANATION = "explanation"


class ParseFailure(str, Enum):
    MISSING_OPEN = "missing-open"
    MISSING_CLOSE = "missing-close"
    BAD_JSON = "bad-json"
    EMPTY_SPAN = "empty-span"


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    kind: PromptKind


@dataclass(frozen=True)
class ModelOutput:
    """Raw backend text plus its parsed form (action, explanation, or failure)."""

    raw: str
    kind: PromptKind
    action: Action | None = None
    explanation: str | None = None
    failure: ParseFailure | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def parsed(self) -> Action | str | None:
        if self.failure is not None:
            return None
        return self.action if self.kind is PromptKind.ACTION else self.explanation


def _json_object(pairs: Mapping[str, object]) -> str:
    # Insertion order is the template declaration order; never sort.
    return json.dumps(dict(pairs), separators=(", ", ": "))


def serialize_action(action: Action) -> str:
    """Canonical settings-payload text: state key first, then settings."""
    return _json_object(action.to_payload())


def render_action_prompt(command: str, sensors: Mapping[str, int] | None) -> RenderedPrompt:
    """Prompt asking for new settings, given the command and current sensors."""
    if not command:
        raise ValueError("command must be nonempty")
    lines = [f"{COMMAND_OPEN}{command}{COMMAND_CLOSE}"]
    if sensors:
        lines.append(f"{SENSORS_OPEN}{_json_object(sensors)}{SENSORS_CLOSE}")
    lines.append(SETTINGS_OPEN)
    return RenderedPrompt(text="\n".join(lines), kind=PromptKind.ACTION)


def render_explanation_prompt(command: str, snapshot: Snapshot, template: Template) -> RenderedPrompt:
    """Prompt asking for an explanation of the full current snapshot."""
    if not command:
        raise ValueError("command must be nonempty")
    settings, sensors = split_snapshot(snapshot, template)
    state_and_settings: dict[str, object] = {RESERVED_STATE_KEY: snapshot.state}
    state_and_settings.update(settings)
    lines = [f"{COMMAND_OPEN}{command}{COMMAND_CLOSE}"]
    if sensors:
        lines.append(f"{SENSORS_OPEN}{_json_object(sensors)}{SENSORS_CLOSE}")
    lines.append(f"{SETTINGS_OPEN}{_json_object(state_and_settings)}{SETTINGS_CLOSE}")
    lines.append(EXPLANATION_OPEN)
    return RenderedPrompt(text="\n".join(lines), kind=PromptKind.EXPLANATION)


def action_completion(action: Action) -> str:
    """Training-target text that completes an action prompt."""
    return f"{serialize_action(action)}{SETTINGS_CLOSE}"


def explanation_completion(explanation: str) -> str:
    """Training-target text that completes an explanation prompt."""
    return f"{explanation}{EXPLANATION_CLOSE}"


def _extract_span(raw: str, open_tok: str, close_tok: str) -> tuple[str | None, ParseFailure | None]:
    start = raw.find(open_tok)
    if start < 0:
        return None, ParseFailure.MISSING_OPEN
    start += len(open_tok)
    end = raw.find(close_tok, start)
    if end < 0:
        return None, ParseFailure.MISSING_CLOSE
    return raw[start:end], None


def _action_from_payload(payload: str) -> Action | None:
    try:
        doc = json.loads(payload)
    except (json.JSONDecodeError, RecursionError):
        return None
    if not isinstance(doc, dict):
        return None
    state = doc.get(RESERVED_STATE_KEY)
    if not isinstance(state, str):
        return None
    settings: dict[str, int] = {}
    for name, value in doc.items():
        if name == RESERVED_STATE_KEY:
            continue
        if isinstance(value, bool) or not isinstance(value, int):
            return None
        settings[name] = value
    return Action(state=state, settings=settings)


def parse_output(raw: str, kind: PromptKind) -> ModelOutput:
    """Extract and parse the first delimited payload of the given kind.

    Never raises on arbitrary input; any trailing prose after the close
    token is ignored.
    """
    if kind is PromptKind.ACTION:
        span, failure = _extract_span(raw, SETTINGS_OPEN, SETTINGS_CLOSE)
        if failure is not None:
            return ModelOutput(raw=raw, kind=kind, failure=failure)
        assert span is not None
        span = span.strip()
        if not span:
            return ModelOutput(raw=raw, kind=kind, failure=ParseFailure.EMPTY_SPAN)
        action = _action_from_payload(span)
        if action is None:
            return ModelOutput(raw=raw, kind=kind, failure=ParseFailure.BAD_JSON)
        return ModelOutput(raw=raw, kind=kind, action=action)
    span, failure = _extract_span(raw, EXPLANATION_OPEN, EXPLANATION_CLOSE)
    if failure is not None:
        return ModelOutput(raw=raw, kind=kind, failure=failure)
    assert span is not None
    text = span.strip()
    if not text:
        return ModelOutput(raw=raw, kind=kind, failure=ParseFailure.EMPTY_SPAN)
    return ModelOutput(raw=raw, kind=kind, explanation=text)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between two equal-dimension nonzero vectors."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    norm_a = math.sqrt(float(va @ va))
    norm_b = math.sqrt(float(vb @ vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    value = float(va @ vb) / (norm_a * norm_b)
    return max(-1.0, min(1.0, value))


def max_similarity(embedding: Sequence[float], against: Sequence[Sequence[float]]) -> float:
    """Highest cosine similarity of one embedding against a collection."""
    if not len(against):
        return -1.0
    return max(cosine_similarity(embedding, other) for other in against)
