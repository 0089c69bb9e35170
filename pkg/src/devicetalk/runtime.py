"""Live device runtime: hosts one device instance behind a language model.

A command arrives pre-classified as action- or explanation-oriented. Action
commands are rendered against the current sensors, the backend's reply is
parsed and validated against the state model, and only a fully valid action
is applied; parse failures, validation failures, and backend outages leave
the device exactly as it was, with the rejection quietly logged. Every
handled command appends an event to the instance's log.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

from devicetalk.backends import BackendError, GenerationBackend
from devicetalk.statemodel import (
    DeviceConfigError,
    DeviceModel,
    SensorReadError,
    Snapshot,
    ValueRange,
    apply_action,
    split_snapshot,
    validate_action,
    validate_snapshot,
)
from devicetalk.synthesis import bootstrap_origin_state
from devicetalk.wire import PromptKind, parse_output, render_action_prompt, render_explanation_prompt

logger = logging.getLogger("devicetalk.runtime")


class Outcome(str, Enum):
    APPLIED = "applied"
    EXPLAINED = "explained"
    REJECTED_INVALID = "rejected-invalid"
    REJECTED_PARSE = "rejected-parse"


@dataclass(frozen=True)
class CommandEvent:
    seq: int
    timestamp: float
    command: str
    kind: PromptKind
    raw_output: str
    outcome: Outcome
    latency_ms: int
    before: Snapshot
    after: Snapshot
    explanation: str | None = None
    detail: str | None = None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "command": self.command,
            "kind": self.kind.value,
            "raw_output": self.raw_output,
            "outcome": self.outcome.value,
            "latency_ms": self.latency_ms,
            "before": self.before.to_json_dict(),
            "after": self.after.to_json_dict(),
            "explanation": self.explanation,
            "detail": self.detail,
            "error": self.error,
        }


class Actuator(Protocol):
    """Hardware hook invoked after every applied action."""

    def apply(self, snapshot: Snapshot) -> None: ...


class RecordingActuator:
    """Simulated actuator: remembers every snapshot it was asked to realize."""

    def __init__(self):
        self.applied: list[Snapshot] = []

    def apply(self, snapshot: Snapshot) -> None:
        self.applied.append(snapshot)


def sensor_ranges(model: DeviceModel) -> dict[str, ValueRange]:
    """Per-sensor range valid in every state that declares the sensor."""
    ranges: dict[str, ValueRange] = {}
    for tpl in model.templates.values():
        for name, rng in tpl.sensors.items():
            if name in ranges:
                lo = max(ranges[name].min, rng.min)
                hi = min(ranges[name].max, rng.max)
                if lo > hi:
                    raise DeviceConfigError(f"sensor {name!r} has disjoint ranges across states")
                ranges[name] = ValueRange(lo, hi)
            else:
                ranges[name] = rng
    return ranges


class SimulatedSensorSource:
    """Deterministic stand-in for real sensor hardware.

    mode="fixed" always returns the configured (clamped) start values;
    mode="drift" performs a seeded random walk of +/- `step` per read,
    clamped to the sensor's declared range.
    """

    def __init__(
        self,
        model: DeviceModel,
        mode: str = "fixed",
        values: dict[str, int] | None = None,
        step: int = 1,
        seed: int = 0,
    ):
        if mode not in ("fixed", "drift"):
            raise ValueError(f"unknown sensor mode {mode!r}")
        self.mode = mode
        self.step = step
        self._rng = random.Random(seed)
        self._ranges = sensor_ranges(model)
        self._values: dict[str, int] = {}
        for name, rng in self._ranges.items():
            start = (values or {}).get(name, (rng.min + rng.max) // 2)
            self._values[name] = min(max(start, rng.min), rng.max)

    def read(self, name: str) -> int:
        if name not in self._values:
            raise SensorReadError(name, "not a sensor of this device")
        if self.mode == "drift":
            rng = self._ranges[name]
            drifted = self._values[name] + self._rng.randint(-self.step, self.step)
            self._values[name] = min(max(drifted, rng.min), rng.max)
        return self._values[name]


@dataclass
class DeviceInstance:
    """One hosted device: model, current snapshot, sensors, and event log."""

    model: DeviceModel
    current: Snapshot
    sensor_source: SimulatedSensorSource | None = None
    actuator: Actuator | None = None
    error_log: str | Path | None = None
    event_log: list[CommandEvent] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    _last_ts: float = 0.0

    def next_timestamp(self) -> float:
        ts = max(time.time(), self._last_ts + 1e-6)
        self._last_ts = ts
        return ts


def boot_instance(
    model: DeviceModel,
    sensor_source: SimulatedSensorSource | None = None,
    actuator: Actuator | None = None,
    error_log: str | Path | None = None,
) -> DeviceInstance:
    """Boot a device into its off state with sensors read once."""
    if sensor_source is None and model.sensor_universe:
        sensor_source = SimulatedSensorSource(model)
    state = bootstrap_origin_state(model)
    tpl = model.template(state)
    values = {name: model.defaults[name] for name in tpl.settings}
    for name in tpl.sensors:
        values[name] = sensor_source.read(name)
    snapshot = Snapshot(state=state, values=values)
    verdict = validate_snapshot(model, snapshot)
    if not verdict:
        raise DeviceConfigError(f"boot snapshot invalid ({verdict.reason}: {verdict.key})")
    return DeviceInstance(
        model=model, current=snapshot, sensor_source=sensor_source, actuator=actuator, error_log=error_log
    )


def read_sensors(instance: DeviceInstance) -> dict[str, int]:
    """Current values for every sensor of the current state's template."""
    tpl = instance.model.template(instance.current.state)
    if not tpl.sensors:
        return {}
    return {name: instance.sensor_source.read(name) for name in tpl.sensors}


def _log_rejection(instance: DeviceInstance, event: CommandEvent) -> None:
    record = {
        "timestamp": event.timestamp,
        "command": event.command,
        "kind": event.kind.value,
        "outcome": event.outcome.value,
        "detail": event.detail,
        "error": event.error,
    }
    logger.warning("command rejected: %s", json.dumps(record))
    if instance.error_log is not None:
        with Path(instance.error_log).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


def handle_command(
    instance: DeviceInstance,
    command: str,
    kind: PromptKind,
    backend: GenerationBackend,
) -> CommandEvent:
    """Process one pre-classified command; the device state can only change
    through a parsed, validated, applied action."""
    if not command:
        raise ValueError("command must be nonempty")
    with instance.lock:
        before = instance.current
        explanation = detail = error = None
        raw = ""
        start = time.perf_counter()
        try:
            if kind is PromptKind.ACTION:
                _, sensors = split_snapshot(before, instance.model.template(before.state))
                prompt = render_action_prompt(command, sensors)
            else:
                prompt = render_explanation_prompt(command, before, instance.model.template(before.state))
            raw = backend.generate(prompt.text)
        except BackendError as exc:
            latency = int(round((time.perf_counter() - start) * 1000))
            error = str(exc)
            outcome = Outcome.REJECTED_PARSE
            event = CommandEvent(
                seq=len(instance.event_log),
                timestamp=instance.next_timestamp(),
                command=command,
                kind=kind,
                raw_output=raw,
                outcome=outcome,
                latency_ms=latency,
                before=before,
                after=before,
                error=error,
            )
            instance.event_log.append(event)
            _log_rejection(instance, event)
            return event

        output = parse_output(raw, kind)
        after = before
        if not output.ok:
            outcome = Outcome.REJECTED_PARSE
            detail = output.failure.value
        elif kind is PromptKind.EXPLANATION:
            outcome = Outcome.EXPLAINED
            explanation = output.explanation
        else:
            verdict = validate_action(instance.model, before.state, output.action)
            if not verdict:
                outcome = Outcome.REJECTED_INVALID
                detail = f"{verdict.reason.value}: {verdict.key}"
            else:
                try:
                    after = apply_action(instance.model, before, output.action, instance.sensor_source)
                    outcome = Outcome.APPLIED
                except SensorReadError as exc:
                    after = before
                    outcome = Outcome.REJECTED_INVALID
                    detail = str(exc)
        latency = int(round((time.perf_counter() - start) * 1000))

        event = CommandEvent(
            seq=len(instance.event_log),
            timestamp=instance.next_timestamp(),
            command=command,
            kind=kind,
            raw_output=raw,
            outcome=outcome,
            latency_ms=latency,
            before=before,
            after=after,
            explanation=explanation,
            detail=detail,
            error=error,
        )
        instance.event_log.append(event)
        if outcome is Outcome.APPLIED:
            instance.current = after
            if instance.actuator is not None:
                instance.actuator.apply(after)
        elif outcome in (Outcome.REJECTED_INVALID, Outcome.REJECTED_PARSE):
            _log_rejection(instance, event)
        return event
