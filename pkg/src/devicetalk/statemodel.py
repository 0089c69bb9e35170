"""Formal device state models: states, templates, snapshots, and actions.

A device is declared as a coarse state machine plus one template per state.
A template names the settings (mutable) and sensors (immutable) that matter
in that state, each with a closed integer range. Runtime state is a snapshot
(state name + concrete values); a proposed state change is an action (target
state + setting values only). Validation is verdict-based: an invalid
snapshot or action is a result to act on, not an exception, because the
runtime contract on a bad action is "leave the device unchanged".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping, Protocol

RESERVED_STATE_KEY = "state"


class DeviceConfigError(ValueError):
    """A device definition violates its structural invariants."""


class UnknownStateError(KeyError):
    """A state name is not part of the device's state machine."""


class SensorReadError(RuntimeError):
    """A sensor source failed to produce an in-range value."""

    def __init__(self, sensor: str, message: str):
        super().__init__(f"sensor {sensor!r}: {message}")
        self.sensor = sensor


class Reason(str, Enum):
    """Machine-readable reason codes for invalid snapshots and actions."""

    UNKNOWN_STATE = "unknown-state"
    MISSING_KEY = "missing-key"
    EXTRA_KEY = "extra-key"
    OUT_OF_RANGE = "out-of-range"
    UNREACHABLE_STATE = "unreachable-state"
    SENSOR_WRITE = "sensor-write"
    UNKNOWN_SETTING = "unknown-setting"


@dataclass(frozen=True)
class Verdict:
    """Validity verdict with a reason code and offending key on failure."""

    ok: bool
    reason: Reason | None = None
    key: str | None = None

    def __bool__(self) -> bool:
        return self.ok

    @classmethod
    def valid(cls) -> "Verdict":
        return cls(True)

    @classmethod
    def invalid(cls, reason: Reason, key: str | None = None) -> "Verdict":
        return cls(False, reason, key)


@dataclass(frozen=True)
class ValueRange:
    """Closed integer interval of valid values for one setting or sensor."""

    min: int
    max: int

    def __post_init__(self) -> None:
        if self.min > self.max:
            raise DeviceConfigError(f"empty range [{self.min}, {self.max}]")

    def __contains__(self, value: object) -> bool:
        return isinstance(value, int) and not isinstance(value, bool) and self.min <= value <= self.max

    def span(self) -> int:
        return self.max - self.min + 1


@dataclass(frozen=True)
class Template:
    """Per-state declaration of relevant settings and sensors with ranges.

    Key order is preserved from the device definition and fixes the
    serialization order used in prompts.
    """

    settings: dict[str, ValueRange] = field(default_factory=dict)
    sensors: dict[str, ValueRange] = field(default_factory=dict)

    def __post_init__(self) -> None:
        overlap = self.settings.keys() & self.sensors.keys()
        if overlap:
            raise DeviceConfigError(f"names are both setting and sensor: {sorted(overlap)}")
        if RESERVED_STATE_KEY in self.settings or RESERVED_STATE_KEY in self.sensors:
            raise DeviceConfigError(f"{RESERVED_STATE_KEY!r} is reserved and cannot be a field name")

    @property
    def field_count(self) -> int:
        return len(self.settings) + len(self.sensors)

    def names(self) -> tuple[str, ...]:
        """All field names, settings first, in declaration order."""
        return tuple(self.settings) + tuple(self.sensors)

    def range_of(self, name: str) -> ValueRange:
        if name in self.settings:
            return self.settings[name]
        return self.sensors[name]


@dataclass(frozen=True)
class DeviceModel:
    """A device's state machine, per-state templates, and setting defaults.

    `defaults` supplies the value a setting takes when an action enters a
    state without naming it and the previous state has no value to carry
    over; it must cover every setting of the device. Immutable after load.
    """

    device_name: str
    states: tuple[str, ...]
    transitions: frozenset[tuple[str, str]]
    templates: dict[str, Template]
    defaults: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.states:
            raise DeviceConfigError("device has no states")
        if len(set(self.states)) != len(self.states):
            raise DeviceConfigError("duplicate state names")
        state_set = set(self.states)
        for src, dst in self.transitions:
            if src not in state_set or dst not in state_set:
                raise DeviceConfigError(f"transition ({src!r}, {dst!r}) names an unknown state")
        if set(self.templates) != state_set:
            raise DeviceConfigError("templates must have exactly one entry per state")
        settings: set[str] = set()
        sensors: set[str] = set()
        for tpl in self.templates.values():
            settings |= tpl.settings.keys()
            sensors |= tpl.sensors.keys()
        if settings & sensors:
            raise DeviceConfigError(
                f"names are settings in one state and sensors in another: {sorted(settings & sensors)}"
            )
        missing = settings - self.defaults.keys()
        if missing:
            raise DeviceConfigError(f"defaults missing for settings: {sorted(missing)}")
        extra = self.defaults.keys() - settings
        if extra:
            raise DeviceConfigError(f"defaults name unknown settings: {sorted(extra)}")
        for name, value in self.defaults.items():
            for state, tpl in self.templates.items():
                if name in tpl.settings and value not in tpl.settings[name]:
                    raise DeviceConfigError(
                        f"default {name}={value} is out of range for state {state!r}"
                    )

    def template(self, state: str) -> Template:
        try:
            return self.templates[state]
        except KeyError:
            raise UnknownStateError(state) from None

    @property
    def setting_universe(self) -> set[str]:
        return {name for tpl in self.templates.values() for name in tpl.settings}

    @property
    def sensor_universe(self) -> set[str]:
        return {name for tpl in self.templates.values() for name in tpl.sensors}

    def to_config(self) -> dict:
        """Round-trip back to the declarative JSON document form."""
        return {
            "device_name": self.device_name,
            "states": list(self.states),
            "transitions": sorted([list(pair) for pair in self.transitions]),
            "templates": {
                state: {
                    "settings": {n: {"min": r.min, "max": r.max} for n, r in tpl.settings.items()},
                    "sensors": {n: {"min": r.min, "max": r.max} for n, r in tpl.sensors.items()},
                }
                for state, tpl in self.templates.items()
            },
            "defaults": dict(self.defaults),
        }


@dataclass(frozen=True)
class Snapshot:
    """Concrete device state: a state name plus one value per template field.

    The state name is stored structurally, never inside `values`, so the
    setting/sensor partition of the value map is unambiguous.
    """

    state: str
    values: dict[str, int] = field(default_factory=dict)

    def key(self) -> tuple:
        return (self.state, tuple(sorted(self.values.items())))

    def to_json_dict(self) -> dict:
        return {"state": self.state, "values": dict(self.values)}

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "Snapshot":
        return cls(state=doc["state"], values=dict(doc["values"]))


@dataclass(frozen=True)
class Action:
    """Proposed state change: target state plus setting assignments.

    Settings may be a strict subset of the target template; sensors never
    appear (they are immutable by definition).
    """

    state: str
    settings: dict[str, int] = field(default_factory=dict)

    def key(self) -> tuple:
        return (self.state, tuple(sorted(self.settings.items())))

    def to_payload(self) -> dict:
        """Wire payload form: the reserved state key first, then settings."""
        payload: dict = {RESERVED_STATE_KEY: self.state}
        payload.update(self.settings)
        return payload


class SensorSource(Protocol):
    """Anything that can produce the current value of a named sensor."""

    def read(self, name: str) -> int: ...


def validate_snapshot(model: DeviceModel, snap: Snapshot) -> Verdict:
    """Check a snapshot against the device model.

    Valid iff the state exists, the value keys are exactly the template's
    field names, and every value is an integer inside its declared range.
    """
    if snap.state not in model.templates:
        return Verdict.invalid(Reason.UNKNOWN_STATE, snap.state)
    tpl = model.templates[snap.state]
    for name in tpl.names():
        if name not in snap.values:
            return Verdict.invalid(Reason.MISSING_KEY, name)
    for name, value in snap.values.items():
        if name not in tpl.settings and name not in tpl.sensors:
            return Verdict.invalid(Reason.EXTRA_KEY, name)
        if value not in tpl.range_of(name):
            return Verdict.invalid(Reason.OUT_OF_RANGE, name)
    return Verdict.valid()


def reachable(model: DeviceModel, from_state: str, to_state: str) -> bool:
    """One-hop reachability: a declared transition, or staying in place."""
    if from_state not in model.templates:
        raise UnknownStateError(from_state)
    if to_state not in model.templates:
        raise UnknownStateError(to_state)
    return from_state == to_state or (from_state, to_state) in model.transitions


def validate_action(model: DeviceModel, current_state: str, action: Action) -> Verdict:
    """Check a proposed action against the model from the given state.

    Valid iff the target state is reachable in one hop (or is the current
    state), every named setting belongs to the target template with an
    in-range value, and no sensor name appears.
    """
    if current_state not in model.templates:
        raise UnknownStateError(current_state)
    if action.state not in model.templates:
        return Verdict.invalid(Reason.UNKNOWN_STATE, action.state)
    if not reachable(model, current_state, action.state):
        return Verdict.invalid(Reason.UNREACHABLE_STATE, action.state)
    tpl = model.templates[action.state]
    sensor_universe = model.sensor_universe
    for name, value in action.settings.items():
        if name in sensor_universe:
            return Verdict.invalid(Reason.SENSOR_WRITE, name)
        if name not in tpl.settings:
            return Verdict.invalid(Reason.UNKNOWN_SETTING, name)
        if value not in tpl.settings[name]:
            return Verdict.invalid(Reason.OUT_OF_RANGE, name)
    return Verdict.valid()


def apply_action(
    model: DeviceModel,
    current: Snapshot,
    action: Action,
    sensor_reader: SensorSource | None = None,
) -> Snapshot:
    """Produce the snapshot the device takes after a validated action.

    Settings named in the action take the action's values; target-template
    settings left unnamed carry over from the current snapshot when the
    current state shares them, and fall back to the device defaults
    otherwise. Sensor values are re-read from `sensor_reader`.
    """
    verdict = validate_action(model, current.state, action)
    if not verdict:
        raise ValueError(f"action is invalid ({verdict.reason}: {verdict.key}); validate before applying")
    tpl = model.templates[action.state]
    values: dict[str, int] = {}
    current_settings = model.templates[current.state].settings
    for name in tpl.settings:
        if name in action.settings:
            values[name] = action.settings[name]
        elif name in current_settings and name in current.values:
            values[name] = current.values[name]
        else:
            values[name] = model.defaults[name]
    for name in tpl.sensors:
        if sensor_reader is None:
            raise SensorReadError(name, "no sensor source configured")
        try:
            reading = sensor_reader.read(name)
        except SensorReadError:
            raise
        except Exception as exc:
            raise SensorReadError(name, str(exc)) from exc
        if reading not in tpl.sensors[name]:
            raise SensorReadError(name, f"value {reading!r} outside {tpl.sensors[name]}")
        values[name] = reading
    return Snapshot(state=action.state, values=values)


def split_snapshot(snap: Snapshot, tpl: Template) -> tuple[dict[str, int], dict[str, int]]:
    """Split snapshot values into (settings, sensors) in template order."""
    settings = {name: snap.values[name] for name in tpl.settings if name in snap.values}
    sensors = {name: snap.values[name] for name in tpl.sensors if name in snap.values}
    return settings, sensors


def _parse_range(doc: Mapping, where: str) -> ValueRange:
    try:
        return ValueRange(min=int(doc["min"]), max=int(doc["max"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DeviceConfigError(f"bad range at {where}: {doc!r}") from exc


def _parse_field_map(doc: Mapping, where: str) -> dict[str, ValueRange]:
    if not isinstance(doc, Mapping):
        raise DeviceConfigError(f"{where} must be an object")
    return {str(name): _parse_range(rng, f"{where}.{name}") for name, rng in doc.items()}


def device_from_config(doc: Mapping) -> DeviceModel:
    """Build a DeviceModel from the declarative JSON document form."""
    try:
        name = doc["device_name"]
        states = [str(s) for s in doc["states"]]
        transitions = frozenset((str(a), str(b)) for a, b in doc["transitions"])
        templates_doc = doc["templates"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DeviceConfigError(f"malformed device definition: {exc}") from exc
    templates = {
        str(state): Template(
            settings=_parse_field_map(tpl.get("settings", {}), f"templates.{state}.settings"),
            sensors=_parse_field_map(tpl.get("sensors", {}), f"templates.{state}.sensors"),
        )
        for state, tpl in templates_doc.items()
    }
    defaults = {str(k): int(v) for k, v in doc.get("defaults", {}).items()}
    return DeviceModel(
        device_name=str(name),
        states=tuple(states),
        transitions=transitions,
        templates=templates,
        defaults=defaults,
    )


def load_device(path: str) -> DeviceModel:
    """Load a device definition from a JSON file."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DeviceConfigError(f"{path}: {exc}") from exc
    return device_from_config(doc)


def builtin_device_names() -> list[str]:
    root = resources.files("devicetalk") / "devices"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def builtin_device(name: str) -> DeviceModel:
    """Load one of the bundled device definitions (``lamp``, ``thermostat``)."""
    ref = resources.files("devicetalk") / "devices" / f"{name}.json"
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DeviceConfigError(f"no bundled device named {name!r}; have {builtin_device_names()}") from None
    return device_from_config(json.loads(text))


def resolve_device(spec: str) -> DeviceModel:
    """Resolve a CLI-style device argument: a file path or a bundled name."""
    if spec.endswith(".json"):
        return load_device(spec)
    return builtin_device(spec)


def iter_actions_from(snapshots: Iterable[Snapshot], model: DeviceModel) -> list[Action]:
    """Derive the action equivalent of each snapshot (sensor values dropped)."""
    out = []
    for snap in snapshots:
        settings, _ = split_snapshot(snap, model.template(snap.state))
        out.append(Action(state=snap.state, settings=settings))
    return out
