"""Pseudo-random generation of valid device snapshots.

States are drawn with probability proportional to the size of their template
(settings + sensors + 1), so that states with richer value spaces appear
more often in generated sets; the +1 keeps empty templates reachable. The
raw weight is normalized across all states to form a proper distribution.
Field values are then drawn uniformly from their declared ranges.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from devicetalk.statemodel import DeviceModel, Snapshot, UnknownStateError


@dataclass(frozen=True)
class GenerationConfig:
    count: int
    seed: int
    device: DeviceModel

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("count must be >= 1")


def state_weight(model: DeviceModel, state: str) -> int:
    """Unnormalized sampling weight: template field count plus one."""
    if state not in model.templates:
        raise UnknownStateError(state)
    return model.templates[state].field_count + 1


def state_distribution(model: DeviceModel) -> dict[str, float]:
    """Normalized per-state sampling probabilities."""
    weights = {state: state_weight(model, state) for state in model.states}
    total = sum(weights.values())
    return {state: w / total for state, w in weights.items()}


def choose_state(model: DeviceModel, rng: random.Random) -> str:
    """Draw a state name by normalized template-size weight."""
    weights = [state_weight(model, state) for state in model.states]
    return rng.choices(model.states, weights=weights, k=1)[0]


def random_snapshot(model: DeviceModel, rng: random.Random, state: str | None = None) -> Snapshot:
    """Draw one valid snapshot; `state` forces the state instead of sampling."""
    if state is None:
        state = choose_state(model, rng)
    elif state not in model.templates:
        raise UnknownStateError(state)
    tpl = model.templates[state]
    values = {name: rng.randint(tpl.range_of(name).min, tpl.range_of(name).max) for name in tpl.names()}
    return Snapshot(state=state, values=values)


def generate_set(config: GenerationConfig) -> list[Snapshot]:
    """Generate exactly `count` snapshots, deterministic under the seed."""
    rng = random.Random(config.seed)
    return [random_snapshot(config.device, rng) for _ in range(config.count)]
