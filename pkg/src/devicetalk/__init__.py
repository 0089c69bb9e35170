"""Natural-language device control grounded in formal state models.

The package covers the full pipeline for a self-describing smart device:
declaring a device's states, settings, and sensors; generating balanced
random state snapshots; synthesizing instruction-tuning data with a teacher
model; orchestrating student/teacher distillation with state-model adherence
gates; hosting a live device runtime with validated state changes; and
evaluating response quality and latency.
"""

from devicetalk.statemodel import (
    Action,
    DeviceModel,
    Snapshot,
    Template,
    ValueRange,
    Verdict,
    apply_action,
    builtin_device,
    load_device,
    reachable,
    validate_action,
    validate_snapshot,
)

__all__ = [
    "Action",
    "DeviceModel",
    "Snapshot",
    "Template",
    "ValueRange",
    "Verdict",
    "apply_action",
    "builtin_device",
    "load_device",
    "reachable",
    "validate_action",
    "validate_snapshot",
]

__version__ = "0.1.0"
