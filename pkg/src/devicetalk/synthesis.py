"""Teacher-driven synthesis of bootstrap fine-tuning data.

Random snapshots are labeled by an instruction-tuned teacher backend: each
snapshot yields a command that would drive the device to that state (paired
with the snapshot's settings as the target action) and question/answer pairs
about the snapshot's fields. Action commands are kept diverse by re-prompting
when a candidate is too close, by embedding cosine similarity, to commands
already collected. Accepted tuples are rendered into the wire prompt formats
and split into train and hold-out sets; the hold-out set is persisted
separately and never consumed by training or distillation.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from devicetalk.backends import GenerationBackend
from devicetalk.statemodel import (
    Action,
    DeviceModel,
    Snapshot,
    split_snapshot,
    validate_action,
)
from devicetalk.wire import (
    PromptKind,
    action_completion,
    cosine_similarity,
    explanation_completion,
    render_action_prompt,
    render_explanation_prompt,
)

logger = logging.getLogger("devicetalk.synthesis")

TRAIN_FILE = "train.jsonl"
TEST_FILE = "test.jsonl"
JOURNAL_FILE = "journal.jsonl"


@dataclass(frozen=True)
class SynthesisConfig:
    similarity_threshold: float = 0.85
    max_reprompts: int = 5
    per_snapshot_explanations: int = 1
    split_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.similarity_threshold <= 1:
            raise ValueError("similarity_threshold must be in (0, 1]")
        if self.max_reprompts < 1:
            raise ValueError("max_reprompts must be >= 1")
        if self.per_snapshot_explanations < 1:
            raise ValueError("per_snapshot_explanations must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must be in (0, 1)")


@dataclass(frozen=True)
class ActionTuple:
    command: str
    action: Action
    low_diversity: bool = False


@dataclass(frozen=True)
class ExplanationTuple:
    command: str
    snapshot: Snapshot
    explanation: str


@dataclass(frozen=True)
class TrainingInstance:
    """One fine-tuning example: a rendered prompt and its target completion."""

    kind: PromptKind
    command: str
    snapshot: Snapshot
    completion: str
    rendered_prompt: str

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "command": self.command,
            "snapshot": self.snapshot.to_json_dict(),
            "completion": self.completion,
            "rendered_prompt": self.rendered_prompt,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrainingInstance":
        return cls(
            kind=PromptKind(doc["kind"]),
            command=doc["command"],
            snapshot=Snapshot.from_json_dict(doc["snapshot"]),
            completion=doc["completion"],
            rendered_prompt=doc["rendered_prompt"],
        )


@dataclass
class DatasetBundle:
    train: list[TrainingInstance]
    test: list[TrainingInstance]

    @property
    def all_instances(self) -> list[TrainingInstance]:
        return self.train + self.test


ACTION_SYNTH_TEMPLATE = """\
You are generating training data for a {device}.
The {device} should end up with exactly these settings:
{target}
{sensor_block}Imagine a situation in which someone would want the {device} set this way, \
then write the brief, informal command that person would say to the {device} in that situation. \
Reply with the command text only.{rejected_block}"""

EXPLANATION_SYNTH_TEMPLATE = """\
You are generating training data for a {device}.
Its current state is:
{snapshot}
Its capabilities in this state are:
{capabilities}
For each field of the current state, including "state", write one question a user might \
ask about that field and the correct answer grounded in the capabilities above. \
Reply with a JSON array of objects, each with keys "field", "question", and "answer"."""


def template_capabilities(model: DeviceModel, state: str) -> dict:
    """Prompt-friendly description of one state's template."""
    tpl = model.template(state)
    return {
        "state": state,
        "settings": {n: [r.min, r.max] for n, r in tpl.settings.items()},
        "sensors": {n: [r.min, r.max] for n, r in tpl.sensors.items()},
    }


def model_capabilities(model: DeviceModel) -> dict:
    """Prompt-friendly description of the whole device state model."""
    return {
        "device": model.device_name,
        "states": list(model.states),
        "templates": {
            state: {
                "settings": {n: [r.min, r.max] for n, r in tpl.settings.items()},
                "sensors": {n: [r.min, r.max] for n, r in tpl.sensors.items()},
            }
            for state, tpl in model.templates.items()
        },
    }


def _clean_command(reply: str) -> str:
    text = reply.strip().strip('"').strip("'").strip()
    return " ".join(text.split())


def bootstrap_origin_state(model: DeviceModel) -> str:
    """The state action tuples are validated from (and devices boot into)."""
    return "off" if "off" in model.templates else model.states[0]


def synthesize_action_tuple(
    teacher: GenerationBackend,
    model: DeviceModel,
    snapshot: Snapshot,
    prior_commands: Sequence[str],
    config: SynthesisConfig,
) -> ActionTuple:
    """Ask the teacher for a command that would produce this snapshot.

    The target action is the snapshot with sensor values stripped. The
    teacher is re-prompted up to `max_reprompts` times while its candidate
    command is too similar to earlier ones; after that, the most dissimilar
    candidate is returned flagged low-diversity.
    """
    settings, sensors = split_snapshot(snapshot, model.template(snapshot.state))
    action = Action(state=snapshot.state, settings=settings)
    target = dict(action.to_payload())
    sensor_block = ""
    if sensors:
        sensor_block = f"Its sensors currently read:\n{json.dumps(sensors)}\n"
    prior_embeddings = [teacher.embed(c) for c in prior_commands]

    best: str | None = None
    best_similarity = float("inf")
    rejected: list[str] = []
    for _ in range(1 + config.max_reprompts):
        rejected_block = ""
        if rejected:
            listing = "\n".join(f"- {c}" for c in rejected)
            rejected_block = (
                "\nThese earlier commands were rejected for being too similar to "
                f"existing ones; suggest something clearly different:\n{listing}"
            )
        prompt = ACTION_SYNTH_TEMPLATE.format(
            device=model.device_name,
            target=json.dumps(target),
            sensor_block=sensor_block,
            rejected_block=rejected_block,
        )
        command = _clean_command(teacher.generate(prompt))
        if not command:
            continue
        if not prior_embeddings:
            return ActionTuple(command=command, action=action)
        emb = teacher.embed(command)
        similarity = max(cosine_similarity(emb, other) for other in prior_embeddings)
        if similarity < config.similarity_threshold:
            return ActionTuple(command=command, action=action)
        if similarity < best_similarity:
            best, best_similarity = command, similarity
        rejected.append(command)
    if best is None:
        raise ValueError("teacher produced no usable command")
    logger.warning(
        "low-diversity command accepted after %d reprompts (similarity %.3f): %r",
        config.max_reprompts,
        best_similarity,
        best,
    )
    return ActionTuple(command=best, action=action, low_diversity=True)


def _extract_json_array(reply: str) -> list | None:
    text = reply.strip()
    try:
        doc = json.loads(text)
        if isinstance(doc, list):
            return doc
    except json.JSONDecodeError:
        pass
    start, end = text.find("["), text.rfind("]")
    if 0 <= start < end:
        try:
            doc = json.loads(text[start : end + 1])
            if isinstance(doc, list):
                return doc
        except json.JSONDecodeError:
            return None
    return None


def synthesize_explanation_tuples(
    teacher: GenerationBackend,
    model: DeviceModel,
    snapshot: Snapshot,
    config: SynthesisConfig,
) -> list[ExplanationTuple]:
    """Ask the teacher for a grounded question/answer pair per snapshot field.

    Unparseable teacher replies are skipped with a log line rather than
    raised; grounding mistakes in parseable answers are not auto-detected.
    """
    prompt = EXPLANATION_SYNTH_TEMPLATE.format(
        device=model.device_name,
        snapshot=json.dumps({"state": snapshot.state, **snapshot.values}),
        capabilities=json.dumps(template_capabilities(model, snapshot.state)),
    )
    reply = teacher.generate(prompt)
    entries = _extract_json_array(reply)
    if entries is None:
        logger.warning("unparseable explanation reply skipped: %.120r", reply)
        return []
    tuples = []
    for entry in entries:
        if not isinstance(entry, dict):
            continue
        question = str(entry.get("question", "")).strip()
        answer = str(entry.get("answer", "")).strip()
        if question and answer:
            tuples.append(ExplanationTuple(command=question, snapshot=snapshot, explanation=answer))
    return tuples


def render_action_instance(model: DeviceModel, command: str, snapshot: Snapshot, action: Action) -> TrainingInstance:
    _, sensors = split_snapshot(snapshot, model.template(snapshot.state))
    prompt = render_action_prompt(command, sensors)
    return TrainingInstance(
        kind=PromptKind.ACTION,
        command=command,
        snapshot=snapshot,
        completion=action_completion(action),
        rendered_prompt=prompt.text,
    )


def render_explanation_instance(model: DeviceModel, tup: ExplanationTuple) -> TrainingInstance:
    prompt = render_explanation_prompt(tup.command, tup.snapshot, model.template(tup.snapshot.state))
    return TrainingInstance(
        kind=PromptKind.EXPLANATION,
        command=tup.command,
        snapshot=tup.snapshot,
        completion=explanation_completion(tup.explanation),
        rendered_prompt=prompt.text,
    )


def split_instances(
    instances: Sequence[TrainingInstance], split_fraction: float, seed: int
) -> tuple[list[TrainingInstance], list[TrainingInstance]]:
    """Seeded train/test split, stratified by prompt kind.

    Per kind, round(n * split_fraction) instances go to the hold-out set, so
    an even kind mix stays even after splitting.
    """
    rng = random.Random(seed)
    test_idx: set[int] = set()
    for kind in PromptKind:
        kind_idx = [i for i, inst in enumerate(instances) if inst.kind is kind]
        rng.shuffle(kind_idx)
        take = round(len(kind_idx) * split_fraction)
        test_idx.update(kind_idx[:take])
    train = [inst for i, inst in enumerate(instances) if i not in test_idx]
    test = [inst for i, inst in enumerate(instances) if i in test_idx]
    return train, test


def _journal_record(
    index: int, action_tuple: ActionTuple | None, explanation_tuples: list[ExplanationTuple]
) -> dict:
    return {
        "index": index,
        "action": None
        if action_tuple is None
        else {
            "command": action_tuple.command,
            "state": action_tuple.action.state,
            "settings": dict(action_tuple.action.settings),
            "low_diversity": action_tuple.low_diversity,
        },
        "explanations": [{"command": t.command, "explanation": t.explanation} for t in explanation_tuples],
    }


def _load_journal(path: Path) -> dict[int, dict]:
    records: dict[int, dict] = {}
    if path.exists():
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    doc = json.loads(line)
                    records[int(doc["index"])] = doc
    return records


def build_bootstrap_dataset(
    device: DeviceModel,
    snapshots: Sequence[Snapshot],
    teacher: GenerationBackend,
    config: SynthesisConfig,
    out_dir: str | Path | None = None,
) -> DatasetBundle:
    """Label snapshots, render training instances, and split train/test.

    When `out_dir` is given, progress is journaled per snapshot so an
    interrupted run resumes where it left off, and the final `train.jsonl`
    and `test.jsonl` are written there. Action tuples that fail validation
    against the device model are rejected and logged.
    """
    if not snapshots:
        raise ValueError("need at least one snapshot")
    journal_path = writer = None
    journal: dict[int, dict] = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        journal_path = out / JOURNAL_FILE
        journal = _load_journal(journal_path)
        writer = journal_path.open("a", encoding="utf-8")

    origin = bootstrap_origin_state(device)
    prior_commands: list[str] = [
        rec["action"]["command"] for rec in journal.values() if rec.get("action")
    ]
    instances: list[TrainingInstance] = []
    try:
        for i, snapshot in enumerate(snapshots):
            if i in journal:
                record = journal[i]
                action_tuple = None
                if record.get("action"):
                    doc = record["action"]
                    action_tuple = ActionTuple(
                        command=doc["command"],
                        action=Action(state=doc["state"], settings=dict(doc["settings"])),
                        low_diversity=bool(doc.get("low_diversity", False)),
                    )
                explanation_tuples = [
                    ExplanationTuple(command=e["command"], snapshot=snapshot, explanation=e["explanation"])
                    for e in record.get("explanations", [])
                ]
            else:
                action_tuple = synthesize_action_tuple(teacher, device, snapshot, prior_commands, config)
                verdict = validate_action(device, origin, action_tuple.action)
                if not verdict:
                    logger.warning(
                        "rejecting action tuple for snapshot %d (%s: %s)", i, verdict.reason, verdict.key
                    )
                    action_tuple = None
                else:
                    prior_commands.append(action_tuple.command)
                candidates = synthesize_explanation_tuples(teacher, device, snapshot, config)
                rng = random.Random(config.seed * 1_000_003 + i)
                if len(candidates) > config.per_snapshot_explanations:
                    explanation_tuples = rng.sample(candidates, config.per_snapshot_explanations)
                else:
                    explanation_tuples = candidates
                if writer is not None:
                    writer.write(json.dumps(_journal_record(i, action_tuple, explanation_tuples)) + "\n")
                    writer.flush()
            if action_tuple is not None:
                instances.append(render_action_instance(device, action_tuple.command, snapshot, action_tuple.action))
            for tup in explanation_tuples:
                instances.append(render_explanation_instance(device, tup))
    finally:
        if writer is not None:
            writer.close()

    train, test = split_instances(instances, config.split_fraction, config.seed)
    bundle = DatasetBundle(train=train, test=test)
    if out_dir is not None:
        save_instances(Path(out_dir) / TRAIN_FILE, train)
        save_instances(Path(out_dir) / TEST_FILE, test)
    return bundle


def save_instances(path: str | Path, instances: Iterable[TrainingInstance]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json_dict()) + "\n")


def load_instances(path: str | Path) -> list[TrainingInstance]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(TrainingInstance.from_json_dict(json.loads(line)))
    return out


def audit_train_diversity(
    instances: Sequence[TrainingInstance],
    embedder: GenerationBackend,
    threshold: float,
) -> list[tuple[str, str, float]]:
    """Post-hoc audit: pairs of train-split action commands at or above the
    similarity threshold. Empty means the diversity gate held."""
    commands = [inst.command for inst in instances if inst.kind is PromptKind.ACTION]
    embeddings = [embedder.embed(c) for c in commands]
    violations = []
    for i in range(len(commands)):
        for j in range(i + 1, len(commands)):
            if commands[i] == commands[j]:
                sim = 1.0
            else:
                sim = cosine_similarity(embeddings[i], embeddings[j])
            if sim >= threshold:
                violations.append((commands[i], commands[j], sim))
    return violations
