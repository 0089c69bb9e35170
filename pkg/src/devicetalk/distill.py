"""Student/teacher distillation loop with state-model adherence gating.

Each round the teacher synthesizes a fresh command, which must clear a
novelty gate (action commands only: embedding cosine similarity against
every previously seen command, bootstrap hold-out included, below a
threshold). The student answers from a fixed starting state (actions) or a
random snapshot (explanations); a teacher judge assigns a strict binary
verdict, with locally-invalid actions failed outright and no judge call.
Wrong answers earn a teacher correction, which is only kept if it parses
and validates against the device model, so hallucinated capabilities never
reach a training batch. Corrections accumulate into balanced batches
(equal action and explanation counts) handed to an external trainer
command. The loop ends when the windowed correct rate clears its stop
threshold, the windowed correction non-adherence rate clears its own, or
too many consecutive action queries fail the novelty gate.
"""

from __future__ import annotations

import json
import logging
import random
import shlex
import subprocess
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from devicetalk.backends import BackendError, GenerationBackend
from devicetalk.snapshots import random_snapshot
from devicetalk.statemodel import DeviceModel, Snapshot, split_snapshot, validate_action
from devicetalk.synthesis import (
    ExplanationTuple,
    TrainingInstance,
    bootstrap_origin_state,
    model_capabilities,
    render_action_instance,
    render_explanation_instance,
)
from devicetalk.wire import (
    ModelOutput,
    PromptKind,
    cosine_similarity,
    parse_output,
    render_action_prompt,
    render_explanation_prompt,
)

logger = logging.getLogger("devicetalk.distill")

TERMINATE_CORRECT_RATE = "correct-rate"
TERMINATE_NON_ADHERENCE = "non-adherence"
TERMINATE_NOVELTY_STARVATION = "novelty-starvation"


class TrainerHookError(RuntimeError):
    """The external trainer command exited nonzero; batch files are preserved."""


@dataclass(frozen=True)
class DistillationConfig:
    novelty_threshold: float = 0.85
    correct_rate_stop: float = 0.80
    nonadherence_stop: float = 0.90
    batch_size: int = 64
    rate_window: int = 50
    novelty_starvation_limit: int = 25
    query_retries: int = 3

    def __post_init__(self) -> None:
        if not 0 < self.novelty_threshold < 1:
            raise ValueError("novelty_threshold must be in (0, 1)")
        for name in ("correct_rate_stop", "nonadherence_stop"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be a positive even number")
        if self.rate_window < 1 or self.novelty_starvation_limit < 1 or self.query_retries < 1:
            raise ValueError("window, starvation limit, and retries must be >= 1")


@dataclass(frozen=True)
class JudgeVerdict:
    label: bool
    rationale: str = ""


@dataclass
class LoopState:
    """Bookkeeping for one distillation run."""

    rate_window: int
    seen_commands: list[tuple[str, np.ndarray]] = field(default_factory=list)
    holdout_commands: set[str] = field(default_factory=set)
    pending: dict[PromptKind, deque[TrainingInstance]] = field(
        default_factory=lambda: {kind: deque() for kind in PromptKind}
    )
    correctness: deque = field(default_factory=deque)
    nonadherence: deque = field(default_factory=deque)
    round: int = 0
    consecutive_non_novel: int = 0

    def __post_init__(self) -> None:
        self.correctness = deque(maxlen=self.rate_window)
        self.nonadherence = deque(maxlen=self.rate_window)

    @property
    def correct_rate(self) -> float:
        return sum(self.correctness) / len(self.correctness) if self.correctness else 0.0

    @property
    def nonadherence_rate(self) -> float:
        return sum(self.nonadherence) / len(self.nonadherence) if self.nonadherence else 0.0


@dataclass(frozen=True)
class StudentTrial:
    output: ModelOutput
    snapshot: Snapshot


@dataclass(frozen=True)
class CorrectionResult:
    instance: TrainingInstance | None
    failure: str | None = None

    @property
    def adheres(self) -> bool:
        return self.instance is not None


@dataclass
class DistillationReport:
    rounds: int
    termination_reason: str
    final_correct_rate: float
    final_nonadherence_rate: float
    batch_files: list[str]
    checkpoints: list[str]
    unflushed: dict[str, int]
    per_round: list[dict]

    def to_json_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "termination_reason": self.termination_reason,
            "final_correct_rate": self.final_correct_rate,
            "final_nonadherence_rate": self.final_nonadherence_rate,
            "batch_files": self.batch_files,
            "checkpoints": self.checkpoints,
            "unflushed": self.unflushed,
            "per_round": self.per_round,
        }


QUERY_SYNTH_TEMPLATE = """\
Synthesize one new user command for a {device}.
The command must be {kind_clause}, and it must be satisfiable within the device's \
capabilities, described here:
{capabilities}
Use brief, informal language. Reply with the command text only."""

KIND_CLAUSES = {
    PromptKind.ACTION: "a request to change the device's settings",
    PromptKind.EXPLANATION: "a question about the device's current state or capabilities",
}

JUDGE_TEMPLATE = """\
Judge the device response below.
A {device} with these capabilities:
{capabilities}
received this user command:
{command}
and responded:
{response}
Decide whether the response satisfies the user's request. Reply with JSON: \
{{"label": true}} or {{"label": false, "rationale": "..."}}."""

CORRECTION_ACTION_TEMPLATE = """\
Provide the correct response a {device} should have given.
Capabilities:
{capabilities}
The device is currently in this state:
{snapshot}
User command:
{command}
Reply with the new settings wrapped exactly as [SETTINGS]{{"state": ..., ...}}[/SETTINGS], \
using only settings that exist for the chosen state."""

CORRECTION_EXPLANATION_TEMPLATE = """\
Provide the correct response a {device} should have given.
Capabilities:
{capabilities}
The device is currently in this state:
{snapshot}
User command:
{command}
Reply with the explanation wrapped exactly as [EXPLANATION]...[/EXPLANATION]."""


def synthesize_query(
    teacher: GenerationBackend, device: DeviceModel, kind: PromptKind, retries: int = 3
) -> str:
    """Ask the teacher for one new command of the given kind."""
    prompt = QUERY_SYNTH_TEMPLATE.format(
        device=device.device_name,
        kind_clause=KIND_CLAUSES[kind],
        capabilities=json.dumps(model_capabilities(device)),
    )
    for _ in range(retries):
        command = " ".join(teacher.generate(prompt).strip().strip('"').split())
        if command:
            return command
    raise BackendError(f"teacher produced no command after {retries} attempts")


def check_novelty(
    command: str,
    embedding: np.ndarray,
    seen: Sequence[tuple[str, np.ndarray]],
    kind: PromptKind,
    threshold: float,
) -> bool:
    """Novelty gate for synthesized queries.

    Explanation commands are always novel (the same question means something
    different in a different state); action commands are novel iff their
    maximum similarity against every seen command stays below the threshold.
    """
    if kind is PromptKind.EXPLANATION:
        return True
    for text, other in seen:
        if command == text or cosine_similarity(embedding, other) >= threshold:
            return False
    return True


def run_student(
    student: GenerationBackend,
    device: DeviceModel,
    command: str,
    kind: PromptKind,
    rng: random.Random,
) -> StudentTrial:
    """Pose a command to the student from the conventional starting state.

    Action commands run from the device's off state (sensors drawn fresh);
    explanation commands run against a new random snapshot.
    """
    if kind is PromptKind.ACTION:
        snapshot = random_snapshot(device, rng, state=bootstrap_origin_state(device))
        _, sensors = split_snapshot(snapshot, device.template(snapshot.state))
        prompt = render_action_prompt(command, sensors)
    else:
        snapshot = random_snapshot(device, rng)
        prompt = render_explanation_prompt(command, snapshot, device.template(snapshot.state))
    raw = student.generate(prompt.text)
    return StudentTrial(output=parse_output(raw, kind), snapshot=snapshot)


def _parse_judge_reply(reply: str) -> JudgeVerdict | None:
    text = reply.strip()
    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        try:
            doc = json.loads(text[start : end + 1])
            if isinstance(doc, dict) and isinstance(doc.get("label"), bool):
                return JudgeVerdict(label=doc["label"], rationale=str(doc.get("rationale", "")))
        except json.JSONDecodeError:
            pass
    lowered = text.lower()
    if lowered in ("true", "false"):
        return JudgeVerdict(label=lowered == "true")
    return None


def judge(
    teacher: GenerationBackend,
    device: DeviceModel,
    command: str,
    student_output: ModelOutput,
) -> JudgeVerdict:
    """Binary verdict on a student response.

    Responses that fail to parse, or whose action fails validation against
    the state model, are false without consuming a teacher call. Anything
    the judge returns that is not strictly true/false counts as false.
    """
    if not student_output.ok:
        return JudgeVerdict(False, f"parse-failure: {student_output.failure.value}")
    if student_output.kind is PromptKind.ACTION:
        assert student_output.action is not None
        verdict = validate_action(device, bootstrap_origin_state(device), student_output.action)
        if not verdict:
            return JudgeVerdict(False, f"state-model violation: {verdict.reason.value}: {verdict.key}")
    prompt = JUDGE_TEMPLATE.format(
        device=device.device_name,
        capabilities=json.dumps(model_capabilities(device)),
        command=command,
        response=student_output.raw,
    )
    parsed = _parse_judge_reply(teacher.generate(prompt))
    if parsed is None:
        logger.warning("judge-unparseable reply for command %r; treating as false", command)
        return JudgeVerdict(False, "judge-unparseable")
    return parsed


def synthesize_correction(
    teacher: GenerationBackend,
    device: DeviceModel,
    command: str,
    kind: PromptKind,
    context_snapshot: Snapshot,
) -> CorrectionResult:
    """Ask the teacher for the response the student should have given.

    Action corrections must parse and validate against the state model;
    failures are reported (they count toward the non-adherence rate) and
    discarded so the student is never fine-tuned on hallucinated settings.
    """
    template = CORRECTION_ACTION_TEMPLATE if kind is PromptKind.ACTION else CORRECTION_EXPLANATION_TEMPLATE
    prompt = template.format(
        device=device.device_name,
        capabilities=json.dumps(model_capabilities(device)),
        snapshot=json.dumps({"state": context_snapshot.state, **context_snapshot.values}),
        command=command,
    )
    output = parse_output(teacher.generate(prompt), kind)
    if not output.ok:
        return CorrectionResult(None, f"parse-failure: {output.failure.value}")
    if kind is PromptKind.ACTION:
        assert output.action is not None
        verdict = validate_action(device, context_snapshot.state, output.action)
        if not verdict:
            return CorrectionResult(None, f"state-model violation: {verdict.reason.value}: {verdict.key}")
        return CorrectionResult(render_action_instance(device, command, context_snapshot, output.action))
    assert output.explanation is not None
    tup = ExplanationTuple(command=command, snapshot=context_snapshot, explanation=output.explanation)
    return CorrectionResult(render_explanation_instance(device, tup))


def _run_trainer_hook(
    trainer_hook: str | Sequence[str] | None,
    student: GenerationBackend,
    batch_path: Path,
) -> str | None:
    if trainer_hook is None:
        return None
    argv = shlex.split(trainer_hook) if isinstance(trainer_hook, str) else list(trainer_hook)
    proc = subprocess.run([*argv, str(batch_path)], capture_output=True, text=True)
    if proc.returncode != 0:
        raise TrainerHookError(
            f"trainer hook exited {proc.returncode} for {batch_path} (stderr: {proc.stderr.strip()!r})"
        )
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    checkpoint = lines[-1].strip() if lines else None
    if checkpoint:
        student.set_checkpoint(checkpoint)
    return checkpoint


def _write_batch(out_dir: Path, index: int, instances: Sequence[TrainingInstance]) -> Path:
    path = out_dir / f"batch_{index:03d}.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json_dict()) + "\n")
    return path


def run_distillation(
    student: GenerationBackend,
    teacher: GenerationBackend,
    device: DeviceModel,
    config: DistillationConfig,
    train_instances: Sequence[TrainingInstance],
    holdout_instances: Sequence[TrainingInstance],
    out_dir: str | Path,
    trainer_hook: str | Sequence[str] | None = None,
    seed: int = 0,
) -> DistillationReport:
    """Run the full distillation loop until a termination condition fires.

    `train_instances` and `holdout_instances` come from the bootstrap phase;
    both seed the novelty history, and hold-out commands additionally get an
    exact-string block (for explanation commands too, which skip the
    similarity gate) so they can never leak into a batch file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    state = LoopState(rate_window=config.rate_window)
    for inst in list(train_instances) + list(holdout_instances):
        if inst.kind is PromptKind.ACTION:
            state.seen_commands.append((inst.command, teacher.embed(inst.command)))
    state.holdout_commands = {inst.command for inst in holdout_instances}

    batch_files: list[Path] = []
    checkpoints: list[str] = []
    termination: str | None = None
    kind_cycle = [PromptKind.ACTION, PromptKind.EXPLANATION]
    slot = 0

    def flush(final: bool) -> None:
        pairs = min(len(state.pending[PromptKind.ACTION]), len(state.pending[PromptKind.EXPLANATION]))
        take = pairs if final else config.batch_size // 2
        if final and pairs == 0:
            return
        batch: list[TrainingInstance] = []
        for _ in range(take):
            batch.append(state.pending[PromptKind.ACTION].popleft())
            batch.append(state.pending[PromptKind.EXPLANATION].popleft())
        path = _write_batch(out, len(batch_files), batch)
        batch_files.append(path)
        checkpoint = _run_trainer_hook(trainer_hook, student, path)
        if checkpoint:
            checkpoints.append(checkpoint)

    per_round: list[dict] = []
    while termination is None:
        kind = kind_cycle[slot % 2]
        state.round += 1
        record: dict = {"round": state.round, "kind": kind.value}
        per_round.append(record)

        command = synthesize_query(teacher, device, kind, retries=config.query_retries)
        record["command"] = command
        embedding = teacher.embed(command)
        held_out = command in state.holdout_commands
        novel = not held_out and check_novelty(
            command, embedding, state.seen_commands, kind, config.novelty_threshold
        )
        record["novel"] = novel
        if not novel:
            state.consecutive_non_novel += 1
            if state.consecutive_non_novel >= config.novelty_starvation_limit:
                termination = TERMINATE_NOVELTY_STARVATION
            continue
        if kind is PromptKind.ACTION:
            state.seen_commands.append((command, embedding))
        state.consecutive_non_novel = 0
        slot += 1

        trial = run_student(student, device, command, kind, rng)
        verdict = judge(teacher, device, command, trial.output)
        state.correctness.append(verdict.label)
        record["correct"] = verdict.label
        record["rationale"] = verdict.rationale
        record["correct_rate"] = state.correct_rate
        record["nonadherence_rate"] = state.nonadherence_rate
        if len(state.correctness) == config.rate_window and state.correct_rate > config.correct_rate_stop:
            flush(final=True)
            termination = TERMINATE_CORRECT_RATE
            continue
        if verdict.label:
            continue

        correction = synthesize_correction(teacher, device, command, kind, trial.snapshot)
        state.nonadherence.append(not correction.adheres)
        record["correction_adheres"] = correction.adheres
        record["nonadherence_rate"] = state.nonadherence_rate
        if not correction.adheres:
            record["correction_failure"] = correction.failure
            logger.warning("discarding non-adherent correction for %r (%s)", command, correction.failure)
        else:
            state.pending[kind].append(correction.instance)
            if all(len(q) >= config.batch_size // 2 for q in state.pending.values()):
                flush(final=False)
        if len(state.nonadherence) == config.rate_window and state.nonadherence_rate > config.nonadherence_stop:
            termination = TERMINATE_NON_ADHERENCE

    report = DistillationReport(
        rounds=state.round,
        termination_reason=termination,
        final_correct_rate=state.correct_rate,
        final_nonadherence_rate=state.nonadherence_rate,
        batch_files=[str(p) for p in batch_files],
        checkpoints=checkpoints,
        unflushed={kind.value: len(q) for kind, q in state.pending.items()},
        per_round=per_round,
    )
    with (out / "report.json").open("w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
    return report


def holdout_batch_intersection(
    batch_files: Sequence[str | Path], holdout_instances: Sequence[TrainingInstance]
) -> set[str]:
    """Exact-string audit: commands appearing in both a batch file and the
    hold-out set. Must be empty."""
    holdout = {inst.command for inst in holdout_instances}
    leaked: set[str] = set()
    for path in batch_files:
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    command = json.loads(line)["command"]
                    if command in holdout:
                        leaked.add(command)
    return leaked
