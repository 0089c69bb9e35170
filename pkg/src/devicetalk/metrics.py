"""Evaluation metrics: judged setting-level accuracy, action-set Jaccard
similarity, ROUGE-1/2/L, and a runtime latency harness.

Tokenization for ROUGE is lowercase, split on non-alphanumerics, no
stemming or stopword removal. Token throughput uses whitespace tokens as a
tokenizer-neutral proxy. Confidence intervals are normal-approximation
binomial at 90%.
"""

from __future__ import annotations

import json
import logging
import random
import re
import statistics
import time
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import psutil

from devicetalk.backends import BackendError, GenerationBackend
from devicetalk.runtime import boot_instance, handle_command
from devicetalk.snapshots import random_snapshot
from devicetalk.statemodel import Action, DeviceModel, Snapshot, split_snapshot, validate_action
from devicetalk.synthesis import TrainingInstance, bootstrap_origin_state, model_capabilities
from devicetalk.wire import ModelOutput, PromptKind, parse_output, render_action_prompt, render_explanation_prompt

logger = logging.getLogger("devicetalk.metrics")

Z_90 = statistics.NormalDist().inv_cdf(0.95)

_WORD_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class RougeScores:
    rouge1: float
    rouge2: float
    rougeL: float


@dataclass(frozen=True)
class SimilarityReport:
    jaccard: float
    rouge1: float
    rouge2: float
    rougeL: float

    def to_json_dict(self) -> dict:
        return {"jaccard": self.jaccard, "rouge1": self.rouge1, "rouge2": self.rouge2, "rougeL": self.rougeL}


def jaccard_actions(generated: Iterable[Action], training: Iterable[Action]) -> float:
    """Intersection-over-union of exact-match action sets.

    Off-state actions are excluded (an off action has only one possible
    form, so counting it would inflate apparent memorization). Two empty
    sets yield 0 with a warning.
    """
    gen = {a.key() for a in generated if a.state != "off"}
    ref = {a.key() for a in training if a.state != "off"}
    if not gen and not ref:
        warnings.warn("jaccard_actions: both sets empty after excluding off states; defining as 0")
        return 0.0
    return len(gen & ref) / len(gen | ref)


def _ngram_f1(cand: Sequence[str], ref: Sequence[str], n: int) -> float:
    if len(cand) < n or len(ref) < n:
        return 0.0
    cand_counts = Counter(tuple(cand[i : i + n]) for i in range(len(cand) - n + 1))
    ref_counts = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
    overlap = sum((cand_counts & ref_counts).values())
    precision = overlap / sum(cand_counts.values())
    recall = overlap / sum(ref_counts.values())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(prev[j], row[-1]))
        prev = row
    return prev[-1]


def rouge_scores(candidate: str, reference: str) -> RougeScores:
    """ROUGE-1/2 (n-gram overlap F1) and ROUGE-L (LCS F1)."""
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return RougeScores(0.0, 0.0, 0.0)
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        rouge_l = 0.0
    else:
        precision = lcs / len(cand)
        recall = lcs / len(ref)
        rouge_l = 2 * precision * recall / (precision + recall)
    return RougeScores(
        rouge1=_ngram_f1(cand, ref, 1),
        rouge2=_ngram_f1(cand, ref, 2),
        rougeL=rouge_l,
    )


@dataclass(frozen=True)
class Trial:
    """One evaluation trial: the command, its context, and the model output."""

    command: str
    kind: PromptKind
    snapshot: Snapshot | None
    output: ModelOutput


@dataclass(frozen=True)
class FieldStat:
    correct: int
    total: int

    @property
    def fraction(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def ci_halfwidth(self) -> float:
        if not self.total:
            return 0.0
        p = self.fraction
        return Z_90 * (p * (1 - p) / self.total) ** 0.5

    def to_json_dict(self) -> dict:
        return {
            "correct": self.correct,
            "total": self.total,
            "fraction": self.fraction,
            "ci90_halfwidth": self.ci_halfwidth,
        }


@dataclass
class AccuracyReport:
    n_trials: int
    unjudged: int
    overall: FieldStat
    per_kind: dict[str, FieldStat]
    per_field: dict[str, FieldStat]

    def to_json_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "unjudged": self.unjudged,
            "overall": self.overall.to_json_dict(),
            "per_kind": {k: v.to_json_dict() for k, v in self.per_kind.items()},
            "per_field": {k: v.to_json_dict() for k, v in self.per_field.items()},
        }


EVAL_JUDGE_TEMPLATE = """\
Label the device response below.
A {device} with these capabilities:
{capabilities}
{context_block}received this user command:
{command}
and responded:
{response}
Decide whether the response is appropriate for the command. Reply with JSON: \
{{"label": true}} if it is, or {{"label": false, "incorrect_fields": ["..."]}} naming \
every state field (including "state") that was set or explained incorrectly."""


def _parse_eval_judge(reply: str) -> tuple[bool, list[str]] | None:
    text = reply.strip()
    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        try:
            doc = json.loads(text[start : end + 1])
        except json.JSONDecodeError:
            return None
        if isinstance(doc, dict) and isinstance(doc.get("label"), bool):
            fields = doc.get("incorrect_fields", [])
            if isinstance(fields, list):
                return doc["label"], [str(f) for f in fields]
    return None


def _relevant_fields(device: DeviceModel, trial: Trial) -> tuple[set[str], set[str]]:
    """(relevant fields, fields actually present in the response context)."""
    if trial.kind is PromptKind.ACTION:
        if trial.output.ok and trial.output.action is not None and trial.output.action.state in device.templates:
            tpl = device.templates[trial.output.action.state]
            relevant = {"state"} | set(tpl.settings)
            present = {"state"} | set(trial.output.action.settings)
        else:
            relevant = {"state"} | device.setting_universe
            present = set()
        return relevant, present
    assert trial.snapshot is not None
    tpl = device.template(trial.snapshot.state)
    relevant = {"state"} | set(tpl.settings) | set(tpl.sensors)
    return relevant, relevant


def setting_accuracy(trials: Sequence[Trial], judge: GenerationBackend, device: DeviceModel) -> AccuracyReport:
    """Judge every trial and aggregate correctness per field.

    Locally-invalid or unparseable actions are marked incorrect without a
    judge call. Fields relevant to a trial but omitted from the response
    count as incorrect for that field. Judge transport failures leave the
    trial unjudged and out of every denominator.
    """
    if not trials:
        raise ValueError("need at least one trial")
    overall = Counter()
    per_kind: dict[str, Counter] = {kind.value: Counter() for kind in PromptKind}
    per_field: dict[str, Counter] = {}
    unjudged = 0

    for trial in trials:
        local_reject = not trial.output.ok
        if not local_reject and trial.kind is PromptKind.ACTION:
            origin = trial.snapshot.state if trial.snapshot else bootstrap_origin_state(device)
            local_reject = not validate_action(device, origin, trial.output.action).ok
        if local_reject:
            label, incorrect_fields = False, None  # None: every field is wrong
        else:
            context_block = ""
            if trial.snapshot is not None:
                context = {"state": trial.snapshot.state, **trial.snapshot.values}
                context_block = f"currently in state {json.dumps(context)}, "
            prompt = EVAL_JUDGE_TEMPLATE.format(
                device=device.device_name,
                capabilities=json.dumps(model_capabilities(device)),
                context_block=context_block,
                command=trial.command,
                response=trial.output.raw,
            )
            try:
                parsed = _parse_eval_judge(judge.generate(prompt))
            except BackendError:
                unjudged += 1
                continue
            if parsed is None:
                logger.warning("unparseable judge reply for %r; counting as incorrect", trial.command)
                label, incorrect_fields = False, None
            else:
                label, incorrect_fields = parsed

        overall[label] += 1
        per_kind[trial.kind.value][label] += 1
        relevant, present = _relevant_fields(device, trial)
        for name in relevant:
            stat = per_field.setdefault(name, Counter())
            if name not in present:
                field_ok = False  # omitted-but-relevant counts against the field
            elif incorrect_fields is None:
                field_ok = label
            else:
                field_ok = name not in incorrect_fields if not label else True
            stat[field_ok] += 1

    judged = sum(overall.values())
    return AccuracyReport(
        n_trials=len(trials),
        unjudged=unjudged,
        overall=FieldStat(overall[True], judged),
        per_kind={k: FieldStat(c[True], sum(c.values())) for k, c in per_kind.items()},
        per_field={k: FieldStat(c[True], sum(c.values())) for k, c in sorted(per_field.items())},
    )


@dataclass
class KindLatency:
    count: int
    mean_ms: float
    min_ms: float
    max_ms: float

    def to_json_dict(self) -> dict:
        return {"count": self.count, "mean_ms": self.mean_ms, "min_ms": self.min_ms, "max_ms": self.max_ms}


@dataclass
class LatencyReport:
    tokens_per_second: float
    per_kind: dict[str, KindLatency]
    rss_bytes: int
    commands_run: int
    incomplete: bool = False

    def to_json_dict(self) -> dict:
        return {
            "tokens_per_second": self.tokens_per_second,
            "per_kind": {k: v.to_json_dict() for k, v in self.per_kind.items()},
            "rss_bytes": self.rss_bytes,
            "commands_run": self.commands_run,
            "incomplete": self.incomplete,
        }


def run_latency_harness(
    device: DeviceModel,
    backend: GenerationBackend,
    commands: Sequence[tuple[str, PromptKind]],
    repetitions: int = 1,
) -> LatencyReport:
    """Replay kind-tagged commands sequentially and time each response.

    Throughput divides whitespace tokens produced by total response time.
    A backend outage mid-run flags the report incomplete and returns the
    measurements collected so far.
    """
    if not commands:
        raise ValueError("need at least one command")
    instance = boot_instance(device)
    latencies: dict[str, list[float]] = {kind.value: [] for kind in PromptKind}
    total_tokens = 0
    total_seconds = 0.0
    incomplete = False
    commands_run = 0
    for _ in range(repetitions):
        if incomplete:
            break
        for text, kind in commands:
            start = time.perf_counter()
            event = handle_command(instance, text, kind, backend)
            elapsed = time.perf_counter() - start
            if event.error is not None:
                incomplete = True
                break
            commands_run += 1
            latencies[kind.value].append(elapsed * 1000.0)
            total_tokens += len(event.raw_output.split())
            total_seconds += elapsed
    per_kind = {
        name: KindLatency(
            count=len(vals),
            mean_ms=statistics.fmean(vals) if vals else 0.0,
            min_ms=min(vals) if vals else 0.0,
            max_ms=max(vals) if vals else 0.0,
        )
        for name, vals in latencies.items()
    }
    tokens_per_second = total_tokens / total_seconds if total_seconds > 0 else 0.0
    return LatencyReport(
        tokens_per_second=tokens_per_second,
        per_kind=per_kind,
        rss_bytes=psutil.Process().memory_info().rss,
        commands_run=commands_run,
        incomplete=incomplete,
    )


def actions_from_instances(device: DeviceModel, instances: Iterable[TrainingInstance]) -> list[Action]:
    """Recover the target actions from stored action-kind training instances."""
    actions = []
    for inst in instances:
        if inst.kind is not PromptKind.ACTION:
            continue
        output = parse_output("[SETTINGS]" + inst.completion, PromptKind.ACTION)
        if output.ok:
            actions.append(output.action)
    return actions


def explanations_from_instances(instances: Iterable[TrainingInstance]) -> list[str]:
    out = []
    for inst in instances:
        if inst.kind is PromptKind.EXPLANATION:
            output = parse_output("[EXPLANATION]" + inst.completion, PromptKind.EXPLANATION)
            if output.ok:
                out.append(output.explanation)
    return out


def similarity_report(
    generated_actions: Iterable[Action],
    training_actions: Iterable[Action],
    generated_explanations: Sequence[str],
    training_explanations: Sequence[str],
) -> SimilarityReport:
    """Training-set similarity: action Jaccard plus best-match mean ROUGE.

    Each generated explanation is scored against its most similar training
    explanation (max per metric), then averaged; lower means the model is
    producing text it was not trained on.
    """
    jac = jaccard_actions(generated_actions, training_actions)
    if not generated_explanations or not training_explanations:
        return SimilarityReport(jac, 0.0, 0.0, 0.0)
    sums = [0.0, 0.0, 0.0]
    for cand in generated_explanations:
        best = [0.0, 0.0, 0.0]
        for ref in training_explanations:
            scores = rouge_scores(cand, ref)
            best[0] = max(best[0], scores.rouge1)
            best[1] = max(best[1], scores.rouge2)
            best[2] = max(best[2], scores.rougeL)
        for i in range(3):
            sums[i] += best[i]
    n = len(generated_explanations)
    return SimilarityReport(jac, sums[0] / n, sums[1] / n, sums[2] / n)


def evaluate_testset(
    device: DeviceModel,
    test_instances: Sequence[TrainingInstance],
    student: GenerationBackend,
    judge: GenerationBackend,
    seed: int = 0,
    train_instances: Sequence[TrainingInstance] | None = None,
) -> dict:
    """Replay hold-out commands against the student and judge the results.

    Action commands start from the device's off state; explanation commands
    get a seeded random snapshot, so repeated evaluations explain the same
    states. Returns the versioned report document.
    """
    if not test_instances:
        raise ValueError("test set is empty")
    rng = random.Random(seed)
    trials: list[Trial] = []
    for inst in test_instances:
        if inst.kind is PromptKind.ACTION:
            context = random_snapshot(device, rng, state=bootstrap_origin_state(device))
            _, sensors = split_snapshot(context, device.template(context.state))
            prompt = render_action_prompt(inst.command, sensors)
        else:
            context = random_snapshot(device, rng)
            prompt = render_explanation_prompt(inst.command, context, device.template(context.state))
        raw = student.generate(prompt.text)
        trials.append(Trial(inst.command, inst.kind, context, parse_output(raw, inst.kind)))

    accuracy = setting_accuracy(trials, judge, device)
    report: dict = {
        "schema_version": 1,
        "device": device.device_name,
        "n_test_instances": len(test_instances),
        "accuracy": accuracy.to_json_dict(),
    }
    if train_instances is not None:
        generated_actions = [
            t.output.action for t in trials if t.kind is PromptKind.ACTION and t.output.ok
        ]
        generated_explanations = [
            t.output.explanation for t in trials if t.kind is PromptKind.EXPLANATION and t.output.ok
        ]
        similarity = similarity_report(
            generated_actions,
            actions_from_instances(device, train_instances),
            generated_explanations,
            explanations_from_instances(train_instances),
        )
        report["similarity"] = similarity.to_json_dict()
    return report
