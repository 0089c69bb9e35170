"""Acceptance suite: every release criterion, each printing one PASS/FAIL line.

Run with `pytest -s -v tests/test_acceptance.py` to see the lines as they
print. All criteria run against scripted backends; nothing here needs a GPU
or network access.
"""

import functools
import json
import random
import time

import pytest

from devicetalk.backends import FixtureEntry, GenerationBackend, MockBackend
from devicetalk.distill import DistillationConfig, holdout_batch_intersection, run_distillation
from devicetalk.metrics import jaccard_actions, rouge_scores, run_latency_harness
from devicetalk.runtime import Outcome, boot_instance, handle_command
from devicetalk.snapshots import GenerationConfig, choose_state, generate_set, state_distribution
from devicetalk.statemodel import (
    Action,
    Reason,
    Snapshot,
    builtin_device,
    validate_action,
    validate_snapshot,
)
from devicetalk.synthesis import SynthesisConfig, build_bootstrap_dataset
from devicetalk.wire import PromptKind, parse_output, serialize_action

DEVICES = {name: builtin_device(name) for name in ("lamp", "thermostat")}


def criterion(name):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE FAIL: {name}")
                raise
            print(f"\nACCEPTANCE PASS: {name}")

        return wrapper

    return decorate


def _mutate(snap, tpl, rng):
    """One structural mutation and the reason code it must produce."""
    values = dict(snap.values)
    modes = ["add"] + (["drop", "range"] if values else [])
    mode = rng.choice(modes)
    if mode == "drop":
        values.pop(rng.choice(sorted(values)))
        return Snapshot(snap.state, values), Reason.MISSING_KEY
    if mode == "add":
        values["zz_unknown_field"] = 0
        return Snapshot(snap.state, values), Reason.EXTRA_KEY
    name = rng.choice(sorted(values))
    declared = tpl.range_of(name)
    values[name] = rng.choice([declared.min - 1, declared.max + 1])
    return Snapshot(snap.state, values), Reason.OUT_OF_RANGE


@criterion("state-model soundness: 10k generated snapshots valid, 10k mutations rejected, per device, < 10 s")
def test_state_model_soundness():
    start = time.perf_counter()
    for name, device in DEVICES.items():
        snapshots = generate_set(GenerationConfig(count=10_000, seed=101, device=device))
        assert all(validate_snapshot(device, s).ok for s in snapshots), name
        rng = random.Random(202)
        for snap in snapshots:
            mutated, expected = _mutate(snap, device.template(snap.state), rng)
            verdict = validate_snapshot(device, mutated)
            assert not verdict.ok
            assert verdict.reason is expected, (name, mutated, verdict)
    assert time.perf_counter() - start < 10.0


@criterion("generation balance: 100k draws within ±1 pp of normalized template weights, < 30 s")
def test_generation_balance():
    start = time.perf_counter()
    expectations = {
        "lamp": {"on": 5 / 6, "off": 1 / 6},
        "thermostat": {"heat": 0.3, "cool": 0.3, "fan": 0.2, "off": 0.2},
    }
    for name, device in DEVICES.items():
        assert state_distribution(device) == pytest.approx(expectations[name])
        rng = random.Random(303)
        counts = {state: 0 for state in device.states}
        for _ in range(100_000):
            counts[choose_state(device, rng)] += 1
        for state, expected in expectations[name].items():
            assert abs(counts[state] / 100_000 - expected) < 0.01, (name, state)
    assert time.perf_counter() - start < 30.0


@criterion("wire-format round-trip: 1000 actions round-trip exactly; 1M random strings never crash, < 60 s")
def test_wire_round_trip_and_fuzz():
    start = time.perf_counter()
    rng = random.Random(404)
    for _ in range(1000):
        device = DEVICES[rng.choice(("lamp", "thermostat"))]
        state = rng.choice(device.states)
        tpl = device.template(state)
        names = [n for n in tpl.settings if rng.random() < 0.8]
        action = Action(state, {n: rng.randint(tpl.settings[n].min, tpl.settings[n].max) for n in names})
        out = parse_output(f"[SETTINGS]{serialize_action(action)}[/SETTINGS]", PromptKind.ACTION)
        assert out.parsed == action

    buf = rng.randbytes(4_000_000)
    tags = ("[SETTINGS]", "[/SETTINGS]", "[EXPLANATION]", "[/EXPLANATION]")
    for i in range(1_000_000):
        pos = (i * 37) % (len(buf) - 64)
        raw = buf[pos : pos + (i % 48)].decode("latin-1")
        if i % 10 == 0:
            raw = tags[i % 4] + raw + tags[(i + 1) % 4]
        result = parse_output(raw, PromptKind.ACTION if i & 1 else PromptKind.EXPLANATION)
        assert result is not None
    assert time.perf_counter() - start < 60.0


class AdversarialBackend(GenerationBackend):
    """Emits valid, malformed, sensor-mutating, and garbage outputs."""

    def __init__(self, device, seed):
        super().__init__()
        self.device = device
        self.rng = random.Random(seed)

    def generate(self, prompt):
        rng = self.rng
        roll = rng.random()
        if roll < 0.15:  # well-formed valid action
            state = rng.choice(self.device.states)
            tpl = self.device.template(state)
            settings = {n: rng.randint(r.min, r.max) for n, r in tpl.settings.items() if rng.random() < 0.8}
            return f"[SETTINGS]{serialize_action(Action(state, settings))}[/SETTINGS]"
        if roll < 0.3:  # sensor mutation attempt
            sensors = sorted(self.device.sensor_universe) or ["room_temperature"]
            payload = {"state": rng.choice(self.device.states), rng.choice(sensors): rng.randint(-100, 500)}
            return f"[SETTINGS]{json.dumps(payload)}[/SETTINGS]"
        if roll < 0.45:  # out-of-range / unknown settings
            payload = {"state": rng.choice(self.device.states + ("limbo",)), "zz": rng.randint(-9, 9),
                       "brightness": rng.randint(101, 9000)}
            return f"[SETTINGS]{json.dumps(payload)}[/SETTINGS]"
        if roll < 0.6:  # truncated json
            return '[SETTINGS]{"state": "on", "brightness": '
        if roll < 0.7:
            return "[SETTINGS][/SETTINGS]"
        return self.rng.randbytes(self.rng.randint(0, 60)).decode("latin-1")


@criterion("runtime safety: 10k adversarial commands never corrupt state; rejections freeze state")
def test_runtime_safety_fuzz():
    for name, device in DEVICES.items():
        instance = boot_instance(device)
        backend = AdversarialBackend(device, seed=505)
        for i in range(5000):
            event = handle_command(instance, f"fuzz {i}", PromptKind.ACTION, backend)
            assert validate_snapshot(device, instance.current).ok, (name, i)
            if event.outcome in (Outcome.REJECTED_INVALID, Outcome.REJECTED_PARSE):
                assert event.before == event.after
            else:
                assert event.outcome is Outcome.APPLIED
                assert event.after == instance.current
        assert len(instance.event_log) == 5000


class AcceptanceStudent(GenerationBackend):
    def __init__(self, wrong_calls):
        super().__init__()
        self.calls = 0
        self.wrong_calls = wrong_calls

    def generate(self, prompt):
        self.calls += 1
        if self.wrong_calls(self.calls):
            return "no delimiters to be found here"
        if prompt.endswith("[EXPLANATION]"):
            return "[EXPLANATION]all steady[/EXPLANATION]"
        return '[SETTINGS]{"state": "off"}[/SETTINGS]'


class AcceptanceTeacher(GenerationBackend):
    def __init__(self, query_fn=None, correction_fn=None):
        super().__init__()
        self.queries = 0
        self.corrections = 0
        self.query_fn = query_fn
        self.correction_fn = correction_fn

    def generate(self, prompt):
        if prompt.startswith("Synthesize one new user command"):
            self.queries += 1
            if self.query_fn:
                return self.query_fn(self.queries)
            return f"fresh ask aa{self.queries} bb{self.queries}"
        if prompt.startswith("Judge the device response"):
            return '{"label": true}'
        if prompt.startswith("Provide the correct response"):
            self.corrections += 1
            if self.correction_fn:
                return self.correction_fn(self.corrections, prompt)
            if "explanation wrapped" in prompt:
                return f"[EXPLANATION]corrected take {self.corrections}[/EXPLANATION]"
            return '[SETTINGS]{"state": "off"}[/SETTINGS]'
        raise AssertionError("unexpected prompt")


@criterion("distillation: 90%-correct student halts via the 80% correct-rate rule, < 5 s")
def test_distillation_correct_rate_stop(tmp_path):
    start = time.perf_counter()
    config = DistillationConfig(rate_window=10, batch_size=4, novelty_starvation_limit=10)
    student = AcceptanceStudent(lambda n: n == 4)  # exactly 1 wrong per 10-round window
    report = run_distillation(student, AcceptanceTeacher(), DEVICES["lamp"], config, [], [], out_dir=tmp_path)
    assert report.termination_reason == "correct-rate"
    assert report.final_correct_rate == pytest.approx(0.9)
    assert time.perf_counter() - start < 5.0


@criterion("distillation: 95% non-adherent teacher corrections halt via the 90% rule, < 5 s")
def test_distillation_nonadherence_stop(tmp_path):
    start = time.perf_counter()
    config = DistillationConfig(rate_window=20, batch_size=64, novelty_starvation_limit=60)

    def corrections(n, prompt):
        if n % 20 == 0:
            if "explanation wrapped" in prompt:
                return "[EXPLANATION]ok[/EXPLANATION]"
            return '[SETTINGS]{"state": "off"}[/SETTINGS]'
        return '[SETTINGS]{"state": "on", "brightness": 77777}[/SETTINGS]'

    student = AcceptanceStudent(lambda n: True)
    teacher = AcceptanceTeacher(correction_fn=corrections)
    report = run_distillation(student, teacher, DEVICES["lamp"], config, [], [], out_dir=tmp_path)
    assert report.termination_reason == "non-adherence"
    assert report.final_nonadherence_rate == pytest.approx(0.95)
    assert time.perf_counter() - start < 5.0


@criterion("distillation: adversarial corrections never reach a batch file invalid; batches stay balanced, < 5 s")
def test_distillation_adherence_gate_and_balance(tmp_path):
    start = time.perf_counter()
    config = DistillationConfig(
        rate_window=500, batch_size=4, novelty_starvation_limit=5, nonadherence_stop=0.99
    )
    bad = [
        '[SETTINGS]{"state": "on", "brightness": 101, "r": 0, "g": 0, "b": 0}[/SETTINGS]',
        '[SETTINGS]{"state": "on", "sequence": ["rainbow"]}[/SETTINGS]',
        '[SETTINGS]{"state": "limbo"}[/SETTINGS]',
        "free-form prose with no tags",
        '[SETTINGS]{"state": "on", "brightness": ',
    ]

    def corrections(n, prompt):
        # alternation gives action corrections odd n and explanation corrections even n
        if "explanation wrapped" in prompt:
            return f"[EXPLANATION]fine {n}[/EXPLANATION]" if n % 4 == 0 else "no tags in this one"
        if n % 3 == 0:
            return f'[SETTINGS]{{"state": "on", "brightness": {n % 101}, "r": 1, "g": 2, "b": 3}}[/SETTINGS]'
        return bad[n % len(bad)]

    def queries(n):
        if n > 60:
            return "the well ran dry"
        return f"fresh ask aa{n} bb{n}"

    student = AcceptanceStudent(lambda n: True)
    teacher = AcceptanceTeacher(query_fn=queries, correction_fn=corrections)
    report = run_distillation(student, teacher, DEVICES["lamp"], config, [], [], out_dir=tmp_path)
    assert report.batch_files, "expected at least one flushed batch"
    for path in report.batch_files:
        lines = [json.loads(l) for l in open(path, encoding="utf-8")]
        kinds = [l["kind"] for l in lines]
        assert kinds.count("action") == kinds.count("explanation")
        for line in lines:
            if line["kind"] == "action":
                out = parse_output("[SETTINGS]" + line["completion"], PromptKind.ACTION)
                assert out.ok
                assert validate_action(DEVICES["lamp"], line["snapshot"]["state"], out.action).ok
    assert time.perf_counter() - start < 5.0


@criterion("distillation: batch_size=4 fixture flushes one batch of 2 actions + 2 explanations, < 5 s")
def test_distillation_batch_fixture(tmp_path):
    start = time.perf_counter()
    config = DistillationConfig(rate_window=500, batch_size=4, novelty_starvation_limit=3)

    def queries(n):
        return f"fresh ask aa{n} bb{n}" if n <= 4 else "rerun forever"

    student = AcceptanceStudent(lambda n: True)
    teacher = AcceptanceTeacher(query_fn=queries)
    report = run_distillation(student, teacher, DEVICES["lamp"], config, [], [], out_dir=tmp_path)
    assert len(report.batch_files) == 1
    lines = [json.loads(l) for l in open(report.batch_files[0], encoding="utf-8")]
    assert len(lines) == 4
    kinds = [l["kind"] for l in lines]
    assert kinds.count("action") == kinds.count("explanation") == 2
    assert time.perf_counter() - start < 5.0


class BootstrapTeacher(GenerationBackend):
    """Unique commands and one Q/A per field, deterministically."""

    def __init__(self):
        super().__init__()
        self.n = 0

    def generate(self, prompt):
        if "JSON array" in prompt:
            return json.dumps([{"field": "state", "question": f"q{self.n} what now?", "answer": f"a{self.n} steady."}])
        self.n += 1
        return f"please vv{self.n} ww{self.n}"


@criterion("bootstrap dataset: 200 snapshots -> exactly 400 instances; seeded split -> 50+50 hold-out")
def test_bootstrap_dataset_shape():
    lamp = DEVICES["lamp"]
    snapshots = generate_set(GenerationConfig(count=200, seed=42, device=lamp))
    first = build_bootstrap_dataset(lamp, snapshots, BootstrapTeacher(), SynthesisConfig(seed=7))
    again = build_bootstrap_dataset(lamp, snapshots, BootstrapTeacher(), SynthesisConfig(seed=7))
    assert len(first.all_instances) == 400
    assert len(first.test) == 100
    kinds = [inst.kind for inst in first.test]
    assert kinds.count(PromptKind.ACTION) == kinds.count(PromptKind.EXPLANATION) == 50
    assert first.train == again.train and first.test == again.test


@criterion("hold-out hygiene: batch commands never intersect the 100-command hold-out set")
def test_holdout_hygiene(tmp_path):
    lamp = DEVICES["lamp"]
    snapshots = generate_set(GenerationConfig(count=200, seed=42, device=lamp))
    bundle = build_bootstrap_dataset(lamp, snapshots, BootstrapTeacher(), SynthesisConfig(seed=7))
    holdout_commands = [inst.command for inst in bundle.test]

    def queries(n):
        if n > 40:
            return "nothing new under the sun"
        if n % 2:
            return holdout_commands[n % len(holdout_commands)]  # verbatim hold-out resurfacing
        return f"brand new zz{n} kk{n}"

    config = DistillationConfig(rate_window=500, batch_size=2, novelty_starvation_limit=4)
    student = AcceptanceStudent(lambda n: True)
    teacher = AcceptanceTeacher(query_fn=queries)
    report = run_distillation(
        student, teacher, lamp, config, bundle.train, bundle.test, out_dir=tmp_path
    )
    assert report.batch_files, "audit needs at least one batch file"
    assert holdout_batch_intersection(report.batch_files, bundle.test) == set()


@criterion("metric correctness: jaccard exact, hand-derived rouge1, rouge1 >= rouge2 on 10k pairs, rougeL identity")
def test_metric_correctness():
    a, b, c = Action("on", {"x": 1}), Action("on", {"x": 2}), Action("on", {"x": 3})
    assert jaccard_actions([a, b], [b, c]) == 1 / 3

    assert rouge_scores("the lamp is off", "lamp is on").rouge1 == pytest.approx(0.5714, abs=1e-4)

    words = ["lamp", "light", "bright", "dim", "warm", "cool", "state", "color", "red", "blue",
             "now", "set", "room", "turn", "the", "is", "very", "too", "please", "off"]
    rng = random.Random(20260809)
    for _ in range(10_000):
        cand = " ".join(rng.choices(words, k=rng.randint(0, 12)))
        ref = " ".join(rng.choices(words, k=rng.randint(0, 12)))
        scores = rouge_scores(cand, ref)
        assert scores.rouge1 >= scores.rouge2 - 1e-12
        identical = cand.split() == ref.split() and cand.split()
        assert (scores.rougeL == 1.0) == bool(identical)


@criterion("latency harness: 100 ms mock delay, 10-token outputs -> ~100 tokens/s and per-kind means within ±10 ms")
def test_latency_harness_sanity():
    ten_tokens = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10"
    backend = MockBackend([FixtureEntry(response=ten_tokens, delay_ms=100)], loop=True)
    commands = [("change something", PromptKind.ACTION), ("describe yourself", PromptKind.EXPLANATION)]
    report = run_latency_harness(DEVICES["lamp"], backend, commands, repetitions=5)
    assert report.tokens_per_second == pytest.approx(100.0, rel=0.10)
    for kind in ("action", "explanation"):
        assert report.per_kind[kind].mean_ms == pytest.approx(100.0, abs=10.0)
