#!/usr/bin/env python3
"""End-to-end pipeline demo with scripted backends, no network or GPU.

Generates random lamp snapshots, synthesizes a bootstrap dataset from a
deterministic stand-in teacher, runs a short distillation loop against a
deliberately flaky student, and evaluates the hold-out split. Artifacts land
in ./demo-out (or the directory given as the first argument).
"""

import json
import shutil
import sys
from pathlib import Path

from devicetalk.backends import GenerationBackend
from devicetalk.distill import DistillationConfig, run_distillation
from devicetalk.metrics import evaluate_testset
from devicetalk.snapshots import GenerationConfig, generate_set
from devicetalk.statemodel import builtin_device
from devicetalk.synthesis import SynthesisConfig, build_bootstrap_dataset


class DemoTeacher(GenerationBackend):
    """Covers every teacher role: labeling, queries, judging, corrections."""

    def __init__(self):
        super().__init__()
        self.n = 0

    def generate(self, prompt):
        if "JSON array" in prompt:
            state = prompt.split("Its current state is:\n")[1].split("\n")[0]
            return json.dumps(
                [{"field": "state", "question": f"what's happening? ({self.n})", "answer": f"currently {state}"}]
            )
        if prompt.startswith(("Judge the device response", "Label the device response")):
            return '{"label": true}'
        if prompt.startswith("Provide the correct response"):
            if "explanation wrapped" in prompt:
                return "[EXPLANATION]Here is what the device is doing.[/EXPLANATION]"
            return '[SETTINGS]{"state": "off"}[/SETTINGS]'
        self.n += 1
        if prompt.startswith("Synthesize one new user command"):
            return f"could you try thing {self.n} variant{self.n}"
        return f"demo command number {self.n} token{self.n}"


class DemoStudent(GenerationBackend):
    """Answers correctly except on two early calls."""

    def __init__(self):
        super().__init__()
        self.calls = 0

    def generate(self, prompt):
        self.calls += 1
        if self.calls in (3, 4):
            return "oops, plain prose"
        if prompt.endswith("[EXPLANATION]"):
            return "[EXPLANATION]Everything looks normal to me.[/EXPLANATION]"
        return '[SETTINGS]{"state": "on", "brightness": 65, "r": 255, "g": 180, "b": 110}[/SETTINGS]'


def main() -> int:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    lamp = builtin_device("lamp")

    snapshots = generate_set(GenerationConfig(count=40, seed=1, device=lamp))
    print(f"generated {len(snapshots)} snapshots")

    bundle = build_bootstrap_dataset(
        lamp, snapshots, DemoTeacher(), SynthesisConfig(seed=1), out_dir=out / "dataset"
    )
    print(f"bootstrap dataset: {len(bundle.train)} train / {len(bundle.test)} hold-out instances")

    config = DistillationConfig(rate_window=10, batch_size=2, novelty_starvation_limit=10)
    report = run_distillation(
        DemoStudent(), DemoTeacher(), lamp, config, bundle.train, bundle.test, out_dir=out / "distill"
    )
    print(
        f"distillation: {report.rounds} rounds, stopped via {report.termination_reason}, "
        f"{len(report.batch_files)} batch file(s)"
    )

    eval_report = evaluate_testset(
        lamp, bundle.test, DemoStudent(), DemoTeacher(), seed=3, train_instances=bundle.train
    )
    with (out / "evaluation.json").open("w") as fh:
        json.dump(eval_report, fh, indent=2)
    acc = eval_report["accuracy"]["overall"]["fraction"]
    sim = eval_report["similarity"]
    print(f"evaluation: overall accuracy {acc:.2f}, jaccard {sim['jaccard']:.2f}, rouge1 {sim['rouge1']:.2f}")
    print(f"artifacts in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
