"""Command-line entry points for the full pipeline.

Subcommands: gen-states (random snapshot sets), synthesize (teacher-labeled
bootstrap datasets), distill (student/teacher loop), run (interactive REPL
against a live device), serve (HTTP service), evaluate (hold-out replay with
judged accuracy), and latency (response-time harness).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from devicetalk.backends import load_backend
from devicetalk.distill import DistillationConfig, run_distillation
from devicetalk.metrics import evaluate_testset, run_latency_harness
from devicetalk.runtime import Outcome, SimulatedSensorSource, boot_instance, handle_command
from devicetalk.snapshots import GenerationConfig, generate_set
from devicetalk.statemodel import Snapshot, resolve_device
from devicetalk.synthesis import SynthesisConfig, build_bootstrap_dataset, load_instances
from devicetalk.wire import PromptKind


def _add_device_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--device", required=True, help="device definition file or bundled name (lamp, thermostat)")


def _sensor_source(args, model):
    if not model.sensor_universe:
        return None
    values = {}
    for pair in args.sensor or []:
        name, _, value = pair.partition("=")
        values[name] = int(value)
    return SimulatedSensorSource(
        model, mode=args.sensor_mode, values=values or None, step=args.drift_step, seed=args.sensor_seed
    )


def _add_sensor_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sensor-mode", choices=["fixed", "drift"], default="drift")
    parser.add_argument("--sensor", action="append", metavar="NAME=VALUE", help="fix a sensor's starting value")
    parser.add_argument("--drift-step", type=int, default=1)
    parser.add_argument("--sensor-seed", type=int, default=0)


def cmd_gen_states(args) -> int:
    model = resolve_device(args.device)
    snapshots = generate_set(GenerationConfig(count=args.count, seed=args.seed, device=model))
    with open(args.out, "w", encoding="utf-8") as fh:
        for snap in snapshots:
            fh.write(json.dumps(snap.to_json_dict()) + "\n")
    print(f"wrote {len(snapshots)} snapshots to {args.out}")
    return 0


def _load_snapshots(path: str) -> list[Snapshot]:
    snapshots = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                snapshots.append(Snapshot.from_json_dict(json.loads(line)))
    return snapshots


def cmd_synthesize(args) -> int:
    model = resolve_device(args.device)
    teacher = load_backend(args.teacher)
    snapshots = _load_snapshots(args.snapshots)
    config = SynthesisConfig(
        similarity_threshold=args.threshold,
        max_reprompts=args.max_reprompts,
        per_snapshot_explanations=args.explanations_per_snapshot,
        split_fraction=args.split_fraction,
        seed=args.seed,
    )
    bundle = build_bootstrap_dataset(model, snapshots, teacher, config, out_dir=args.out)
    print(f"wrote {len(bundle.train)} train / {len(bundle.test)} test instances to {args.out}")
    return 0


def cmd_distill(args) -> int:
    model = resolve_device(args.device)
    student = load_backend(args.student)
    teacher = load_backend(args.teacher)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            config = DistillationConfig(**json.load(fh))
    else:
        config = DistillationConfig()
    dataset = Path(args.dataset)
    train = load_instances(dataset / "train.jsonl")
    holdout = load_instances(dataset / "test.jsonl")
    report = run_distillation(
        student,
        teacher,
        model,
        config,
        train_instances=train,
        holdout_instances=holdout,
        out_dir=args.out,
        trainer_hook=args.trainer_hook,
        seed=args.seed,
    )
    print(
        f"distillation finished after {report.rounds} rounds ({report.termination_reason}); "
        f"{len(report.batch_files)} batch file(s) in {args.out}"
    )
    return 0


def _print_event(event) -> None:
    if event.outcome is Outcome.APPLIED:
        values = ", ".join(f"{k}={v}" for k, v in event.after.values.items())
        print(f"[{event.after.state}] {values}" if values else f"[{event.after.state}]")
    elif event.outcome is Outcome.EXPLAINED:
        print(event.explanation)
    else:
        reason = event.detail or event.error or event.outcome.value
        print(f"(device kept its state: {reason})")


def cmd_run(args) -> int:
    model = resolve_device(args.device)
    backend = load_backend(args.backend)
    instance = boot_instance(model, sensor_source=_sensor_source(args, model), error_log=args.error_log)
    print(f"{model.device_name} ready in state {instance.current.state!r}.")
    print("Type a command to act; prefix with '?' to ask for an explanation.")
    print("'/state' shows the snapshot, '/quit' exits.")
    for line in sys.stdin:
        text = line.strip()
        if not text:
            continue
        if text == "/quit":
            break
        if text == "/state":
            print(json.dumps(instance.current.to_json_dict()))
            continue
        kind = PromptKind.ACTION
        if text.startswith("?"):
            kind = PromptKind.EXPLANATION
            text = text.lstrip("?").strip()
            if not text:
                continue
        event = handle_command(instance, text, kind, backend)
        _print_event(event)
    return 0


def cmd_serve(args) -> int:
    from devicetalk.server import serve

    model = resolve_device(args.device)
    backend = load_backend(args.backend)
    instance = boot_instance(model, sensor_source=_sensor_source(args, model), error_log=args.error_log)
    print(f"serving {model.device_name} on http://{args.host}:{args.port}")
    serve(instance, backend, host=args.host, port=args.port)
    return 0


def cmd_evaluate(args) -> int:
    model = resolve_device(args.device)
    student = load_backend(args.student)
    judge = load_backend(args.judge)
    test = load_instances(args.testset)
    train = load_instances(args.trainset) if args.trainset else None
    report = evaluate_testset(model, test, student, judge, seed=args.seed, train_instances=train)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("field,fraction,ci90_halfwidth,total\n")
            for name, stat in report["accuracy"]["per_field"].items():
                fh.write(f"{name},{stat['fraction']},{stat['ci90_halfwidth']},{stat['total']}\n")
    overall = report["accuracy"]["overall"]["fraction"]
    print(f"evaluated {report['n_test_instances']} commands; overall accuracy {overall:.3f}; report at {args.out}")
    return 0


def cmd_latency(args) -> int:
    model = resolve_device(args.device)
    backend = load_backend(args.backend)
    instances = load_instances(args.testset)
    commands = [(inst.command, inst.kind) for inst in instances]
    report = run_latency_harness(model, backend, commands, repetitions=args.repetitions)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
    print(f"{report.commands_run} commands, {report.tokens_per_second:.1f} tokens/s; report at {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="devicetalk")
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-states", help="generate random valid snapshots")
    _add_device_arg(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_states)

    p = sub.add_parser("synthesize", help="build a bootstrap fine-tuning dataset")
    _add_device_arg(p)
    p.add_argument("--snapshots", required=True, help="snapshot JSONL from gen-states")
    p.add_argument("--teacher", required=True, help="teacher backend config")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.85)
    p.add_argument("--max-reprompts", type=int, default=5)
    p.add_argument("--explanations-per-snapshot", type=int, default=1)
    p.add_argument("--split-fraction", type=float, default=0.25)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("distill", help="run the student/teacher distillation loop")
    _add_device_arg(p)
    p.add_argument("--student", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--dataset", required=True, help="directory with train.jsonl and test.jsonl")
    p.add_argument("--out", required=True, help="output directory for batches and the report")
    p.add_argument("--trainer-hook", help="external command invoked with each batch file path")
    p.add_argument("--config", help="JSON file of distillation settings")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("run", help="interactive device REPL")
    _add_device_arg(p)
    p.add_argument("--backend", required=True)
    p.add_argument("--error-log")
    _add_sensor_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="host the device HTTP service")
    _add_device_arg(p)
    p.add_argument("--backend", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8720)
    p.add_argument("--error-log")
    _add_sensor_args(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("evaluate", help="judge student responses on a hold-out set")
    _add_device_arg(p)
    p.add_argument("--testset", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--judge", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trainset", help="train.jsonl for training-set similarity metrics")
    p.add_argument("--csv", help="also export per-field accuracies as CSV")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("latency", help="measure response latency and throughput")
    _add_device_arg(p)
    p.add_argument("--backend", required=True)
    p.add_argument("--testset", required=True, help="instances whose commands to replay")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_latency)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
