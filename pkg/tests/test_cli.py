import io
import json

import pytest

from devicetalk.cli import main
from devicetalk.statemodel import Snapshot, builtin_device, validate_snapshot


def write_jsonl(path, docs):
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc) + "\n")


def synth_teacher_fixture(path, count):
    docs = []
    for i in range(count):
        docs.append({"response": f"please aa{i} bb{i} now"})
        docs.append(
            {
                "response": json.dumps(
                    [{"field": "state", "question": f"what gives {i}?", "answer": f"it is what it is {i}"}]
                )
            }
        )
    write_jsonl(path, docs)


def test_gen_states_cli(tmp_path, lamp):
    out = tmp_path / "snaps.jsonl"
    assert main(["gen-states", "--device", "lamp", "--count", "25", "--seed", "9", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 25
    for line in lines:
        assert validate_snapshot(lamp, Snapshot.from_json_dict(json.loads(line))).ok


def test_pipeline_cli(tmp_path, capsys):
    snaps = tmp_path / "snaps.jsonl"
    main(["gen-states", "--device", "lamp", "--count", "8", "--seed", "3", "--out", str(snaps)])

    teacher_fixture = tmp_path / "teacher.jsonl"
    synth_teacher_fixture(teacher_fixture, 8)
    dataset = tmp_path / "dataset"
    assert (
        main(
            [
                "synthesize",
                "--device", "lamp",
                "--snapshots", str(snaps),
                "--teacher", str(teacher_fixture),
                "--out", str(dataset),
                "--seed", "4",
            ]
        )
        == 0
    )
    train = (dataset / "train.jsonl").read_text().splitlines()
    test = (dataset / "test.jsonl").read_text().splitlines()
    assert len(train) + len(test) == 16
    assert (dataset / "journal.jsonl").exists()

    # distillation with scripted teacher/student fixture files
    distill_teacher = tmp_path / "distill_teacher.jsonl"
    valid_action = '[SETTINGS]{"state": "on", "brightness": 20, "r": 200, "g": 120, "b": 40}[/SETTINGS]'
    write_jsonl(
        distill_teacher,
        [
            {"match": "Synthesize", "response": "make it cozy qq"},
            {"match": "new settings wrapped", "response": valid_action},
            {"match": "Synthesize", "response": "what are you doing rr"},
            {"match": "explanation wrapped", "response": "[EXPLANATION]just resting[/EXPLANATION]"},
            {"match": "Synthesize", "response": "crank it up ss"},
            {"match": "new settings wrapped", "response": valid_action},
            {"match": "Synthesize", "response": "how goes it tt"},
            {"match": "explanation wrapped", "response": "[EXPLANATION]all quiet[/EXPLANATION]"},
            {"match": "Synthesize", "response": "make it cozy qq"},
            {"match": "Synthesize", "response": "make it cozy qq"},
            {"match": "Synthesize", "response": "make it cozy qq"},
        ],
    )
    student = tmp_path / "student.jsonl"
    write_jsonl(student, [{"response": "umm"}])
    student_cfg = tmp_path / "student.json"
    student_cfg.write_text(json.dumps({"type": "mock", "fixture": str(student), "loop": True}))
    distill_cfg = tmp_path / "distill.json"
    distill_cfg.write_text(
        json.dumps({"batch_size": 2, "rate_window": 50, "novelty_starvation_limit": 3})
    )
    out_dir = tmp_path / "distill-out"
    assert (
        main(
            [
                "distill",
                "--device", "lamp",
                "--student", str(student_cfg),
                "--teacher", str(distill_teacher),
                "--dataset", str(dataset),
                "--out", str(out_dir),
                "--config", str(distill_cfg),
            ]
        )
        == 0
    )
    report = json.loads((out_dir / "report.json").read_text())
    assert report["termination_reason"] == "novelty-starvation"
    assert len(report["batch_files"]) == 2

    # evaluation with an always-valid student and always-true judge
    eval_student = tmp_path / "eval_student.jsonl"
    write_jsonl(
        eval_student,
        [
            {"match": "[EXPLANATION]", "response": "[EXPLANATION]doing fine[/EXPLANATION]"},
            {"response": '[SETTINGS]{"state": "off"}[/SETTINGS]'},
        ],
    )
    eval_student_cfg = tmp_path / "eval_student.json"
    eval_student_cfg.write_text(json.dumps({"type": "mock", "fixture": str(eval_student), "loop": True}))
    judge = tmp_path / "judge.jsonl"
    write_jsonl(judge, [{"response": '{"label": true}'}])
    judge_cfg = tmp_path / "judge.json"
    judge_cfg.write_text(json.dumps({"type": "mock", "fixture": str(judge), "loop": True}))
    report_path = tmp_path / "report.json"
    csv_path = tmp_path / "per_field.csv"
    assert (
        main(
            [
                "evaluate",
                "--device", "lamp",
                "--testset", str(dataset / "test.jsonl"),
                "--student", str(eval_student_cfg),
                "--judge", str(judge_cfg),
                "--trainset", str(dataset / "train.jsonl"),
                "--out", str(report_path),
                "--csv", str(csv_path),
            ]
        )
        == 0
    )
    eval_report = json.loads(report_path.read_text())
    assert eval_report["accuracy"]["overall"]["fraction"] == 1.0
    assert "similarity" in eval_report
    assert csv_path.read_text().startswith("field,")

    # latency harness over the same test set
    latency_out = tmp_path / "latency.json"
    assert (
        main(
            [
                "latency",
                "--device", "lamp",
                "--backend", str(eval_student_cfg),
                "--testset", str(dataset / "test.jsonl"),
                "--out", str(latency_out),
            ]
        )
        == 0
    )
    latency = json.loads(latency_out.read_text())
    assert latency["commands_run"] == len(test)


def test_repl(tmp_path, monkeypatch, capsys):
    fixture = tmp_path / "backend.jsonl"
    write_jsonl(
        fixture,
        [
            {"response": '[SETTINGS]{"state": "on", "brightness": 70, "r": 255, "g": 200, "b": 120}[/SETTINGS]'},
            {"response": "[EXPLANATION]Warm white at 70% brightness.[/EXPLANATION]"},
            {"response": "definitely not parseable"},
        ],
    )
    script = "make it warm in here\n? how bright is that\nbreak the lamp\n/state\n/quit\n"
    monkeypatch.setattr("sys.stdin", io.StringIO(script))
    assert main(["run", "--device", "lamp", "--backend", str(fixture)]) == 0
    out = capsys.readouterr().out
    assert "[on] brightness=70" in out
    assert "Warm white at 70% brightness." in out
    assert "device kept its state" in out
    assert '"state": "on"' in out


def test_bad_device_argument(tmp_path):
    with pytest.raises(Exception):
        main(["gen-states", "--device", "toaster", "--count", "1", "--out", str(tmp_path / "x.jsonl")])
