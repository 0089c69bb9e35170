#!/usr/bin/env python3
"""Serve the bundled lamp with a keyword-scripted backend for console demos.

Writes a looping mock fixture whose entries match on command keywords (red,
blue, warm, dim, off, bright, ...) so the web console has something lively
to talk to without a real model. Usage:

    python3 scripts/serve_lamp_demo.py [port]
"""

import json
import sys
import tempfile
from pathlib import Path

from devicetalk.backends import MockBackend
from devicetalk.runtime import boot_instance
from devicetalk.server import serve
from devicetalk.statemodel import builtin_device

RESPONSES = [
    {"match": "red", "response": '[SETTINGS]{"state": "on", "brightness": 100, "r": 235, "g": 64, "b": 52}[/SETTINGS]'},
    {"match": "blue", "response": '[SETTINGS]{"state": "on", "brightness": 80, "r": 40, "g": 90, "b": 235}[/SETTINGS]'},
    {"match": "warm", "response": '[SETTINGS]{"state": "on", "brightness": 70, "r": 255, "g": 190, "b": 120}[/SETTINGS]'},
    {"match": "welcoming", "response": '[SETTINGS]{"state": "on", "brightness": 75, "r": 255, "g": 200, "b": 140}[/SETTINGS]'},
    {"match": "dim", "response": '[SETTINGS]{"state": "on", "brightness": 15, "r": 255, "g": 220, "b": 180}[/SETTINGS]'},
    {"match": "bright as it gets", "response": "[EXPLANATION]Not quite; I can go brighter than this.[/EXPLANATION]"},
    {"match": "bright", "response": '[SETTINGS]{"state": "on", "brightness": 100, "r": 255, "g": 255, "b": 255}[/SETTINGS]'},
    {"match": "off", "response": '[SETTINGS]{"state": "off"}[/SETTINGS]'},
    {"match": "bed", "response": '[SETTINGS]{"state": "off"}[/SETTINGS]'},
    {"match": "dark", "response": "[EXPLANATION]It's dark because the lamp is off.[/EXPLANATION]"},
    {"match": "color", "response": "[EXPLANATION]My color is whatever my r, g, and b values say it is right now.[/EXPLANATION]"},
    {"match": "broken", "response": '[SETTINGS]{"state": "on", "warp_core": 9}[/SETTINGS]'},
    {"response": "[EXPLANATION]I'm a demo lamp; try asking for red, blue, warm, dim, bright, or off.[/EXPLANATION]"},
]


def main() -> int:
    port = int(sys.argv[1]) if len(sys.argv) > 1 else 8720
    fixture = Path(tempfile.mkdtemp(prefix="devicetalk-demo-")) / "lamp_fixture.jsonl"
    fixture.write_text("\n".join(json.dumps(entry) for entry in RESPONSES) + "\n")
    lamp = builtin_device("lamp")
    instance = boot_instance(lamp)
    backend = MockBackend.from_fixture(str(fixture), loop=True)
    print(f"lamp demo on http://127.0.0.1:{port}  (fixture: {fixture})")
    print("say 'make it broken' to watch an invalid action get rejected")
    serve(instance, backend, host="127.0.0.1", port=port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
