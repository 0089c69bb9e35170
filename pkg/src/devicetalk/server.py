"""HTTP JSON API around a device instance, with server-push state updates.

Endpoints: GET /state (current snapshot), POST /command ({"text", "kind"}
returning the resulting event; 502 when the backend is unreachable),
GET /events (paginated log), GET /model (device definition), and
GET /subscribe (server-sent events: the current snapshot on connect, then
one message per handled command and per state change). Commands are
processed strictly one at a time; reads are served concurrently.
"""

from __future__ import annotations

import json
import queue
import threading

import uvicorn
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from devicetalk.backends import GenerationBackend
from devicetalk.runtime import DeviceInstance, Outcome, handle_command
from devicetalk.wire import PromptKind

SSE_KEEPALIVE_S = 15.0


class CommandRequest(BaseModel):
    text: str
    kind: str


class PushHub:
    """Fan-out of JSON messages to all connected subscribers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, message: dict) -> None:
        with self._lock:
            for q in self._subscribers:
                q.put_nowait(message)


def create_app(instance: DeviceInstance, backend: GenerationBackend) -> FastAPI:
    app = FastAPI(title=f"devicetalk: {instance.model.device_name}")
    hub = PushHub()
    app.state.instance = instance
    app.state.hub = hub

    @app.get("/state")
    def get_state() -> dict:
        return instance.current.to_json_dict()

    @app.get("/model")
    def get_model() -> dict:
        return instance.model.to_config()

    @app.get("/events")
    def get_events(offset: int = Query(0, ge=0), limit: int = Query(50, ge=1, le=500)) -> dict:
        events = instance.event_log[offset : offset + limit]
        return {"total": len(instance.event_log), "offset": offset, "events": [e.to_json_dict() for e in events]}

    @app.post("/command")
    def post_command(request: CommandRequest) -> JSONResponse:
        text = request.text.strip()
        if not text:
            raise HTTPException(status_code=400, detail="command text must be nonempty")
        try:
            kind = PromptKind(request.kind)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"kind must be one of {[k.value for k in PromptKind]}")
        event = handle_command(instance, text, kind, backend)
        hub.publish({"type": "event", "event": event.to_json_dict()})
        if event.outcome is Outcome.APPLIED:
            hub.publish({"type": "state", "snapshot": event.after.to_json_dict()})
        status = 502 if event.error is not None else 200
        return JSONResponse(status_code=status, content=event.to_json_dict())

    @app.get("/subscribe")
    def subscribe() -> StreamingResponse:
        def stream():
            q = hub.subscribe()
            try:
                yield _sse({"type": "state", "snapshot": instance.current.to_json_dict()})
                while True:
                    try:
                        message = q.get(timeout=SSE_KEEPALIVE_S)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    yield _sse(message)
            finally:
                hub.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _sse(message: dict) -> str:
    return f"data: {json.dumps(message)}\n\n"


def serve(
    instance: DeviceInstance,
    backend: GenerationBackend,
    host: str = "127.0.0.1",
    port: int = 8720,
) -> None:
    """Run the service until interrupted."""
    uvicorn.run(create_app(instance, backend), host=host, port=port, log_level="warning")
