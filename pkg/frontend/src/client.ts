// HTTP + server-sent-events client for the device service.
//
// The push subscription is implemented over fetch streaming rather than
// EventSource so the same code runs in the browser and under Node-based
// tests. It reconnects with exponential backoff and reports live/stale
// transitions to the caller.

import type {
  CommandEventDoc,
  CommandKind,
  ConnectionStatus,
  DeviceModelDoc,
  EventsPage,
  PushMessage,
  SnapshotDoc,
} from "./types";

export type CommandResult = {
  ok: boolean;
  status: number;
  event: CommandEventDoc;
};

export type SubscribeHandlers = {
  onMessage: (message: PushMessage) => void;
  onStatus?: (status: Exclude<ConnectionStatus, "connecting">) => void;
};

const INITIAL_BACKOFF_MS = 500;
const MAX_BACKOFF_MS = 5000;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class DeviceClient {
  constructor(private readonly baseUrl: string) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) {
      throw new Error(`GET ${path} failed: ${res.status}`);
    }
    return (await res.json()) as T;
  }

  getModel(): Promise<DeviceModelDoc> {
    return this.getJson("/model");
  }

  getState(): Promise<SnapshotDoc> {
    return this.getJson("/state");
  }

  getEvents(offset = 0, limit = 50): Promise<EventsPage> {
    return this.getJson(`/events?offset=${offset}&limit=${limit}`);
  }

  async sendCommand(text: string, kind: CommandKind): Promise<CommandResult> {
    const res = await fetch(this.baseUrl + "/command", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, kind }),
    });
    const body = await res.json();
    if (!res.ok && res.status !== 502) {
      throw new Error(`POST /command failed: ${res.status} ${JSON.stringify(body)}`);
    }
    // 502 still carries the rejection event; the device kept its state
    return { ok: res.ok, status: res.status, event: body as CommandEventDoc };
  }

  /** Start the push subscription; returns a function that stops it. */
  subscribe(handlers: SubscribeHandlers): () => void {
    let stopped = false;
    let controller: AbortController | null = null;

    const pump = async () => {
      let backoff = INITIAL_BACKOFF_MS;
      while (!stopped) {
        controller = new AbortController();
        try {
          const res = await fetch(this.baseUrl + "/subscribe", {
            signal: controller.signal,
            headers: { Accept: "text/event-stream" },
          });
          if (!res.ok || !res.body) {
            throw new Error(`subscribe failed: ${res.status}`);
          }
          handlers.onStatus?.("live");
          backoff = INITIAL_BACKOFF_MS;
          const reader = res.body.getReader();
          const decoder = new TextDecoder();
          let buffer = "";
          for (;;) {
            const { done, value } = await reader.read();
            if (done) break;
            buffer += decoder.decode(value, { stream: true });
            let boundary;
            while ((boundary = buffer.indexOf("\n\n")) >= 0) {
              const frame = buffer.slice(0, boundary);
              buffer = buffer.slice(boundary + 2);
              for (const line of frame.split("\n")) {
                if (line.startsWith("data: ")) {
                  handlers.onMessage(JSON.parse(line.slice("data: ".length)) as PushMessage);
                }
              }
            }
          }
        } catch {
          // connection errors fall through to the retry path below
        }
        if (stopped) break;
        handlers.onStatus?.("stale");
        await sleep(backoff);
        backoff = Math.min(backoff * 2, MAX_BACKOFF_MS);
      }
    };

    void pump();
    return () => {
      stopped = true;
      controller?.abort();
    };
  }
}
