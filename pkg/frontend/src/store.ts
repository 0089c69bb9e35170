// Console session state. Everything rendered derives from server payloads
// held here; the store never invents state of its own, and `version` only
// advances when something actually changed, so renders are idempotent.

import type {
  CommandEventDoc,
  ConnectionStatus,
  DeviceModelDoc,
  PushMessage,
  SnapshotDoc,
} from "./types";

export type FeedEntry =
  | { role: "user"; seq: number; text: string; kind: string }
  | { role: "device"; seq: number; text: string }
  | { role: "notice"; seq: number; text: string };

function snapshotsEqual(a: SnapshotDoc | null, b: SnapshotDoc | null): boolean {
  if (a === b) return true;
  if (!a || !b || a.state !== b.state) return false;
  const keys = Object.keys(a.values);
  if (keys.length !== Object.keys(b.values).length) return false;
  return keys.every((k) => a.values[k] === b.values[k]);
}

export function describeApplied(event: CommandEventDoc): string {
  const values = Object.entries(event.after.values)
    .map(([name, value]) => `${name}=${value}`)
    .join(", ");
  return values ? `→ ${event.after.state} (${values})` : `→ ${event.after.state}`;
}

export function describeRejection(event: CommandEventDoc): string {
  const reason = event.detail ?? event.error ?? event.outcome;
  return `device kept its state (${reason})`;
}

export class ConsoleStore {
  model: DeviceModelDoc | null = null;
  snapshot: SnapshotDoc | null = null;
  feed: FeedEntry[] = [];
  pending = false;
  connection: ConnectionStatus = "connecting";
  version = 0;

  private seenSeqs = new Set<number>();
  private listeners: Array<() => void> = [];

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private bump(): void {
    this.version += 1;
    for (const listener of this.listeners) listener();
  }

  setModel(model: DeviceModelDoc): void {
    this.model = model;
    this.bump();
  }

  setSnapshot(snapshot: SnapshotDoc): void {
    if (snapshotsEqual(this.snapshot, snapshot)) return;
    this.snapshot = snapshot;
    this.bump();
  }

  setPending(pending: boolean): void {
    if (this.pending === pending) return;
    this.pending = pending;
    this.bump();
  }

  setConnection(status: ConnectionStatus): void {
    if (this.connection === status) return;
    this.connection = status;
    this.bump();
  }

  applyPush(message: PushMessage): void {
    if (message.type === "state") {
      this.setSnapshot(message.snapshot);
    } else {
      this.applyEvent(message.event);
    }
  }

  /** Record one command event in the feed; duplicates (push + POST response
   * delivering the same event) are dropped by sequence number. */
  applyEvent(event: CommandEventDoc): void {
    if (this.seenSeqs.has(event.seq)) return;
    this.seenSeqs.add(event.seq);
    this.feed.push({ role: "user", seq: event.seq, text: event.command, kind: event.kind });
    if (event.outcome === "applied") {
      this.feed.push({ role: "device", seq: event.seq, text: describeApplied(event) });
    } else if (event.outcome === "explained") {
      this.feed.push({ role: "device", seq: event.seq, text: event.explanation ?? "" });
    } else {
      this.feed.push({ role: "notice", seq: event.seq, text: describeRejection(event) });
    }
    this.feed.sort((a, b) => a.seq - b.seq);
    this.bump();
  }

  /** Sequence numbers of feed entries, for audits against the server log. */
  feedEventSeqs(): number[] {
    return [...this.seenSeqs].sort((a, b) => a - b);
  }
}
