// Payload shapes of the device service HTTP API.

export type ValueRangeDoc = { min: number; max: number };

export type TemplateDoc = {
  settings: Record<string, ValueRangeDoc>;
  sensors: Record<string, ValueRangeDoc>;
};

export type DeviceModelDoc = {
  device_name: string;
  states: string[];
  transitions: [string, string][];
  templates: Record<string, TemplateDoc>;
  defaults: Record<string, number>;
};

export type SnapshotDoc = {
  state: string;
  values: Record<string, number>;
};

export type CommandKind = "action" | "explanation";

export type Outcome = "applied" | "explained" | "rejected-invalid" | "rejected-parse";

export type CommandEventDoc = {
  seq: number;
  timestamp: number;
  command: string;
  kind: CommandKind;
  raw_output: string;
  outcome: Outcome;
  latency_ms: number;
  before: SnapshotDoc;
  after: SnapshotDoc;
  explanation: string | null;
  detail: string | null;
  error: string | null;
};

export type EventsPage = {
  total: number;
  offset: number;
  events: CommandEventDoc[];
};

export type PushMessage =
  | { type: "state"; snapshot: SnapshotDoc }
  | { type: "event"; event: CommandEventDoc };

export type ConnectionStatus = "connecting" | "live" | "stale";
