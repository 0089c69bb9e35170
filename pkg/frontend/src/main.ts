// DOM wiring for the device console. All rendering reads from the store;
// the only write path to the device is POST /command via the send box.

import { DeviceClient } from "./client";
import { ConsoleStore } from "./store";
import { isLampLike, isThermostatLike, swatchCss } from "./swatch";
import type { CommandKind, DeviceModelDoc, SnapshotDoc } from "./types";

function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get("api");
  return (param ?? window.location.origin).replace(/\/$/, "");
}

function renderPanel(model: DeviceModelDoc | null, snapshot: SnapshotDoc | null): string {
  if (!model || !snapshot) {
    return `<div class="panel">connecting…</div>`;
  }
  if (isLampLike(model)) {
    const label = snapshot.state === "on" ? `on · ${snapshot.values.brightness ?? "?"}%` : snapshot.state;
    return `
      <div class="panel lamp">
        <div class="swatch" style="background-color: ${swatchCss(snapshot)}"></div>
        <div class="state-label">${escapeHtml(label)}</div>
      </div>`;
  }
  if (isThermostatLike(model)) {
    const setpoint = snapshot.values.setpoint;
    const room = snapshot.values.room_temperature;
    return `
      <div class="panel thermostat">
        <div class="mode mode-${escapeHtml(snapshot.state)}">${escapeHtml(snapshot.state)}</div>
        <div class="dial">${setpoint !== undefined ? `set to ${setpoint}°` : "no setpoint"}</div>
        <div class="room">${room !== undefined ? `room ${room}°` : ""}</div>
      </div>`;
  }
  const rows = Object.entries(snapshot.values)
    .map(([name, value]) => `<tr><td>${escapeHtml(name)}</td><td>${value}</td></tr>`)
    .join("");
  return `
    <div class="panel generic">
      <div class="state-label">${escapeHtml(snapshot.state)}</div>
      <table>${rows}</table>
    </div>`;
}

function renderFeed(store: ConsoleStore): string {
  return store.feed
    .map((entry) => {
      if (entry.role === "user") {
        const tag = entry.kind === "explanation" ? "?" : "!";
        return `<li class="user"><span class="kind-tag">${tag}</span>${escapeHtml(entry.text)}</li>`;
      }
      if (entry.role === "device") {
        return `<li class="device">${escapeHtml(entry.text)}</li>`;
      }
      return `<li class="notice">${escapeHtml(entry.text)}</li>`;
    })
    .join("");
}

function main(): void {
  const app = document.querySelector<HTMLDivElement>("#app");
  if (!app) return;

  const client = new DeviceClient(apiBase());
  const store = new ConsoleStore();
  let kind: CommandKind = "action";

  app.innerHTML = `
    <header>
      <h1 id="device-name">device console</h1>
      <span id="connection" class="badge"></span>
    </header>
    <div id="stale-banner" hidden>connection lost; showing last known state…</div>
    <div id="panel"></div>
    <ul id="feed"></ul>
    <form id="command-form">
      <button type="button" id="kind-toggle" title="toggle action/explanation (Alt+E)"></button>
      <input id="command-input" autocomplete="off" placeholder="tell the device something…" />
      <button type="submit" id="send">send</button>
    </form>`;

  const nameEl = app.querySelector<HTMLElement>("#device-name")!;
  const connectionEl = app.querySelector<HTMLElement>("#connection")!;
  const staleBanner = app.querySelector<HTMLElement>("#stale-banner")!;
  const panelEl = app.querySelector<HTMLElement>("#panel")!;
  const feedEl = app.querySelector<HTMLElement>("#feed")!;
  const form = app.querySelector<HTMLFormElement>("#command-form")!;
  const input = app.querySelector<HTMLInputElement>("#command-input")!;
  const toggle = app.querySelector<HTMLButtonElement>("#kind-toggle")!;
  const send = app.querySelector<HTMLButtonElement>("#send")!;

  const renderToggle = () => {
    toggle.textContent = kind === "action" ? "act !" : "ask ?";
    toggle.className = kind;
  };

  const render = () => {
    if (store.model) nameEl.textContent = store.model.device_name;
    connectionEl.textContent = store.connection;
    connectionEl.className = `badge ${store.connection}`;
    staleBanner.hidden = store.connection !== "stale";
    panelEl.innerHTML = renderPanel(store.model, store.snapshot);
    feedEl.innerHTML = renderFeed(store);
    feedEl.scrollTop = feedEl.scrollHeight;
    input.disabled = store.pending; // one in-flight command at a time
    send.disabled = store.pending;
  };
  store.onChange(render);

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const text = input.value.trim();
    if (!text || store.pending) return;
    store.setPending(true);
    input.value = "";
    client
      .sendCommand(text, kind)
      .then((result) => store.applyEvent(result.event))
      .catch(() => {
        store.feed.push({ role: "notice", seq: Number.MAX_SAFE_INTEGER, text: "request failed; device unreachable" });
      })
      .finally(() => store.setPending(false));
  });

  const flipKind = () => {
    kind = kind === "action" ? "explanation" : "action";
    renderToggle();
  };
  toggle.addEventListener("click", flipKind);
  document.addEventListener("keydown", (ev) => {
    if (ev.altKey && ev.key.toLowerCase() === "e") {
      ev.preventDefault();
      flipKind();
    }
  });

  renderToggle();
  render();

  client.getModel().then((model) => store.setModel(model));
  client.subscribe({
    onMessage: (message) => store.applyPush(message),
    onStatus: (status) => store.setConnection(status),
  });
}

main();
