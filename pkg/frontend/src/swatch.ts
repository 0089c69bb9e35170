// Device panel helpers: classify the device from its model document and map
// lamp-like snapshots to a display color. The brightness blend (toward
// near-black, with a visibility floor) is a display choice, not part of the
// device contract; at full brightness the swatch shows the exact RGB values.

import type { DeviceModelDoc, SnapshotDoc } from "./types";

const BRIGHTNESS_FLOOR = 0.15;

export function isLampLike(model: DeviceModelDoc): boolean {
  return Object.values(model.templates).some(
    (tpl) => "r" in tpl.settings && "g" in tpl.settings && "b" in tpl.settings,
  );
}

export function isThermostatLike(model: DeviceModelDoc): boolean {
  return Object.values(model.templates).some(
    (tpl) => "setpoint" in tpl.settings || "room_temperature" in tpl.sensors,
  );
}

export type SwatchRgb = { r: number; g: number; b: number };

/** Effective swatch color, or null when the snapshot has no color values
 * (e.g. the off state). */
export function swatchRgb(snapshot: SnapshotDoc | null): SwatchRgb | null {
  if (!snapshot) return null;
  const { r, g, b, brightness } = snapshot.values;
  if (r === undefined || g === undefined || b === undefined) return null;
  const level = brightness === undefined ? 100 : Math.min(100, Math.max(0, brightness));
  const light = BRIGHTNESS_FLOOR + (1 - BRIGHTNESS_FLOOR) * (level / 100);
  return {
    r: Math.round(r * light),
    g: Math.round(g * light),
    b: Math.round(b * light),
  };
}

export function swatchCss(snapshot: SnapshotDoc | null): string {
  const rgb = swatchRgb(snapshot);
  if (!rgb) return "#2a2a2e"; // off / unknown: unlit
  return `rgb(${rgb.r}, ${rgb.g}, ${rgb.b})`;
}
