import { describe, expect, it } from "vitest";

import { isLampLike, isThermostatLike, swatchCss, swatchRgb } from "../src/swatch";
import type { DeviceModelDoc } from "../src/types";

const lampModel: DeviceModelDoc = {
  device_name: "lamp",
  states: ["off", "on"],
  transitions: [["off", "on"], ["on", "off"]],
  templates: {
    off: { settings: {}, sensors: {} },
    on: {
      settings: {
        brightness: { min: 0, max: 100 },
        r: { min: 0, max: 255 },
        g: { min: 0, max: 255 },
        b: { min: 0, max: 255 },
      },
      sensors: {},
    },
  },
  defaults: { brightness: 100, r: 255, g: 255, b: 255 },
};

const thermostatModel: DeviceModelDoc = {
  device_name: "thermostat",
  states: ["off", "heat"],
  transitions: [["off", "heat"], ["heat", "off"]],
  templates: {
    off: { settings: {}, sensors: { room_temperature: { min: 50, max: 90 } } },
    heat: {
      settings: { setpoint: { min: 50, max: 90 } },
      sensors: { room_temperature: { min: 50, max: 90 } },
    },
  },
  defaults: { setpoint: 70 },
};

describe("device classification", () => {
  it("detects lamp-like and thermostat-like models", () => {
    expect(isLampLike(lampModel)).toBe(true);
    expect(isThermostatLike(lampModel)).toBe(false);
    expect(isLampLike(thermostatModel)).toBe(false);
    expect(isThermostatLike(thermostatModel)).toBe(true);
  });
});

describe("swatch color", () => {
  it("shows exact rgb at full brightness", () => {
    const snap = { state: "on", values: { brightness: 100, r: 235, g: 64, b: 52 } };
    expect(swatchRgb(snap)).toEqual({ r: 235, g: 64, b: 52 });
    expect(swatchCss(snap)).toBe("rgb(235, 64, 52)");
  });

  it("dims toward black with a visibility floor", () => {
    const dim = swatchRgb({ state: "on", values: { brightness: 0, r: 200, g: 100, b: 50 } });
    expect(dim).toEqual({ r: 30, g: 15, b: 8 }); // 15% floor
    const half = swatchRgb({ state: "on", values: { brightness: 50, r: 200, g: 100, b: 50 } });
    expect(half!.r).toBeGreaterThan(dim!.r);
    expect(half!.r).toBeLessThan(200);
  });

  it("renders the off state unlit", () => {
    expect(swatchRgb({ state: "off", values: {} })).toBeNull();
    expect(swatchCss({ state: "off", values: {} })).toBe("#2a2a2e");
    expect(swatchCss(null)).toBe("#2a2a2e");
  });

  it("clamps out-of-range brightness", () => {
    const over = swatchRgb({ state: "on", values: { brightness: 900, r: 100, g: 100, b: 100 } });
    expect(over).toEqual({ r: 100, g: 100, b: 100 });
  });
});
