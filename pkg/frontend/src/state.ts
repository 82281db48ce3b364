/** Viewer state: one control row per light slot, plus camera and compare mode. */

import { KelvinTable, kelvinToRgb } from "./kelvin.js";

export type ColorMode = "kelvin" | "rgb";

export interface LightControl {
  index: number;
  name: string;
  intensity: number; // slider [0, 4]
  colorMode: ColorMode;
  kelvin: number;
  rgb: [number, number, number];
  enabled: boolean;
  /** stored decomposition scale; intensity 1 reproduces it */
  defaultScale: [number, number, number];
}

export type CompareMode = "off" | "split" | "toggle";

export interface OrbitState {
  azimuth: number;
  elevation: number;
  radius: number | null;
}

export interface ViewerState {
  sessionId: string;
  kind: "stack" | "cloud";
  controls: LightControl[];
  orbit: OrbitState;
  compareMode: CompareMode;
  divider: number; // [0, 1] split position
}

/**
 * Effective RGB weight of one control row.
 *
 * Disabled rows weigh exactly zero. Intensity scales the stored
 * decomposition scale; a color choice tints relative to neutral.
 */
export function controlWeight(control: LightControl, table: KelvinTable | null):
    [number, number, number] {
  if (!control.enabled) {
    return [0, 0, 0];
  }
  let tint: [number, number, number] = [1, 1, 1];
  if (control.colorMode === "rgb") {
    tint = control.rgb;
  } else if (table !== null) {
    tint = kelvinToRgb(table, control.kelvin);
  }
  return [
    control.intensity * control.defaultScale[0] * tint[0],
    control.intensity * control.defaultScale[1] * tint[1],
    control.intensity * control.defaultScale[2] * tint[2],
  ];
}

export function allWeights(state: ViewerState, table: KelvinTable | null): number[][] {
  return state.controls.map((c) => controlWeight(c, table));
}

/** Identity configuration: every slot at intensity 1, neutral color, enabled. */
export function identityControls(lights: Array<{
  index: number; name: string; default_scale: number[];
}>): LightControl[] {
  return lights.map((l) => ({
    index: l.index,
    name: l.name,
    intensity: 1.0,
    colorMode: "kelvin" as ColorMode,
    kelvin: 6600,
    rgb: [1, 1, 1] as [number, number, number],
    enabled: true,
    defaultScale: [l.default_scale[0], l.default_scale[1], l.default_scale[2]] as
      [number, number, number],
  }));
}
