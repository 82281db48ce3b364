/** Split/toggle comparison of the remix against the original input. */

import { CompareMode } from "./state.js";

/** Pixel column where the split divider sits; clamps the fraction to [0, 1]. */
export function dividerColumn(divider: number, width: number): number {
  const frac = Math.min(Math.max(divider, 0), 1);
  return Math.round(frac * width);
}

/**
 * Which layer is visible at a pixel column.
 * Split: original occupies [0, column), remix the rest. Divider at 0 shows
 * pure remix, at 1 pure original. Toggle ignores the column entirely.
 */
export function visibleLayer(mode: CompareMode, divider: number, width: number,
                             column: number, toggled: boolean): "original" | "remix" {
  if (mode === "toggle") {
    return toggled ? "original" : "remix";
  }
  if (mode === "split") {
    return column < dividerColumn(divider, width) ? "original" : "remix";
  }
  return "remix";
}

/** CSS clip-path inset for the original overlay in split mode. */
export function originalClipInset(divider: number): string {
  const frac = Math.min(Math.max(divider, 0), 1);
  return `inset(0 ${(100 * (1 - frac)).toFixed(3)}% 0 0)`;
}
