/**
 * Blackbody color lookup against the golden table served by the backend.
 *
 * The UI quantizes kelvin sliders to the table's knots, so a lookup is an
 * exact row fetch and the client can never drift from the server's curve.
 */

export interface KelvinTable {
  kelvin: number[];
  rgb: number[][];
}

export function tableStep(table: KelvinTable): number {
  return table.kelvin.length > 1 ? table.kelvin[1] - table.kelvin[0] : 1;
}

/** Snap an arbitrary kelvin value to the nearest table knot. */
export function snapKelvin(table: KelvinTable, kelvin: number): number {
  const lo = table.kelvin[0];
  const hi = table.kelvin[table.kelvin.length - 1];
  const clamped = Math.min(Math.max(kelvin, lo), hi);
  const step = tableStep(table);
  const idx = Math.round((clamped - lo) / step);
  return table.kelvin[Math.min(idx, table.kelvin.length - 1)];
}

/** RGB for a kelvin value; exact at knots (inputs are snapped first). */
export function kelvinToRgb(table: KelvinTable, kelvin: number): [number, number, number] {
  const snapped = snapKelvin(table, kelvin);
  const lo = table.kelvin[0];
  const idx = Math.round((snapped - lo) / tableStep(table));
  const row = table.rgb[idx];
  return [row[0], row[1], row[2]];
}
