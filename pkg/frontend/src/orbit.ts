/** Spherical orbit camera around the scene centroid (cloud sessions only). */

import { OrbitState } from "./state.js";

const ELEVATION_LIMIT = (85 * Math.PI) / 180;

export function wrapAzimuth(azimuth: number): number {
  let a = azimuth;
  while (a >= Math.PI) a -= 2 * Math.PI;
  while (a < -Math.PI) a += 2 * Math.PI;
  return a;
}

export function applyDrag(state: OrbitState, dxPixels: number, dyPixels: number,
                          radiansPerPixel = 0.01): OrbitState {
  return {
    azimuth: wrapAzimuth(state.azimuth + dxPixels * radiansPerPixel),
    elevation: Math.min(
      Math.max(state.elevation + dyPixels * radiansPerPixel, -ELEVATION_LIMIT),
      ELEVATION_LIMIT,
    ),
    radius: state.radius,
  };
}

export function applyZoom(state: OrbitState, factor: number,
                          fallbackRadius = 2.0): OrbitState {
  const base = state.radius ?? fallbackRadius;
  return { ...state, radius: Math.min(Math.max(base * factor, 0.1), 50.0) };
}

export function cameraPayload(state: OrbitState, width: number, height: number) {
  const payload: Record<string, number> = {
    azimuth: state.azimuth,
    elevation: state.elevation,
    fov: 70.0,
    width,
    height,
  };
  if (state.radius !== null) {
    payload.radius = state.radius;
  }
  return payload;
}
