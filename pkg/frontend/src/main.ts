/** Interactive lighting blend explorer: wires the controls to the render API. */

import { LuxmixApi, SessionInfo } from "./api.js";
import { originalClipInset } from "./compare.js";
import { KelvinTable, snapKelvin, tableStep } from "./kelvin.js";
import { applyDrag, applyZoom, cameraPayload } from "./orbit.js";
import { RenderScheduler } from "./scheduler.js";
import {
  CompareMode,
  LightControl,
  ViewerState,
  allWeights,
  identityControls,
} from "./state.js";

interface RenderJob {
  weights: number[][];
  camera: Record<string, number> | null;
}

const api = new LuxmixApi("");
let table: KelvinTable | null = null;
let state: ViewerState | null = null;
let scheduler: RenderScheduler<RenderJob, Blob> | null = null;
let toggled = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function banner(message: string | null): void {
  const bar = el<HTMLDivElement>("banner");
  bar.textContent = message ?? "";
  bar.style.display = message ? "block" : "none";
}

function currentJob(): RenderJob {
  if (!state) throw new Error("no session");
  return {
    weights: allWeights(state, table),
    camera: state.kind === "cloud"
      ? cameraPayload(state.orbit, 512, 512)
      : null,
  };
}

function requestRender(immediate = false): void {
  if (!scheduler) return;
  if (immediate) {
    scheduler.updateNow(currentJob());
  } else {
    scheduler.update(currentJob());
  }
}

function displayBlob(blob: Blob): void {
  const img = el<HTMLImageElement>("remix-view");
  const url = URL.createObjectURL(blob);
  const previous = img.src;
  img.src = url;
  if (previous.startsWith("blob:")) {
    URL.revokeObjectURL(previous);
  }
  banner(null);
}

function buildControlRow(control: LightControl): HTMLElement {
  const row = document.createElement("div");
  row.className = "control-row";

  const title = document.createElement("label");
  title.textContent = control.name;
  row.appendChild(title);

  const enabled = document.createElement("input");
  enabled.type = "checkbox";
  enabled.checked = control.enabled;
  enabled.title = "light on/off";
  enabled.addEventListener("change", () => {
    control.enabled = enabled.checked;
    requestRender();
  });
  row.appendChild(enabled);

  const intensity = document.createElement("input");
  intensity.type = "range";
  intensity.min = "0";
  intensity.max = "4";
  intensity.step = "0.01";
  intensity.value = String(control.intensity);
  intensity.title = "intensity";
  intensity.addEventListener("input", () => {
    control.intensity = parseFloat(intensity.value);
    requestRender();
  });
  row.appendChild(intensity);

  const kelvin = document.createElement("input");
  kelvin.type = "range";
  kelvin.min = "1800";
  kelvin.max = "10000";
  kelvin.step = table ? String(tableStep(table)) : "50";
  kelvin.value = String(control.kelvin);
  kelvin.title = "color temperature (K)";
  kelvin.addEventListener("input", () => {
    control.kelvin = table
      ? snapKelvin(table, parseFloat(kelvin.value))
      : parseFloat(kelvin.value);
    requestRender();
  });
  row.appendChild(kelvin);
  return row;
}

function buildControls(): void {
  if (!state) return;
  const panel = el<HTMLDivElement>("controls");
  panel.textContent = "";
  for (const control of state.controls) {
    panel.appendChild(buildControlRow(control));
  }
}

function wireCompare(): void {
  const mode = el<HTMLSelectElement>("compare-mode");
  const divider = el<HTMLInputElement>("divider");
  const originalView = el<HTMLImageElement>("original-view");

  const applyCompare = () => {
    if (!state) return;
    state.compareMode = mode.value as CompareMode;
    state.divider = parseFloat(divider.value);
    divider.style.display = state.compareMode === "split" ? "inline-block" : "none";
    if (state.compareMode === "off") {
      originalView.style.display = "none";
    } else if (state.compareMode === "split") {
      originalView.style.display = "block";
      originalView.style.clipPath = originalClipInset(state.divider);
    } else {
      originalView.style.display = toggled ? "block" : "none";
      originalView.style.clipPath = "none";
    }
  };
  mode.addEventListener("change", applyCompare);
  divider.addEventListener("input", applyCompare);
  document.addEventListener("keydown", (event) => {
    if (event.key === "t" && state?.compareMode === "toggle") {
      toggled = !toggled;
      applyCompare();
    }
  });
  applyCompare();
}

function wireOrbit(): void {
  const img = el<HTMLImageElement>("remix-view");
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  img.addEventListener("pointerdown", (event) => {
    if (state?.kind !== "cloud") return;
    dragging = true;
    lastX = event.clientX;
    lastY = event.clientY;
    img.setPointerCapture(event.pointerId);
  });
  img.addEventListener("pointermove", (event) => {
    if (!dragging || !state) return;
    state.orbit = applyDrag(state.orbit, event.clientX - lastX, event.clientY - lastY);
    lastX = event.clientX;
    lastY = event.clientY;
    requestRender();
  });
  img.addEventListener("pointerup", () => {
    dragging = false;
  });
  img.addEventListener("wheel", (event) => {
    if (state?.kind !== "cloud") return;
    event.preventDefault();
    state.orbit = applyZoom(state.orbit, event.deltaY > 0 ? 1.1 : 0.9);
    requestRender();
  });
}

async function loadOriginal(sessionId: string): Promise<void> {
  const blob = await api.original(sessionId);
  el<HTMLImageElement>("original-view").src = URL.createObjectURL(blob);
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const path = params.get("path");
  const kind = (params.get("kind") ?? "stack") as "stack" | "cloud";
  const existing = params.get("session");
  if (!path && !existing) {
    banner("open with ?path=/abs/path/to/stack.json&kind=stack "
      + "or ?session=<id> for an already-loaded session");
    return;
  }
  try {
    table = await api.kelvinTable();
    let info: SessionInfo;
    if (existing) {
      const lights = await api.lights(existing);
      info = { id: existing, kind, num_slots: lights.lights.length,
               lights: lights.lights };
    } else {
      info = await api.createSession(kind, path as string);
    }
    state = {
      sessionId: info.id,
      kind: info.kind ?? kind,
      controls: identityControls(info.lights),
      orbit: { azimuth: 0, elevation: 0, radius: null },
      compareMode: "off",
      divider: 0.5,
    };
    scheduler = new RenderScheduler<RenderJob, Blob>(
      {
        send: (job) => api.render(state!.sessionId, job.weights, job.camera),
      },
      displayBlob,
      () => banner("connection lost; retrying on next change"),
    );
    el<HTMLSpanElement>("session-label").textContent =
      `${state.sessionId} (${state.kind})`;
    buildControls();
    wireCompare();
    wireOrbit();
    await loadOriginal(state.sessionId);
    requestRender(true);
  } catch (err) {
    banner(`failed to start: ${err}`);
  }
}

boot();
