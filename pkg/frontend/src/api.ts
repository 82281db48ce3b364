/** Thin typed client over the render service HTTP API. */

import { KelvinTable } from "./kelvin.js";

export interface LightInfo {
  index: number;
  name: string;
  kelvin: number;
  default_scale: number[];
  current: number[];
}

export interface SessionInfo {
  id: string;
  kind: "stack" | "cloud";
  num_slots: number;
  lights: LightInfo[];
}

export class LuxmixApi {
  constructor(private base: string = "") {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      throw new Error(`${init?.method ?? "GET"} ${path}: ${response.status} `
        + (await response.text()));
    }
    return (await response.json()) as T;
  }

  createSession(kind: string, path: string, id?: string): Promise<SessionInfo> {
    return this.json<SessionInfo>("/sessions", {
      method: "POST",
      body: JSON.stringify({ kind, path, id }),
    });
  }

  lights(sessionId: string): Promise<{ lights: LightInfo[] }> {
    return this.json(`/sessions/${sessionId}/lights`);
  }

  kelvinTable(): Promise<KelvinTable> {
    return this.json("/kelvin-table");
  }

  async patchWeights(sessionId: string, weights: number[][]): Promise<void> {
    await this.json(`/sessions/${sessionId}/weights`, {
      method: "PATCH",
      body: JSON.stringify({ weights }),
    });
  }

  /** PATCH the weights, then POST a render; resolves to displayable bytes. */
  async render(sessionId: string, weights: number[][],
               camera: Record<string, number> | null): Promise<Blob> {
    await this.patchWeights(sessionId, weights);
    const body: Record<string, unknown> = {};
    if (camera !== null) {
      body.camera = camera;
    }
    const response = await fetch(`${this.base}/sessions/${sessionId}/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new Error(`render failed: ${response.status} ${await response.text()}`);
    }
    return response.blob();
  }

  async original(sessionId: string): Promise<Blob> {
    const response = await fetch(`${this.base}/sessions/${sessionId}/original`);
    if (!response.ok) {
      throw new Error(`original failed: ${response.status}`);
    }
    return response.blob();
  }
}
