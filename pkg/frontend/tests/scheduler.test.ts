import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { RenderScheduler, RenderTransport } from "../src/scheduler.js";

interface Probe {
  sent: Array<{ state: number; counter: number }>;
  resolvers: Map<number, (value: string) => void>;
}

function makeTransport(probe: Probe, auto = true): RenderTransport<number, string> {
  return {
    send(state: number, counter: number): Promise<string> {
      probe.sent.push({ state, counter });
      if (auto) {
        return Promise.resolve(`render-${state}`);
      }
      return new Promise((resolve) => probe.resolvers.set(counter, resolve));
    },
  };
}

describe("RenderScheduler", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("emits at most one request per 50 ms window under rapid updates", async () => {
    const probe: Probe = { sent: [], resolvers: new Map() };
    const displayed: string[] = [];
    const scheduler = new RenderScheduler<number, string>(
      makeTransport(probe), (r) => displayed.push(r));

    // 20 events/s for 5 s => one update every 50 ms, 100 updates total
    for (let i = 0; i < 100; i++) {
      scheduler.update(i);
      await vi.advanceTimersByTimeAsync(50);
    }
    const elapsedWindows = (100 * 50) / 50;
    expect(probe.sent.length).toBeLessThanOrEqual(elapsedWindows);
    expect(probe.sent.length).toBeGreaterThan(0);
  });

  it("final displayed frame corresponds to the final state", async () => {
    const probe: Probe = { sent: [], resolvers: new Map() };
    const displayed: string[] = [];
    const scheduler = new RenderScheduler<number, string>(
      makeTransport(probe), (r) => displayed.push(r));

    for (let i = 0; i < 100; i++) {
      scheduler.update(i);
      await vi.advanceTimersByTimeAsync(13); // irregular rapid drag
    }
    await vi.advanceTimersByTimeAsync(200); // settle
    expect(displayed.length).toBeGreaterThan(0);
    expect(displayed[displayed.length - 1]).toBe("render-99");
  });

  it("drops stale responses by counter", async () => {
    const probe: Probe = { sent: [], resolvers: new Map() };
    const displayed: string[] = [];
    const scheduler = new RenderScheduler<number, string>(
      makeTransport(probe, false), (r) => displayed.push(r));

    scheduler.update(1);
    await vi.advanceTimersByTimeAsync(60);
    scheduler.update(2);
    await vi.advanceTimersByTimeAsync(60);
    expect(probe.sent.map((s) => s.counter)).toEqual([1, 2]);

    // resolve out of order: newest first, then the stale one
    probe.resolvers.get(2)!("render-2");
    await vi.advanceTimersByTimeAsync(0);
    probe.resolvers.get(1)!("render-1");
    await vi.advanceTimersByTimeAsync(0);

    expect(displayed).toEqual(["render-2"]);
    expect(scheduler.lastDisplayedCounter).toBe(2);
  });

  it("coalesces a burst inside one window into a single send of the last state", async () => {
    const probe: Probe = { sent: [], resolvers: new Map() };
    const scheduler = new RenderScheduler<number, string>(
      makeTransport(probe), () => undefined);
    scheduler.update(1);
    scheduler.update(2);
    scheduler.update(3);
    await vi.advanceTimersByTimeAsync(50);
    expect(probe.sent).toEqual([{ state: 3, counter: 1 }]);
  });

  it("reports transport failures through the error hook", async () => {
    const errors: unknown[] = [];
    const scheduler = new RenderScheduler<number, string>(
      { send: () => Promise.reject(new Error("offline")) },
      () => undefined,
      (err) => errors.push(err),
    );
    scheduler.update(1);
    await vi.advanceTimersByTimeAsync(60);
    expect(errors.length).toBe(1);
  });
});
