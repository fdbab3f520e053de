import { describe, expect, test, vi } from "vitest";

import { Poller } from "../src/poller.js";

describe("poller", () => {
  test("never overlaps requests to the same endpoint", async () => {
    vi.useFakeTimers();
    let active = 0;
    let maxActive = 0;
    let started = 0;
    let release: () => void = () => {};

    const poller = new Poller(async () => {
      started += 1;
      active += 1;
      maxActive = Math.max(maxActive, active);
      await new Promise<void>((resolve) => {
        release = resolve;
      });
      active -= 1;
    }, 100);

    poller.start(); // first tick fires immediately and hangs
    await vi.advanceTimersByTimeAsync(1000); // ten beats while the request is stuck
    expect(started).toBe(1);
    expect(maxActive).toBe(1);

    release(); // slow response finally lands
    await vi.advanceTimersByTimeAsync(100);
    expect(started).toBe(2);
    expect(maxActive).toBe(1);

    release();
    poller.stop();
    await vi.advanceTimersByTimeAsync(500);
    expect(started).toBe(2);
    vi.useRealTimers();
  });

  test("start is idempotent", async () => {
    vi.useFakeTimers();
    let ticks = 0;
    const poller = new Poller(async () => {
      ticks += 1;
    }, 50);
    poller.start();
    poller.start();
    await vi.advanceTimersByTimeAsync(100);
    poller.stop();
    expect(ticks).toBe(3); // immediate + two beats, not doubled
    vi.useRealTimers();
  });
});
