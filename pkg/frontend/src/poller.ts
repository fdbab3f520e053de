/** Interval poller that never lets two requests to its endpoint overlap. */

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(
    private readonly tickFn: () => Promise<void>,
    private readonly intervalMs: number = 2000,
  ) {}

  async tick(): Promise<void> {
    if (this.inFlight) {
      return; // previous request still running; skip this beat
    }
    this.inFlight = true;
    try {
      await this.tickFn();
    } finally {
      this.inFlight = false;
    }
  }

  start(): void {
    if (this.timer !== null) {
      return;
    }
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
