/**
 * Repeats an async tick on a fixed cadence. At most one tick is in
 * flight at a time: if the previous one has not resolved when the timer
 * fires, that beat is skipped rather than stacked. The tick returns
 * false to stop the poller, which is how screens shut off refresh once
 * everything they watch has reached a terminal state.
 */
export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(
    private readonly tick: () => Promise<boolean>,
    private readonly intervalMs: number,
  ) {}

  get running(): boolean {
    return this.timer !== null;
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => void this.beat(), this.intervalMs);
    void this.beat();
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Run one tick now (used after user actions that change what is shown). */
  kick(): void {
    void this.beat();
  }

  private async beat(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    let keep = true;
    try {
      keep = await this.tick();
    } catch {
      // transient failure: keep the cadence, the next beat retries
    } finally {
      this.inFlight = false;
    }
    if (!keep) this.stop();
  }
}
