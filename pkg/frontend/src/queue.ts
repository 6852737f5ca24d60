/**
 * FIFO action queue with a single in-flight request.
 *
 * Every accepted key press becomes exactly one step request, in press order.
 * While a request is in flight new presses are queued, never dropped and
 * never raced, so the server can never see concurrent steps from this
 * client.  On failure the action stays at the head of the queue and pumping
 * stops until `retry()`.
 */

export type StepHandler = (action: number) => Promise<void>;
export type ErrorHandler = (action: number, error: unknown) => void;

export class SingleFlightQueue {
  private pending: number[] = [];
  private busy = false;
  private stopped = false;
  private idleWaiters: Array<() => void> = [];

  constructor(
    private readonly handler: StepHandler,
    private readonly onError: ErrorHandler = () => {},
  ) {}

  get inFlight(): boolean {
    return this.busy;
  }

  get depth(): number {
    return this.pending.length;
  }

  enqueue(action: number): void {
    this.pending.push(action);
    void this.pump();
  }

  /** Resume after an error left an action at the head of the queue. */
  retry(): void {
    this.stopped = false;
    void this.pump();
  }

  /** Resolves once nothing is in flight and the queue is empty or stopped. */
  idle(): Promise<void> {
    if (!this.busy && (this.pending.length === 0 || this.stopped)) {
      return Promise.resolve();
    }
    return new Promise((resolve) => this.idleWaiters.push(resolve));
  }

  private notifyIfIdle(): void {
    if (!this.busy && (this.pending.length === 0 || this.stopped)) {
      const waiters = this.idleWaiters;
      this.idleWaiters = [];
      for (const w of waiters) w();
    }
  }

  private async pump(): Promise<void> {
    if (this.busy || this.stopped) return;
    const next = this.pending.shift();
    if (next === undefined) {
      this.notifyIfIdle();
      return;
    }
    this.busy = true;
    try {
      await this.handler(next);
      this.busy = false;
      void this.pump();
    } catch (error) {
      this.busy = false;
      this.pending.unshift(next);
      this.stopped = true;
      this.onError(next, error);
      this.notifyIfIdle();
    }
  }
}
