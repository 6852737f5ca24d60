import { PlayClient } from "./client";
import { KeyMap, mapKey, validateKeymap } from "./keymap";
import { SingleFlightQueue } from "./queue";
import { SessionInfo } from "./types";

/** Where acknowledged frames go (an <img>, a canvas wrapper, a test recorder). */
export interface FrameSink {
  showFrame(framePngBase64: string, step: number): void;
}

export interface LoopStatus {
  step: number;
  accepted: number;
  pendingDepth: number;
  inFlight: boolean;
  autoStep: boolean;
  latencyMs: number | null;
  error: string | null;
}

export interface PlayLoopOptions {
  /** Auto-step period when idle-repeat is enabled. */
  autoStepIntervalMs?: number;
  onStatus?: (status: LoopStatus) => void;
  latencyWindow?: number;
}

/**
 * The interactive loop: accepted key presses become per-frame actions, sent
 * strictly one at a time; acknowledged frames update the display in order.
 * An optional auto-step mode repeats the last action while the user is idle.
 */
export class PlayLoop {
  private readonly queue: SingleFlightQueue;
  private readonly latencies: number[] = [];
  private readonly latencyWindow: number;
  private serverStep: number;
  private acceptedCount = 0;
  private lastAction: number | null = null;
  private autoStepEnabled = false;
  private autoTimer: ReturnType<typeof setInterval> | null = null;
  private readonly autoIntervalMs: number;
  private errorMessage: string | null = null;
  private keyListener: ((event: KeyboardEvent) => void) | null = null;
  private keyTarget: EventTarget | null = null;

  constructor(
    private readonly client: PlayClient,
    private readonly session: SessionInfo,
    private keymap: KeyMap,
    private readonly sink: FrameSink,
    private readonly options: PlayLoopOptions = {},
  ) {
    validateKeymap(keymap, session.num_actions);
    this.serverStep = session.step;
    this.latencyWindow = options.latencyWindow ?? 20;
    this.autoIntervalMs = options.autoStepIntervalMs ?? 250;
    this.queue = new SingleFlightQueue(
      (action) => this.sendStep(action),
      (_action, error) => {
        this.errorMessage = error instanceof Error ? error.message : String(error);
        this.emit();
      },
    );
    this.sink.showFrame(session.frame, session.step);
  }

  private async sendStep(action: number): Promise<void> {
    const started = Date.now();
    const result = await this.client.step(this.session.session_id, action);
    this.latencies.push(Date.now() - started);
    if (this.latencies.length > this.latencyWindow) this.latencies.shift();
    this.serverStep = result.step;
    this.sink.showFrame(result.frame, result.step);
    this.emit();
  }

  private emit(): void {
    this.options.onStatus?.(this.status());
  }

  status(): LoopStatus {
    const mean =
      this.latencies.length === 0
        ? null
        : this.latencies.reduce((a, b) => a + b, 0) / this.latencies.length;
    return {
      step: this.serverStep,
      accepted: this.acceptedCount,
      pendingDepth: this.queue.depth,
      inFlight: this.queue.inFlight,
      autoStep: this.autoStepEnabled,
      latencyMs: mean,
      error: this.errorMessage,
    };
  }

  /** Map a key; accepted keys enqueue exactly one step request. */
  handleKey(key: string): number | null {
    const action = mapKey(key, this.keymap);
    if (action === null) return null;
    this.pressAction(action);
    return action;
  }

  pressAction(action: number): void {
    if (action < 0 || action >= this.session.num_actions) {
      throw new RangeError(`action ${action} outside [0, ${this.session.num_actions})`);
    }
    this.lastAction = action;
    this.acceptedCount += 1;
    this.queue.enqueue(action);
    this.emit();
  }

  retry(): void {
    this.errorMessage = null;
    this.queue.retry();
    this.emit();
  }

  setAutoStep(enabled: boolean): void {
    this.autoStepEnabled = enabled;
    if (this.autoTimer !== null) {
      clearInterval(this.autoTimer);
      this.autoTimer = null;
    }
    if (enabled) {
      this.autoTimer = setInterval(() => this.autoTick(), this.autoIntervalMs);
    }
    this.emit();
  }

  private autoTick(): void {
    // repeat the last action only when truly idle; never stack requests
    if (
      this.lastAction === null ||
      this.queue.inFlight ||
      this.queue.depth > 0 ||
      this.errorMessage !== null
    ) {
      return;
    }
    this.acceptedCount += 1;
    this.queue.enqueue(this.lastAction);
    this.emit();
  }

  /** Listen for keydown events on a window/document/element. */
  attach(target: EventTarget): void {
    this.detach();
    this.keyTarget = target;
    this.keyListener = (event: KeyboardEvent) => {
      if (this.handleKey(event.key) !== null) event.preventDefault?.();
    };
    target.addEventListener("keydown", this.keyListener as EventListener);
  }

  detach(): void {
    if (this.keyTarget && this.keyListener) {
      this.keyTarget.removeEventListener("keydown", this.keyListener as EventListener);
    }
    this.keyTarget = null;
    this.keyListener = null;
  }

  /** Resolves when no request is in flight and nothing is queued. */
  idle(): Promise<void> {
    return this.queue.idle();
  }

  dispose(): void {
    this.setAutoStep(false);
    this.detach();
  }
}
