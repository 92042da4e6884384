/** Acceleration input: keyboard arrows by default, gamepad when present.
 *
 * The participant holds a command; we send at most one input message per
 * 100 ms, re-sending the held command as a heartbeat so a lost packet never
 * leaves the server on a stale input. Holding both directions at once is a
 * conflict and maps to "maintain".
 */

export interface AccelMenu {
  brake: number;
  maintain: number;
  accelerate: number;
}

export function menuFromAccels(accels: number[]): AccelMenu {
  return {
    brake: Math.min(...accels),
    maintain: 0.0,
    accelerate: Math.max(...accels),
  };
}

export class InputTracker {
  private up = false;
  private down = false;

  constructor(private readonly menu: AccelMenu) {}

  keyEvent(code: string, pressed: boolean): void {
    if (code === "ArrowUp" || code === "KeyW") this.up = pressed;
    if (code === "ArrowDown" || code === "KeyS") this.down = pressed;
  }

  clear(): void {
    this.up = false;
    this.down = false;
  }

  /** Gamepad right trigger accelerates, left trigger brakes. */
  pollGamepad(pad: { buttons: ReadonlyArray<{ value: number }> } | null): void {
    if (!pad) return;
    const accel = pad.buttons[7]?.value ?? 0;
    const brake = pad.buttons[6]?.value ?? 0;
    if (accel > 0.3 || brake > 0.3) {
      this.up = accel > 0.3;
      this.down = brake > 0.3;
    }
  }

  current(): number {
    if (this.up === this.down) return this.menu.maintain; // none or conflict
    return this.up ? this.menu.accelerate : this.menu.brake;
  }
}

export const INPUT_PERIOD_MS = 100;

/** Drives the throttled send loop; timers are injectable for tests. */
export class InputSender {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly tracker: InputTracker,
    private readonly send: (accel: number) => void,
    private readonly setIntervalFn = setInterval,
    private readonly clearIntervalFn = clearInterval,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    this.timer = this.setIntervalFn(() => {
      this.send(this.tracker.current());
    }, INPUT_PERIOD_MS);
  }

  stop(): void {
    if (this.timer !== null) {
      this.clearIntervalFn(this.timer);
      this.timer = null;
    }
  }
}
