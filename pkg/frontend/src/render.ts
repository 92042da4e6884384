/** Canvas view of the two-lane road and both cars.
 *
 * Logical positions jump at environment ticks; the view interpolates between
 * the previous and latest snapshot for display only. Belief and reward
 * readouts always show the latest snapshot verbatim.
 */
import { ConfigMsg, SnapshotMsg } from "./protocol.js";

interface CarPose {
  x: number;
  y: number;
}

export class RoadView {
  private readonly ctx: CanvasRenderingContext2D;
  private prev: SnapshotMsg | null = null;
  private latest: SnapshotMsg | null = null;
  private lastUpdate = 0;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly config: ConfigMsg,
    private readonly now: () => number = () => performance.now(),
  ) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("canvas 2d context unavailable");
    this.ctx = ctx;
  }

  push(snapshot: SnapshotMsg): void {
    this.prev = this.latest;
    this.latest = snapshot;
    this.lastUpdate = this.now();
  }

  /** Interpolated display poses; logical state stays tick-quantized. */
  poses(): { robot: CarPose; human: CarPose } | null {
    if (!this.latest) return null;
    const cur = this.latest.state;
    if (!this.prev || this.latest.phase !== "running") {
      return {
        robot: { x: cur.x_r, y: cur.y_r },
        human: { x: cur.x_h, y: this.config.lanes.upper_center },
      };
    }
    const old = this.prev.state;
    const frac = Math.min(
      1,
      (this.now() - this.lastUpdate) / this.config.tick_ms,
    );
    const lerp = (a: number, b: number) => a + (b - a) * frac;
    return {
      robot: { x: lerp(old.x_r, cur.x_r), y: lerp(old.y_r, cur.y_r) },
      human: {
        x: lerp(old.x_h, cur.x_h),
        y: this.config.lanes.upper_center,
      },
    };
  }

  draw(): void {
    const { canvas, ctx, config } = this;
    const poses = this.poses();
    ctx.fillStyle = "#1c1f26";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    if (!poses || !this.latest) return;

    const xs = config.grid.x;
    const roadLen = xs[xs.length - 1] - xs[0];
    const laneW = config.lanes.width;
    const yLo = config.lanes.lower_center - laneW / 2;
    const yHi = config.lanes.upper_center + laneW / 2;
    const sx = canvas.width / roadLen;
    const sy = canvas.height / (yHi - yLo);
    const toPx = (x: number, y: number): [number, number] => [
      (x - xs[0]) * sx,
      canvas.height - (y - yLo) * sy,
    ];

    // asphalt and lane markings
    ctx.fillStyle = "#2e323c";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#aab";
    ctx.setLineDash([14, 18]);
    ctx.beginPath();
    const [, midY] = toPx(0, (config.lanes.lower_center + config.lanes.upper_center) / 2);
    ctx.moveTo(0, midY);
    ctx.lineTo(canvas.width, midY);
    ctx.stroke();
    ctx.setLineDash([]);

    const drawCar = (pose: CarPose, color: string) => {
      const w = config.car.length * sx;
      const h = config.car.width * sy;
      const [px, py] = toPx(pose.x, pose.y);
      ctx.fillStyle = color;
      ctx.fillRect(px - w / 2, py - h / 2, w, h);
      ctx.strokeStyle = "#0008";
      ctx.strokeRect(px - w / 2, py - h / 2, w, h);
    };
    drawCar(poses.human, "#e8e6e3");
    drawCar(poses.robot, "#ff9633");
  }
}

export class Sparkline {
  private values: number[] = [];

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly maxPoints = 60,
  ) {}

  push(value: number): void {
    this.values.push(value);
    if (this.values.length > this.maxPoints) this.values.shift();
  }

  reset(): void {
    this.values = [];
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || this.values.length < 2) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    const lo = Math.min(...this.values);
    const hi = Math.max(...this.values);
    const span = hi - lo || 1;
    ctx.strokeStyle = "#6fc276";
    ctx.beginPath();
    this.values.forEach((v, i) => {
      const x = (i / (this.maxPoints - 1)) * width;
      const y = height - ((v - lo) / span) * (height - 4) - 2;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
}
