/** Participant client: render the merge, capture pedal input, show the
 * robot's live belief about *you*. */
import { BeliefBars } from "./beliefBars.js";
import { InputSender, InputTracker, menuFromAccels } from "./input.js";
import { SessionSocket, sessionUrl } from "./net.js";
import {
  ConfigMsg,
  SnapshotMsg,
  controlMessage,
  inputMessage,
} from "./protocol.js";
import { RoadView, Sparkline } from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class App {
  private socket: SessionSocket;
  private config: ConfigMsg | null = null;
  private view: RoadView | null = null;
  private bars: BeliefBars | null = null;
  private spark = new Sparkline(el<HTMLCanvasElement>("sparkline"));
  private tracker: InputTracker | null = null;
  private sender: InputSender | null = null;
  private running = false;

  constructor() {
    this.socket = new SessionSocket(sessionUrl(), {
      onMessage: (msg) => this.handle(msg),
      onOpen: () => this.setOverlay(null),
      onClose: () => this.setOverlay("disconnected — reconnect?", true),
    });
    el<HTMLButtonElement>("btn-start").onclick = () => this.start("start");
    el<HTMLButtonElement>("btn-reset").onclick = () => this.start("reset");
    el<HTMLInputElement>("toggle-belief").onchange = (ev) => {
      this.bars?.setVisible((ev.target as HTMLInputElement).checked);
    };
    el<HTMLSelectElement>("planner-select").onchange = (ev) => {
      const planner = (ev.target as HTMLSelectElement).value as "ours" | "blp1";
      this.socket.send(controlMessage("select_planner", { planner }));
    };
    el<HTMLButtonElement>("btn-reconnect").onclick = () => {
      this.setOverlay(null);
      this.socket.connect();
    };
    window.addEventListener("keydown", (ev) => this.key(ev, true));
    window.addEventListener("keyup", (ev) => this.key(ev, false));
    window.addEventListener("blur", () => this.tracker?.clear());
    this.socket.connect();
    requestAnimationFrame(() => this.frame());
  }

  private key(ev: KeyboardEvent, pressed: boolean): void {
    if (!this.tracker || !this.running) return;
    this.tracker.keyEvent(ev.code, pressed);
    if (ev.code.startsWith("Arrow")) ev.preventDefault();
  }

  private start(action: "start" | "reset"): void {
    this.spark.reset();
    this.socket.send(controlMessage(action));
  }

  private handle(msg: Record<string, unknown>): void {
    switch (msg.type) {
      case "config":
        this.configure(msg as unknown as ConfigMsg);
        break;
      case "snapshot":
        this.snapshot(msg as unknown as SnapshotMsg);
        break;
      case "error":
        el("status").textContent = `server: ${msg.message}`;
        break;
      default:
        console.warn("ignoring unknown message type", msg.type);
    }
  }

  private configure(config: ConfigMsg): void {
    this.config = config;
    this.view = new RoadView(el<HTMLCanvasElement>("road"), config);
    this.bars = new BeliefBars(el("belief"), config.latent_types);
    const menu = menuFromAccels(config.action_set.human_accels);
    this.tracker = new InputTracker(menu);
    this.sender = new InputSender(this.tracker, (accel) => {
      if (this.running) this.socket.send(inputMessage(accel));
    });
    this.sender.start();
    el("status").textContent =
      `connected (tick ${config.tick_ms} ms, config ${config.config_hash})`;
  }

  private snapshot(snap: SnapshotMsg): void {
    this.running = snap.phase === "running";
    this.view?.push(snap);
    this.bars?.update(snap.belief);
    this.spark.push(snap.reward);
    el("tick-readout").textContent =
      `t=${snap.t}  reward=${snap.reward.toFixed(2)}  ` +
      `info=${snap.info_gain.toFixed(3)}`;
    const banner = el("banner");
    if (snap.outcome) {
      banner.textContent = snap.outcome.toUpperCase();
      banner.className = `banner banner-${snap.outcome}`;
      this.tracker?.clear();
    } else {
      banner.textContent = "";
      banner.className = "banner";
    }
  }

  private setOverlay(text: string | null, showReconnect = false): void {
    const overlay = el("overlay");
    overlay.style.display = text ? "flex" : "none";
    el("overlay-text").textContent = text ?? "";
    el("btn-reconnect").style.display = showReconnect ? "" : "none";
    if (text) this.running = false;
  }

  private frame(): void {
    this.view?.draw();
    this.spark.draw();
    const pads = navigator.getGamepads?.() ?? [];
    this.tracker?.pollGamepad(pads[0] ?? null);
    requestAnimationFrame(() => this.frame());
  }
}

new App();
