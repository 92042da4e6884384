/** Session socket wrapper: connect, decode frames, surface reconnects. */
import { decodeMessage } from "./protocol.js";

export interface SocketHandlers {
  onMessage: (msg: Record<string, unknown>) => void;
  onOpen: () => void;
  onClose: () => void;
}

export class SessionSocket {
  private ws: WebSocket | null = null;

  constructor(
    private readonly url: string,
    private readonly handlers: SocketHandlers,
  ) {}

  connect(): void {
    this.ws = new WebSocket(this.url);
    this.ws.onopen = () => this.handlers.onOpen();
    this.ws.onclose = () => {
      this.ws = null;
      this.handlers.onClose();
    };
    this.ws.onmessage = (event: MessageEvent<string>) => {
      try {
        this.handlers.onMessage(decodeMessage(event.data));
      } catch (err) {
        console.warn("dropping undecodable frame", err);
      }
    };
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  send(frame: string): void {
    if (this.connected) this.ws!.send(frame);
  }

  close(): void {
    this.ws?.close();
  }
}

export function sessionUrl(): string {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  return `${proto}://${location.host}/session`;
}
