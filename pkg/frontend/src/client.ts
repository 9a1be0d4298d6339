// WebSocket wiring: feeds server messages into the state machine and sends
// user actions, throttled to one per server tick.

import { ActMsg, decodeServerMessage, encodeAct } from "./protocol.js";
import { ClientState } from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onopen: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface LiveClientOptions {
  socketFactory?: SocketFactory;
  onChange?: (state: ClientState) => void;
}

export class LiveClient {
  readonly state = new ClientState();
  private socket: SocketLike | null = null;
  private url: string;
  private opts: LiveClientOptions;
  private queued: ActMsg | null = null;

  constructor(url: string, opts: LiveClientOptions = {}) {
    this.url = url;
    this.opts = opts;
    this.open();
  }

  private open(): void {
    const factory =
      this.opts.socketFactory ??
      ((u: string) => new WebSocket(u) as unknown as SocketLike);
    this.state.status = "connecting";
    this.socket = factory(this.url);
    this.socket.onopen = () => this.changed();
    this.socket.onmessage = (ev) => {
      const msg = decodeServerMessage(String(ev.data));
      if (msg === null) {
        // malformed server message: log it, keep the last good state
        console.warn("undecodable server message", ev.data);
        return;
      }
      this.state.handle(msg);
      this.flushQueued();
      this.changed();
    };
    this.socket.onclose = () => {
      this.state.status = "closed";
      this.state.pushToast("connection closed; reload to reconnect");
      this.changed();
    };
  }

  reconnect(): void {
    this.socket?.close();
    this.open();
  }

  /** Send now if the tick throttle allows, else keep the latest intent. */
  submit(action: ActMsg | null): boolean {
    if (!action) return false;
    if (this.state.canSendAct()) {
      this.socket!.send(encodeAct(action));
      this.state.markActSent();
      this.changed();
      return true;
    }
    this.queued = action;
    return false;
  }

  private flushQueued(): void {
    if (this.queued && this.state.canSendAct()) {
      const action = this.queued;
      this.queued = null;
      this.socket!.send(encodeAct(action));
      this.state.markActSent();
    }
  }

  private changed(): void {
    this.opts.onChange?.(this.state);
  }
}
