// Client-side session state: a pure state machine fed by server messages and
// user intents. Rendering reads from it; it never speculates ahead of the
// server (the rendered grid is always the last `state` message).

import {
  ActMsg,
  BeliefCell,
  DisplayMode,
  HelloMsg,
  Metrics,
  ServerMsg,
  StateMsg,
  Vec3,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "closed";

export interface Toast {
  text: string;
  at: number;
}

export class ClientState {
  status: ConnectionStatus = "connecting";
  dims: Vec3 = [0, 0, 0];
  palette: number[] = [];
  goal: number[] | null = null;
  displayMode: DisplayMode = "full";
  tickMs = 250;

  grid: number[] | null = null;
  lastModifier: number[] | null = null;
  players: StateMsg["players"] = [];
  timestep = -1;
  metrics: Metrics | null = null;

  belief: BeliefCell[] | null = null;
  beliefWarning: string | null = null;
  overlayOn = false;

  selectedBlock = 1;
  breakMode = false;
  toasts: Toast[] = [];
  episodesSeen = 0;

  private lastActAtTimestep = -2;

  get nCells(): number {
    return this.dims[0] * this.dims[1] * this.dims[2];
  }

  handle(msg: ServerMsg): void {
    switch (msg.type) {
      case "hello":
        this.applyHello(msg);
        break;
      case "state":
        this.grid = msg.grid;
        this.lastModifier = msg.last_modifier;
        this.players = msg.players;
        this.timestep = msg.timestep;
        this.metrics = msg.metrics;
        break;
      case "belief":
        if (msg.cells.length !== this.nCells) {
          this.belief = null;
          this.beliefWarning = `belief size ${msg.cells.length} does not match grid`;
        } else {
          this.belief = msg.cells;
          this.beliefWarning = null;
        }
        break;
      case "invalid":
        this.pushToast(`rejected: ${msg.reason}`);
        break;
      case "error":
        this.pushToast(`error: ${msg.reason}`);
        break;
      case "bye":
        this.episodesSeen += 1;
        this.pushToast(
          `episode done: ${msg.metrics ? msg.metrics.goal_pct.toFixed(1) : "?"}% built`,
        );
        break;
    }
  }

  private applyHello(msg: HelloMsg): void {
    this.status = "connected";
    this.dims = msg.dims;
    this.palette = msg.palette;
    this.goal = msg.goal;
    this.displayMode = msg.display_mode;
    this.tickMs = msg.tick_ms ?? 250;
    this.grid = null;
    this.belief = null;
    this.timestep = -1;
    this.lastActAtTimestep = -2;
    if (this.selectedBlock >= msg.palette.length) this.selectedBlock = 1;
  }

  pushToast(text: string): void {
    this.toasts.push({ text, at: Date.now() });
    if (this.toasts.length > 5) this.toasts.shift();
  }

  // ---- user intents ------------------------------------------------------

  /** One action per server tick: a new `state` (fresh timestep) re-arms. */
  canSendAct(): boolean {
    return this.status === "connected" && this.grid !== null
      && this.timestep > this.lastActAtTimestep;
  }

  markActSent(): void {
    this.lastActAtTimestep = this.timestep;
  }

  clickCell(x: number, y: number, z: number): ActMsg | null {
    if (!this.grid) return null;
    const idx = (x * this.dims[1] + y) * this.dims[2] + z;
    if (this.breakMode) {
      if (this.grid[idx] === 0) return null;
      return { type: "act", kind: "break", cell: [x, y, z] };
    }
    if (this.grid[idx] !== 0) return null;
    return {
      type: "act",
      kind: "place",
      cell: [x, y, z],
      block: this.selectedBlock,
    };
  }

  moveAction(dir: number): ActMsg {
    return { type: "act", kind: "move", dir };
  }

  // ---- derived views -----------------------------------------------------

  /** Blueprint cells to draw, by display mode; null entries draw nothing. */
  blueprint(): (number | null)[] | null {
    if (!this.goal || this.displayMode === "hidden") return null;
    if (this.displayMode === "full") {
      return this.goal.map((code) => (code !== 0 ? code : null));
    }
    // placeable-only: unbuilt goal blocks on currently empty cells
    if (!this.grid) return null;
    return this.goal.map((code, i) =>
      code !== 0 && this.grid![i] === 0 ? code : null,
    );
  }

  overlay(): (BeliefCell | null)[] | null {
    if (!this.overlayOn || !this.belief) return null;
    return this.belief.map((cell) => (cell.block !== 0 ? cell : null));
  }
}
