// Wire protocol shared with the play server: newline-free JSON messages over
// a WebSocket. Integer action codes use the engine's flat layout:
// [noop, 6 moves, break per cell, place per (block, cell)].

export type Vec3 = [number, number, number];
export type DisplayMode = "full" | "placeable" | "hidden";

export interface Metrics {
  goal_pct: number;
  human_actions: number;
  assistant_goal_pct: number;
  timestep: number;
}

export interface HelloMsg {
  type: "hello";
  dims: Vec3;
  palette: number[];
  goal: number[];
  display_mode: DisplayMode;
  tick_ms: number;
}

export interface PlayerInfo {
  position: Vec3 | null;
  last_action: number;
}

export interface StateMsg {
  type: "state";
  grid: number[];
  last_modifier: number[];
  players: PlayerInfo[];
  timestep: number;
  metrics: Metrics;
}

export interface BeliefCell {
  block: number;
  p: number;
}

export interface BeliefMsg {
  type: "belief";
  cells: BeliefCell[];
}

export interface InvalidMsg {
  type: "invalid";
  reason: string;
}

export interface ErrorMsg {
  type: "error";
  reason: string;
}

export interface ByeMsg {
  type: "bye";
  metrics: Metrics;
}

export type ServerMsg =
  | HelloMsg
  | StateMsg
  | BeliefMsg
  | InvalidMsg
  | ErrorMsg
  | ByeMsg;

export type ActMsg =
  | { type: "act"; kind: "noop" }
  | { type: "act"; kind: "move"; dir: number }
  | { type: "act"; kind: "break"; cell: Vec3 }
  | { type: "act"; kind: "place"; cell: Vec3; block: number };

const SERVER_TYPES = new Set(["hello", "state", "belief", "invalid", "error", "bye"]);

export function decodeServerMessage(text: string): ServerMsg | null {
  let data: unknown;
  try {
    data = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as Record<string, unknown>;
  if (typeof msg.type !== "string" || !SERVER_TYPES.has(msg.type)) return null;
  switch (msg.type) {
    case "hello":
      if (!Array.isArray(msg.dims) || msg.dims.length !== 3) return null;
      if (!Array.isArray(msg.palette) || !Array.isArray(msg.goal)) return null;
      break;
    case "state":
      if (!Array.isArray(msg.grid) || typeof msg.timestep !== "number") return null;
      break;
    case "belief":
      if (!Array.isArray(msg.cells)) return null;
      break;
    case "invalid":
    case "error":
      if (typeof msg.reason !== "string") return null;
      break;
    case "bye":
      break;
  }
  return msg as unknown as ServerMsg;
}

export function cellIndex(dims: Vec3, x: number, y: number, z: number): number {
  return (x * dims[1] + y) * dims[2] + z;
}

export function cellFromIndex(dims: Vec3, idx: number): Vec3 {
  const z = idx % dims[2];
  const rest = (idx - z) / dims[2];
  const y = rest % dims[1];
  const x = (rest - y) / dims[1];
  return [x, y, z];
}

export const NUM_GLOBAL_ACTIONS = 7;

// Flat integer code for an action; matches the trajectory corpus encoding.
export function actionCode(act: ActMsg, dims: Vec3, numBlockTypes: number): number {
  const n = dims[0] * dims[1] * dims[2];
  switch (act.kind) {
    case "noop":
      return 0;
    case "move":
      return 1 + act.dir;
    case "break":
      return NUM_GLOBAL_ACTIONS + cellIndex(dims, ...act.cell);
    case "place":
      return (
        NUM_GLOBAL_ACTIONS + n + act.block * n + cellIndex(dims, ...act.cell)
      );
  }
}

export function encodeAct(act: ActMsg): string {
  return JSON.stringify(act);
}
