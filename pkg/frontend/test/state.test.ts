import { describe, expect, it } from "vitest";

import { LiveClient, SocketLike } from "../src/client.js";
import {
  ActMsg,
  actionCode,
  cellFromIndex,
  cellIndex,
  decodeServerMessage,
  encodeAct,
  HelloMsg,
  StateMsg,
} from "../src/protocol.js";
import { ClientState } from "../src/state.js";

const DIMS: [number, number, number] = [2, 1, 2];

function hello(overrides: Partial<HelloMsg> = {}): HelloMsg {
  return {
    type: "hello",
    dims: DIMS,
    palette: [0, 1, 2],
    goal: [1, 0, 0, 2],
    display_mode: "full",
    tick_ms: 100,
    ...overrides,
  };
}

function state(overrides: Partial<StateMsg> = {}): StateMsg {
  return {
    type: "state",
    grid: [0, 0, 0, 0],
    last_modifier: [-1, -1, -1, -1],
    players: [
      { position: [0, 0, 0], last_action: 0 },
      { position: [1, 0, 1], last_action: 0 },
    ],
    timestep: 1,
    metrics: {
      goal_pct: 0,
      human_actions: 0,
      assistant_goal_pct: 0,
      timestep: 1,
    },
    ...overrides,
  };
}

describe("protocol", () => {
  it("rejects malformed server messages", () => {
    expect(decodeServerMessage("not json")).toBeNull();
    expect(decodeServerMessage('{"type":"warp"}')).toBeNull();
    expect(decodeServerMessage('{"type":"state"}')).toBeNull();
    expect(decodeServerMessage(JSON.stringify(hello()))).not.toBeNull();
  });

  it("computes flat action codes matching the engine layout", () => {
    // dims (2,1,2): n = 4; breaks at 7..10; place block b at 11 + b*4 + c
    expect(actionCode({ type: "act", kind: "noop" }, DIMS, 3)).toBe(0);
    expect(actionCode({ type: "act", kind: "move", dir: 4 }, DIMS, 3)).toBe(5);
    expect(
      actionCode({ type: "act", kind: "break", cell: [1, 0, 1] }, DIMS, 3),
    ).toBe(7 + 3);
    expect(
      actionCode(
        { type: "act", kind: "place", cell: [0, 0, 1], block: 2 },
        DIMS,
        3,
      ),
    ).toBe(7 + 4 + 2 * 4 + 1);
    expect(cellIndex(DIMS, 1, 0, 1)).toBe(3);
    expect(cellFromIndex(DIMS, 3)).toEqual([1, 0, 1]);
  });
});

describe("client state machine", () => {
  it("applies hello then state snapshots", () => {
    const s = new ClientState();
    s.handle(hello());
    expect(s.status).toBe("connected");
    expect(s.dims).toEqual(DIMS);
    s.handle(state({ grid: [1, 0, 0, 0] }));
    expect(s.grid).toEqual([1, 0, 0, 0]);
    expect(s.timestep).toBe(1);
  });

  it("renders exactly the latest state (no speculation on click)", () => {
    const s = new ClientState();
    s.handle(hello());
    s.handle(state());
    const act = s.clickCell(0, 0, 0);
    expect(act).toEqual({
      type: "act",
      kind: "place",
      cell: [0, 0, 0],
      block: 1,
    });
    expect(s.grid).toEqual([0, 0, 0, 0]); // unchanged until the server says so
  });

  it("blueprint follows the three display modes", () => {
    const s = new ClientState();
    s.handle(hello());
    s.handle(state({ grid: [1, 0, 0, 0] }));
    expect(s.displayMode).toBe("full");
    expect(s.blueprint()).toEqual([1, null, null, 2]);
    s.displayMode = "placeable";
    expect(s.blueprint()).toEqual([null, null, null, 2]); // cell0 already built
    s.displayMode = "hidden";
    expect(s.blueprint()).toBeNull();
  });

  it("break mode targets solid cells only", () => {
    const s = new ClientState();
    s.handle(hello());
    s.handle(state({ grid: [1, 0, 0, 0] }));
    s.breakMode = true;
    expect(s.clickCell(0, 0, 0)).toEqual({
      type: "act",
      kind: "break",
      cell: [0, 0, 0],
    });
    expect(s.clickCell(0, 0, 1)).toBeNull(); // air: nothing to break
    s.breakMode = false;
    expect(s.clickCell(0, 0, 0)).toBeNull(); // solid: cannot place
  });

  it("invalid and error messages surface as toasts", () => {
    const s = new ClientState();
    s.handle(hello());
    s.handle({ type: "invalid", reason: "invalid_action" });
    s.handle({ type: "error", reason: "bad_message" });
    expect(s.toasts.length).toBe(2);
    expect(s.toasts[0].text).toContain("invalid_action");
  });

  it("belief overlay disables on dimension mismatch", () => {
    const s = new ClientState();
    s.handle(hello());
    s.overlayOn = true;
    s.handle({ type: "belief", cells: [{ block: 1, p: 0.5 }] }); // wrong size
    expect(s.belief).toBeNull();
    expect(s.beliefWarning).toContain("does not match");
    s.handle({
      type: "belief",
      cells: [
        { block: 1, p: 0.9 },
        { block: 0, p: 0.8 },
        { block: 0, p: 0.7 },
        { block: 2, p: 1.0 },
      ],
    });
    expect(s.beliefWarning).toBeNull();
    const overlay = s.overlay()!;
    expect(overlay[1]).toBeNull(); // air argmax draws nothing
    expect(overlay[3]).toEqual({ block: 2, p: 1.0 });
    s.overlayOn = false;
    expect(s.overlay()).toBeNull();
  });
});

function fakeSocketFactory() {
  const sockets: FakeSocket[] = [];
  class FakeSocket implements SocketLike {
    sent: string[] = [];
    onmessage: ((ev: { data: unknown }) => void) | null = null;
    onclose: (() => void) | null = null;
    onopen: (() => void) | null = null;
    constructor() {
      sockets.push(this);
    }
    send(data: string): void {
      this.sent.push(data);
    }
    close(): void {
      this.onclose?.();
    }
    serve(msg: unknown): void {
      this.onmessage?.({ data: JSON.stringify(msg) });
    }
  }
  return { factory: () => new FakeSocket(), sockets };
}

describe("live client", () => {
  it("throttles to one action per server tick and flushes queued intents", () => {
    const { factory, sockets } = fakeSocketFactory();
    const client = new LiveClient("ws://x", { socketFactory: factory });
    const sock = sockets[0];
    sock.serve(hello());
    sock.serve(state({ timestep: 1 }));
    const act: ActMsg = { type: "act", kind: "move", dir: 0 };
    expect(client.submit(act)).toBe(true);
    expect(client.submit(act)).toBe(false); // same tick: queued, not sent
    expect(sock.sent.length).toBe(1);
    sock.serve(state({ timestep: 2 })); // next tick: queued intent flushes
    expect(sock.sent.length).toBe(2);
    expect(client.submit(act)).toBe(false); // already acted this tick
    expect(sock.sent.length).toBe(2);
  });

  it("never sends goal data in act messages", () => {
    const { factory, sockets } = fakeSocketFactory();
    const client = new LiveClient("ws://x", { socketFactory: factory });
    const sock = sockets[0];
    sock.serve(hello());
    sock.serve(state({ timestep: 1 }));
    client.submit(client.state.clickCell(0, 0, 1));
    sock.serve(state({ timestep: 2 }));
    client.submit(client.state.moveAction(2));
    for (const text of sock.sent) {
      expect(text).not.toContain("goal");
      const parsed = JSON.parse(text);
      expect(Object.keys(parsed).sort()).not.toContain("goal");
    }
  });

  it("keeps last good state on malformed server data and closes cleanly", () => {
    const { factory, sockets } = fakeSocketFactory();
    const client = new LiveClient("ws://x", { socketFactory: factory });
    const sock = sockets[0];
    sock.serve(hello());
    sock.serve(state({ grid: [1, 2, 0, 0] }));
    sock.onmessage?.({ data: "garbage{{{" });
    expect(client.state.grid).toEqual([1, 2, 0, 0]);
    sock.close();
    expect(client.state.status).toBe("closed");
  });

  it("encodes acts as single-line json", () => {
    const act: ActMsg = {
      type: "act",
      kind: "place",
      cell: [1, 0, 1],
      block: 2,
    };
    expect(encodeAct(act)).not.toContain("\n");
  });
});
