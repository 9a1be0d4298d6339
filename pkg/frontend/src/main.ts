// Browser entry point: UI chrome (palette picker, break/place toggle, belief
// overlay and display-mode switches, movement keys) around the live client.

import { LiveClient } from "./client.js";
import { DisplayMode } from "./protocol.js";
import { renderApp } from "./render.js";

const MOVE_KEYS: Record<string, number> = {
  ArrowRight: 0, // +x
  ArrowLeft: 1, // -x
  PageUp: 2, // +y
  PageDown: 3, // -y
  ArrowUp: 4, // +z
  ArrowDown: 5, // -z
  d: 0,
  a: 1,
  r: 2,
  f: 3,
  w: 4,
  s: 5,
};

export function start(root: HTMLElement, url: string): LiveClient {
  const client = new LiveClient(url, {
    onChange: (state) => renderApp(root, state, callbacks),
  });
  const state = client.state;

  const callbacks = {
    onCellClick: (x: number, y: number, z: number) => {
      client.submit(state.clickCell(x, y, z));
    },
  };

  document.addEventListener("keydown", (ev) => {
    if (ev.key in MOVE_KEYS) {
      client.submit(state.moveAction(MOVE_KEYS[ev.key]));
      ev.preventDefault();
    } else if (ev.key === "b") {
      state.breakMode = !state.breakMode;
    } else if (ev.key === "o") {
      state.overlayOn = !state.overlayOn;
    } else if (ev.key === "m") {
      const modes: DisplayMode[] = ["full", "placeable", "hidden"];
      state.displayMode =
        modes[(modes.indexOf(state.displayMode) + 1) % modes.length];
    } else if (ev.key >= "1" && ev.key <= "9") {
      const block = Number(ev.key);
      if (state.palette.includes(block)) state.selectedBlock = block;
    } else {
      return;
    }
    renderApp(root, state, callbacks);
  });

  root.addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.classList.contains("swatch")) {
      state.selectedBlock = Number(target.dataset.block);
      renderApp(root, state, callbacks);
    }
  });

  return client;
}

declare global {
  interface Window {
    blockmateStart: typeof start;
  }
}

if (typeof window !== "undefined") {
  window.blockmateStart = start;
  window.addEventListener("DOMContentLoaded", () => {
    const root = document.getElementById("app");
    if (root) {
      const url = `ws://${location.host}/ws`;
      start(root, url);
    }
  });
}
