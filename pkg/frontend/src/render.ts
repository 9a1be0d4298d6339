// DOM rendering: one clickable 2D board per y-slice, a belief overlay tint,
// a metrics panel mirroring the headline evaluation columns, and toasts.

import { BeliefCell } from "./protocol.js";
import { ClientState } from "./state.js";

const BLOCK_COLORS = [
  "transparent",
  "#b0703c", // block 1
  "#8f9aa6", // block 2
  "#5b8726", // block 3
  "#c2574f",
  "#7a5fb0",
  "#3e8e8c",
  "#b8a145",
  "#777777",
  "#d08fc0",
];

export function blockColor(code: number): string {
  return BLOCK_COLORS[code % BLOCK_COLORS.length];
}

export interface RenderCallbacks {
  onCellClick: (x: number, y: number, z: number) => void;
}

export function renderApp(
  root: HTMLElement,
  state: ClientState,
  cbs: RenderCallbacks,
): void {
  let boards = root.querySelector<HTMLElement>(".boards");
  if (!boards || Number(root.dataset.cells) !== state.nCells) {
    root.innerHTML = "";
    root.dataset.cells = String(state.nCells);
    boards = buildBoards(root, state, cbs);
  }
  updateBoards(root, state);
  updatePanel(root, state);
}

function buildBoards(
  root: HTMLElement,
  state: ClientState,
  cbs: RenderCallbacks,
): HTMLElement {
  const [w, h, d] = state.dims;
  const boards = document.createElement("div");
  boards.className = "boards";
  for (let y = 0; y < h; y++) {
    const wrap = document.createElement("div");
    wrap.className = "board-wrap";
    const label = document.createElement("div");
    label.className = "board-label";
    label.textContent = `y=${y}`;
    wrap.appendChild(label);
    const board = document.createElement("div");
    board.className = "board";
    board.style.gridTemplateColumns = `repeat(${w}, 22px)`;
    for (let z = d - 1; z >= 0; z--) {
      for (let x = 0; x < w; x++) {
        const cell = document.createElement("div");
        cell.className = "cell";
        cell.dataset.x = String(x);
        cell.dataset.y = String(y);
        cell.dataset.z = String(z);
        cell.addEventListener("click", () => cbs.onCellClick(x, y, z));
        board.appendChild(cell);
      }
    }
    wrap.appendChild(board);
    boards.appendChild(wrap);
  }
  root.appendChild(boards);
  const panel = document.createElement("div");
  panel.className = "panel";
  root.appendChild(panel);
  const toasts = document.createElement("div");
  toasts.className = "toasts";
  root.appendChild(toasts);
  return boards;
}

function updateBoards(root: HTMLElement, state: ClientState): void {
  if (!state.grid) return;
  const [, h, d] = state.dims;
  const blueprint = state.blueprint();
  const overlay = state.overlay();
  const playerCells = new Map<number, string>();
  state.players.forEach((p, i) => {
    if (p.position) {
      const idx =
        (p.position[0] * h + p.position[1]) * d + p.position[2];
      playerCells.set(idx, i === 0 ? "you" : "bot");
    }
  });
  root.querySelectorAll<HTMLElement>(".cell").forEach((cell) => {
    const x = Number(cell.dataset.x);
    const y = Number(cell.dataset.y);
    const z = Number(cell.dataset.z);
    const idx = (x * h + y) * d + z;
    const code = state.grid![idx];
    cell.style.background = code !== 0 ? blockColor(code) : "transparent";
    cell.classList.toggle("solid", code !== 0);
    const ghost = blueprint !== null && blueprint[idx] !== null && code === 0;
    cell.classList.toggle("ghost", ghost);
    cell.style.outlineColor = ghost ? blockColor(blueprint![idx]!) : "";
    const who = playerCells.get(idx);
    cell.textContent = who === "you" ? "@" : who === "bot" ? "*" : "";
    applyOverlay(cell, overlay ? overlay[idx] : null);
  });
}

function applyOverlay(cell: HTMLElement, entry: BeliefCell | null): void {
  const existing = cell.querySelector<HTMLElement>(".tint");
  if (!entry) {
    existing?.remove();
    return;
  }
  const tint = existing ?? document.createElement("div");
  tint.className = "tint";
  tint.style.background = blockColor(entry.block);
  tint.style.opacity = String(entry.p);
  if (!existing) cell.appendChild(tint);
}

function updatePanel(root: HTMLElement, state: ClientState): void {
  const panel = root.querySelector<HTMLElement>(".panel");
  if (!panel) return;
  const m = state.metrics;
  panel.innerHTML = `
    <div class="status">${state.status} · t=${state.timestep}</div>
    <table class="metrics">
      <tr><td>Goal built</td><td>${m ? m.goal_pct.toFixed(1) : "–"}%</td></tr>
      <tr><td>Your actions</td><td>${m ? m.human_actions : "–"}</td></tr>
      <tr><td>Assistant share</td><td>${m ? m.assistant_goal_pct.toFixed(1) : "–"}%</td></tr>
    </table>
    <div class="legend">${state.palette
      .filter((c) => c !== 0)
      .map(
        (c) =>
          `<span class="swatch${c === state.selectedBlock ? " sel" : ""}"
             data-block="${c}" style="background:${blockColor(c)}"></span>`,
      )
      .join("")}</div>
    <div class="modes">mode: ${state.displayMode} · ${
      state.breakMode ? "breaking" : "placing"
    } · overlay ${state.overlayOn ? "on" : "off"}</div>
    ${state.beliefWarning ? `<div class="warn">${state.beliefWarning}</div>` : ""}
  `;
  const toasts = root.querySelector<HTMLElement>(".toasts");
  if (toasts) {
    const now = Date.now();
    toasts.innerHTML = state.toasts
      .filter((t) => now - t.at < 4000)
      .map((t) => `<div class="toast">${t.text}</div>`)
      .join("");
  }
}
