// DOM rendering: the source view with highlight/fade classes derived from
// the current state, and nothing else.

import type { Span } from "./api.js";
import { ExplorerState, fadedLines, lineOffsets } from "./state.js";

function charClasses(state: ExplorerState): Map<number, string> {
  const classes = new Map<number, string>();
  const mark = (spans: Span[] | null, cls: string) => {
    if (!spans) return;
    const offsets = lineOffsets(state.source);
    for (const s of spans) {
      if (s.line < 1 || s.line > offsets.length) continue;
      const start = offsets[s.line - 1] + (s.col - 1);
      for (let i = start; i < start + Math.max(s.len, 1); i++) {
        classes.set(i, cls);
      }
    }
  };
  mark(state.selection, "selected");
  mark(state.activeSlice, "slice");
  return classes;
}

export function renderSource(
  container: HTMLElement,
  state: ExplorerState,
  onClick: (line: number, col: number) => void
): void {
  container.textContent = "";
  const faded = fadedLines(state);
  const classes = charClasses(state);
  const lines = state.source.split("\n");
  const offsets = lineOffsets(state.source);
  lines.forEach((text, lineIdx) => {
    const row = document.createElement("div");
    row.className = "line" + (faded.has(lineIdx + 1) ? " faded" : "");
    const num = document.createElement("span");
    num.className = "lineno";
    num.textContent = String(lineIdx + 1).padStart(3, " ");
    row.appendChild(num);
    const base = offsets[lineIdx];
    let i = 0;
    while (i < text.length) {
      const cls = classes.get(base + i) ?? "";
      let j = i;
      while (j < text.length && (classes.get(base + j) ?? "") === cls) j++;
      const seg = document.createElement("span");
      if (cls) seg.className = cls;
      seg.textContent = text.slice(i, j);
      const segStart = i;
      seg.addEventListener("click", (ev) => {
        const within = measureClickColumn(seg, ev, text.slice(segStart, j));
        onClick(lineIdx + 1, segStart + within + 1);
      });
      row.appendChild(seg);
      i = j;
    }
    container.appendChild(row);
  });
}

function measureClickColumn(el: HTMLElement, ev: MouseEvent, text: string): number {
  const rect = el.getBoundingClientRect();
  if (rect.width === 0 || text.length === 0) return 0;
  const frac = (ev.clientX - rect.left) / rect.width;
  return Math.min(text.length - 1, Math.max(0, Math.floor(frac * text.length)));
}

export function renderStatus(el: HTMLElement, state: ExplorerState): void {
  if (state.error) {
    el.textContent = state.error;
    el.className = "status error";
  } else if (state.pending) {
    el.textContent = "computing slice...";
    el.className = "status";
  } else if (state.activeSlice) {
    const crit = state.criterion && "var" in state.criterion
      ? state.criterion.var
      : "selection";
    el.textContent =
      `${state.direction === "back" ? "backward" : "forward"} slice of ` +
      `${crit}: ${state.activeSlice.length} spans ` +
      `(selection: ${state.selection.length})`;
    el.className = "status";
  } else {
    el.textContent = "click an identifier to slice";
    el.className = "status";
  }
}
