// Wiring: programs list, mode/direction controls, click-to-slice, add to
// selection, and the comment-out preview dialog.

import {
  Criterion,
  HttpError,
  fetchTransport,
  getProgram,
  listPrograms,
  postSlice,
} from "./api.js";
import {
  ExplorerState,
  addToSelection,
  applyError,
  applySlice,
  beginRequest,
  clearSelection,
  clearSlice,
  clickTarget,
  commentOutPreview,
  initialState,
  loadProgram,
} from "./state.js";
import { renderSource, renderStatus } from "./render.js";

const transport = fetchTransport();
let state: ExplorerState = initialState();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function redraw(): void {
  renderSource(el("source"), state, onSourceClick);
  renderStatus(el("status"), state);
}

async function issueSlice(criterion: Criterion): Promise<void> {
  if (!state.programId || !state.fn) return;
  const direction = (el<HTMLSelectElement>("direction").value as "back" | "fwd") ?? "back";
  const begun = beginRequest(state, criterion, direction);
  state = begun.state;
  redraw();
  const programId = state.programId;
  const fn = state.fn;
  if (!programId || !fn) return;
  try {
    const response = await postSlice(transport, {
      program: programId,
      fn,
      criterion,
      direction,
      mode: el<HTMLSelectElement>("mode").value,
    });
    state = applySlice(state, begun.seq, response);
  } catch (err) {
    if (err instanceof HttpError && "var" in criterion) {
      // not a variable: retry as a positional criterion
      try {
        const response = await postSlice(transport, {
          program: programId,
          fn,
          criterion: { span: { line: spanFallback.line, col: spanFallback.col } },
          direction,
          mode: el<HTMLSelectElement>("mode").value,
        });
        state = applySlice(state, begun.seq, response);
      } catch (err2) {
        state = applyError(state, begun.seq, String(err2 instanceof Error ? err2.message : err2));
      }
    } else {
      state = applyError(state, begun.seq, String(err instanceof Error ? err.message : err));
    }
  }
  redraw();
}

let spanFallback = { line: 1, col: 1 };

function onSourceClick(line: number, col: number): void {
  const target = clickTarget(state.source, line, col);
  if (!target || !target.isIdentifier) {
    return; // keywords and punctuation issue no request
  }
  spanFallback = { line: target.line, col: target.col };
  void issueSlice({ var: target.word });
}

async function selectProgram(id: string): Promise<void> {
  const payload = await getProgram(transport, id);
  const defined = payload.functions.filter((f) => !f.extern);
  const fnSel = el<HTMLSelectElement>("function");
  fnSel.textContent = "";
  for (const f of defined) {
    const opt = document.createElement("option");
    opt.value = f.name;
    opt.textContent = f.name;
    fnSel.appendChild(opt);
  }
  state = loadProgram(state, id, payload.source, defined[0]?.name ?? null);
  redraw();
}

async function boot(): Promise<void> {
  const programs = await listPrograms(transport);
  const sel = el<HTMLSelectElement>("program");
  for (const p of programs) {
    const opt = document.createElement("option");
    opt.value = p.id;
    opt.textContent = p.id;
    sel.appendChild(opt);
  }
  sel.addEventListener("change", () => void selectProgram(sel.value));
  el<HTMLSelectElement>("function").addEventListener("change", (ev) => {
    state = { ...clearSlice(clearSelection(state)), fn: (ev.target as HTMLSelectElement).value };
    redraw();
  });
  el("add-selection").addEventListener("click", () => {
    state = addToSelection(state);
    redraw();
  });
  el("clear-selection").addEventListener("click", () => {
    state = clearSelection(clearSlice(state));
    redraw();
  });
  el("comment-preview").addEventListener("click", () => {
    el<HTMLTextAreaElement>("preview-text").value = commentOutPreview(state);
    el<HTMLDialogElement>("preview-dialog").showModal();
  });
  el("preview-close").addEventListener("click", () => {
    el<HTMLDialogElement>("preview-dialog").close();
  });
  el<HTMLSelectElement>("mode").addEventListener("change", () => {
    if (state.criterion) void issueSlice(state.criterion);
  });
  el<HTMLSelectElement>("direction").addEventListener("change", () => {
    if (state.criterion) void issueSlice(state.criterion);
  });
  if (programs.length) {
    sel.value = programs[0].id;
    await selectProgram(programs[0].id);
  }
}

void boot();
