// Pure state for the slice explorer: criterion and direction handling,
// request sequencing (stale responses are dropped), the accumulated
// selection as a union of server-returned slices, line fading, and the
// comment-out preview. Everything here is derived from server responses
// and plain text math; no dependence logic lives client-side.

import type { Criterion, Span, SliceResponse } from "./api.js";

export type Direction = "back" | "fwd";

export interface ExplorerState {
  programId: string | null;
  source: string;
  fn: string | null;
  mode: string;
  direction: Direction;
  criterion: Criterion | null;
  activeSlice: Span[] | null; // spans of the last applied slice response
  selection: Span[]; // union of every slice added so far
  issuedSeq: number; // last request number handed out
  appliedSeq: number; // request number of the applied response
  pending: boolean;
  error: string | null;
}

export function initialState(): ExplorerState {
  return {
    programId: null,
    source: "",
    fn: null,
    mode: "modular",
    direction: "back",
    criterion: null,
    activeSlice: null,
    selection: [],
    issuedSeq: 0,
    appliedSeq: 0,
    pending: false,
    error: null,
  };
}

export function loadProgram(
  state: ExplorerState,
  programId: string,
  source: string,
  fn: string | null
): ExplorerState {
  return {
    ...initialState(),
    mode: state.mode,
    direction: state.direction,
    programId,
    source,
    fn,
  };
}

export function spanKey(s: Span): string {
  return `${s.line}:${s.col}:${s.len}`;
}

export function unionSpans(a: Span[], b: Span[]): Span[] {
  const seen = new Map<string, Span>();
  for (const s of [...a, ...b]) {
    seen.set(spanKey(s), s);
  }
  return [...seen.values()].sort(
    (x, y) => x.line - y.line || x.col - y.col || x.len - y.len
  );
}

/** Start a slice request; returns the sequence number to tag it with. */
export function beginRequest(
  state: ExplorerState,
  criterion: Criterion,
  direction: Direction
): { state: ExplorerState; seq: number } {
  const seq = state.issuedSeq + 1;
  return {
    state: {
      ...state,
      issuedSeq: seq,
      pending: true,
      criterion,
      direction,
      error: null,
    },
    seq,
  };
}

/** Apply a slice response unless a newer request has been issued since. */
export function applySlice(
  state: ExplorerState,
  seq: number,
  response: SliceResponse
): ExplorerState {
  if (seq !== state.issuedSeq) {
    return state; // superseded: a newer criterion is in flight
  }
  return {
    ...state,
    pending: false,
    appliedSeq: seq,
    activeSlice: response.spans,
    error: null,
  };
}

export function applyError(state: ExplorerState, seq: number, message: string): ExplorerState {
  if (seq !== state.issuedSeq) {
    return state;
  }
  return { ...state, pending: false, error: message };
}

/** Union the active slice into the accumulated selection. */
export function addToSelection(state: ExplorerState): ExplorerState {
  if (!state.activeSlice) {
    return state;
  }
  return { ...state, selection: unionSpans(state.selection, state.activeSlice) };
}

export function clearSelection(state: ExplorerState): ExplorerState {
  return { ...state, selection: [] };
}

export function clearSlice(state: ExplorerState): ExplorerState {
  return { ...state, activeSlice: null, criterion: null };
}

/** Lines covered by at least one span (1-based). Spans may run over
 * multiple lines; length counts characters of the original source. */
export function linesOfSpans(source: string, spans: Span[]): Set<number> {
  const offsets = lineOffsets(source);
  const out = new Set<number>();
  for (const s of spans) {
    if (s.line < 1 || s.line > offsets.length) continue;
    const start = offsets[s.line - 1] + (s.col - 1);
    const end = start + Math.max(s.len, 1);
    for (let line = s.line; line <= offsets.length; line++) {
      const lineStart = offsets[line - 1];
      if (lineStart >= end) break;
      out.add(line);
    }
  }
  return out;
}

export function lineOffsets(source: string): number[] {
  const offsets = [0];
  for (let i = 0; i < source.length; i++) {
    if (source[i] === "\n") offsets.push(i + 1);
  }
  return offsets;
}

/** A line is faded iff a slice is active and the line contains no slice
 * span. */
export function fadedLines(state: ExplorerState): Set<number> {
  if (!state.activeSlice) {
    return new Set();
  }
  const keep = linesOfSpans(state.source, state.activeSlice);
  const out = new Set<number>();
  const total = state.source.split("\n").length;
  for (let line = 1; line <= total; line++) {
    if (!keep.has(line)) out.add(line);
  }
  return out;
}

/** The source with every selected line turned into a comment
 * (client-side preview only, nothing is persisted). */
export function commentOutPreview(state: ExplorerState): string {
  const selected = linesOfSpans(state.source, state.selection);
  return state.source
    .split("\n")
    .map((text, i) => (selected.has(i + 1) ? `// ${text}` : text))
    .join("\n");
}

const KEYWORDS = new Set([
  "fn", "extern", "let", "letprov", "if", "else", "while",
  "uniq", "shrd", "unit", "u32", "bool", "true", "false",
]);

export interface ClickTarget {
  word: string;
  line: number;
  col: number;
  isIdentifier: boolean;
}

/** The word under a (line, col) click; keywords and punctuation are not
 * slice criteria, so clicking them issues no request. */
export function clickTarget(
  source: string,
  line: number,
  col: number
): ClickTarget | null {
  const lines = source.split("\n");
  if (line < 1 || line > lines.length) return null;
  const text = lines[line - 1];
  const idx = col - 1;
  if (idx < 0 || idx >= text.length) return null;
  const isWord = (c: string) => /[A-Za-z0-9_]/.test(c);
  if (!isWord(text[idx])) return null;
  let start = idx;
  while (start > 0 && isWord(text[start - 1])) start--;
  let end = idx;
  while (end < text.length - 1 && isWord(text[end + 1])) end++;
  const word = text.slice(start, end + 1);
  const isIdentifier = /^[A-Za-z_]/.test(word) && !KEYWORDS.has(word);
  return { word, line, col: start + 1, isIdentifier };
}
