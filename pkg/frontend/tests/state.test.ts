import { describe, expect, it } from "vitest";

import {
  addToSelection,
  applyError,
  applySlice,
  beginRequest,
  clickTarget,
  commentOutPreview,
  fadedLines,
  initialState,
  linesOfSpans,
  loadProgram,
  spanKey,
  unionSpans,
} from "../src/state.js";
import type { SliceResponse, Span } from "../src/api.js";

const SOURCE = [
  "fn main(u: unit) -> u32 {",
  "  let t: (u32, u32) = (1, 2);",
  "  t.1 := 3;",
  "  t.0",
  "}",
].join("\n");

function span(line: number, col: number, len: number): Span {
  return { line, col, len };
}

function loaded() {
  return loadProgram(initialState(), "tuple", SOURCE, "main");
}

function response(spans: Span[]): SliceResponse {
  return { fn: "main", direction: "back", locations: [], spans };
}

describe("span and line math", () => {
  it("maps spans to their lines", () => {
    const lines = linesOfSpans(SOURCE, [span(2, 25, 1), span(3, 10, 1)]);
    expect([...lines].sort()).toEqual([2, 3]);
  });

  it("handles multi-line spans", () => {
    const all = linesOfSpans(SOURCE, [span(1, 1, SOURCE.length)]);
    expect(all.size).toBe(5);
  });

  it("unions spans without duplicates", () => {
    const a = [span(1, 1, 2), span(2, 3, 1)];
    const b = [span(2, 3, 1), span(4, 3, 3)];
    const u = unionSpans(a, b);
    expect(u).toHaveLength(3);
    expect(new Set(u.map(spanKey)).size).toBe(3);
  });
});

describe("slice state machine", () => {
  it("applies a response for the latest request only", () => {
    let s = loaded();
    const first = beginRequest(s, { var: "t" }, "back");
    const second = beginRequest(first.state, { var: "u" }, "back");
    // the stale response arrives after a newer request was issued
    s = applySlice(second.state, first.seq, response([span(2, 3, 5)]));
    expect(s.activeSlice).toBeNull();
    s = applySlice(s, second.seq, response([span(3, 3, 8)]));
    expect(s.activeSlice).toEqual([span(3, 3, 8)]);
    expect(s.pending).toBe(false);
  });

  it("keeps errors tied to their request", () => {
    let s = loaded();
    const first = beginRequest(s, { var: "zzz" }, "back");
    s = applyError(first.state, first.seq, "no variable");
    expect(s.error).toBe("no variable");
    const retry = beginRequest(s, { var: "t" }, "back");
    expect(retry.state.error).toBeNull();
  });

  it("accumulates selections as a union of responses", () => {
    let s = loaded();
    const r1 = beginRequest(s, { var: "t" }, "back");
    s = applySlice(r1.state, r1.seq, response([span(2, 3, 5), span(3, 3, 3)]));
    s = addToSelection(s);
    const r2 = beginRequest(s, { var: "t" }, "fwd");
    s = applySlice(r2.state, r2.seq, response([span(3, 3, 3), span(4, 3, 3)]));
    s = addToSelection(s);
    expect(s.selection.map(spanKey).sort()).toEqual(
      ["2:3:5", "3:3:3", "4:3:3"].sort()
    );
  });
});

describe("fading and preview", () => {
  it("no fading without an active slice", () => {
    expect(fadedLines(loaded()).size).toBe(0);
  });

  it("fades exactly the lines without slice spans", () => {
    let s = loaded();
    const r = beginRequest(s, { var: "t" }, "back");
    s = applySlice(r.state, r.seq, response([span(2, 24, 1), span(3, 10, 1)]));
    const faded = fadedLines(s);
    expect(faded.has(2)).toBe(false);
    expect(faded.has(3)).toBe(false);
    expect(faded.has(1)).toBe(true);
    expect(faded.has(4)).toBe(true);
  });

  it("comments out exactly the selected lines", () => {
    let s = loaded();
    const r = beginRequest(s, { var: "t" }, "back");
    s = applySlice(r.state, r.seq, response([span(3, 3, 8)]));
    s = addToSelection(s);
    const preview = commentOutPreview(s);
    const lines = preview.split("\n");
    expect(lines[2]).toBe("//   t.1 := 3;");
    expect(lines[0]).toBe("fn main(u: unit) -> u32 {");
  });
});

describe("click targets", () => {
  it("finds identifiers and their column", () => {
    const target = clickTarget(SOURCE, 3, 3); // the "t" in "t.1 := 3"
    expect(target).not.toBeNull();
    expect(target!.word).toBe("t");
    expect(target!.col).toBe(3);
    expect(target!.isIdentifier).toBe(true);
  });

  it("rejects keywords and punctuation", () => {
    const kw = clickTarget(SOURCE, 2, 3); // inside "let"
    expect(kw!.isIdentifier).toBe(false);
    expect(clickTarget(SOURCE, 3, 6)).toBeNull(); // ":=" punctuation
  });
});
