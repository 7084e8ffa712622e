// Typed client for the analysis service. The UI never computes slices
// itself: every highlight comes from one of these responses.

export interface Span {
  line: number;
  col: number;
  len: number;
}

export interface ProgramSummary {
  id: string;
  path: string;
  functions: string[];
}

export interface LocationInfo {
  fn: string;
  id: number;
  span: Span;
}

export interface ProgramPayload {
  id: string;
  source: string;
  functions: { name: string; extern: boolean; param: string }[];
  locations: LocationInfo[];
}

export interface SliceResponse {
  fn: string;
  direction: string;
  locations: number[];
  spans: Span[];
}

export type Criterion = { var: string } | { span: { line: number; col: number } };

export interface SliceRequest {
  program: string;
  fn: string;
  criterion: Criterion;
  direction: "back" | "fwd";
  mode: string;
}

export interface Transport {
  getJSON(path: string): Promise<unknown>;
  postJSON(path: string, body: unknown): Promise<unknown>;
}

export class HttpError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export function fetchTransport(base = ""): Transport {
  async function request(path: string, init?: RequestInit): Promise<unknown> {
    const resp = await fetch(base + path, init);
    const data = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const detail = (data as { error?: string }).error ?? resp.statusText;
      throw new HttpError(resp.status, detail);
    }
    return data;
  }
  return {
    getJSON: (path) => request(path),
    postJSON: (path, body) =>
      request(path, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      }),
  };
}

export async function listPrograms(t: Transport): Promise<ProgramSummary[]> {
  const data = (await t.getJSON("/programs")) as { programs: ProgramSummary[] };
  return data.programs;
}

export async function getProgram(t: Transport, id: string): Promise<ProgramPayload> {
  return (await t.getJSON(`/program/${id}`)) as ProgramPayload;
}

export async function postSlice(t: Transport, req: SliceRequest): Promise<SliceResponse> {
  return (await t.postJSON("/slice", req)) as SliceResponse;
}
