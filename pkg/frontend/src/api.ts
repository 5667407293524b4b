// Typed client for the session API; everything is plain JSON over HTTP.

export interface StatusDoc {
  state: "running" | "done";
  frames_digest?: string;
  n?: number;
  steps?: number;
  mode?: string;
  variables?: string[];
  result_status?: string;
}

export interface QueryDoc {
  id: number;
  kind: "conflict" | "conflict_cont";
  location: string;
  level: number | null;
  fields: Record<string, string>;
  pre: string;
  stay: string | null;
  guard: string | null;
  cmd: string[] | null;
  init: string;
  flow?: string;
  ce: Record<string, number>;
}

export interface TrajectoryDoc {
  query: number;
  samples: Record<string, number>[];
}

export interface ResultDoc {
  status: "valid" | "model" | "aborted";
  reason?: string;
  invariant?: Record<string, string>;
  trace?: { location: string; index: number | string; valuation: Record<string, number> }[];
  stats?: Record<string, unknown>;
}

export interface AnswerOutcome {
  code: number;
  reason: string;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class SessionClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async getJson<T>(path: string): Promise<T | null> {
    const resp = await this.fetchFn(this.base + path);
    if (resp.status === 204) return null;
    if (!resp.ok) throw new Error(`${path}: HTTP ${resp.status}`);
    return (await resp.json()) as T;
  }

  status(): Promise<StatusDoc | null> {
    return this.getJson<StatusDoc>("/status");
  }

  pendingQuery(): Promise<QueryDoc | null> {
    return this.getJson<QueryDoc>("/query");
  }

  trajectory(queryId: number): Promise<TrajectoryDoc | null> {
    return this.getJson<TrajectoryDoc>(`/trajectory?query=${queryId}`).catch(() => null);
  }

  result(): Promise<ResultDoc | null> {
    return this.getJson<ResultDoc>("/result");
  }

  async answer(queryId: number, psi: string): Promise<AnswerOutcome> {
    const resp = await this.fetchFn(this.base + "/answer", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ id: queryId, psi }),
    });
    let reason = "";
    try {
      const doc = (await resp.json()) as { reason?: string; error?: string };
      reason = doc.reason ?? doc.error ?? "";
    } catch {
      reason = "";
    }
    return { code: resp.status, reason };
  }
}
