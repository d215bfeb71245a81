import type { CasePage, CaseSummary, Decision } from "../src/types.js";

export function makeCase(overrides: Partial<CaseSummary> = {}): CaseSummary {
  return {
    case_id: "c-default",
    image_ref: "images/c-default.png",
    tb_score: 0.5,
    predicted: "tb",
    created_at: "2024-01-01T00:00:00+00:00",
    source: "other",
    heatmap_ref: "heatmaps/c-default.png",
    status: "pending",
    verdict: null,
    history_length: 0,
    ...overrides,
  };
}

export function pageOf(cases: CaseSummary[]): CasePage {
  return { cases, total: cases.length, page: 1, page_size: 50, pages: 1 };
}

export function reviewed(c: CaseSummary, decision: Decision): CaseSummary {
  return {
    ...c,
    status: "reviewed",
    verdict: { decision, reviewer: "r", recorded_at: "2024-01-02T00:00:00+00:00" },
    history_length: c.history_length + 1,
  };
}

/** fetch stub returning canned bodies per (method, path-prefix). */
export function fetchStub(routes: Array<[string, string, number, string]>) {
  const calls: Array<{ url: string; method: string; body?: string }> = [];
  const fn = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? "GET";
    calls.push({ url, method, body: init?.body as string | undefined });
    for (const [m, prefix, status, body] of routes) {
      if (m === method && url.startsWith(prefix)) {
        return new Response(body, {
          status,
          headers: { "Content-Type": "application/json" },
        });
      }
    }
    return new Response(JSON.stringify({ detail: "not found" }), { status: 404 });
  };
  return { fn, calls };
}
