import type { CasePage, CaseSummary, Decision, MetricsPayload, RocPayload } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

/** Raw body text kept next to the parsed value so readouts can show the
 * server's numbers byte-for-byte. */
export interface RawResult<T> {
  raw: string;
  parsed: T;
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string): Promise<RawResult<T>> {
    const resp = await this.fetchFn(this.base + path);
    const raw = await resp.text();
    if (!resp.ok) {
      throw new ApiError(resp.status, raw || resp.statusText);
    }
    return { raw, parsed: JSON.parse(raw) as T };
  }

  async listCases(status: "pending" | "reviewed" | "all" = "all", page = 1, pageSize = 50): Promise<CasePage> {
    const query = `status=${status}&page=${page}&page_size=${pageSize}`;
    return (await this.getJson<CasePage>(`/cases?${query}`)).parsed;
  }

  async getCase(caseId: string): Promise<CaseSummary> {
    return (await this.getJson<CaseSummary>(`/cases/${encodeURIComponent(caseId)}`)).parsed;
  }

  imageUrl(caseId: string): string {
    return `${this.base}/cases/${encodeURIComponent(caseId)}/image.png`;
  }

  heatmapUrl(caseId: string): string {
    return `${this.base}/cases/${encodeURIComponent(caseId)}/heatmap.png`;
  }

  async postVerdict(caseId: string, decision: Decision, reviewer = ""): Promise<CaseSummary> {
    const resp = await this.fetchFn(`${this.base}/cases/${encodeURIComponent(caseId)}/verdict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ decision, reviewer }),
    });
    const raw = await resp.text();
    if (!resp.ok) {
      throw new ApiError(resp.status, raw || resp.statusText);
    }
    return JSON.parse(raw) as CaseSummary;
  }

  /** Metrics with the raw body preserved for verbatim display. */
  async getMetrics(threshold: number): Promise<RawResult<MetricsPayload>> {
    return this.getJson<MetricsPayload>(`/metrics?threshold=${threshold}`);
  }

  async getRoc(): Promise<RocPayload> {
    return (await this.getJson<RocPayload>("/roc")).parsed;
  }
}
