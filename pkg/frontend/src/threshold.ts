import type { ApiClient, RawResult } from "./api.js";
import type { MetricsPayload } from "./types.js";

/** Pull a field's literal text out of a raw JSON body, so the display is
 * byte-equal to what the server sent (no float reformatting). */
export function extractLiteral(raw: string, field: string): string | null {
  const match = raw.match(new RegExp(`"${field}"\\s*:\\s*(null|-?[0-9.eE+-]+)`));
  return match ? match[1] : null;
}

export interface MetricsReadout {
  threshold: number;
  sensitivity: string;
  specificity: string;
  accuracy: string;
  raw: string;
  parsed: MetricsPayload;
}

export function readoutFrom(threshold: number, result: RawResult<MetricsPayload>): MetricsReadout {
  return {
    threshold,
    sensitivity: extractLiteral(result.raw, "sensitivity") ?? "null",
    specificity: extractLiteral(result.raw, "specificity") ?? "null",
    accuracy: extractLiteral(result.raw, "accuracy") ?? "null",
    raw: result.raw,
    parsed: result.parsed,
  };
}

/** Threshold slider backend: debounces metric fetches to at most one per
 * `minIntervalMs` (trailing call always fires with the latest value).
 * Slider moves never mutate anything server-side; GET only. */
export class ThresholdExplorer {
  latest: MetricsReadout | null = null;
  onUpdate: (readout: MetricsReadout) => void = () => {};

  private pending: number | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private lastFiredAt = -Infinity;

  constructor(
    private api: ApiClient,
    private minIntervalMs = 200,
    private now: () => number = () => Date.now(),
  ) {}

  setThreshold(threshold: number): void {
    this.pending = threshold;
    if (this.timer !== null) return; // trailing fetch already scheduled
    const wait = Math.max(0, this.minIntervalMs - (this.now() - this.lastFiredAt));
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire();
    }, wait);
  }

  private async fire(): Promise<void> {
    if (this.pending === null) return;
    const threshold = this.pending;
    this.pending = null;
    this.lastFiredAt = this.now();
    try {
      const result = await this.api.getMetrics(threshold);
      this.latest = readoutFrom(threshold, result);
      this.onUpdate(this.latest);
    } catch {
      // readout keeps its last value; slider stays responsive
    }
  }

  /** Immediate fetch, bypassing the debounce (initial page load). */
  async fetchNow(threshold: number): Promise<MetricsReadout> {
    this.lastFiredAt = this.now();
    const result = await this.api.getMetrics(threshold);
    this.latest = readoutFrom(threshold, result);
    this.onUpdate(this.latest);
    return this.latest;
  }
}
