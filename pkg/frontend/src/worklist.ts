import type { CasePage, CaseSummary, Decision } from "./types.js";

export type VerdictSender = (caseId: string, decision: Decision) => Promise<CaseSummary>;

export interface QueuedVerdict {
  caseId: string;
  decision: Decision;
}

export type SubmitOutcome = "sent" | "queued" | "cancelled" | "no_active";

/** Worklist state: holds cases exactly in the order the service returned
 * them (triage order is a server concern), tracks the active case, and
 * queues verdicts that fail to send so they replay on reconnect. */
export class Worklist {
  cases: CaseSummary[] = [];
  activeIndex = -1;
  queue: QueuedVerdict[] = [];
  onWarn: (message: string) => void = () => {};
  /** Guard invoked before superseding an existing verdict. */
  confirmSupersede: (c: CaseSummary) => boolean = () => true;

  load(page: CasePage): void {
    const previous = this.active?.case_id;
    this.cases = [...page.cases]; // never re-sorted client-side
    this.activeIndex = -1;
    if (previous !== undefined) {
      this.activeIndex = this.cases.findIndex((c) => c.case_id === previous);
    }
    if (this.activeIndex < 0) {
      this.activeIndex = this.cases.findIndex((c) => c.status === "pending");
    }
    if (this.activeIndex < 0 && this.cases.length > 0) {
      this.activeIndex = 0;
    }
  }

  get active(): CaseSummary | null {
    return this.activeIndex >= 0 && this.activeIndex < this.cases.length
      ? this.cases[this.activeIndex]
      : null;
  }

  select(caseId: string): boolean {
    const idx = this.cases.findIndex((c) => c.case_id === caseId);
    if (idx < 0) return false;
    this.activeIndex = idx;
    return true;
  }

  /** Move to the next pending case after the current one, wrapping around;
   * stays put when nothing is pending. */
  advanceToNextPending(): boolean {
    const n = this.cases.length;
    for (let step = 1; step <= n; step++) {
      const idx = (this.activeIndex + step) % n;
      if (this.cases[idx]?.status === "pending") {
        this.activeIndex = idx;
        return true;
      }
    }
    return false;
  }

  private replace(updated: CaseSummary): void {
    const idx = this.cases.findIndex((c) => c.case_id === updated.case_id);
    if (idx >= 0) this.cases[idx] = updated;
  }

  /** Record a verdict for the active case and advance the queue. Network
   * failures queue the verdict locally (retried via flushQueue) and still
   * advance, with a warning. */
  async submitVerdict(decision: Decision, send: VerdictSender): Promise<SubmitOutcome> {
    const target = this.active;
    if (!target) return "no_active";
    if (target.status === "reviewed" && !this.confirmSupersede(target)) {
      return "cancelled";
    }
    try {
      const updated = await send(target.case_id, decision);
      this.replace(updated);
      this.advanceToNextPending();
      return "sent";
    } catch {
      this.queue.push({ caseId: target.case_id, decision });
      // optimistic local mark so the worklist keeps moving offline
      this.replace({
        ...target,
        status: "reviewed",
        verdict: { decision, reviewer: "(queued)", recorded_at: "" },
        history_length: target.history_length + 1,
      });
      this.onWarn(`verdict for ${target.case_id} queued; will retry when the service is reachable`);
      this.advanceToNextPending();
      return "queued";
    }
  }

  /** Retry queued verdicts in order; stops at the first failure. Returns
   * the number delivered. */
  async flushQueue(send: VerdictSender): Promise<number> {
    let delivered = 0;
    while (this.queue.length > 0) {
      const item = this.queue[0];
      try {
        const updated = await send(item.caseId, item.decision);
        this.replace(updated);
        this.queue.shift();
        delivered += 1;
      } catch {
        break; // still offline; keep remaining items queued
      }
    }
    return delivered;
  }
}
