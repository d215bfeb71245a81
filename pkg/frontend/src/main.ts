import { ApiClient } from "./api.js";
import { decisionForKey } from "./keyboard.js";
import { canvasContext, renderCase } from "./overlay.js";
import { ThresholdExplorer } from "./threshold.js";
import { Worklist } from "./worklist.js";
import type { CaseSummary, Decision } from "./types.js";

const api = new ApiClient("");
const worklist = new Worklist();
const explorer = new ThresholdExplorer(api, 200);

const els = {
  tbody: document.querySelector("#worklist tbody") as HTMLTableSectionElement,
  total: document.getElementById("total") as HTMLSpanElement,
  statusFilter: document.getElementById("status-filter") as HTMLSelectElement,
  canvas: document.getElementById("case-canvas") as HTMLCanvasElement,
  badge: document.getElementById("badge") as HTMLSpanElement,
  caseMeta: document.getElementById("case-meta") as HTMLDivElement,
  alpha: document.getElementById("alpha") as HTMLInputElement,
  alphaValue: document.getElementById("alpha-value") as HTMLSpanElement,
  threshold: document.getElementById("threshold") as HTMLInputElement,
  thresholdValue: document.getElementById("threshold-value") as HTMLSpanElement,
  sens: document.getElementById("sensitivity") as HTMLSpanElement,
  spec: document.getElementById("specificity") as HTMLSpanElement,
  acc: document.getElementById("accuracy") as HTMLSpanElement,
  warnings: document.getElementById("warnings") as HTMLDivElement,
  reviewer: document.getElementById("reviewer") as HTMLInputElement,
};

let rawImage: HTMLImageElement | null = null;
let heatmapImage: HTMLImageElement | null = null;

function warn(message: string): void {
  els.warnings.textContent = message;
  els.warnings.classList.add("visible");
  setTimeout(() => els.warnings.classList.remove("visible"), 6000);
}

worklist.onWarn = warn;
worklist.confirmSupersede = (c: CaseSummary) =>
  window.confirm(
    `Case ${c.case_id} already has a verdict (${c.verdict?.decision}). Supersede it?`,
  );

function loadImage(url: string): Promise<HTMLImageElement | null> {
  return new Promise((resolve) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => resolve(null); // e.g. heatmap 404 -> no localization
    img.src = url;
  });
}

function repaint(): void {
  const ctx = canvasContext(els.canvas);
  const alpha = Number(els.alpha.value);
  els.alphaValue.textContent = alpha.toFixed(2);
  const result = renderCase(ctx, rawImage, heatmapImage, alpha);
  els.badge.textContent = result.badge ?? "";
  els.badge.classList.toggle("visible", result.badge !== null);
}

async function showActive(): Promise<void> {
  const active = worklist.active;
  if (!active) {
    els.caseMeta.textContent = "no cases";
    rawImage = heatmapImage = null;
    repaint();
    return;
  }
  els.caseMeta.textContent =
    `${active.case_id} · score ${active.tb_score} · predicted ${active.predicted} · ${active.status}` +
    (active.verdict ? ` · verdict ${active.verdict.decision}` : "");
  [rawImage, heatmapImage] = await Promise.all([
    loadImage(api.imageUrl(active.case_id)),
    loadImage(api.heatmapUrl(active.case_id)),
  ]);
  repaint();
  renderRows();
}

function renderRows(): void {
  els.tbody.replaceChildren();
  // rows appear exactly in service order: pending first, riskiest first
  for (const c of worklist.cases) {
    const tr = document.createElement("tr");
    tr.classList.toggle("active", worklist.active?.case_id === c.case_id);
    tr.classList.toggle("reviewed", c.status === "reviewed");
    const score = document.createElement("td");
    score.textContent = String(c.tb_score);
    const id = document.createElement("td");
    id.textContent = c.case_id.slice(0, 12);
    const predicted = document.createElement("td");
    predicted.textContent = c.predicted;
    const status = document.createElement("td");
    status.textContent = c.verdict ? `${c.status} (${c.verdict.decision})` : c.status;
    tr.append(score, id, predicted, status);
    tr.addEventListener("click", () => {
      worklist.select(c.case_id);
      void showActive();
    });
    els.tbody.append(tr);
  }
}

async function refreshWorklist(): Promise<void> {
  const status = els.statusFilter.value as "pending" | "reviewed" | "all";
  const page = await api.listCases(status, 1, 200);
  worklist.load(page);
  els.total.textContent = `${page.total} case(s)`;
  renderRows();
  await showActive();
}

async function submit(decision: Decision): Promise<void> {
  const reviewer = els.reviewer.value;
  const outcome = await worklist.submitVerdict(decision, (id, d) => api.postVerdict(id, d, reviewer));
  if (outcome === "sent" || outcome === "queued") {
    renderRows();
    await showActive();
  }
}

function wireControls(): void {
  els.alpha.addEventListener("input", repaint);
  els.threshold.addEventListener("input", () => {
    const t = Number(els.threshold.value);
    els.thresholdValue.textContent = t.toFixed(2);
    explorer.setThreshold(t);
  });
  explorer.onUpdate = (readout) => {
    // verbatim literals from the service body, never reformatted
    els.sens.textContent = readout.sensitivity;
    els.spec.textContent = readout.specificity;
    els.acc.textContent = readout.accuracy;
  };
  els.statusFilter.addEventListener("change", () => void refreshWorklist());
  for (const decision of ["confirm_tb", "confirm_healthy", "uncertain"] as Decision[]) {
    document.getElementById(`btn-${decision}`)?.addEventListener("click", () => void submit(decision));
  }
  document.addEventListener("keydown", (ev) => {
    const decision = decisionForKey(ev.key, (ev.target as HTMLElement | null)?.tagName);
    if (decision) void submit(decision);
  });
  // retry queued (offline) verdicts in the background
  setInterval(() => {
    void worklist
      .flushQueue((id, d) => api.postVerdict(id, d, els.reviewer.value))
      .then((n) => {
        if (n > 0) {
          warn(`${n} queued verdict(s) delivered`);
          void refreshWorklist();
        }
      });
  }, 5000);
}

async function start(): Promise<void> {
  wireControls();
  await refreshWorklist();
  await explorer.fetchNow(Number(els.threshold.value));
}

void start();
