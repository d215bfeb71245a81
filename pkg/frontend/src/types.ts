// Mirrors of the screening service JSON payloads. The UI never derives
// scores or metrics itself; these shapes are render-only.

export type Decision = "confirm_tb" | "confirm_healthy" | "uncertain";

export interface Verdict {
  decision: Decision;
  reviewer: string;
  recorded_at: string;
}

export interface CaseSummary {
  case_id: string;
  image_ref: string;
  tb_score: number;
  predicted: "healthy" | "tb";
  created_at: string;
  source: string;
  heatmap_ref: string | null;
  status: "pending" | "reviewed";
  verdict: Verdict | null;
  history_length: number;
}

export interface CasePage {
  cases: CaseSummary[];
  total: number;
  page: number;
  page_size: number;
  pages: number;
}

export interface Confusion {
  tp: number;
  tn: number;
  fp: number;
  fn: number;
}

export interface MetricsPayload {
  threshold: number;
  sensitivity: number | null;
  specificity: number | null;
  accuracy: number | null;
  confusion: Confusion | null;
  counts: { reviewed: number; definite: number; excluded_uncertain: number };
  note?: string;
}

export interface RocPayload {
  points: [number, number][];
  auc: number;
  n_definite: number;
}
