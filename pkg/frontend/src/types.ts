// Payload shapes mirrored from the glucotwin service API.

export interface TwinRecord {
  id: string;
  params: Record<string, number>;
  provenance: unknown;
  created_at: string;
}

export interface TraceJson {
  t0: number;
  dt: number;
  samples: number[];
  insulin_delivered: number[];
}

export interface QualityJson {
  robustness: number;
  tir: number;
  tar: number;
  mean_glucose: number;
  hypo_episodes: number;
  severe_hypo_episodes: number;
  score: number;
}

export interface EvaluateResponse {
  quality: QualityJson;
  trace: TraceJson;
}

export interface SimulateResponse {
  trace: TraceJson;
  metrics: Record<string, number>;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  details: string[];
}

export interface IterationJson {
  plan: string;
  quality: QualityJson;
  feedback: string;
  accepted: boolean;
}

export interface LogJson {
  iterations: IterationJson[];
  best_index: number | null;
  stop_reason: string;
}

export interface RefineResult {
  best_plan?: string;
  log: LogJson;
  hallucination?: { queries: number; irrelevant: number };
  error?: string;
}

export interface JobRecord {
  id: string;
  status: "queued" | "running" | "done" | "failed";
  result?: RefineResult;
  error?: string;
}

export interface DecisionRecord {
  id: string;
  twin_id: string;
  plan: string;
  verdict: "approved" | "rejected";
  note: string;
  created_at: string;
}

export type ScenarioJson = {
  horizon: number;
  meals: Array<[number, number]>;
  exercise: Array<[number, number, number]>;
};

export interface RefineContext {
  glucose: number;
  settings: { basal: number; isf: number; cr: number; target: number };
  scenario: ScenarioJson;
  spec: string;
  goal?: string;
  constraints?: Record<string, number>;
}
