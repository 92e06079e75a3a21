import { apiBase } from "./config.js";

export interface ProjectInfo {
  project_id: string;
  task_count: number;
  group: string;
}

export interface EvidenceCard {
  title: string;
  description: string;
  story_point: number;
  similarity: number;
}

export interface EstimateInput {
  title: string;
  description: string;
  top_k?: number;
  temperature?: number;
}

export interface EstimateResponse {
  suggested: number;
  evidence: EvidenceCard[];
  config: { embedding_model: string; top_k: number; temperature: number };
}

export interface DecisionInput {
  title: string;
  description: string;
  suggested: number;
  final: number;
}

export interface DecisionRecord extends DecisionInput {
  id: number;
  project_id: string;
  accepted: boolean;
  decided_at: string;
}

export interface HistoryPage {
  items: DecisionRecord[];
  page: number;
  size: number;
  total: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(`${apiBase()}${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
  } catch (err) {
    throw new ApiError(0, `network failure: ${String(err)}`);
  }
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (body.detail) detail = JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export function listProjects(): Promise<ProjectInfo[]> {
  return request<ProjectInfo[]>("/projects");
}

export function requestEstimate(projectId: string, input: EstimateInput): Promise<EstimateResponse> {
  return request<EstimateResponse>(`/projects/${encodeURIComponent(projectId)}/estimate`, {
    method: "POST",
    body: JSON.stringify(input),
  });
}

export function recordDecision(projectId: string, decision: DecisionInput): Promise<DecisionRecord> {
  return request<DecisionRecord>(`/projects/${encodeURIComponent(projectId)}/decisions`, {
    method: "POST",
    body: JSON.stringify(decision),
  });
}

export function fetchHistory(projectId: string, page = 1, size = 20): Promise<HistoryPage> {
  return request<HistoryPage>(
    `/projects/${encodeURIComponent(projectId)}/history?page=${page}&size=${size}`,
  );
}

export type ApiClient = {
  listProjects: typeof listProjects;
  requestEstimate: typeof requestEstimate;
  recordDecision: typeof recordDecision;
  fetchHistory: typeof fetchHistory;
};

export const api: ApiClient = { listProjects, requestEstimate, recordDecision, fetchHistory };
