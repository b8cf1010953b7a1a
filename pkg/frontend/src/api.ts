// Thin typed client over the elicitation service HTTP API.
// Every number the UI shows originates from one of these payloads.

export interface TrainStatus {
  state: "idle" | "running" | "failed" | "done";
  progress: number;
  trace_tail: number[];
  error: string | null;
}

export interface SessionView {
  id: string;
  dim: number;
  names: string[];
  lower: number[];
  upper: number[];
  k: number;
  lambda_weight: number;
  s_lik: number;
  dataset_size: number;
  pending_queries: number;
  has_model: boolean;
  training: TrainStatus;
}

export interface QueryView {
  query_id: string;
  names: string[];
  points: number[][];
}

export interface DensityGrid {
  axes: number[];
  x: number[];
  y: number[];
  density: number[][];
}

export interface Marginal {
  dim: number;
  centers: number[];
  density: number[];
}

export interface Marginals {
  resolution: number;
  dims: Marginal[];
}

export interface CreateSessionRequest {
  dim: number;
  names?: string[];
  lower: number[];
  upper: number[];
  k: number;
  lambda_weight?: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly field?: string,
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  const body = await response.json().catch(() => null);
  if (!response.ok) {
    const code = body?.code ?? "http_error";
    const message = body?.message ?? `${response.status} on ${url}`;
    throw new ApiError(response.status, code, message, body?.field ?? undefined);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  createSession(req: CreateSessionRequest): Promise<SessionView> {
    return request(`${this.base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  getSession(id: string): Promise<SessionView> {
    return request(`${this.base}/sessions/${id}`);
  }

  nextQuery(id: string): Promise<QueryView> {
    return request(`${this.base}/sessions/${id}/query`);
  }

  submitRanking(id: string, queryId: string, ranking: number[]): Promise<{ dataset_size: number }> {
    return request(`${this.base}/sessions/${id}/responses`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ query_id: queryId, ranking }),
    });
  }

  startTraining(id: string, iterations: number, seed = 0): Promise<TrainStatus> {
    return request(`${this.base}/sessions/${id}/train`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ iterations, seed }),
    });
  }

  trainingStatus(id: string): Promise<TrainStatus> {
    return request(`${this.base}/sessions/${id}/train/status`);
  }

  density(id: string, axes: [number, number], res: number): Promise<DensityGrid> {
    return request(`${this.base}/sessions/${id}/density?axes=${axes[0]},${axes[1]}&res=${res}`);
  }

  marginals(id: string, res: number): Promise<Marginals> {
    return request(`${this.base}/sessions/${id}/marginals?res=${res}`);
  }
}
