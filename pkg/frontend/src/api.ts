/**
 * Typed client for the prototype-refinement HTTP service.
 *
 * Images travel as base64-encoded PNG strings in JSON fields, both
 * directions. Every mutating call carries the session version the client
 * last read; the service answers a stale version with 409, which this
 * client surfaces as an ApiError so the UI can prompt for a refresh
 * instead of overwriting someone else's commit.
 */

export interface ModelInfo {
  model_id: string;
  resolution: [number, number];
  embedding_dim: number;
  metadata: Record<string, unknown>;
}

export interface ModelsResponse {
  models: ModelInfo[];
}

export interface HealthResponse {
  status: string;
  models: number;
  sessions: number;
}

export interface SupportClass {
  name: string;
  images: string[];
}

export interface SessionSummary {
  session_id: string;
  version: number;
  model_id: string;
  class_names: string[];
  support_counts: number[];
  embedding_dim: number;
  resolution: [number, number];
  prototype_hashes: string[];
  num_events: number;
}

export interface PrototypesResponse {
  session_id: string;
  version: number;
  class_names: string[];
  images: string[];
  prototype_hashes: string[];
}

export interface InterpolateResponse {
  class_index: number;
  alphas: number[];
  frames: string[];
  embeddings: number[][] | null;
}

export interface ClassifyResponse {
  session_id: string;
  version: number;
  class_names: string[];
  distributions: number[][];
  predicted: number[];
}

export interface EvaluateItem {
  image: string;
  label: number;
}

export interface EvaluateResponse {
  session_id: string;
  version: number;
  accuracy: number;
  predicted: number[];
  correct: boolean[];
  misclassified_per_class: number[];
}

/** Non-2xx response, with the service's detail message and HTTP status. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }

  get isVersionConflict(): boolean {
    return this.status === 409;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

function flattenDetail(body: unknown): string {
  if (body && typeof body === "object" && "detail" in body) {
    const detail = (body as { detail: unknown }).detail;
    if (typeof detail === "string") return detail;
    if (Array.isArray(detail)) {
      // Validation errors arrive as a list of {loc, msg, ...} objects.
      return detail
        .map((item) =>
          item && typeof item === "object" && "msg" in item
            ? String((item as { msg: unknown }).msg)
            : JSON.stringify(item),
        )
        .join("; ");
    }
  }
  return JSON.stringify(body);
}

export class StudioApi {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    // Default to the global fetch, bound so it keeps its expected receiver.
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const payload = (await response.json()) as unknown;
    if (!response.ok) throw new ApiError(response.status, flattenDetail(payload));
    return payload as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  listModels(): Promise<ModelsResponse> {
    return this.request("GET", "/models");
  }

  createSession(modelId: string, classes: SupportClass[]): Promise<SessionSummary> {
    return this.request("POST", "/sessions", { model_id: modelId, classes });
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  getPrototypes(sessionId: string): Promise<PrototypesResponse> {
    return this.request("GET", `/sessions/${sessionId}/prototypes`);
  }

  interpolate(
    sessionId: string,
    classIndex: number,
    guideImage: string,
    steps: number,
  ): Promise<InterpolateResponse> {
    return this.request("POST", `/sessions/${sessionId}/interpolate`, {
      class_index: classIndex,
      guide_image: guideImage,
      steps,
    });
  }

  commit(
    sessionId: string,
    classIndex: number,
    alpha: number,
    guideImage: string,
    version: number,
  ): Promise<SessionSummary> {
    return this.request("POST", `/sessions/${sessionId}/commit`, {
      class_index: classIndex,
      alpha,
      guide_image: guideImage,
      version,
    });
  }

  reset(sessionId: string, classIndex: number, version: number): Promise<SessionSummary> {
    return this.request("POST", `/sessions/${sessionId}/reset`, {
      class_index: classIndex,
      version,
    });
  }

  classify(sessionId: string, images: string[]): Promise<ClassifyResponse> {
    return this.request("POST", `/sessions/${sessionId}/classify`, { images });
  }

  evaluate(sessionId: string, items: EvaluateItem[]): Promise<EvaluateResponse> {
    return this.request("POST", `/sessions/${sessionId}/evaluate`, { items });
  }
}
