/** Typed client for the editing service's HTTP+JSON API. */

export interface PredictionPayload {
  mask_png_b64: string;
  interaction_count: number;
  confidence: Record<string, number>;
  shape: [number, number];
  num_classes: number;
  dice?: Record<string, number>;
}

export interface SessionCreated extends PredictionPayload {
  session_id: string;
}

export interface SessionState extends PredictionPayload {
  session_id: string;
  created: number;
  has_ground_truth: boolean;
  history: Array<{ scribbles_png_b64: string; mask_png_b64: string }>;
}

export interface ModelInfo {
  version: string;
  num_classes: number;
  sentinel: number;
  patch_size: number | null;
  median_intensity: number | null;
  editor_channels: string[];
}

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class EditingApi {
  private baseUrl: string;
  private fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new ApiError(0, "unreachable", `service unreachable: ${String(err)}`);
    }
    const text = await resp.text();
    let data: unknown = null;
    try {
      data = text ? JSON.parse(text) : null;
    } catch {
      /* non-JSON error body */
    }
    if (!resp.ok) {
      const obj = (data ?? {}) as { code?: string; message?: string };
      throw new ApiError(resp.status, obj.code ?? "error",
        obj.message ?? `HTTP ${resp.status}`);
    }
    return data as T;
  }

  health(): Promise<{ status: string; model_loaded: boolean }> {
    return this.request("GET", "/v1/healthz");
  }

  modelInfo(): Promise<ModelInfo> {
    return this.request("GET", "/v1/model");
  }

  createSession(imagePngB64: string): Promise<SessionCreated> {
    return this.request("POST", "/v1/sessions", { image_png_b64: imagePngB64 });
  }

  getSession(sessionId: string): Promise<SessionState> {
    return this.request("GET", `/v1/sessions/${sessionId}`);
  }

  submitScribbles(sessionId: string, scribblesPngB64: string,
                  idempotencyKey?: string): Promise<PredictionPayload> {
    return this.request("POST", `/v1/sessions/${sessionId}/scribbles`, {
      scribbles_png_b64: scribblesPngB64,
      idempotency_key: idempotencyKey ?? null,
    });
  }

  resetSession(sessionId: string): Promise<PredictionPayload> {
    return this.request("POST", `/v1/sessions/${sessionId}/reset`);
  }

  deleteSession(sessionId: string): Promise<{ deleted: boolean }> {
    return this.request("DELETE", `/v1/sessions/${sessionId}`);
  }

  setGroundTruth(sessionId: string, maskPngB64: string):
      Promise<{ dice: Record<string, number> }> {
    return this.request("POST", `/v1/sessions/${sessionId}/ground-truth`, {
      mask_png_b64: maskPngB64,
    });
  }

  robotScribbles(sessionId: string, seed?: number):
      Promise<{ scribbles_png_b64: string; sentinel: number }> {
    return this.request("POST", `/v1/sessions/${sessionId}/robot-scribbles`,
      { seed: seed ?? null });
  }
}
