// Thin typed client for the designdiff service. The fetch implementation is
// injectable so tests can run against a mock without a server.

import type {
  AssembleResponse,
  AutocompleteResponse,
  DesignPayload,
  EvaluateResponse,
  GenerateResponse,
  GraphPayload,
  Schema,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class StudioApi {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, body?: unknown): Promise<T> {
    const init: RequestInit = body === undefined
      ? {}
      : {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      };
    const res = await this.fetchImpl(`${this.base}${path}`, init);
    if (!res.ok) {
      const detail = await res.json().then((b) => JSON.stringify(b.detail)).catch(() => "");
      throw new ApiError(res.status, detail || `HTTP ${res.status}`);
    }
    return res.json() as Promise<T>;
  }

  getSchema(): Promise<{ config_hash: string; schema: Schema }> {
    return this.request("/schema");
  }

  autocomplete(design: DesignPayload, n: number, seed: number): Promise<AutocompleteResponse> {
    return this.request("/autocomplete", { design, n, seed });
  }

  assemble(graph: GraphPayload): Promise<AssembleResponse> {
    return this.request("/assemble", { graph });
  }

  generate(req: {
    design?: DesignPayload;
    graph?: GraphPayload;
    prompt: string;
    n_samples: number;
    seed: number;
    steps?: number;
    guidance_scale?: number;
  }): Promise<GenerateResponse> {
    return this.request("/generate", req);
  }

  evaluate(images: string[], design?: DesignPayload, graph?: GraphPayload): Promise<EvaluateResponse> {
    return this.request("/evaluate", { images, design, graph });
  }
}
