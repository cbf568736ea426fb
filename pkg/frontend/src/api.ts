import type {
  ApiError,
  AppraisalRequest,
  AppraisalResponse,
  AttributeSchema,
  CommunityDetail,
  CommunitySummary,
} from "./types";

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiError,
  ) {
    super(body.message);
  }
}

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let body: ApiError;
    try {
      body = (await res.json()) as ApiError;
    } catch {
      body = { code: "http_error", message: `HTTP ${res.status}` };
    }
    throw new ServiceError(res.status, body);
  }
  return (await res.json()) as T;
}

/** Thin typed client; every number shown in the UI comes from these calls. */
export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async health(): Promise<{ status: string; n_communities: number; n_events: number }> {
    return asJson(await fetch(this.url("/api/health")));
  }

  async searchCommunities(query: string): Promise<CommunitySummary[]> {
    const q = encodeURIComponent(query);
    return asJson(await fetch(this.url(`/api/communities?q=${q}`)));
  }

  async communityDetail(id: number): Promise<CommunityDetail> {
    return asJson(await fetch(this.url(`/api/communities/${id}`)));
  }

  async appraise(request: AppraisalRequest): Promise<AppraisalResponse> {
    const res = await fetch(this.url("/api/appraise"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    return asJson(res);
  }

  /** The attribute form renders from the schema served by the backend. */
  async attributeSchema(): Promise<AttributeSchema> {
    const doc = await asJson<Record<string, unknown>>(
      await fetch(this.url("/api/spec")),
    );
    const attrs = doc["x-estate-attributes"];
    if (!attrs || typeof attrs !== "object") {
      throw new ServiceError(500, {
        code: "missing_schema",
        message: "service spec carries no estate-attribute schema",
      });
    }
    return attrs as AttributeSchema;
  }
}
