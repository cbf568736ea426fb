import { vi } from "vitest";

import type {
  AppraisalResponse,
  AttributeSchema,
  CommunityDetail,
} from "../src/types";

export const MOCK_SCHEMA: AttributeSchema = {
  rooms: { type: "numeric" },
  area: { type: "numeric" },
  free_of_tax: { type: "binary" },
  decoration: { type: "categorical", values: ["none", "simple", "fine"] },
};

export const COMMUNITIES: CommunityDetail[] = [
  {
    id: 0,
    name: "Golden Gardens",
    district_id: 1,
    centroid: { x_m: 1000, y_m: 2000 },
    profile: { developer: "dev_00", completion_year: 2004, building_count: 9,
               estate_count: 420, property_fee: 2.4 },
    transaction_count: 17,
    last_quarter_stats: { mean: 5.4, variance: 0.1, max: 5.9, min: 5.0, count: 3, missing: 0 },
  },
  {
    id: 1,
    name: "Jade Terrace",
    district_id: 0,
    centroid: { x_m: 4000, y_m: 500 },
    profile: { developer: "dev_03", completion_year: 2012, building_count: 14,
               estate_count: 900, property_fee: 4.1 },
    transaction_count: 0,
    last_quarter_stats: { mean: 0, variance: 0, max: 0, min: 0, count: 0, missing: 1 },
  },
];

export interface MockOptions {
  schema?: AttributeSchema;
  /** unit prices returned per successive appraisal call */
  prices?: number[];
  unavailable?: boolean;
  appraiseError?: { status: number; code: string; message: string; field?: string };
}

export interface MockService {
  calls: { url: string; method: string; body?: unknown }[];
  appraiseCount: number;
  restore(): void;
}

function json(status: number, body: unknown): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  } as unknown as Response;
}

/** Installs a fetch stub emulating the appraisal service. */
export function installMockService(options: MockOptions = {}): MockService {
  const prices = options.prices ?? [5.0];
  const state: MockService = { calls: [], appraiseCount: 0, restore: () => {} };

  const handler = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    state.calls.push({ url, method, body });

    if (options.unavailable) {
      return json(503, { code: "loading", message: "model not loaded" });
    }
    if (url.includes("/api/spec")) {
      return json(200, { "x-estate-attributes": options.schema ?? MOCK_SCHEMA });
    }
    if (url.includes("/api/communities?")) {
      const q = decodeURIComponent(url.split("q=")[1] ?? "").toLowerCase();
      if (!q) return json(400, { code: "empty_query", message: "empty query" });
      return json(
        200,
        COMMUNITIES.filter((c) => c.name.toLowerCase().includes(q)).map(
          ({ transaction_count, last_quarter_stats, ...summary }) => summary,
        ),
      );
    }
    const detail = url.match(/\/api\/communities\/(\d+)/);
    if (detail) {
      const community = COMMUNITIES.find((c) => c.id === Number(detail[1]));
      return community
        ? json(200, community)
        : json(404, { code: "unknown_community", message: "unknown community" });
    }
    if (url.includes("/api/appraise")) {
      if (options.appraiseError) {
        const { status, ...err } = options.appraiseError;
        return json(status, err);
      }
      const unit = prices[Math.min(state.appraiseCount, prices.length - 1)]!;
      state.appraiseCount += 1;
      const response: AppraisalResponse = {
        unit_price_estimate: unit,
        total_price: unit * Number(body.attributes.area),
        context: { neighborhood_size: 4, hist_missing: 0,
                   district_id: 1, checkpoint_version: "1" },
      };
      return json(200, response);
    }
    return json(404, { code: "not_found", message: url });
  };

  const stub = vi.fn(handler);
  vi.stubGlobal("fetch", stub);
  state.restore = () => vi.unstubAllGlobals();
  return state;
}

export const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));
