export interface CommunitySummary {
  id: number;
  name: string;
  district_id: number;
  centroid: { x_m: number; y_m: number };
  profile: {
    developer: string;
    completion_year: number;
    building_count: number;
    estate_count: number;
    property_fee: number;
  };
}

export interface CommunityDetail extends CommunitySummary {
  transaction_count: number;
  last_quarter_stats: {
    mean: number;
    variance: number;
    max: number;
    min: number;
    count: number;
    missing: number;
  };
}

export type AttributeValue = number | string;

export interface AppraisalRequest {
  community_id: number;
  valuation_date?: number;
  attributes: Record<string, AttributeValue>;
}

export interface AppraisalResponse {
  unit_price_estimate: number;
  total_price: number;
  context: {
    neighborhood_size: number;
    hist_missing: number;
    district_id: number;
    checkpoint_version: string;
  };
}

export interface ApiError {
  code: string;
  message: string;
  field?: string;
}

export type AttributeSpec =
  | { type: "numeric" }
  | { type: "binary" }
  | { type: "categorical"; values: string[] };

export type AttributeSchema = Record<string, AttributeSpec>;

export interface TrailEntry {
  request: AppraisalRequest;
  response: AppraisalResponse;
}
