import type {
  AppraisalRequest,
  AppraisalResponse,
  AttributeSchema,
  AttributeValue,
  CommunityDetail,
  CommunitySummary,
  TrailEntry,
} from "./types";

/** Session state; the what-if trail is append-only. */
export class UiState {
  query = "";
  candidates: CommunitySummary[] = [];
  selected: CommunityDetail | null = null;
  schema: AttributeSchema = {};
  form: Record<string, AttributeValue> = {};
  readonly trail: TrailEntry[] = [];
  lastResponse: AppraisalResponse | null = null;

  selectCommunity(detail: CommunityDetail): void {
    this.selected = detail;
  }

  setSchema(schema: AttributeSchema): void {
    this.schema = schema;
    for (const [name, spec] of Object.entries(schema)) {
      if (name in this.form) continue;
      if (spec.type === "numeric") this.form[name] = 0;
      else if (spec.type === "binary") this.form[name] = 0;
      else this.form[name] = spec.values[0] ?? "";
    }
  }

  /** Field-level validation mirroring the service's checks. */
  validate(): Map<string, string> {
    const errors = new Map<string, string>();
    for (const [name, spec] of Object.entries(this.schema)) {
      const value = this.form[name];
      if (value === undefined || value === "") {
        errors.set(name, "required");
        continue;
      }
      if (spec.type === "numeric") {
        const num = Number(value);
        if (!Number.isFinite(num)) errors.set(name, "must be a number");
        else if (name === "area" && num <= 0) errors.set(name, "area must be positive");
      } else if (spec.type === "binary") {
        if (value !== 0 && value !== 1) errors.set(name, "must be 0 or 1");
      } else if (!spec.values.includes(String(value))) {
        errors.set(name, "not a valid value");
      }
    }
    return errors;
  }

  canValuate(): boolean {
    return this.selected !== null && this.validate().size === 0;
  }

  buildRequest(): AppraisalRequest {
    if (!this.selected) throw new Error("no community selected");
    const attributes: Record<string, AttributeValue> = {};
    for (const [name, spec] of Object.entries(this.schema)) {
      const raw = this.form[name];
      attributes[name] =
        spec.type === "categorical" ? String(raw) : Number(raw);
    }
    return { community_id: this.selected.id, attributes };
  }

  recordValuation(request: AppraisalRequest, response: AppraisalResponse): TrailEntry {
    const entry: TrailEntry = { request, response };
    this.trail.push(entry);
    this.lastResponse = response;
    return entry;
  }
}
