import { ApiClient, ServiceError } from "./api";
import { CityCanvas } from "./canvas";
import { renderForm, showFieldErrors } from "./form";
import { UiState } from "./state";
import type { AppraisalResponse, TrailEntry } from "./types";

export interface AppOptions {
  baseUrl?: string;
  debounceMs?: number;
}

const fmt = (x: number) => x.toFixed(4);

export class App {
  readonly state = new UiState();
  readonly client: ApiClient;
  private readonly debounceMs: number;
  private searchTimer: ReturnType<typeof setTimeout> | null = null;
  private inFlight: Promise<unknown> | null = null;
  private queued: (() => Promise<unknown>) | null = null;

  private readonly searchInput: HTMLInputElement;
  private readonly candidateList: HTMLUListElement;
  private readonly detailPanel: HTMLElement;
  private readonly formPanel: HTMLElement;
  private readonly valuateButton: HTMLButtonElement;
  private readonly resultPanel: HTMLElement;
  private readonly trailList: HTMLOListElement;
  private readonly banner: HTMLElement;
  private readonly canvas: CityCanvas;

  constructor(private readonly root: HTMLElement, options: AppOptions = {}) {
    this.client = new ApiClient(options.baseUrl ?? "");
    this.debounceMs = options.debounceMs ?? 200;
    this.root.innerHTML = `
      <div id="banner" class="banner" hidden></div>
      <section class="search">
        <input id="search" type="search" placeholder="Search residential communities" />
        <ul id="candidates"></ul>
      </section>
      <section class="detail">
        <canvas id="map" width="360" height="280"></canvas>
        <div id="detail"></div>
      </section>
      <section class="what-if">
        <form id="attributes"></form>
        <button id="valuate" disabled>Valuate</button>
        <div id="result"></div>
        <ol id="trail"></ol>
      </section>`;
    this.searchInput = this.must<HTMLInputElement>("#search");
    this.candidateList = this.must<HTMLUListElement>("#candidates");
    this.detailPanel = this.must<HTMLElement>("#detail");
    this.formPanel = this.must<HTMLElement>("#attributes");
    this.valuateButton = this.must<HTMLButtonElement>("#valuate");
    this.resultPanel = this.must<HTMLElement>("#result");
    this.trailList = this.must<HTMLOListElement>("#trail");
    this.banner = this.must<HTMLElement>("#banner");
    this.canvas = new CityCanvas(this.must<HTMLCanvasElement>("#map"));

    this.searchInput.addEventListener("input", () => this.onQueryChanged());
    this.valuateButton.addEventListener("click", (ev) => {
      ev.preventDefault();
      void this.valuate();
    });
  }

  private must<T extends Element>(selector: string): T {
    const el = this.root.querySelector<T>(selector);
    if (!el) throw new Error(`missing element ${selector}`);
    return el;
  }

  async start(): Promise<void> {
    try {
      this.state.setSchema(await this.client.attributeSchema());
      this.renderAttributeForm();
      this.hideBanner();
    } catch {
      this.showBanner("service unavailable");
    }
  }

  // -- search flow ---------------------------------------------------------

  private onQueryChanged(): void {
    const text = this.searchInput.value.trim();
    this.state.query = text;
    if (this.searchTimer !== null) clearTimeout(this.searchTimer);
    if (text === "") {
      this.state.candidates = [];
      this.renderCandidates();
      return;
    }
    this.searchTimer = setTimeout(() => {
      void this.runSearch(text);
    }, this.debounceMs);
  }

  async runSearch(text: string): Promise<void> {
    try {
      const results = await this.client.searchCommunities(text);
      this.state.candidates = results;
      this.canvas.remember(results);
      this.hideBanner();
      this.renderCandidates();
    } catch (err) {
      this.handleServiceError(err);
    }
  }

  private renderCandidates(): void {
    this.candidateList.textContent = "";
    for (const c of this.state.candidates) {
      const li = document.createElement("li");
      const button = document.createElement("button");
      button.type = "button";
      button.className = "candidate";
      button.dataset.id = String(c.id);
      button.textContent = `${c.name} (district ${c.district_id})`;
      button.addEventListener("click", () => {
        void this.selectCommunity(c.id);
      });
      li.appendChild(button);
      this.candidateList.appendChild(li);
    }
  }

  async selectCommunity(id: number): Promise<void> {
    try {
      const detail = await this.client.communityDetail(id);
      this.state.selectCommunity(detail);
      this.canvas.remember([detail]);
      this.canvas.draw(id);
      this.renderDetail();
      this.refreshValuateButton();
      this.hideBanner();
    } catch (err) {
      this.handleServiceError(err);
    }
  }

  private renderDetail(): void {
    const d = this.state.selected;
    if (!d) {
      this.detailPanel.textContent = "";
      return;
    }
    const stats = d.last_quarter_stats;
    const statsText = stats.missing
      ? "no sales in the last quarter"
      : `last-quarter mean ${fmt(stats.mean)} over ${stats.count} sales`;
    this.detailPanel.innerHTML = `
      <h2 id="detail-name">${d.name}</h2>
      <dl>
        <dt>District</dt><dd>${d.district_id}</dd>
        <dt>Developer</dt><dd>${d.profile.developer}</dd>
        <dt>Completion year</dt><dd>${d.profile.completion_year}</dd>
        <dt>Property fee</dt><dd>${d.profile.property_fee}</dd>
        <dt>Transactions</dt><dd>${d.transaction_count}</dd>
        <dt>Recent prices</dt><dd id="detail-stats">${statsText}</dd>
      </dl>`;
  }

  // -- what-if flow ----------------------------------------------------------

  private renderAttributeForm(): void {
    renderForm(this.formPanel, this.state.schema, this.state.form, (name, value) => {
      this.state.form[name] = value;
      this.refreshValuateButton();
    });
    this.refreshValuateButton();
  }

  private refreshValuateButton(): void {
    this.valuateButton.disabled = !this.state.canValuate();
  }

  async valuate(): Promise<void> {
    const errors = this.state.validate();
    showFieldErrors(this.formPanel, errors);
    if (errors.size > 0 || !this.state.selected) return;
    const request = this.state.buildRequest();

    const job = async () => {
      try {
        const response = await this.client.appraise(request);
        const entry = this.state.recordValuation(request, response);
        this.renderResult(response);
        this.renderTrailEntry(entry);
        this.hideBanner();
      } catch (err) {
        if (err instanceof ServiceError && err.status === 422 && err.body.field) {
          showFieldErrors(this.formPanel,
            new Map([[err.body.field, err.body.message]]));
        } else {
          this.handleServiceError(err);
        }
      }
    };
    // at most one in-flight appraisal; later submissions replace the queue
    if (this.inFlight) {
      this.queued = job;
      return;
    }
    this.inFlight = job().finally(() => {
      this.inFlight = null;
      const next = this.queued;
      this.queued = null;
      if (next) {
        this.inFlight = next().finally(() => {
          this.inFlight = null;
        });
      }
    });
    await this.inFlight;
  }

  private renderResult(response: AppraisalResponse): void {
    this.resultPanel.innerHTML = `
      <p>Unit price: <strong id="unit-price">${fmt(response.unit_price_estimate)}</strong>
         (10,000 CNY per m²)</p>
      <p>Total: <span id="total-price">${fmt(response.total_price)}</span>
         · comparables used: <span id="nbr-size">${response.context.neighborhood_size}</span></p>`;
  }

  private renderTrailEntry(entry: TrailEntry): void {
    const index = this.state.trail.length - 1;
    const li = document.createElement("li");
    li.className = "trail-entry";
    const unit = entry.response.unit_price_estimate;
    let deltaText = "";
    if (index > 0) {
      const prev = this.state.trail[index - 1]!.response.unit_price_estimate;
      const delta = unit - prev;
      deltaText = ` <span class="delta">(${delta >= 0 ? "+" : ""}${fmt(delta)})</span>`;
    }
    li.innerHTML = `#${index + 1} unit <span class="trail-price">${fmt(unit)}</span>${deltaText}`;
    this.trailList.appendChild(li);
  }

  // -- errors -----------------------------------------------------------------

  private handleServiceError(err: unknown): void {
    if (err instanceof ServiceError && err.status === 503) {
      this.showBanner("service unavailable");
    } else if (err instanceof ServiceError) {
      this.showBanner(err.body.message);
    } else {
      this.showBanner("service unavailable");
    }
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.hidden = false;
  }

  private hideBanner(): void {
    this.banner.hidden = true;
    this.banner.textContent = "";
  }
}

export function mountApp(root: HTMLElement, options: AppOptions = {}): App {
  return new App(root, options);
}
