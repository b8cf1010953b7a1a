// Screen wiring for an elicitation session: configure variables, rank
// choice sets, launch training, inspect the fitted density.  All state is
// server-authoritative; this file only moves payloads onto the screen.

import { ApiClient, DensityGrid, Marginals, QueryView, SessionView } from "./api.js";
import { densitySummary, renderHeatmap, renderMarginals } from "./charts.js";
import { RankingScreen } from "./ranking.js";

export interface AppOptions {
  pollMs?: number;
  gridResolution?: number;
}

export class App {
  readonly api: ApiClient;
  session: SessionView | null = null;
  ranking: RankingScreen | null = null;
  lastDensity: DensityGrid | null = null;
  lastMarginals: Marginals | null = null;
  private pollMs: number;
  private gridRes: number;
  private axes: [number, number] = [0, 1];
  private poller: ReturnType<typeof setInterval> | null = null;

  constructor(private root: HTMLElement, api: ApiClient, options: AppOptions = {}) {
    this.api = api;
    this.pollMs = options.pollMs ?? 1000;
    this.gridRes = options.gridResolution ?? 64;
  }

  start() {
    this.root.innerHTML = `
      <header>
        <h1>Belief elicitation</h1>
        <p data-role="session-info">no session</p>
      </header>
      <section data-role="setup">
        <h2>New session</h2>
        <form data-role="setup-form">
          <label>variables (comma-separated) <input name="names" value="x0, x1"></label>
          <label>lower bounds <input name="lower" value="-4, -4"></label>
          <label>upper bounds <input name="upper" value="4, 4"></label>
          <label>alternatives per query (k) <input name="k" value="4"></label>
          <button type="submit">Create session</button>
          <p class="banner hidden" data-role="setup-error"></p>
        </form>
      </section>
      <section data-role="ranking-section" class="hidden">
        <h2>Rank the alternatives</h2>
        <div data-role="ranking"></div>
        <div class="trainbox">
          <button data-role="train">Train model</button>
          <span data-role="train-status">idle</span>
        </div>
      </section>
      <section data-role="explorer" class="hidden">
        <h2>Belief density</h2>
        <p data-role="explorer-empty">Train a model first to see the density.</p>
        <div data-role="explorer-content" class="hidden">
          <label>axes <select data-role="axes"></select></label>
          <canvas data-role="heatmap" width="320" height="320"></canvas>
          <p data-role="density-summary"></p>
          <div data-role="marginals" class="marginals"></div>
        </div>
      </section>
    `;
    const form = this.root.querySelector('[data-role="setup-form"]') as HTMLFormElement;
    form.addEventListener("submit", (e) => {
      e.preventDefault();
      void this.createSession(form);
    });
    const trainButton = this.root.querySelector('[data-role="train"]') as HTMLButtonElement;
    trainButton.addEventListener("click", () => void this.train());
    const axesSelect = this.root.querySelector('[data-role="axes"]') as HTMLSelectElement;
    axesSelect.addEventListener("change", () => {
      const [i, j] = axesSelect.value.split(",").map(Number);
      this.axes = [i, j];
      void this.refreshExplorer();
    });
  }

  private show(role: string, on: boolean) {
    const el = this.root.querySelector(`[data-role="${role}"]`) as HTMLElement;
    el.classList.toggle("hidden", !on);
  }

  private text(role: string, value: string) {
    (this.root.querySelector(`[data-role="${role}"]`) as HTMLElement).textContent = value;
  }

  async createSession(form: HTMLFormElement) {
    const get = (name: string) =>
      (form.querySelector(`[name="${name}"]`) as HTMLInputElement).value;
    try {
      const names = get("names").split(",").map((s) => s.trim()).filter(Boolean);
      const lower = get("lower").split(",").map(Number);
      const upper = get("upper").split(",").map(Number);
      const k = Number(get("k"));
      this.session = await this.api.createSession({
        dim: names.length, names, lower, upper, k,
      });
    } catch (err) {
      const banner = this.root.querySelector('[data-role="setup-error"]') as HTMLElement;
      banner.textContent = err instanceof Error ? err.message : String(err);
      banner.classList.remove("hidden");
      return;
    }
    this.show("setup", false);
    this.show("ranking-section", true);
    this.show("explorer", true);
    this.text("session-info",
      `session ${this.session.id} — k = ${this.session.k}, ` +
      `variables: ${this.session.names.join(", ")}`);
    const axesSelect = this.root.querySelector('[data-role="axes"]') as HTMLSelectElement;
    axesSelect.innerHTML = "";
    for (let i = 0; i < this.session.dim; i++) {
      for (let j = 0; j < this.session.dim; j++) {
        if (i === j) continue;
        const option = document.createElement("option");
        option.value = `${i},${j}`;
        option.textContent = `${this.session.names[i]} × ${this.session.names[j]}`;
        axesSelect.appendChild(option);
      }
    }
    this.ranking = new RankingScreen(
      this.root.querySelector('[data-role="ranking"]') as HTMLElement,
      this.session.names,
      (queryId, ranking) => this.submitRanking(queryId, ranking),
    );
    await this.nextQuery();
  }

  async nextQuery() {
    if (!this.session || !this.ranking) return;
    const query: QueryView = await this.api.nextQuery(this.session.id);
    this.ranking.showQuery(query);
    this.ranking.setProgress(`${this.session.dataset_size} rankings collected`);
  }

  private async submitRanking(queryId: string, ranking: number[]) {
    if (!this.session || !this.ranking) return;
    const ack = await this.api.submitRanking(this.session.id, queryId, ranking);
    this.session.dataset_size = ack.dataset_size;
    await this.nextQuery(); // fetch the next query right away
  }

  async train(iterations = 1500) {
    if (!this.session) return;
    try {
      await this.api.startTraining(this.session.id, iterations);
    } catch (err) {
      this.text("train-status", err instanceof Error ? err.message : String(err));
      return;
    }
    this.text("train-status", "running…");
    this.poll();
  }

  private poll() {
    if (this.poller) clearInterval(this.poller);
    this.poller = setInterval(() => {
      void (async () => {
        if (!this.session) return;
        const status = await this.api.trainingStatus(this.session.id);
        if (status.state === "running") {
          this.text("train-status", `running ${(status.progress * 100).toFixed(0)}%`);
          return;
        }
        if (this.poller) clearInterval(this.poller);
        this.poller = null;
        if (status.state === "failed") {
          this.text("train-status", `failed: ${status.error ?? "unknown"}`);
          return;
        }
        this.text("train-status", "done");
        this.session.has_model = true;
        await this.refreshExplorer();
      })();
    }, this.pollMs);
  }

  async refreshExplorer() {
    if (!this.session || !this.session.has_model) return;
    this.lastDensity = await this.api.density(this.session.id, this.axes, this.gridRes);
    this.lastMarginals = await this.api.marginals(this.session.id, this.gridRes);
    this.show("explorer-empty", false);
    this.show("explorer-content", true);
    renderHeatmap(
      this.root.querySelector('[data-role="heatmap"]') as HTMLCanvasElement,
      this.lastDensity,
    );
    this.text("density-summary", densitySummary(this.lastDensity, this.session.names));
    renderMarginals(
      this.root.querySelector('[data-role="marginals"]') as HTMLElement,
      this.lastMarginals,
      this.session.names,
    );
  }

  trainStatusText(): string {
    return (this.root.querySelector('[data-role="train-status"]') as HTMLElement).textContent ?? "";
  }
}
