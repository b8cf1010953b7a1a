// Drag-to-order ranking screen: alternatives start in a pool and are
// placed onto a ranked list whose top slot is "most preferred".  Submit
// stays disabled until every card is placed, so only complete
// permutations ever leave the screen.  Cards can also be placed and
// reordered with buttons, keeping the whole flow keyboard-drivable.

import { QueryView } from "./api.js";

const LETTERS = "ABCDEFGHIJ";

export class RankingScreen {
  private pool: HTMLUListElement;
  private ranked: HTMLOListElement;
  private submitButton: HTMLButtonElement;
  private banner: HTMLElement;
  private progress: HTMLElement;
  private query: QueryView | null = null;
  private poolItems: number[] = [];
  private order: number[] = [];
  private dragged: number | null = null;
  private busy = false;

  constructor(
    private root: HTMLElement,
    private names: string[],
    private onSubmit: (queryId: string, ranking: number[]) => Promise<void>,
  ) {
    root.innerHTML = `
      <div class="banner hidden" data-role="banner"></div>
      <p class="progress" data-role="progress"></p>
      <div class="ranking-columns">
        <section>
          <h3>Alternatives</h3>
          <ul class="pool" data-role="pool"></ul>
        </section>
        <section>
          <h3>Your ranking <span class="hint">(top = most preferred)</span></h3>
          <ol class="ranked" data-role="ranked"></ol>
        </section>
      </div>
      <button class="submit" data-role="submit" disabled>Submit ranking</button>
    `;
    this.pool = root.querySelector('[data-role="pool"]') as HTMLUListElement;
    this.ranked = root.querySelector('[data-role="ranked"]') as HTMLOListElement;
    this.submitButton = root.querySelector('[data-role="submit"]') as HTMLButtonElement;
    this.banner = root.querySelector('[data-role="banner"]') as HTMLElement;
    this.progress = root.querySelector('[data-role="progress"]') as HTMLElement;

    this.root.addEventListener("mousedown", (e) => this.handleMouseDown(e as MouseEvent));
    this.root.addEventListener("mouseup", (e) => this.handleMouseUp(e as MouseEvent));
    this.pool.addEventListener("click", (e) => this.handlePoolClick(e as MouseEvent));
    this.ranked.addEventListener("click", (e) => this.handleRankedClick(e as MouseEvent));
    this.submitButton.addEventListener("click", () => void this.submit());
  }

  setProgress(text: string) {
    this.progress.textContent = text;
  }

  showQuery(query: QueryView) {
    this.query = query;
    this.poolItems = query.points.map((_, i) => i);
    this.order = [];
    this.dragged = null;
    this.busy = false;
    this.hideBanner();
    this.render();
  }

  currentRanking(): number[] {
    return [...this.order];
  }

  get currentQuery(): QueryView | null {
    return this.query;
  }

  private cardLabel(index: number): string {
    const point = this.query!.points[index];
    const coords = point
      .map((v, d) => `${this.names[d] ?? `x${d}`} = ${v.toFixed(3)}`)
      .join(", ");
    return `${LETTERS[index] ?? index}: ${coords}`;
  }

  private render() {
    if (!this.query) return;
    this.pool.innerHTML = "";
    for (const index of this.poolItems) {
      const li = document.createElement("li");
      li.className = "card";
      li.dataset.index = String(index);
      li.textContent = this.cardLabel(index);
      const place = document.createElement("button");
      place.textContent = "place";
      place.dataset.action = "place";
      li.appendChild(place);
      this.pool.appendChild(li);
    }
    this.ranked.innerHTML = "";
    this.order.forEach((index, position) => {
      const li = document.createElement("li");
      li.className = "card ranked-card";
      li.dataset.index = String(index);
      li.textContent = `${position + 1}. ${this.cardLabel(index)}`;
      for (const action of ["up", "down", "remove"]) {
        const btn = document.createElement("button");
        btn.textContent = action;
        btn.dataset.action = action;
        li.appendChild(btn);
      }
      this.ranked.appendChild(li);
    });
    const complete = this.query !== null && this.poolItems.length === 0;
    this.submitButton.disabled = !complete || this.busy;
  }

  // -- mouse drag: pick a card up, drop it on the ranked list ----------
  private handleMouseDown(e: MouseEvent) {
    const card = (e.target as HTMLElement).closest?.(".card") as HTMLElement | null;
    if (!card || (e.target as HTMLElement).tagName === "BUTTON") return;
    this.dragged = Number(card.dataset.index);
    card.classList.add("dragging");
  }

  private handleMouseUp(e: MouseEvent) {
    if (this.dragged === null) return;
    const target = e.target as HTMLElement;
    const ontoCard = target.closest?.(".ranked-card") as HTMLElement | null;
    const ontoRanked = ontoCard ?? (target.closest?.(".ranked") as HTMLElement | null);
    const ontoPool = target.closest?.(".pool") as HTMLElement | null;
    const index = this.dragged;
    this.dragged = null;
    if (ontoRanked) {
      const before = ontoCard ? Number(ontoCard.dataset.index) : null;
      this.place(index, before);
    } else if (ontoPool && this.order.includes(index)) {
      this.order = this.order.filter((i) => i !== index);
      this.poolItems.push(index);
      this.poolItems.sort((a, b) => a - b);
      this.render();
    } else {
      this.render(); // cancelled drag: clear the dragging style
    }
  }

  private place(index: number, beforeIndex: number | null) {
    this.poolItems = this.poolItems.filter((i) => i !== index);
    this.order = this.order.filter((i) => i !== index);
    if (beforeIndex === null || beforeIndex === index || !this.order.includes(beforeIndex)) {
      this.order.push(index);
    } else {
      this.order.splice(this.order.indexOf(beforeIndex), 0, index);
    }
    this.render();
  }

  private handlePoolClick(e: MouseEvent) {
    const target = e.target as HTMLElement;
    const card = target.closest?.(".card") as HTMLElement | null;
    if (!card) return;
    if (target.dataset.action === "place" || target === card) {
      this.place(Number(card.dataset.index), null);
    }
  }

  private handleRankedClick(e: MouseEvent) {
    const target = e.target as HTMLElement;
    const card = target.closest?.(".ranked-card") as HTMLElement | null;
    if (!card || !target.dataset.action) return;
    const index = Number(card.dataset.index);
    const pos = this.order.indexOf(index);
    if (target.dataset.action === "remove") {
      this.order.splice(pos, 1);
      this.poolItems.push(index);
      this.poolItems.sort((a, b) => a - b);
    } else if (target.dataset.action === "up" && pos > 0) {
      [this.order[pos - 1], this.order[pos]] = [this.order[pos], this.order[pos - 1]];
    } else if (target.dataset.action === "down" && pos < this.order.length - 1) {
      [this.order[pos + 1], this.order[pos]] = [this.order[pos], this.order[pos + 1]];
    }
    this.render();
  }

  private async submit() {
    if (!this.query || this.order.length !== this.query.points.length || this.busy) return;
    this.busy = true;
    this.render();
    try {
      await this.onSubmit(this.query.query_id, this.currentRanking());
    } catch (err) {
      this.busy = false;
      this.showBanner(err instanceof Error ? err.message : String(err));
      this.render();
    }
  }

  showBanner(message: string) {
    this.banner.textContent = `${message} — adjust and retry`;
    this.banner.classList.remove("hidden");
  }

  hideBanner() {
    this.banner.classList.add("hidden");
  }
}
