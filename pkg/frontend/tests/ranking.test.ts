// Ranking screen behavior against a stubbed submit handler: card
// placement via mouse events, the complete-permutation gate on submit,
// and non-destructive error banners.

import { beforeEach, describe, expect, it } from "vitest";
import { RankingScreen } from "../dist/js/ranking.js";
import type { QueryView } from "../src/api.js";

function mouse(el: Element, type: string) {
  el.dispatchEvent(new MouseEvent(type, { bubbles: true }));
}

function query(k: number): QueryView {
  return {
    query_id: "q1",
    names: ["a", "b"],
    points: Array.from({ length: k }, (_, i) => [i, -i]),
  };
}

describe("RankingScreen", () => {
  let root: HTMLElement;
  let submitted: number[][];
  let failNext: boolean;
  let screen: RankingScreen;

  beforeEach(() => {
    document.body.innerHTML = '<div id="r"></div>';
    root = document.getElementById("r") as HTMLElement;
    submitted = [];
    failNext = false;
    screen = new RankingScreen(root, ["a", "b"], async (_qid, ranking) => {
      if (failNext) throw new Error("boom");
      submitted.push(ranking);
    });
  });

  function poolCards(): HTMLElement[] {
    return Array.from(root.querySelectorAll(".pool .card"));
  }

  function submitButton(): HTMLButtonElement {
    return root.querySelector('[data-role="submit"]') as HTMLButtonElement;
  }

  it("renders k cards and disables submit until all are placed", () => {
    screen.showQuery(query(5));
    expect(poolCards()).toHaveLength(5);
    expect(submitButton().disabled).toBe(true);

    const ranked = root.querySelector(".ranked") as HTMLElement;
    for (let i = 0; i < 4; i++) {
      mouse(poolCards()[0], "mousedown");
      mouse(ranked, "mouseup");
      expect(submitButton().disabled).toBe(true);
    }
    mouse(poolCards()[0], "mousedown");
    mouse(ranked, "mouseup");
    expect(poolCards()).toHaveLength(0);
    expect(submitButton().disabled).toBe(false);
    expect(screen.currentRanking()).toEqual([0, 1, 2, 3, 4]);
  });

  it("drops onto a ranked card to insert before it", () => {
    screen.showQuery(query(3));
    const ranked = root.querySelector(".ranked") as HTMLElement;
    // place 0, then 1 at the end, then drag 2 onto card 1
    mouse(poolCards()[0], "mousedown");
    mouse(ranked, "mouseup");
    mouse(poolCards()[0], "mousedown");
    mouse(ranked, "mouseup");
    const targetCard = root.querySelector('.ranked-card[data-index="1"]') as HTMLElement;
    mouse(poolCards()[0], "mousedown");
    mouse(targetCard, "mouseup");
    expect(screen.currentRanking()).toEqual([0, 2, 1]);
  });

  it("reorders with buttons and returns cards to the pool", () => {
    screen.showQuery(query(3));
    const ranked = root.querySelector(".ranked") as HTMLElement;
    for (let i = 0; i < 3; i++) {
      mouse(poolCards()[0], "mousedown");
      mouse(ranked, "mouseup");
    }
    const upButton = root.querySelector(
      '.ranked-card[data-index="2"] [data-action="up"]') as HTMLElement;
    upButton.click();
    expect(screen.currentRanking()).toEqual([0, 2, 1]);
    const removeButton = root.querySelector(
      '.ranked-card[data-index="0"] [data-action="remove"]') as HTMLElement;
    removeButton.click();
    expect(screen.currentRanking()).toEqual([2, 1]);
    expect(poolCards()).toHaveLength(1);
    expect(submitButton().disabled).toBe(true);
  });

  it("keeps state and shows a banner when submission fails", async () => {
    screen.showQuery(query(2));
    const ranked = root.querySelector(".ranked") as HTMLElement;
    mouse(poolCards()[0], "mousedown");
    mouse(ranked, "mouseup");
    mouse(poolCards()[0], "mousedown");
    mouse(ranked, "mouseup");
    failNext = true;
    submitButton().click();
    await new Promise((r) => setTimeout(r, 10));
    const banner = root.querySelector('[data-role="banner"]') as HTMLElement;
    expect(banner.classList.contains("hidden")).toBe(false);
    expect(banner.textContent).toContain("boom");
    expect(screen.currentRanking()).toEqual([0, 1]); // nothing lost
    failNext = false;
    submitButton().click();
    await new Promise((r) => setTimeout(r, 10));
    expect(submitted).toEqual([[0, 1]]);
  });
});
