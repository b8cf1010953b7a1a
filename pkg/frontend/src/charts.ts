// Canvas heatmap and marginal bar charts for density views.
// Rendering degrades gracefully where no 2d context exists (DOM
// emulation in tests); the numeric summary is always written to the DOM.

import { DensityGrid, Marginals } from "./api.js";

export function colorRamp(t: number): string {
  // dark blue -> teal -> yellow
  const stops = [
    [13, 8, 135],
    [70, 50, 180],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
  ];
  const x = Math.max(0, Math.min(1, t)) * (stops.length - 1);
  const i = Math.min(stops.length - 2, Math.floor(x));
  const f = x - i;
  const c = stops[i].map((a, j) => Math.round(a + f * (stops[i + 1][j] - a)));
  return `rgb(${c[0]},${c[1]},${c[2]})`;
}

export function renderHeatmap(canvas: HTMLCanvasElement, grid: DensityGrid): void {
  const nx = grid.x.length;
  const ny = grid.y.length;
  canvas.width = 320;
  canvas.height = 320;
  canvas.dataset.cells = String(nx * ny);
  let ctx: CanvasRenderingContext2D | null = null;
  try {
    ctx = canvas.getContext("2d");
  } catch {
    ctx = null;
  }
  if (!ctx) return;
  let max = 0;
  for (const row of grid.density) for (const v of row) max = Math.max(max, v);
  const cw = canvas.width / nx;
  const ch = canvas.height / ny;
  for (let i = 0; i < nx; i++) {
    for (let j = 0; j < ny; j++) {
      ctx.fillStyle = colorRamp(max > 0 ? grid.density[i][j] / max : 0);
      // canvas y grows downward; flip so larger coordinate values sit on top
      ctx.fillRect(i * cw, canvas.height - (j + 1) * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
}

export function densitySummary(grid: DensityGrid, names: string[]): string {
  let max = -Infinity;
  let ai = 0;
  let aj = 0;
  grid.density.forEach((row, i) =>
    row.forEach((v, j) => {
      if (v > max) {
        max = v;
        ai = i;
        aj = j;
      }
    }),
  );
  const nameI = names[grid.axes[0]] ?? `x${grid.axes[0]}`;
  const nameJ = names[grid.axes[1]] ?? `x${grid.axes[1]}`;
  return `peak density ${max.toPrecision(4)} at ${nameI} = ${grid.x[ai].toFixed(2)}, ` +
    `${nameJ} = ${grid.y[aj].toFixed(2)}`;
}

export function renderMarginals(container: HTMLElement, marginals: Marginals, names: string[]): void {
  container.innerHTML = "";
  for (const block of marginals.dims) {
    const panel = document.createElement("div");
    panel.className = "marginal";
    panel.dataset.dim = String(block.dim);
    const title = document.createElement("h4");
    title.textContent = names[block.dim] ?? `x${block.dim}`;
    panel.appendChild(title);
    const bars = document.createElement("div");
    bars.className = "bars";
    const max = Math.max(...block.density, 1e-300);
    for (const v of block.density) {
      const bar = document.createElement("span");
      bar.className = "bar";
      bar.style.height = `${Math.round((v / max) * 60)}px`;
      bars.appendChild(bar);
    }
    panel.appendChild(bars);
    container.appendChild(panel);
  }
}
