import type { CommunitySummary } from "./types";

/** Sketch map on a plain canvas: every community seen so far as a dot, the
 * selected one highlighted. Coordinates are planar meters. */
export class CityCanvas {
  private seen = new Map<number, CommunitySummary>();

  constructor(private readonly canvas: HTMLCanvasElement) {}

  remember(communities: CommunitySummary[]): void {
    for (const c of communities) this.seen.set(c.id, c);
  }

  draw(selectedId: number | null): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return; // non-rendering environments
    const all = [...this.seen.values()];
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (all.length === 0) return;
    const xs = all.map((c) => c.centroid.x_m);
    const ys = all.map((c) => c.centroid.y_m);
    const minX = Math.min(...xs), maxX = Math.max(...xs);
    const minY = Math.min(...ys), maxY = Math.max(...ys);
    const pad = 12;
    const sx = (this.canvas.width - 2 * pad) / Math.max(1, maxX - minX);
    const sy = (this.canvas.height - 2 * pad) / Math.max(1, maxY - minY);
    for (const c of all) {
      const px = pad + (c.centroid.x_m - minX) * sx;
      const py = this.canvas.height - pad - (c.centroid.y_m - minY) * sy;
      ctx.beginPath();
      ctx.arc(px, py, c.id === selectedId ? 6 : 3, 0, 2 * Math.PI);
      ctx.fillStyle = c.id === selectedId ? "#d62728" : "#1f77b4";
      ctx.fill();
    }
  }
}
