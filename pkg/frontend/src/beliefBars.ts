/** Bar chart of the robot's belief over the participant's latent type.
 *
 * Pure view: bar heights always equal the latest snapshot's probabilities,
 * never interpolated.
 */
import { BeliefDoc } from "./protocol.js";

export class BeliefBars {
  private bars: HTMLDivElement[] = [];
  private labels: string[] = [];

  constructor(
    private readonly container: HTMLElement,
    latentTypes: { k: number; lambda: number }[],
  ) {
    container.classList.add("belief-bars");
    for (const t of latentTypes) {
      const wrap = document.createElement("div");
      wrap.className = "belief-bar-wrap";
      const bar = document.createElement("div");
      bar.className = "belief-bar";
      bar.dataset.k = String(t.k);
      bar.dataset.lambda = String(t.lambda);
      bar.dataset.p = "0";
      const label = document.createElement("span");
      label.className = "belief-label";
      label.textContent = `k=${t.k} λ=${t.lambda}`;
      wrap.appendChild(bar);
      wrap.appendChild(label);
      container.appendChild(wrap);
      this.bars.push(bar);
      this.labels.push(`${t.k}:${t.lambda}`);
    }
  }

  update(belief: BeliefDoc): void {
    for (const entry of belief.latent) {
      const idx = this.labels.indexOf(`${entry.k}:${entry.lambda}`);
      if (idx < 0) continue;
      const bar = this.bars[idx];
      bar.style.height = `${(entry.p * 100).toFixed(1)}%`;
      bar.dataset.p = String(entry.p);
      bar.classList.toggle("belief-max", false);
    }
    // highlight the argmax bar
    let best = -1;
    let bestP = -1;
    this.bars.forEach((bar, i) => {
      const p = Number(bar.dataset.p);
      if (p > bestP) {
        bestP = p;
        best = i;
      }
    });
    if (best >= 0) this.bars[best].classList.add("belief-max");
  }

  probabilities(): number[] {
    return this.bars.map((bar) => Number(bar.dataset.p));
  }

  setVisible(visible: boolean): void {
    this.container.style.display = visible ? "" : "none";
  }
}
