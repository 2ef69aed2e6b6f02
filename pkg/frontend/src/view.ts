import { LabelingApi } from "./api.js";
import { TriageController, ViewState } from "./controller.js";
import { FilterMode } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

/** Binds the controller to the static page: crop image, badges, stats, keys. */
export class TriageView {
  private zoomed = false;

  constructor(private readonly api: LabelingApi, private readonly controller: TriageController) {
    controller.onChange((state) => this.render(state));

    document.addEventListener("keydown", (event) => {
      if (event.target instanceof HTMLInputElement || event.target instanceof HTMLSelectElement) {
        return;
      }
      if (["r", "n", "u"].includes(event.key)) {
        event.preventDefault();
        void controller.handleKey(event.key);
      }
    });
    el<HTMLButtonElement>("btn-rider").addEventListener("click", () => void controller.commit("rider"));
    el<HTMLButtonElement>("btn-non-rider").addEventListener("click", () => void controller.commit("non_rider"));
    el<HTMLButtonElement>("btn-undo").addEventListener("click", () => void controller.undo());
    el<HTMLSelectElement>("filter-mode").addEventListener("change", (event) => {
      const value = (event.target as HTMLSelectElement).value as FilterMode;
      void controller.setFilter(value);
    });
    el<HTMLImageElement>("crop-image").addEventListener("click", () => {
      this.zoomed = !this.zoomed;
      el<HTMLImageElement>("crop-image").classList.toggle("zoomed", this.zoomed);
    });
  }

  render(state: ViewState): void {
    const image = el<HTMLImageElement>("crop-image");
    const card = el<HTMLDivElement>("triage-card");
    const done = el<HTMLDivElement>("all-done");

    if (state.phase === "all_done") {
      card.hidden = true;
      done.hidden = false;
    } else {
      card.hidden = false;
      done.hidden = true;
    }

    if (state.current) {
      image.src = this.api.imageUrl(state.current);
      el("segment-id").textContent = state.current.segment_id;
      el("frame-context").textContent = state.current.context.box
        ? `${state.current.context.frame_id} @ [${state.current.context.box.map((v) => v.toFixed(0)).join(", ")}]`
        : state.current.context.frame_id;

      const badge = el("suggestion-badge");
      const suggestion = state.current.model_suggestion;
      if (suggestion === null) {
        badge.textContent = "no model suggestion";
        badge.className = "badge neutral";
      } else {
        const likely = suggestion >= 0.5 ? "likely rider" : "likely non-rider";
        badge.textContent = `${likely} ${suggestion.toFixed(2)}`;
        badge.className = `badge ${suggestion >= 0.5 ? "rider" : "non-rider"}`;
      }
      const currentLabel = el("current-label");
      currentLabel.textContent = state.current.current_label
        ? `stored label: ${state.current.current_label}`
        : "";
    }

    const banner = el("banner");
    if (state.banner) {
      banner.textContent = state.banner.message;
      banner.className = `banner ${state.banner.kind}`;
      banner.hidden = false;
    } else {
      banner.hidden = true;
    }

    el("session-counts").textContent =
      `session: ${state.session.rider} rider / ${state.session.non_rider} non-rider` +
      ` / ${state.session.undone} undone / ${this.controller.throughputPerMinute().toFixed(1)} per min`;
    el("buffer-state").textContent = `${state.buffered} prefetched`;

    if (state.stats) {
      el("stat-pending").textContent = String(state.stats.pending);
      el("stat-rider").textContent = String(state.stats.labeled["rider"] ?? 0);
      el("stat-non-rider").textContent = String(state.stats.labeled["non_rider"] ?? 0);
      el("stat-balance").textContent = state.stats.balance_ratio.toFixed(2);
    }
  }
}
