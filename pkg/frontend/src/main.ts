// Single-page studio over the designdiff HTTP API.
//
// Workflow: edit/lock parameters -> autocomplete -> place component sprites
// -> generate -> inspect readbacks and metrics -> pin a candidate back into
// the editor -> iterate. Seeds are visible and editable everywhere; one
// generation request is in flight at a time and stale responses (superseded
// seed) are discarded.

import { ApiError, StudioApi } from "./api.js";
import { clusterSummary } from "./cluster.js";
import {
  addNode,
  exportSession,
  importSession,
  initSession,
  moveNode,
  pinCandidate,
  receiveGallery,
  reorderNodes,
  resizeNode,
  SessionState,
  setPrompt,
  setSeed,
  setValue,
  toggleLock,
  validateValue,
} from "./state.js";
import type { GraphNode, Schema } from "./types.js";

const api = new StudioApi("");
let state: SessionState | null = null;
let inflightSeed: number | null = null;

const $ = (id: string) => document.getElementById(id) as HTMLElement;

function designPayload(s: SessionState) {
  return { values: s.values.slice(), mask: s.locks.slice() };
}

function graphPayload(s: SessionState) {
  return s.graph.nodes.length > 0 ? s.graph : undefined;
}

// -- parameter editor ---------------------------------------------------------

function renderEditor(s: SessionState): void {
  const table = $("editor");
  table.innerHTML = "";
  s.schema.features.forEach((spec, i) => {
    const row = document.createElement("tr");

    const name = document.createElement("td");
    const hint = spec.kind === "continuous" && spec.range
      ? `[${spec.range[0]}, ${spec.range[1]}]`
      : (spec.categories ?? []).map((c, k) => `${k}=${c}`).join(" ");
    name.textContent = spec.name;
    name.title = hint;
    row.appendChild(name);

    const valueCell = document.createElement("td");
    const input = document.createElement("input");
    input.type = "number";
    input.value = String(s.values[i]);
    input.step = spec.kind === "continuous" ? "1" : "1";
    const error = document.createElement("span");
    error.className = "error";
    input.addEventListener("change", () => {
      const v = Number(input.value);
      const check = validateValue(s.schema, i, v);
      if (!check.ok) {
        // inline validation: show the message, block the update
        error.textContent = check.message ?? "invalid";
        input.classList.add("invalid");
        return;
      }
      error.textContent = "";
      input.classList.remove("invalid");
      state = setValue(state!, i, v);
    });
    valueCell.appendChild(input);
    valueCell.appendChild(error);
    row.appendChild(valueCell);

    const rangeCell = document.createElement("td");
    rangeCell.className = "hint";
    rangeCell.textContent = hint;
    row.appendChild(rangeCell);

    const lockCell = document.createElement("td");
    const lock = document.createElement("input");
    lock.type = "checkbox";
    lock.checked = s.locks[i];
    lock.title = "locked = observed; unlocked features are autocompleted";
    lock.addEventListener("change", () => {
      state = toggleLock(state!, i);
    });
    lockCell.appendChild(lock);
    row.appendChild(lockCell);

    table.appendChild(row);
  });
}

async function runAutocomplete(): Promise<void> {
  if (!state) return;
  const n = Number(($("autocomplete-n") as HTMLInputElement).value) || 5;
  const seed = state.seed;
  const out = $("candidates");
  out.textContent = "autocompleting...";
  try {
    const res = await api.autocomplete(designPayload(state), n, seed);
    out.innerHTML = "";
    res.candidates.forEach((cand, k) => {
      const row = document.createElement("div");
      row.className = "candidate";
      const label = state!.schema.features
        .map((f, i) => (!state!.locks[i] ? `${f.name}=${cand.values[i].toFixed(1)}` : null))
        .filter(Boolean)
        .join("  ");
      row.textContent = `#${k} ${label || "(no unlocked features)"}`;
      const use = document.createElement("button");
      use.textContent = "use";
      use.addEventListener("click", () => {
        cand.values.forEach((v, i) => {
          if (!state!.locks[i]) state = setValue(state!, i, v);
        });
        renderEditor(state!);
      });
      row.appendChild(use);
      out.appendChild(row);
    });
  } catch (e) {
    out.textContent = e instanceof ApiError ? `service error: ${e.message}` : String(e);
  }
}

// -- assembly canvas ------------------------------------------------------------

const SPRITE_DEFAULTS: Record<string, [number, number]> = {
  wheel: [21, 21],
  frame: [33, 22],
  saddle: [13, 3],
  bottle: [3, 9],
  crank: [11, 11],
  rack: [13, 2],
  handlebar_flat: [7, 1],
  handlebar_riser: [8, 3],
  handlebar_drop: [7, 4],
};

let dragging: { index: number; offsetX: number; offsetY: number } | null = null;

function canvasScale(s: SessionState): number {
  return 320 / s.schema.canvas_size;
}

function renderCanvas(s: SessionState): void {
  const box = $("canvas-nodes");
  box.innerHTML = "";
  const scale = canvasScale(s);
  s.graph.nodes.forEach((node, i) => {
    const el = document.createElement("div");
    el.className = "node";
    el.textContent = node.component_id;
    el.style.left = `${node.position[0] * scale}px`;
    el.style.top = `${node.position[1] * scale}px`;
    el.style.width = `${node.size[0] * scale}px`;
    el.style.height = `${node.size[1] * scale}px`;
    el.title = "drag to move, shift-click to grow, alt-click to shrink, double-click to raise";
    el.addEventListener("mousedown", (ev) => {
      dragging = { index: i, offsetX: ev.offsetX, offsetY: ev.offsetY };
    });
    el.addEventListener("click", (ev) => {
      if (!state) return;
      if (ev.shiftKey) state = resizeNode(state, i, [node.size[0] + 2, node.size[1] + 2]);
      else if (ev.altKey && node.size[0] > 2 && node.size[1] > 2) {
        state = resizeNode(state, i, [node.size[0] - 2, node.size[1] - 2]);
      } else return;
      renderCanvas(state);
      void refreshPreview();
    });
    el.addEventListener("dblclick", () => {
      if (!state) return;
      if (i < state.graph.nodes.length - 1) {
        state = reorderNodes(state, i, i + 1); // raise one layer
        renderCanvas(state);
        void refreshPreview();
      }
    });
    box.appendChild(el);
  });
}

function wireCanvas(): void {
  const box = $("assembly-canvas");
  box.addEventListener("mousemove", (ev) => {
    if (!dragging || !state) return;
    const rect = box.getBoundingClientRect();
    const scale = canvasScale(state);
    const x = Math.round((ev.clientX - rect.left - dragging.offsetX) / scale);
    const y = Math.round((ev.clientY - rect.top - dragging.offsetY) / scale);
    state = moveNode(state, dragging.index, [x, y]);
    renderCanvas(state);
  });
  const stop = () => {
    if (dragging) {
      dragging = null;
      void refreshPreview();
    }
  };
  box.addEventListener("mouseup", stop);
  box.addEventListener("mouseleave", stop);

  const palette = $("palette");
  Object.entries(SPRITE_DEFAULTS).forEach(([id, size]) => {
    const btn = document.createElement("button");
    btn.textContent = `+ ${id}`;
    btn.addEventListener("click", () => {
      if (!state) return;
      const node: GraphNode = { component_id: id, size, position: [20, 20] };
      state = addNode(state, node);
      renderCanvas(state);
      void refreshPreview();
    });
    palette.appendChild(btn);
  });
}

async function refreshPreview(): Promise<void> {
  if (!state) return;
  const img = $("preview") as HTMLImageElement;
  const banner = $("preview-banner");
  try {
    const res = await api.assemble(state.graph);
    img.src = `data:image/png;base64,${res.composite}`;
    banner.textContent = "";
  } catch (e) {
    // service unreachable: disable the preview, keep local state
    banner.textContent = "preview unavailable (service unreachable); local edits retained";
  }
}

// -- generation gallery ----------------------------------------------------------

async function runGenerate(): Promise<void> {
  if (!state) return;
  const n = Number(($("generate-n") as HTMLInputElement).value) || 4;
  const seed = Number(($("seed") as HTMLInputElement).value) || 0;
  state = setSeed(state, seed);
  state = setPrompt(state, ($("prompt") as HTMLInputElement).value);
  if (inflightSeed !== null) {
    $("gallery-status").textContent = "generation already in flight";
    return;
  }
  inflightSeed = seed;
  $("gallery-status").textContent = `generating n=${n} seed=${seed} ...`;
  try {
    const res = await api.generate({
      design: designPayload(state),
      graph: graphPayload(state),
      prompt: state.prompt,
      n_samples: n,
      seed,
    });
    if (inflightSeed !== seed) return; // superseded; discard
    state = receiveGallery(state, res.samples, res.seed);
    renderGallery(state);
    $("gallery-status").textContent = `readback via ${res.readback_source}, seed ${res.seed}`;
  } catch (e) {
    if (e instanceof ApiError && e.status === 429) {
      $("gallery-status").innerHTML =
        'queue full — <button id="retry">retry</button>';
      $("retry").addEventListener("click", () => void runGenerate());
    } else {
      $("gallery-status").textContent = String(e);
    }
  } finally {
    inflightSeed = null;
  }
}

function renderGallery(s: SessionState): void {
  const box = $("gallery");
  box.innerHTML = "";
  s.gallery.forEach((entry, k) => {
    const card = document.createElement("div");
    card.className = "card";
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${entry.image}`;
    img.width = 128;
    card.appendChild(img);
    const meta = document.createElement("div");
    meta.className = "hint";
    meta.textContent = `seed ${entry.seed}`;
    card.appendChild(meta);
    const pin = document.createElement("button");
    pin.textContent = "pin";
    pin.title = "copy readback features into unlocked editor fields";
    pin.addEventListener("click", () => {
      state = pinCandidate(state!, k);
      renderEditor(state);
      renderConflict(state);
    });
    card.appendChild(pin);
    box.appendChild(card);
  });
  renderConflict(s);
}

function renderConflict(s: SessionState): void {
  const box = $("conflict");
  const featureName = ($("conflict-feature") as HTMLInputElement).value || "saddle_height";
  const idx = s.schema.features.findIndex((f) => f.name === featureName);
  if (idx < 0 || s.gallery.length === 0) {
    box.textContent = "";
    return;
  }
  const values = s.gallery.filter((e) => e.readbackMask[idx]).map((e) => e.readbackValues[idx]);
  if (values.length === 0) {
    box.textContent = "feature not detected in gallery readbacks";
    return;
  }
  const parametric = s.values[idx];
  const component = Number(($("conflict-target") as HTMLInputElement).value) || parametric;
  const summary = clusterSummary(values, parametric, component);
  const bars = summary.histogram
    .map((b) => `${"#".repeat(b.count)}`.padEnd(4))
    .join("|");
  box.textContent =
    `gallery ${featureName}: median ${summary.median.toFixed(1)} ` +
    `(parametric ${parametric}, component ${component}) -> ${summary.winner} | ${bars}`;
}

// -- session I/O -------------------------------------------------------------------

function wireSession(): void {
  $("export").addEventListener("click", () => {
    if (!state) return;
    const blob = new Blob([exportSession(state)], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "session.json";
    a.click();
  });
  ($("import") as HTMLInputElement).addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    state = importSession(await file.text());
    renderEditor(state);
    renderCanvas(state);
    renderGallery(state);
    void refreshPreview();
  });
}

async function boot(): Promise<void> {
  try {
    const res = await api.getSchema();
    state = initSession(res.schema as Schema);
    $("status").textContent = `schema ${res.schema.version}, config ${res.config_hash.slice(0, 8)}`;
  } catch (e) {
    $("status").textContent = `cannot reach service: ${String(e)}`;
    return;
  }
  renderEditor(state);
  renderCanvas(state);
  wireCanvas();
  wireSession();
  $("autocomplete").addEventListener("click", () => void runAutocomplete());
  $("generate").addEventListener("click", () => void runGenerate());
  void refreshPreview();
}

if (typeof document !== "undefined" && document.getElementById("editor")) {
  void boot();
}
