// Pure session-state logic. All operations return new state; gallery entries
// are frozen once received and the pin history is append-only, so the UI
// layer never mutates anything it displays.

import type { GenerateSample, GraphNode, GraphPayload, Schema } from "./types.js";

export interface GalleryEntry {
  readonly image: string;
  readonly readbackValues: readonly number[];
  readonly readbackMask: readonly boolean[];
  readonly seed: number;
}

export interface SessionState {
  schema: Schema;
  values: number[];
  /** true = locked: the value is observed and autocomplete must keep it. */
  locks: boolean[];
  graph: GraphPayload;
  prompt: string;
  seed: number;
  gallery: GalleryEntry[];
  /** Append-only within a session: indices into past pinned value vectors. */
  pinnedHistory: number[][];
}

export function initSession(schema: Schema): SessionState {
  const values = schema.features.map((f) =>
    f.kind === "continuous" && f.range ? (f.range[0] + f.range[1]) / 2 : 0,
  );
  return {
    schema,
    values,
    locks: schema.features.map(() => true),
    graph: { nodes: [], edges: [] },
    prompt: "bike, white background",
    seed: 0,
    gallery: [],
    pinnedHistory: [],
  };
}

export interface ValidationResult {
  ok: boolean;
  message?: string;
}

export function validateValue(schema: Schema, index: number, value: number): ValidationResult {
  const spec = schema.features[index];
  if (!Number.isFinite(value)) return { ok: false, message: "must be a number" };
  if (spec.kind === "continuous" && spec.range) {
    const [lo, hi] = spec.range;
    if (value < lo || value > hi) {
      return { ok: false, message: `outside range [${lo}, ${hi}]` };
    }
    return { ok: true };
  }
  const n = spec.categories?.length ?? 0;
  if (!Number.isInteger(value) || value < 0 || value >= n) {
    return { ok: false, message: `category index must be an integer in [0, ${n})` };
  }
  return { ok: true };
}

export function setValue(state: SessionState, index: number, value: number): SessionState {
  const check = validateValue(state.schema, index, value);
  if (!check.ok) throw new Error(`${state.schema.features[index].name}: ${check.message}`);
  const values = state.values.slice();
  values[index] = value;
  return { ...state, values };
}

export function toggleLock(state: SessionState, index: number): SessionState {
  const locks = state.locks.slice();
  locks[index] = !locks[index];
  return { ...state, locks };
}

export function setPrompt(state: SessionState, prompt: string): SessionState {
  return { ...state, prompt };
}

export function setSeed(state: SessionState, seed: number): SessionState {
  return { ...state, seed };
}

// -- assembly canvas ---------------------------------------------------------

export function addNode(state: SessionState, node: GraphNode): SessionState {
  return { ...state, graph: { ...state.graph, nodes: [...state.graph.nodes, node] } };
}

export function moveNode(state: SessionState, index: number, position: [number, number]): SessionState {
  const nodes = state.graph.nodes.slice();
  nodes[index] = { ...nodes[index], position };
  return { ...state, graph: { ...state.graph, nodes } };
}

export function resizeNode(state: SessionState, index: number, size: [number, number]): SessionState {
  if (size[0] <= 0 || size[1] <= 0) throw new Error("node size must be positive");
  const nodes = state.graph.nodes.slice();
  nodes[index] = { ...nodes[index], size };
  return { ...state, graph: { ...state.graph, nodes } };
}

export function removeNode(state: SessionState, index: number): SessionState {
  const nodes = state.graph.nodes.filter((_, i) => i !== index);
  return { ...state, graph: { edges: [], nodes } };
}

/** Swap two nodes in overlay order (later nodes occlude earlier ones). */
export function reorderNodes(state: SessionState, a: number, b: number): SessionState {
  const nodes = state.graph.nodes.slice();
  [nodes[a], nodes[b]] = [nodes[b], nodes[a]];
  return { ...state, graph: { ...state.graph, nodes } };
}

// -- gallery and pinning ------------------------------------------------------

export function receiveGallery(
  state: SessionState,
  samples: GenerateSample[],
  seed: number,
): SessionState {
  const entries = samples.map((s) =>
    Object.freeze({
      image: s.image,
      readbackValues: Object.freeze(s.readback.values.slice()) as readonly number[],
      readbackMask: Object.freeze(s.readback.mask.slice()) as readonly boolean[],
      seed,
    }),
  );
  return { ...state, gallery: entries };
}

/**
 * Copy a candidate's readback features into the editor, respecting locks:
 * locked rows keep their values, unlocked rows take the readback value
 * exactly (when the readback detected that feature).
 */
export function pinCandidate(state: SessionState, galleryIndex: number): SessionState {
  const entry = state.gallery[galleryIndex];
  if (!entry) throw new Error(`no gallery entry #${galleryIndex}`);
  const values = state.values.map((v, i) =>
    !state.locks[i] && entry.readbackMask[i] ? entry.readbackValues[i] : v,
  );
  return { ...state, values, pinnedHistory: [...state.pinnedHistory, values.slice()] };
}

// -- session persistence --------------------------------------------------------

const SESSION_FORMAT = 1;

export function exportSession(state: SessionState): string {
  return JSON.stringify({
    format: SESSION_FORMAT,
    schema: state.schema,
    values: state.values,
    locks: state.locks,
    graph: state.graph,
    prompt: state.prompt,
    seed: state.seed,
    gallery: state.gallery.map((e) => ({
      image: e.image,
      readbackValues: [...e.readbackValues],
      readbackMask: [...e.readbackMask],
      seed: e.seed,
    })),
    pinnedHistory: state.pinnedHistory,
  });
}

export function importSession(doc: string): SessionState {
  const data = JSON.parse(doc);
  if (data.format !== SESSION_FORMAT) {
    throw new Error(`unsupported session format ${data.format}`);
  }
  return {
    schema: data.schema,
    values: data.values,
    locks: data.locks,
    graph: data.graph,
    prompt: data.prompt,
    seed: data.seed,
    gallery: data.gallery.map((e: GalleryEntry & { readbackValues: number[] }) =>
      Object.freeze({
        image: e.image,
        readbackValues: Object.freeze([...e.readbackValues]) as readonly number[],
        readbackMask: Object.freeze([...e.readbackMask]) as readonly boolean[],
        seed: e.seed,
      }),
    ),
    pinnedHistory: data.pinnedHistory,
  };
}
