import { describe, expect, it } from "vitest";

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
  setValue,
  toggleLock,
  validateValue,
} from "../src/state.js";
import type { GenerateSample, Schema } from "../src/types.js";

const schema: Schema = {
  version: "synthetic-16",
  canvas_size: 64,
  features: [
    { name: "saddle_height", kind: "continuous", range: [240, 340], render_role: "saddle_y" },
    { name: "wheelbase", kind: "continuous", range: [980, 1400], render_role: "wheel_spread" },
    { name: "num_bottles", kind: "categorical", categories: ["0", "1", "2"], render_role: "bottles" },
  ],
};

function sample(values: number[], mask?: boolean[]): GenerateSample {
  return {
    image: "AAAA",
    readback: { values, mask: mask ?? values.map(() => true) },
  };
}

describe("parameter editor state", () => {
  it("initializes midpoints and all locks on", () => {
    const s = initSession(schema);
    expect(s.values).toEqual([290, 1190, 0]);
    expect(s.locks).toEqual([true, true, true]);
  });

  it("validates ranges and category indices", () => {
    expect(validateValue(schema, 0, 239).ok).toBe(false);
    expect(validateValue(schema, 0, 240).ok).toBe(true);
    expect(validateValue(schema, 2, 3).ok).toBe(false);
    expect(validateValue(schema, 2, 1.5).ok).toBe(false);
    expect(validateValue(schema, 2, 2).ok).toBe(true);
  });

  it("setValue rejects out-of-range instead of updating", () => {
    const s = initSession(schema);
    expect(() => setValue(s, 0, 100)).toThrow(/outside range/);
    const s2 = setValue(s, 0, 250);
    expect(s2.values[0]).toBe(250);
    expect(s.values[0]).toBe(290); // original untouched
  });

  it("toggleLock flips a single row", () => {
    const s = toggleLock(initSession(schema), 1);
    expect(s.locks).toEqual([true, false, true]);
  });
});

describe("pinning", () => {
  it("copies readback into unlocked fields exactly, keeps locked fields", () => {
    let s = initSession(schema);
    s = toggleLock(s, 0); // saddle_height unlocked
    s = receiveGallery(s, [sample([321.25, 1000, 2])], 7);
    const pinned = pinCandidate(s, 0);
    expect(pinned.values[0]).toBe(321.25); // exact copy
    expect(pinned.values[1]).toBe(1190); // locked: unchanged
    expect(pinned.values[2]).toBe(0); // locked: unchanged
  });

  it("skips undetected readback entries", () => {
    let s = initSession(schema);
    s = toggleLock(s, 0);
    s = toggleLock(s, 1);
    s = receiveGallery(s, [sample([300, 1200, 1], [true, false, true])], 0);
    const pinned = pinCandidate(s, 0);
    expect(pinned.values[0]).toBe(300);
    expect(pinned.values[1]).toBe(1190); // undetected -> untouched
  });

  it("appends to the pin history without mutating earlier entries", () => {
    let s = initSession(schema);
    s = toggleLock(s, 0);
    s = receiveGallery(s, [sample([250, 1000, 0]), sample([320, 1000, 0])], 1);
    s = pinCandidate(s, 0);
    const firstHistory = s.pinnedHistory[0].slice();
    s = pinCandidate(s, 1);
    expect(s.pinnedHistory.length).toBe(2);
    expect(s.pinnedHistory[0]).toEqual(firstHistory);
  });

  it("gallery entries are frozen once received", () => {
    let s = initSession(schema);
    s = receiveGallery(s, [sample([300, 1000, 1])], 3);
    expect(Object.isFrozen(s.gallery[0])).toBe(true);
    expect(Object.isFrozen(s.gallery[0].readbackValues)).toBe(true);
  });
});

describe("assembly graph editing", () => {
  it("adds, moves, resizes, and reorders nodes", () => {
    let s = initSession(schema);
    s = addNode(s, { component_id: "wheel", size: [21, 21], position: [4, 30] });
    s = addNode(s, { component_id: "saddle", size: [13, 3], position: [20, 10] });
    s = moveNode(s, 0, [8, 28]);
    expect(s.graph.nodes[0].position).toEqual([8, 28]);
    s = resizeNode(s, 1, [15, 3]);
    expect(s.graph.nodes[1].size).toEqual([15, 3]);
    s = reorderNodes(s, 0, 1);
    expect(s.graph.nodes.map((n) => n.component_id)).toEqual(["saddle", "wheel"]);
    expect(() => resizeNode(s, 0, [0, 3])).toThrow(/positive/);
  });
});

describe("session export/import", () => {
  it("round-trips the full session field-for-field", () => {
    let s = initSession(schema);
    s = toggleLock(s, 2);
    s = setValue(s, 0, 255.5);
    s = addNode(s, { component_id: "bottle", size: [3, 9], position: [30, 28] });
    s = receiveGallery(s, [sample([250, 1000, 0]), sample([320, 1100, 2])], 11);
    s = pinCandidate(s, 1);
    const restored = importSession(exportSession(s));
    expect(restored.schema).toEqual(s.schema);
    expect(restored.values).toEqual(s.values);
    expect(restored.locks).toEqual(s.locks);
    expect(restored.graph).toEqual(s.graph);
    expect(restored.prompt).toEqual(s.prompt);
    expect(restored.seed).toEqual(s.seed);
    expect(restored.pinnedHistory).toEqual(s.pinnedHistory);
    expect(restored.gallery.length).toBe(s.gallery.length);
    restored.gallery.forEach((entry, i) => {
      expect(entry.image).toEqual(s.gallery[i].image);
      expect([...entry.readbackValues]).toEqual([...s.gallery[i].readbackValues]);
      expect([...entry.readbackMask]).toEqual([...s.gallery[i].readbackMask]);
      expect(entry.seed).toEqual(s.gallery[i].seed);
    });
  });

  it("rejects unknown session formats", () => {
    expect(() => importSession('{"format": 99}')).toThrow(/unsupported/);
  });
});
