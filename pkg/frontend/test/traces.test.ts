import { describe, expect, it } from "vitest";
import type { StateEvent } from "../src/protocol";
import {
  TRAJECTORY_HEADER,
  TraceContext,
  TraceStore,
  TraceView,
  fitTransform,
  parseTrajectoryCsv,
} from "../src/traces";

function stateEvent(over: Partial<StateEvent> = {}): StateEvent {
  return {
    event: "state",
    id: 1,
    seq: 1,
    timestampUs: 0,
    tMm: 0,
    rDeg: 0,
    bDeg: 0,
    bendDeg: 0,
    tipCm: [0, 0, 0],
    flags: 0,
    pedal: false,
    gripCart: false,
    gripStatic: true,
    clamped: false,
    ...over,
  };
}

/** Records every draw call so geometry can be checked without a DOM. */
class FakeContext implements TraceContext {
  strokeStyle: string | CanvasGradient | CanvasPattern = "";
  fillStyle: string | CanvasGradient | CanvasPattern = "";
  lineWidth = 0;
  font = "";
  points: Array<[number, number]> = [];
  dashes: number[][] = [];
  beginPath() {}
  moveTo(x: number, y: number) {
    this.points.push([x, y]);
  }
  lineTo(x: number, y: number) {
    this.points.push([x, y]);
  }
  stroke() {}
  arc(x: number, y: number, _r: number, _a0: number, _a1: number) {
    this.points.push([x, y]);
  }
  fill() {}
  fillRect(x: number, y: number, w: number, h: number) {
    this.points.push([x + w / 2, y + h / 2]);
  }
  strokeRect(_x: number, _y: number, _w: number, _h: number) {}
  clearRect(_x: number, _y: number, _w: number, _h: number) {}
  fillText(_text: string, _x: number, _y: number) {}
  setLineDash(segments: number[]) {
    this.dashes.push(segments);
  }
}

describe("plane projection", () => {
  it("projects the tip onto x-y, x-z and y-z planes", () => {
    const store = new TraceStore();
    store.push(stateEvent({ tipCm: [1, 2, 3], bDeg: 20, bendDeg: 55 }));
    expect(store.planes[0].last()).toMatchObject({ u: 1, v: 2 });
    expect(store.planes[1].last()).toMatchObject({ u: 1, v: 3 });
    expect(store.planes[2].last()).toMatchObject({ u: 2, v: 3 });
    expect(store.knobBend.last()).toMatchObject({ u: 20, v: 55 });
  });

  it("carries the clamp flag through to the samples", () => {
    const store = new TraceStore();
    store.push(stateEvent({ clamped: true }));
    expect(store.planes[0].last()?.clamped).toBe(true);
    expect(store.knobBend.last()?.clamped).toBe(true);
  });

  it("live rings are bounded", () => {
    const store = new TraceStore(50);
    for (let i = 0; i < 60; i++) {
      store.push(stateEvent({ id: i + 1, tipCm: [i, 0, 0] }));
    }
    expect(store.planes[0].size).toBe(50);
    expect(store.planes[0].last()?.u).toBe(59);
    expect(store.knobBend.size).toBe(50);
  });
});

describe("trajectory CSV overlay", () => {
  const rows = [
    TRAJECTORY_HEADER,
    "0,0.004000,10.000000,0.000000,5.000000,1.000000,2.000000,3.000000,0",
    "0,0.008000,10.500000,0.000000,5.500000,1.100000,2.100000,3.100000,8",
    "0,0.012000,bad,0.000000,5.500000,1.1,2.1,3.1,0",
    "0,0.016000,10.9,0.0,5.9",
    "",
    "1,0.020000,11.000000,0.000000,6.000000,1.200000,2.200000,3.200000,0",
  ].join("\n");

  it("parses rows and counts malformed ones", () => {
    const trace = parseTrajectoryCsv(rows + "\n");
    expect(trace.points.length).toBe(3);
    expect(trace.skipped).toBe(2);
    expect(trace.points[0]).toEqual({
      rep: 0,
      tS: 0.004,
      cmdTMm: 10.0,
      cmdRDeg: 0.0,
      cmdBDeg: 5.0,
      tipCm: [1.0, 2.0, 3.0],
      flags: 0,
    });
    expect(trace.points[2].rep).toBe(1);
  });

  it("accepts CRLF and leading blank lines", () => {
    const crlf = "\r\n" + rows.split("\n").join("\r\n");
    expect(parseTrajectoryCsv(crlf).points.length).toBe(3);
  });

  it("rejects an unrecognized header", () => {
    expect(() => parseTrajectoryCsv("a,b,c\n1,2,3\n")).toThrow(
      /unrecognized trajectory header/,
    );
    expect(() => parseTrajectoryCsv("")).toThrow();
  });

  it("projects reference points per plane, leaving the knob view alone", () => {
    const store = new TraceStore();
    store.loadReference(parseTrajectoryCsv(rows));
    expect(store.planes[0].referenceSize).toBe(3);
    expect(store.planes[1].referenceSize).toBe(3);
    expect(store.planes[2].referenceSize).toBe(3);
    expect(store.knobBend.referenceSize).toBe(0);
    store.clearReference();
    expect(store.planes[0].referenceSize).toBe(0);
  });
});

describe("world-to-canvas fitting", () => {
  it("is isotropic and keeps the box inside the padding", () => {
    const bounds = { uMin: 0, uMax: 10, vMin: 0, vMax: 5 };
    const map = fitTransform(bounds, 380, 320, 24);
    const [x0, y0] = map(0, 0);
    const [x1, y1] = map(10, 0);
    const [x2, y2] = map(0, 5);
    const du = Math.hypot(x1 - x0, y1 - y0);
    const dv = Math.hypot(x2 - x0, y2 - y0);
    // Equal world lengths map to equal pixel lengths on both axes.
    expect(du / dv).toBeCloseTo(2.0, 9);
    for (const [x, y] of [map(0, 0), map(10, 5), map(10, 0), map(0, 5)]) {
      expect(x).toBeGreaterThanOrEqual(24);
      expect(x).toBeLessThanOrEqual(380 - 24);
      expect(y).toBeGreaterThanOrEqual(24);
      expect(y).toBeLessThanOrEqual(320 - 24);
    }
    // v points up the canvas.
    expect(y2).toBeLessThan(y0);
  });

  it("handles a degenerate single-point box", () => {
    const map = fitTransform(
      { uMin: 2, uMax: 2, vMin: -1, vMax: -1 },
      380,
      320,
    );
    const [x, y] = map(2, -1);
    expect(x).toBeCloseTo(190, 6);
    expect(y).toBeCloseTo(160, 6);
  });
});

describe("rendering", () => {
  it("draws live, reference and marker geometry inside the canvas", () => {
    const view = new TraceView("x-y (cm)");
    view.setReference([
      [-2, -2],
      [2, 2],
      [2, -2],
    ]);
    for (let i = 0; i <= 20; i++) {
      view.push(-2 + 0.2 * i, Math.sin(i / 3), i % 7 === 0);
    }
    const ctx = new FakeContext();
    view.render(ctx, 380, 320);
    expect(ctx.points.length).toBeGreaterThan(20);
    for (const [x, y] of ctx.points) {
      expect(x).toBeGreaterThanOrEqual(0);
      expect(x).toBeLessThanOrEqual(380);
      expect(y).toBeGreaterThanOrEqual(0);
      expect(y).toBeLessThanOrEqual(320);
    }
    // The reference path is dashed; live drawing restores solid lines.
    expect(ctx.dashes).toContainEqual([4, 4]);
    expect(ctx.dashes[ctx.dashes.length - 1]).toEqual([]);
  });

  it("renders an empty view without drawing a path", () => {
    const view = new TraceView("y-z (cm)");
    const ctx = new FakeContext();
    view.render(ctx, 380, 320);
    expect(ctx.points.length).toBe(0);
  });

  it("clearing live samples keeps the reference overlay", () => {
    const view = new TraceView("x-z (cm)");
    view.push(1, 1, false);
    view.setReference([[0, 0]]);
    view.clearLive();
    expect(view.size).toBe(0);
    expect(view.referenceSize).toBe(1);
  });
});
