/**
 * Trace bookkeeping and rendering for the plane views.
 *
 * Three panels show the achieved tip path projected on the x-y, x-z and
 * y-z planes; a fourth plots commanded knob angle against achieved bend
 * angle, which is where the dead zone and the hysteresis loop become
 * visible.  Live samples come only from server-confirmed state events;
 * a trajectory CSV can be overlaid as a dashed reference path.
 */

import { RingBuffer } from "./ringbuffer";
import type { StateEvent } from "./protocol";

export const TRACE_CAPACITY = 10_000;

export const TRAJECTORY_HEADER =
  "rep,t_s,cmd_T_mm,cmd_R_deg,cmd_B_deg,tip_x_cm,tip_y_cm,tip_z_cm,flags";

export interface ReferencePoint {
  rep: number;
  tS: number;
  cmdTMm: number;
  cmdRDeg: number;
  cmdBDeg: number;
  tipCm: [number, number, number];
  flags: number;
}

export interface ReferenceTrace {
  points: ReferencePoint[];
  /** Rows dropped for having the wrong shape or non-numeric fields. */
  skipped: number;
}

/**
 * Parse a trajectory log CSV into reference points.
 * Throws on an unrecognized header; malformed rows are counted and
 * dropped rather than aborting the overlay.
 */
export function parseTrajectoryCsv(text: string): ReferenceTrace {
  const lines = text.split(/\r?\n/);
  let start = 0;
  while (start < lines.length && lines[start].trim() === "") start++;
  if (start >= lines.length || lines[start].trim() !== TRAJECTORY_HEADER) {
    throw new Error("unrecognized trajectory header");
  }
  const points: ReferencePoint[] = [];
  let skipped = 0;
  for (let i = start + 1; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "") continue;
    const fields = line.split(",");
    if (fields.length !== 9) {
      skipped++;
      continue;
    }
    const nums = fields.map((f) => Number(f));
    if (
      nums.some((n) => !Number.isFinite(n)) ||
      !Number.isInteger(nums[0]) ||
      !Number.isInteger(nums[8])
    ) {
      skipped++;
      continue;
    }
    points.push({
      rep: nums[0],
      tS: nums[1],
      cmdTMm: nums[2],
      cmdRDeg: nums[3],
      cmdBDeg: nums[4],
      tipCm: [nums[5], nums[6], nums[7]],
      flags: nums[8],
    });
  }
  return { points, skipped };
}

export interface Bounds {
  uMin: number;
  uMax: number;
  vMin: number;
  vMax: number;
}

/** Isotropic world-to-canvas map: equal scale on both axes, v up. */
export function fitTransform(
  bounds: Bounds,
  width: number,
  height: number,
  padding = 24,
): (u: number, v: number) => [number, number] {
  const du = Math.max(bounds.uMax - bounds.uMin, 1e-9);
  const dv = Math.max(bounds.vMax - bounds.vMin, 1e-9);
  const scale = Math.min(
    (width - 2 * padding) / du,
    (height - 2 * padding) / dv,
  );
  const cu = (bounds.uMin + bounds.uMax) / 2;
  const cv = (bounds.vMin + bounds.vMax) / 2;
  return (u, v) => [
    width / 2 + (u - cu) * scale,
    height / 2 - (v - cv) * scale,
  ];
}

interface TraceSample {
  u: number;
  v: number;
  clamped: boolean;
}

/** Structural subset of CanvasRenderingContext2D used for drawing. */
export interface TraceContext {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
}

/** One 2-D panel: bounded live ring plus an optional reference path. */
export class TraceView {
  readonly label: string;
  private live: RingBuffer<TraceSample>;
  private reference: Array<[number, number]> = [];

  constructor(label: string, capacity = TRACE_CAPACITY) {
    this.label = label;
    this.live = new RingBuffer(capacity);
  }

  push(u: number, v: number, clamped: boolean) {
    this.live.push({ u, v, clamped });
  }

  setReference(points: Array<[number, number]>) {
    this.reference = points;
  }

  clearReference() {
    this.reference = [];
  }

  clearLive() {
    this.live.clear();
  }

  get size() {
    return this.live.size;
  }

  get referenceSize() {
    return this.reference.length;
  }

  last(): { u: number; v: number; clamped: boolean } | undefined {
    return this.live.last();
  }

  /** Smallest box holding every live and reference point, or null. */
  computeBounds(): Bounds | null {
    let b: Bounds | null = null;
    const grow = (u: number, v: number) => {
      if (b === null) {
        b = { uMin: u, uMax: u, vMin: v, vMax: v };
      } else {
        if (u < b.uMin) b.uMin = u;
        if (u > b.uMax) b.uMax = u;
        if (v < b.vMin) b.vMin = v;
        if (v > b.vMax) b.vMax = v;
      }
    };
    for (const s of this.live) grow(s.u, s.v);
    for (const [u, v] of this.reference) grow(u, v);
    return b;
  }

  render(ctx: TraceContext, width: number, height: number) {
    ctx.clearRect(0, 0, width, height);
    ctx.strokeStyle = "#2a2f3a";
    ctx.lineWidth = 1;
    ctx.setLineDash([]);
    ctx.strokeRect(0.5, 0.5, width - 1, height - 1);
    ctx.fillStyle = "#8b93a7";
    ctx.font = "12px monospace";
    ctx.fillText(this.label, 8, 16);

    const bounds = this.computeBounds();
    if (bounds === null) return;
    const map = fitTransform(bounds, width, height);

    if (this.reference.length > 1) {
      ctx.strokeStyle = "#5a6172";
      ctx.lineWidth = 1;
      ctx.setLineDash([4, 4]);
      ctx.beginPath();
      this.reference.forEach(([u, v], i) => {
        const [x, y] = map(u, v);
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
      ctx.setLineDash([]);
    }

    const samples = this.live.toArray();
    if (samples.length > 1) {
      ctx.strokeStyle = "#4cc2ff";
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      samples.forEach((s, i) => {
        const [x, y] = map(s.u, s.v);
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
    }
    ctx.fillStyle = "#ff5d5d";
    for (const s of samples) {
      if (!s.clamped) continue;
      const [x, y] = map(s.u, s.v);
      ctx.fillRect(x - 2, y - 2, 4, 4);
    }
    const head = this.live.last();
    if (head !== undefined) {
      const [x, y] = map(head.u, head.v);
      ctx.fillStyle = "#ffd34d";
      ctx.beginPath();
      ctx.arc(x, y, 3.5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}

const PLANE_AXES: Array<{ label: string; axes: [number, number] }> = [
  { label: "x-y (cm)", axes: [0, 1] },
  { label: "x-z (cm)", axes: [0, 2] },
  { label: "y-z (cm)", axes: [1, 2] },
];

/** All four panels, fed from state events as a unit. */
export class TraceStore {
  readonly planes: TraceView[];
  readonly knobBend: TraceView;

  constructor(capacity = TRACE_CAPACITY) {
    this.planes = PLANE_AXES.map(({ label }) => new TraceView(label, capacity));
    this.knobBend = new TraceView("knob vs bend (deg)", capacity);
  }

  push(ev: StateEvent) {
    PLANE_AXES.forEach(({ axes }, i) => {
      this.planes[i].push(ev.tipCm[axes[0]], ev.tipCm[axes[1]], ev.clamped);
    });
    this.knobBend.push(ev.bDeg, ev.bendDeg, ev.clamped);
  }

  /** Overlay a parsed trajectory CSV on the plane views. */
  loadReference(trace: ReferenceTrace) {
    PLANE_AXES.forEach(({ axes }, i) => {
      this.planes[i].setReference(
        trace.points.map((p) => [p.tipCm[axes[0]], p.tipCm[axes[1]]]),
      );
    });
  }

  clearReference() {
    for (const view of this.planes) view.clearReference();
  }

  clearLive() {
    for (const view of this.planes) view.clearLive();
    this.knobBend.clearLive();
  }
}
