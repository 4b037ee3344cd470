/**
 * Bridge protocol mirror: flag bits, fixed-point quantization, and the
 * line-delimited JSON event/command shapes spoken over the bridge socket.
 *
 * The quantization here must stay bit-identical to the follower side:
 * both compute floor(value * scale + 0.5) on IEEE doubles, so a replayed
 * input sequence decodes to the same integers on either end.
 */

export const FLAG_PEDAL = 0x01;
export const FLAG_GRIPPER_A = 0x02;
export const FLAG_GRIPPER_B = 0x04;
export const FLAG_CLAMPED = 0x08;

const I32_MIN = -2147483648;
const I32_MAX = 2147483647;

/** Fixed-point conversion, half-up rounding, i32 range checked. */
export function quantize(value: number, scale: number): number {
  const q = Math.floor(value * scale + 0.5);
  if (!Number.isFinite(q) || q < I32_MIN || q > I32_MAX) {
    throw new RangeError(`value ${value} overflows the wire field`);
  }
  return q;
}

/** One mirrored follower state change, as published by the bridge. */
export interface StateEvent {
  event: "state";
  id: number;
  seq: number;
  timestampUs: number;
  tMm: number;
  rDeg: number;
  bDeg: number;
  bendDeg: number;
  tipCm: [number, number, number];
  flags: number;
  pedal: boolean;
  gripCart: boolean;
  gripStatic: boolean;
  clamped: boolean;
}

/** Greeting sent once per connection, before any state event. */
export interface HelloEvent {
  event: "hello";
  lastId: number;
}

export interface PongEvent {
  event: "pong";
  t: number | null;
}

export interface ErrorEvent {
  event: "error";
  detail: string;
}

export type BridgeEvent = StateEvent | HelloEvent | PongEvent | ErrorEvent;

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

/**
 * Parse one line from the bridge into a typed event.
 * Returns null for anything malformed; callers count and drop those.
 */
export function parseEventLine(line: string): BridgeEvent | null {
  let obj: Record<string, unknown>;
  try {
    obj = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) return null;
  switch (obj.event) {
    case "state": {
      const tip = obj.tip_cm;
      if (
        !isFiniteNumber(obj.id) ||
        !isFiniteNumber(obj.seq) ||
        !isFiniteNumber(obj.timestamp_us) ||
        !isFiniteNumber(obj.t_mm) ||
        !isFiniteNumber(obj.r_deg) ||
        !isFiniteNumber(obj.b_deg) ||
        !isFiniteNumber(obj.bend_deg) ||
        !isFiniteNumber(obj.flags) ||
        !Array.isArray(tip) ||
        tip.length !== 3 ||
        !tip.every(isFiniteNumber)
      ) {
        return null;
      }
      const flags = obj.flags;
      return {
        event: "state",
        id: obj.id,
        seq: obj.seq,
        timestampUs: obj.timestamp_us,
        tMm: obj.t_mm,
        rDeg: obj.r_deg,
        bDeg: obj.b_deg,
        bendDeg: obj.bend_deg,
        tipCm: [tip[0], tip[1], tip[2]],
        flags,
        pedal: (flags & FLAG_PEDAL) !== 0,
        gripCart: (flags & FLAG_GRIPPER_A) !== 0,
        gripStatic: (flags & FLAG_GRIPPER_B) !== 0,
        clamped: (flags & FLAG_CLAMPED) !== 0,
      };
    }
    case "hello":
      if (!isFiniteNumber(obj.last_id)) return null;
      return { event: "hello", lastId: obj.last_id };
    case "pong":
      return { event: "pong", t: isFiniteNumber(obj.t) ? obj.t : null };
    case "error":
      if (typeof obj.detail !== "string") return null;
      return { event: "error", detail: obj.detail };
    default:
      return null;
  }
}

/** Incremental handle motion; the bridge folds it through its clutch. */
export function deltaCommand(tMm: number, rDeg: number, bDeg: number): string {
  return JSON.stringify({ cmd: "delta", t_mm: tMm, r_deg: rDeg, b_deg: bDeg });
}

/** Engage or release the foot pedal on the bridge's master clutch. */
export function pedalCommand(engaged: boolean): string {
  return JSON.stringify({ cmd: "pedal", engaged });
}

/** Liveness probe; the bridge echoes t back in a pong event. */
export function pingCommand(t: number): string {
  return JSON.stringify({ cmd: "ping", t });
}
