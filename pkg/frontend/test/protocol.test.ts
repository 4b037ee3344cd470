import { describe, expect, it } from "vitest";
import {
  FLAG_CLAMPED,
  FLAG_GRIPPER_A,
  FLAG_GRIPPER_B,
  FLAG_PEDAL,
  deltaCommand,
  parseEventLine,
  pedalCommand,
  pingCommand,
  quantize,
} from "../src/protocol";

describe("quantize", () => {
  // Vectors pinned from the follower-side codec; both ends compute
  // floor(value * scale + 0.5) on IEEE doubles, so these must match
  // exactly, including the asymmetric half-up behavior around zero and
  // the cases where the decimal literal is not binary-representable.
  const vectors: Array<[number, number]> = [
    [0.0, 0],
    [0.0005, 1],
    [-0.0005, 0],
    [0.0015, 2],
    [-0.0015, -1],
    [12.3456, 12346],
    [-12.3456, -12346],
    [55.0, 55000],
    [115.0, 115000],
    [-180.0, -180000],
    [0.1, 100],
    [0.3333333333333333, 333],
    [34.9999999, 35000],
    [-0.4999, -500],
    [2147483.646, 2147483646],
    [2147483.647, 2147483647],
  ];

  it("matches the wire codec on pinned vectors", () => {
    for (const [value, expected] of vectors) {
      expect(quantize(value, 1000.0)).toBe(expected);
    }
  });

  it("rejects values overflowing the i32 wire field", () => {
    expect(() => quantize(2147483.6475, 1000.0)).toThrow(RangeError);
    expect(() => quantize(-2147483.649, 1000.0)).toThrow(RangeError);
    expect(() => quantize(Number.NaN, 1000.0)).toThrow(RangeError);
    expect(() => quantize(Number.POSITIVE_INFINITY, 1000.0)).toThrow(
      RangeError,
    );
  });
});

describe("parseEventLine", () => {
  // Exactly as the bridge serializes a mirrored follower state.
  const stateLine =
    '{"event":"state","id":7,"seq":12,"timestamp_us":1755000000123456,' +
    '"t_mm":12.5,"r_deg":-90.25,"b_deg":35.0,"bend_deg":90.344,' +
    '"tip_cm":[1.25,-0.5,7.75],"flags":11,"pedal":true,"grip_cart":true,' +
    '"grip_static":false,"clamped":true}';

  it("decodes a state event with flag booleans", () => {
    const ev = parseEventLine(stateLine);
    expect(ev).not.toBeNull();
    if (ev === null || ev.event !== "state") throw new Error("wrong kind");
    expect(ev.id).toBe(7);
    expect(ev.seq).toBe(12);
    expect(ev.timestampUs).toBe(1755000000123456);
    expect(ev.tMm).toBe(12.5);
    expect(ev.rDeg).toBe(-90.25);
    expect(ev.bDeg).toBe(35.0);
    expect(ev.bendDeg).toBe(90.344);
    expect(ev.tipCm).toEqual([1.25, -0.5, 7.75]);
    expect(ev.flags).toBe(FLAG_PEDAL | FLAG_GRIPPER_A | FLAG_CLAMPED);
    expect(ev.pedal).toBe(true);
    expect(ev.gripCart).toBe(true);
    expect(ev.gripStatic).toBe(false);
    expect(ev.clamped).toBe(true);
  });

  it("decodes hello, pong and error events", () => {
    expect(parseEventLine('{"event":"hello","last_id":41}')).toEqual({
      event: "hello",
      lastId: 41,
    });
    expect(parseEventLine('{"event":"pong","t":123.5}')).toEqual({
      event: "pong",
      t: 123.5,
    });
    expect(parseEventLine('{"event":"pong","t":null}')).toEqual({
      event: "pong",
      t: null,
    });
    expect(
      parseEventLine('{"event":"error","detail":"malformed command"}'),
    ).toEqual({ event: "error", detail: "malformed command" });
  });

  it("returns null for malformed lines", () => {
    const bad = [
      "",
      "not json",
      "42",
      "[1,2,3]",
      '{"event":"nope"}',
      '{"event":"hello"}',
      '{"event":"error"}',
      '{"event":"state","id":1}',
      stateLine.replace('"flags":11', '"flags":"11"'),
      stateLine.replace("[1.25,-0.5,7.75]", "[1.25,-0.5]"),
      stateLine.replace("[1.25,-0.5,7.75]", '[1.25,-0.5,"x"]'),
      stateLine.replace('"id":7', '"id":null'),
    ];
    for (const line of bad) {
      expect(parseEventLine(line)).toBeNull();
    }
  });

  it("flags decode independently", () => {
    const line = stateLine
      .replace('"flags":11', `"flags":${FLAG_GRIPPER_B}`)
      .replace('"pedal":true', '"pedal":false');
    const ev = parseEventLine(line);
    if (ev === null || ev.event !== "state") throw new Error("wrong kind");
    expect(ev.pedal).toBe(false);
    expect(ev.gripCart).toBe(false);
    expect(ev.gripStatic).toBe(true);
    expect(ev.clamped).toBe(false);
  });
});

describe("command builders", () => {
  it("serialize the bridge command shapes", () => {
    expect(JSON.parse(deltaCommand(0.5, -2.0, 0.25))).toEqual({
      cmd: "delta",
      t_mm: 0.5,
      r_deg: -2.0,
      b_deg: 0.25,
    });
    expect(JSON.parse(pedalCommand(false))).toEqual({
      cmd: "pedal",
      engaged: false,
    });
    expect(JSON.parse(pingCommand(17))).toEqual({ cmd: "ping", t: 17 });
  });
});
