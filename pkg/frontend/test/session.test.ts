import { describe, expect, it } from "vitest";
import { ClutchState } from "../src/clutch";
import { ConsoleSession } from "../src/session";

/** A state line exactly as the bridge serializes one. */
function stateLine(id: number, over: Record<string, unknown> = {}): string {
  return JSON.stringify({
    event: "state",
    id,
    seq: id,
    timestamp_us: 1_000_000 + id,
    t_mm: 0.0,
    r_deg: 0.0,
    b_deg: 0.0,
    bend_deg: 0.0,
    tip_cm: [0.0, 0.0, id * 0.1],
    flags: 0,
    pedal: false,
    grip_cart: false,
    grip_static: true,
    clamped: false,
    ...over,
  });
}

function helloLine(lastId: number): string {
  return JSON.stringify({ event: "hello", last_id: lastId });
}

function attachCollector(session: ConsoleSession): string[] {
  const lines: string[] = [];
  session.attach((line) => lines.push(line));
  return lines;
}

describe("event ingestion", () => {
  it("counts malformed lines and keeps going", () => {
    const session = new ConsoleSession();
    expect(session.feed("{ nonsense")).toBeNull();
    expect(session.feed('{"event":"mystery"}')).toBeNull();
    expect(session.malformedEvents).toBe(2);
    session.feed(helloLine(0));
    session.feed(stateLine(1));
    expect(session.eventCount).toBe(1);
    expect(session.latest?.id).toBe(1);
  });

  it("gap-checks state ids", () => {
    const session = new ConsoleSession();
    session.feed(helloLine(0));
    session.feed(stateLine(1));
    session.feed(stateLine(2));
    session.feed(stateLine(3));
    expect(session.droppedEvents).toBe(0);
    session.feed(stateLine(7));
    expect(session.droppedEvents).toBe(3);
    // Stale or duplicate ids never regress the stream.
    session.feed(stateLine(7));
    session.feed(stateLine(5));
    expect(session.duplicateEvents).toBe(2);
    expect(session.latest?.id).toBe(7);
    expect(session.eventCount).toBe(4);
  });

  it("history reported by the first hello is not loss", () => {
    const session = new ConsoleSession();
    session.feed(helloLine(42));
    expect(session.droppedEvents).toBe(0);
    session.feed(stateLine(43));
    expect(session.droppedEvents).toBe(0);
    expect(session.eventCount).toBe(1);
  });

  it("reconnect preserves traces and counts events missed offline", () => {
    const session = new ConsoleSession();
    attachCollector(session);
    session.feed(helloLine(0));
    for (let id = 1; id <= 3; id++) session.feed(stateLine(id));
    expect(session.traces.planes[0].size).toBe(3);

    session.detach();
    expect(session.connected).toBe(false);
    attachCollector(session);
    session.feed(helloLine(10));
    expect(session.droppedEvents).toBe(7);
    session.feed(stateLine(11));
    expect(session.droppedEvents).toBe(7);
    expect(session.traces.planes[0].size).toBe(4);
    expect(session.serverRestarts).toBe(0);
  });

  it("a hello below the known id means a fresh server: mirror resets", () => {
    const session = new ConsoleSession();
    attachCollector(session);
    session.feed(helloLine(0));
    session.feed(stateLine(1));
    session.steer({ dBDeg: 5.0 });
    session.tick(0);
    expect(session.clutch.knobDeg).toBe(5.0);

    session.feed(helloLine(0));
    expect(session.serverRestarts).toBe(1);
    expect(session.clutch.knobDeg).toBe(0.0);
    expect(session.lastId).toBe(0);
    // Trace buffers survive the restart for before/after comparison.
    expect(session.traces.planes[0].size).toBe(1);
  });

  it("tracks rtt from pong echoes and event rate over a window", () => {
    const session = new ConsoleSession();
    session.feed('{"event":"pong","t":100}', 107);
    expect(session.rttMs).toBe(7);
    // Unmatched or absurd echoes are ignored.
    session.feed('{"event":"pong","t":999999}', 120);
    expect(session.rttMs).toBe(7);
    session.feed('{"event":"pong","t":null}', 130);
    expect(session.rttMs).toBe(7);

    for (let id = 1; id <= 10; id++) {
      session.feed(stateLine(id), id * 100);
    }
    expect(session.eventRateHz(1000, 1000)).toBe(10);
    expect(session.eventRateHz(10_000, 1000)).toBe(0);
  });

  it("server error events are surfaced, not fatal", () => {
    const session = new ConsoleSession();
    session.feed('{"event":"error","detail":"unknown command \'warp\'"}');
    expect(session.serverErrors).toBe(1);
    expect(session.lastErrorDetail).toContain("warp");
    session.feed(helloLine(0));
    session.feed(stateLine(1));
    expect(session.eventCount).toBe(1);
  });
});

describe("steering output", () => {
  it("throttles to at most one command line per period", () => {
    const session = new ConsoleSession({ commandPeriodMs: 10 });
    const lines = attachCollector(session);
    for (let ms = 0; ms < 100; ms++) {
      session.steer({ dTMm: 0.01 });
      session.tick(ms);
    }
    // 100 input samples over 100 ms collapse to the 100 Hz ceiling.
    expect(lines.length).toBe(10);
    // The tail of the input is still queued, not lost: one more period
    // flushes it and the coalesced deltas add up to the full motion.
    session.tick(100);
    expect(lines.length).toBe(11);
    const total = lines
      .map((l) => JSON.parse(l).t_mm as number)
      .reduce((a, b) => a + b, 0);
    expect(total).toBeCloseTo(1.0, 12);
  });

  it("sends nothing when idle", () => {
    const session = new ConsoleSession({ commandPeriodMs: 10 });
    const lines = attachCollector(session);
    for (let ms = 0; ms < 50; ms += 5) expect(session.tick(ms)).toBeNull();
    expect(lines.length).toBe(0);
  });

  it("pedal-open steering sends no T/R setpoint changes", () => {
    const session = new ConsoleSession({ commandPeriodMs: 10 });
    const lines = attachCollector(session);
    let now = 0;
    const pump = () => {
      session.tick(now);
      now += 10;
    };

    session.steer({ dTMm: 2.0, dRDeg: 15.0 });
    pump();
    session.setPedal(false);
    pump();
    for (let i = 0; i < 5; i++) {
      session.steer({ dTMm: 1.0, dRDeg: -4.0, dBDeg: 0.5 });
      pump();
    }
    session.setPedal(true);
    pump();
    session.steer({ dTMm: -0.5 });
    pump();

    // Replay the wire through the reference clutch: exactly what the
    // bridge does with these lines.
    const ref = new ClutchState();
    const commands: Array<{
      setpoint: [number, number, number];
      engaged: boolean;
    }> = [];
    for (const line of lines) {
      const obj = JSON.parse(line);
      if (obj.cmd === "pedal") {
        ref.setPedal(obj.engaged);
      } else {
        expect(obj.cmd).toBe("delta");
        commands.push({
          setpoint: ref.apply(obj.t_mm, obj.r_deg, obj.b_deg),
          engaged: ref.engaged,
        });
      }
    }

    const open = commands.filter((c) => !c.engaged);
    expect(open.length).toBe(5);
    for (const c of open) {
      expect(c.setpoint[0]).toBe(2.0);
      expect(c.setpoint[1]).toBe(15.0);
    }
    // The knob is never clutched: it kept moving while open.
    expect(open[open.length - 1].setpoint[2]).toBe(2.5);
    // Re-engaged motion resumes from the held setpoint.
    const last = commands[commands.length - 1];
    expect(last.engaged).toBe(true);
    expect(last.setpoint[0]).toBe(1.5);
    expect(last.setpoint[1]).toBe(15.0);

    // The local mirror stayed bit-synchronized with the replay.
    expect(session.clutch.command()).toEqual(ref.command());
    expect(session.clutch.masterTravelMm).toBe(ref.masterTravelMm);
    expect(session.clutch.masterOffsetMm).toBe(ref.masterOffsetMm);
    expect(session.clutch.masterOffsetDeg).toBe(ref.masterOffsetDeg);
  });

  it("bounds the knob dial with a visual cue", () => {
    const session = new ConsoleSession({ commandPeriodMs: 10 });
    const lines = attachCollector(session);
    session.steer({ dBDeg: 50.0 });
    expect(session.knobClamped).toBe(true);
    session.tick(0);
    expect(JSON.parse(lines[0]).b_deg).toBe(35.0);
    expect(session.clutch.knobDeg).toBe(35.0);

    session.knobClamped = false;
    session.steer({ dBDeg: -100.0 });
    expect(session.knobClamped).toBe(true);
    session.tick(20);
    expect(JSON.parse(lines[1]).b_deg).toBe(-70.0);
    expect(session.clutch.knobDeg).toBe(-35.0);

    // In-range input raises no cue.
    session.knobClamped = false;
    session.steer({ dBDeg: 10.0 });
    expect(session.knobClamped).toBe(false);
  });

  it("sends no stale commands while disconnected", () => {
    const session = new ConsoleSession({ commandPeriodMs: 10 });
    session.steer({ dTMm: 5.0 });
    session.setPedal(false);
    expect(session.tick(0)).toBeNull();
    expect(session.pedalEngaged).toBe(true);
    expect(session.clutch.command()).toEqual([0.0, 0.0, 0.0]);

    // Input queued just before a disconnect is discarded with it.
    const lines = attachCollector(session);
    session.steer({ dTMm: 5.0 });
    session.detach();
    attachCollector(session);
    session.tick(100);
    expect(lines.length).toBe(0);
    expect(session.clutch.command()).toEqual([0.0, 0.0, 0.0]);
  });

  it("a queued pedal change outranks queued deltas", () => {
    const session = new ConsoleSession({ commandPeriodMs: 10 });
    const lines = attachCollector(session);
    session.steer({ dTMm: 1.0 });
    session.setPedal(false);
    session.tick(0);
    session.tick(10);
    expect(JSON.parse(lines[0]).cmd).toBe("pedal");
    expect(JSON.parse(lines[1]).cmd).toBe("delta");
    // The mirror applied them in wire order: the delta was absorbed.
    expect(session.clutch.command()[0]).toBe(0.0);
    expect(session.clutch.masterTravelMm).toBe(1.0);
  });

  it("pings pass through outside the steering throttle", () => {
    const session = new ConsoleSession({ commandPeriodMs: 10 });
    const lines = attachCollector(session);
    expect(session.sendPing(5)).toBe(true);
    expect(JSON.parse(lines[0])).toEqual({ cmd: "ping", t: 5 });
    session.detach();
    expect(session.sendPing(6)).toBe(false);
  });
});
