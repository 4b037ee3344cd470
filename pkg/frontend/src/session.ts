/**
 * Console session: bridge events in, throttled steering commands out.
 *
 * The core is transport-agnostic: feed() takes one received line,
 * steer()/setPedal() queue operator input, and tick() emits at most one
 * command line per configured period through the attached sink, so the
 * command-rate ceiling holds no matter how fast input arrives.  The
 * local clutch mirror advances exactly when a line is sent, in wire
 * order, which keeps it bit-synchronized with the clutch the bridge
 * folds the same lines through.  connect() wraps the core in a
 * WebSocket with capped-backoff reconnection.
 */

import { ClutchState } from "./clutch";
import {
  BridgeEvent,
  StateEvent,
  deltaCommand,
  parseEventLine,
  pedalCommand,
  pingCommand,
} from "./protocol";
import { RingBuffer } from "./ringbuffer";
import { TraceStore } from "./traces";

export const COMMAND_PERIOD_MS = 10.0;
export const KNOB_LIMIT_DEG = 35.0;

export interface SessionOptions {
  commandPeriodMs?: number;
  knobLimitDeg?: number;
  traceCapacity?: number;
}

export interface SteerInput {
  dTMm?: number;
  dRDeg?: number;
  dBDeg?: number;
}

export class ConsoleSession {
  readonly clutch = new ClutchState();
  readonly traces: TraceStore;

  latest: StateEvent | null = null;
  lastId = 0;
  eventCount = 0;
  /** Event ids skipped on the wire or missed while disconnected. */
  droppedEvents = 0;
  duplicateEvents = 0;
  malformedEvents = 0;
  serverRestarts = 0;
  serverErrors = 0;
  lastErrorDetail: string | null = null;
  /** Set when a knob input had to be truncated at the dial stop. */
  knobClamped = false;
  rttMs: number | null = null;
  connected = false;

  onEvent: ((ev: BridgeEvent) => void) | null = null;

  private sink: ((line: string) => void) | null = null;
  private readonly periodMs: number;
  private readonly knobLimit: number;
  private pendingPedal: boolean | null = null;
  private pendingT = 0;
  private pendingR = 0;
  private pendingB = 0;
  private lastSendMs = Number.NEGATIVE_INFINITY;
  private arrivals = new RingBuffer<number>(512);

  constructor(opts: SessionOptions = {}) {
    this.periodMs = opts.commandPeriodMs ?? COMMAND_PERIOD_MS;
    this.knobLimit = opts.knobLimitDeg ?? KNOB_LIMIT_DEG;
    this.traces = new TraceStore(opts.traceCapacity);
  }

  /** Wire up an outgoing transport; the session counts as live. */
  attach(sink: (line: string) => void) {
    this.sink = sink;
    this.connected = true;
  }

  /** Drop the transport; queued input is discarded, never sent stale. */
  detach() {
    this.sink = null;
    this.connected = false;
    this.pendingPedal = null;
    this.pendingT = 0;
    this.pendingR = 0;
    this.pendingB = 0;
  }

  /**
   * Ingest one line from the bridge.  Malformed lines are counted and
   * dropped.  Ids are gap-checked: a jump in state ids or a hello
   * reporting emissions we never saw both count as dropped events; a
   * hello with a lower id than we already processed means the server
   * restarted, so the clutch mirror resets with it.  Trace buffers are
   * preserved across reconnects either way.
   */
  feed(line: string, nowMs: number = Date.now()): BridgeEvent | null {
    const ev = parseEventLine(line);
    if (ev === null) {
      this.malformedEvents++;
      return null;
    }
    switch (ev.event) {
      case "hello":
        if (ev.lastId < this.lastId) {
          this.serverRestarts++;
          this.clutch.reset();
        } else if (this.lastId > 0 && ev.lastId > this.lastId) {
          this.droppedEvents += ev.lastId - this.lastId;
        }
        // On a first connect a nonzero lastId is history, not loss.
        this.lastId = ev.lastId;
        break;
      case "state":
        if (ev.id <= this.lastId) {
          this.duplicateEvents++;
          break;
        }
        if (this.lastId > 0 && ev.id > this.lastId + 1) {
          this.droppedEvents += ev.id - this.lastId - 1;
        }
        this.lastId = ev.id;
        this.latest = ev;
        this.eventCount++;
        this.arrivals.push(nowMs);
        this.traces.push(ev);
        break;
      case "pong":
        if (ev.t !== null) {
          const rtt = nowMs - ev.t;
          if (rtt >= 0 && rtt < 60_000) this.rttMs = rtt;
        }
        break;
      case "error":
        this.serverErrors++;
        this.lastErrorDetail = ev.detail;
        break;
    }
    this.onEvent?.(ev);
    return ev;
  }

  /**
   * Queue incremental handle motion.  The knob delta is truncated so
   * the dial target stays within the mechanical stop, with a visual
   * cue flag for the UI.  Input while disconnected is discarded.
   */
  steer(input: SteerInput) {
    if (!this.connected) return;
    this.pendingT += input.dTMm ?? 0;
    this.pendingR += input.dRDeg ?? 0;
    this.pendingB += input.dBDeg ?? 0;
    const target = this.clutch.knobDeg + this.pendingB;
    if (target > this.knobLimit) {
      this.pendingB = this.knobLimit - this.clutch.knobDeg;
      this.knobClamped = true;
    } else if (target < -this.knobLimit) {
      this.pendingB = -this.knobLimit - this.clutch.knobDeg;
      this.knobClamped = true;
    }
  }

  /** Queue a pedal change; it outranks queued deltas at the next tick. */
  setPedal(engaged: boolean) {
    if (!this.connected) return;
    this.pendingPedal = engaged;
  }

  /** Pedal state as the operator sees it, queued change included. */
  get pedalEngaged(): boolean {
    return this.pendingPedal ?? this.clutch.engaged;
  }

  /**
   * Flush at most one queued command line.  The local mirror advances
   * here, at send time, so mirror order equals wire order even when
   * input arrived interleaved within one period.
   */
  tick(nowMs: number): string | null {
    if (!this.connected || this.sink === null) return null;
    if (nowMs - this.lastSendMs < this.periodMs) return null;
    let line: string;
    if (this.pendingPedal !== null) {
      const engaged = this.pendingPedal;
      this.pendingPedal = null;
      this.clutch.setPedal(engaged);
      line = pedalCommand(engaged);
    } else if (
      this.pendingT !== 0 ||
      this.pendingR !== 0 ||
      this.pendingB !== 0
    ) {
      const [t, r, b] = [this.pendingT, this.pendingR, this.pendingB];
      this.pendingT = 0;
      this.pendingR = 0;
      this.pendingB = 0;
      this.clutch.apply(t, r, b);
      line = deltaCommand(t, r, b);
    } else {
      return null;
    }
    this.lastSendMs = nowMs;
    this.sink(line);
    return line;
  }

  /**
   * Fire a liveness probe now.  Pings bypass the steering throttle;
   * callers pace them (the UI probes once a second).
   */
  sendPing(nowMs: number = Date.now()): boolean {
    if (!this.connected || this.sink === null) return false;
    this.sink(pingCommand(nowMs));
    return true;
  }

  /** Received state-event rate over the trailing window. */
  eventRateHz(nowMs: number, windowMs = 2000): number {
    let n = 0;
    for (const t of this.arrivals) {
      if (nowMs - t <= windowMs) n++;
    }
    return (n * 1000) / windowMs;
  }
}

export interface ConnectOptions {
  minRetryMs?: number;
  maxRetryMs?: number;
  onStatus?: (status: string) => void;
}

export interface ConnectionHandle {
  close(): void;
}

/**
 * Keep a session attached to a bridge WebSocket endpoint, reconnecting
 * with capped exponential backoff and reporting status transitions.
 */
export function connect(
  session: ConsoleSession,
  url: string,
  opts: ConnectOptions = {},
): ConnectionHandle {
  const minRetryMs = opts.minRetryMs ?? 1000;
  const maxRetryMs = opts.maxRetryMs ?? 8000;
  let ws: WebSocket | null = null;
  let closed = false;
  let retryMs = minRetryMs;

  const open = () => {
    if (closed) return;
    opts.onStatus?.(`connecting to ${url}`);
    ws = new WebSocket(url);

    ws.onopen = () => {
      retryMs = minRetryMs;
      const socket = ws!;
      session.attach((line) => {
        if (socket.readyState === WebSocket.OPEN) socket.send(line);
      });
      opts.onStatus?.("connected");
    };

    ws.onmessage = (msg) => {
      // One event per frame normally, but split defensively.
      for (const piece of String(msg.data).split("\n")) {
        const line = piece.trim();
        if (line !== "") session.feed(line);
      }
    };

    ws.onclose = () => {
      session.detach();
      if (!closed) {
        opts.onStatus?.(`disconnected; retrying in ${retryMs} ms`);
        setTimeout(open, retryMs);
        retryMs = Math.min(retryMs * 2, maxRetryMs);
      }
    };

    ws.onerror = () => {
      // onclose handles retry and status.
    };
  };

  open();

  return {
    close() {
      closed = true;
      session.detach();
      ws?.close();
    },
  };
}
