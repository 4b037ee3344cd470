/**
 * Console wiring: keyboard steering, canvases, and the status panel.
 *
 * Held keys are sampled on a fixed interval into steering deltas, the
 * session's tick loop flushes them under the command-rate ceiling, and
 * a requestAnimationFrame loop redraws whatever the server has
 * confirmed.  Nothing here touches simulation state directly; every
 * mutation goes out as a bridge command line.
 */

import { ConnectionHandle, ConsoleSession, connect } from "./session";
import { parseTrajectoryCsv } from "./traces";

const STEER_INTERVAL_MS = 20;
const TRANSLATE_STEP_MM = 0.5;
const ROTATE_STEP_DEG = 2.0;
const KNOB_STEP_DEG = 0.5;

const session = new ConsoleSession();

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

const statusEl = byId<HTMLSpanElement>("status");
const endpointEl = byId<HTMLInputElement>("endpoint");
const connectBtn = byId<HTMLButtonElement>("connect");

let handle: ConnectionHandle | null = null;

connectBtn.addEventListener("click", () => {
  if (handle !== null) {
    handle.close();
    handle = null;
    connectBtn.textContent = "connect";
    statusEl.textContent = "disconnected";
    return;
  }
  handle = connect(session, endpointEl.value.trim(), {
    onStatus: (s) => {
      statusEl.textContent = s;
    },
  });
  connectBtn.textContent = "disconnect";
});

byId<HTMLButtonElement>("clear-traces").addEventListener("click", () => {
  session.traces.clearLive();
});

byId<HTMLButtonElement>("clear-overlay").addEventListener("click", () => {
  session.traces.clearReference();
});

byId<HTMLInputElement>("overlay").addEventListener("change", async (ev) => {
  const input = ev.target as HTMLInputElement;
  const file = input.files?.[0];
  if (file === undefined) return;
  try {
    const trace = parseTrajectoryCsv(await file.text());
    session.traces.loadReference(trace);
    statusEl.textContent =
      `overlay: ${trace.points.length} points` +
      (trace.skipped > 0 ? ` (${trace.skipped} rows skipped)` : "");
  } catch (err) {
    statusEl.textContent = `overlay rejected: ${(err as Error).message}`;
  }
  input.value = "";
});

// -- keyboard steering -------------------------------------------------------

const held = new Set<string>();
const STEER_KEYS = new Set([
  "ArrowUp",
  "ArrowDown",
  "ArrowLeft",
  "ArrowRight",
  "BracketLeft",
  "BracketRight",
]);

window.addEventListener("keydown", (ev) => {
  if (ev.code === "Space") {
    ev.preventDefault();
    if (!ev.repeat) session.setPedal(!session.pedalEngaged);
    return;
  }
  if (STEER_KEYS.has(ev.code)) {
    ev.preventDefault();
    held.add(ev.code);
  }
});

window.addEventListener("keyup", (ev) => {
  held.delete(ev.code);
});

window.addEventListener("blur", () => {
  held.clear();
});

setInterval(() => {
  if (held.size === 0) return;
  let dT = 0;
  let dR = 0;
  let dB = 0;
  if (held.has("ArrowUp")) dT += TRANSLATE_STEP_MM;
  if (held.has("ArrowDown")) dT -= TRANSLATE_STEP_MM;
  if (held.has("ArrowRight")) dR += ROTATE_STEP_DEG;
  if (held.has("ArrowLeft")) dR -= ROTATE_STEP_DEG;
  if (held.has("BracketRight")) dB += KNOB_STEP_DEG;
  if (held.has("BracketLeft")) dB -= KNOB_STEP_DEG;
  if (dT !== 0 || dR !== 0 || dB !== 0) {
    session.steer({ dTMm: dT, dRDeg: dR, dBDeg: dB });
  }
}, STEER_INTERVAL_MS);

// -- outgoing command pump and link probes -----------------------------------

setInterval(() => {
  session.tick(performance.now());
}, 5);

setInterval(() => {
  session.sendPing(Date.now());
}, 1000);

// -- rendering ---------------------------------------------------------------

const canvases = [
  byId<HTMLCanvasElement>("plane-xy"),
  byId<HTMLCanvasElement>("plane-xz"),
  byId<HTMLCanvasElement>("plane-yz"),
];
const knobBendCanvas = byId<HTMLCanvasElement>("knob-bend");

function context(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("2d canvas unsupported");
  return ctx;
}

const fmt = (v: number, digits = 2) => v.toFixed(digits);

function setLamp(id: string, on: boolean) {
  byId<HTMLSpanElement>(id).classList.toggle("on", on);
}

let knobClampFlashUntil = 0;

function renderStatus(nowMs: number) {
  const ev = session.latest;
  byId("ro-t").textContent = ev ? `${fmt(ev.tMm)} mm` : "-";
  byId("ro-r").textContent = ev ? `${fmt(ev.rDeg)} deg` : "-";
  byId("ro-b").textContent = ev ? `${fmt(ev.bDeg)} deg` : "-";
  byId("ro-bend").textContent = ev ? `${fmt(ev.bendDeg)} deg` : "-";
  byId("ro-tip").textContent = ev
    ? ev.tipCm.map((c) => fmt(c, 2)).join(", ")
    : "-";
  setLamp("lamp-pedal", ev?.pedal ?? false);
  setLamp("lamp-cart", ev?.gripCart ?? false);
  setLamp("lamp-static", ev?.gripStatic ?? false);
  setLamp("lamp-clamped", ev?.clamped ?? false);

  if (session.knobClamped) {
    session.knobClamped = false;
    knobClampFlashUntil = nowMs + 600;
  }
  setLamp("lamp-knob", nowMs < knobClampFlashUntil);

  const [t, r, b] = session.clutch.command();
  byId("tx-t").textContent = `${fmt(t)} mm`;
  byId("tx-r").textContent = `${fmt(r)} deg`;
  byId("tx-b").textContent = `${fmt(b)} deg`;
  byId("tx-pedal").textContent = session.pedalEngaged
    ? "engaged"
    : "open (motion absorbed)";

  byId("lk-rate").textContent = `${fmt(session.eventRateHz(nowMs), 1)} Hz`;
  byId("lk-rtt").textContent =
    session.rttMs === null ? "-" : `${fmt(session.rttMs, 1)} ms`;
  byId("lk-events").textContent = String(session.eventCount);
  byId("lk-dropped").textContent = String(session.droppedEvents);
  byId("lk-malformed").textContent = String(session.malformedEvents);
}

function frame() {
  const nowMs = performance.now();
  session.traces.planes.forEach((view, i) => {
    const canvas = canvases[i];
    view.render(context(canvas), canvas.width, canvas.height);
  });
  session.traces.knobBend.render(
    context(knobBendCanvas),
    knobBendCanvas.width,
    knobBendCanvas.height,
  );
  renderStatus(nowMs);
  requestAnimationFrame(frame);
}

requestAnimationFrame(frame);
