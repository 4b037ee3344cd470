"""Command-line front end for the catheterization twin.

Subcommands: characterize (bench fixture to stiffness tables and a
modulus overlay), calibrate (bending sweep to a map overlay), track
(scenario run to trajectory CSV and plane-error report), approach
(station statistics), serve (UDP follower plus console bridge), and
rtt (link latency probe).  All defaults are embedded; --config, the
CATHSIM_CONFIG environment variable, and per-flag overrides layer on
top.  With a fixed config and seed, every written log is byte-stable.
"""

import argparse
import math
import os
import queue
import signal
import socket
import sys
import threading
from dataclasses import replace
from importlib import resources
from typing import List, Optional, Tuple

import numpy as np

from .bridge import BridgeServer
from .catheter import calibrate_bending_map
from .characterization import (
    read_cases_csv,
    run_characterization,
    write_result,
)
from .config import SimConfig, write_overlay
from .errors import CathSimError, PreconditionError
from .link import (
    FollowerSession,
    SimulatedTransport,
    UdpFollowerServer,
    UdpTransport,
    measure_rtt,
)
from .metrics import compute_errors, format_error_report, write_error_report
from .scenarios import (
    SCENARIO_KINDS,
    TrajectoryLog,
    format_approach_stats,
    gen_path,
    ideal_reference,
    run_approaching,
    run_scenario,
    write_trajectory_csv,
)

_BUNDLED_FIXTURE = "data/characterization_cases.csv"
BENDING_SAMPLES_HEADER = "knob_deg,tip_deg,direction"


# ---------------------------------------------------------------------------
# Shared plumbing.
# ---------------------------------------------------------------------------

def _load_config(args) -> SimConfig:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "ideal", False):
        overrides["ideal"] = True
    if getattr(args, "reps", None) is not None:
        overrides.setdefault("scenario", {})["repetitions"] = args.reps
    if getattr(args, "cycles", None) is not None:
        overrides.setdefault("scenario", {})["cycles"] = args.cycles
    return SimConfig.load(args.config, overrides)


def _out_dir(args, cfg: SimConfig) -> str:
    out = args.out if args.out is not None else cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _make_session(cfg: SimConfig) -> FollowerSession:
    return FollowerSession(model=cfg.build_model())


def _make_transport(cfg: SimConfig, session: FollowerSession):
    """In-process link, with fault injection when the config asks for it."""
    link = cfg.data["link"]
    if link["delay_ms"] == 0 and link["jitter_ms"] == 0 and link["loss"] == 0:
        return None
    return SimulatedTransport(
        responder=session.handle_datagram,
        delay_ms=link["delay_ms"],
        jitter_ms=link["jitter_ms"],
        loss=link["loss"],
        seed=cfg["seed"],
    )


def _apply_noise(log: TrajectoryLog, std_cm: float, seed: int
                 ) -> TrajectoryLog:
    """Tracker measurement noise on logged tip positions, seeded."""
    if std_cm <= 0.0:
        return log
    rng = np.random.default_rng(seed)
    noisy = [
        replace(s, tip_cm=tuple(np.asarray(s.tip_cm)
                                + rng.normal(0.0, std_cm, 3)))
        for s in log.samples
    ]
    return TrajectoryLog(log.sample_rate_hz, noisy)


def read_bending_samples_csv(path) -> List[Tuple[float, float, int]]:
    """Bending sweep rows: knob_deg,tip_deg,direction (+1 up, -1 down)."""
    out: List[Tuple[float, float, int]] = []
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != BENDING_SAMPLES_HEADER:
            raise PreconditionError(
                f"{path}: expected header {BENDING_SAMPLES_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise PreconditionError(
                    f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
            try:
                out.append((float(parts[0]), float(parts[1]),
                            int(parts[2])))
            except ValueError as err:
                raise PreconditionError(
                    f"{path}:{lineno}: {err}") from None
    return out


def write_bending_samples_csv(path,
                              samples: List[Tuple[float, float, int]]
                              ) -> None:
    with open(path, "w") as fh:
        fh.write(BENDING_SAMPLES_HEADER + "\n")
        for knob, tip, direction in samples:
            fh.write(f"{knob:.6f},{tip:.6f},{direction:d}\n")


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_characterize(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    if args.fixture is not None:
        cases = read_cases_csv(args.fixture)
    else:
        ref = resources.files("cathsim").joinpath(_BUNDLED_FIXTURE)
        with resources.as_file(ref) as path:
            cases = read_cases_csv(path)

    loaded = [c for c in cases if c.force_n > 0.0]
    weights_only = loaded and all(
        math.isnan(c.tip_loading_mm) for c in loaded)
    result = run_characterization(
        cases,
        youngs_modulus=(cfg["catheter.youngs_modulus_pa"]
                        if weights_only else None),
    )

    print(f"trend_slope_N_per_m: {result.trend_slope:.4f}")
    print(f"residual_offset_mm: {result.residual_offset_mm:.2f}")
    print(f"calibrated_E_Pa: {result.calibrated_E:.6e}")
    print("case,force_N,point_ratio_N_per_m,sim_mm,error_pct")
    for k, case in enumerate(loaded):
        ratio = (f"{result.point_ratios[k]:.3f}"
                 if k < len(result.point_ratios) else "")
        print(f"{case.index},{case.force_n:.4f},{ratio},"
              f"{result.per_case_sim_mm[k]:.2f},"
              f"{result.per_case_error_pct[k]:.2f}")

    table_path = os.path.join(out, "characterization.txt")
    write_result(table_path, result)
    overlay_path = os.path.join(out, "youngs_modulus_overlay.json")
    write_overlay(overlay_path, {
        "catheter": {"youngs_modulus_pa": result.calibrated_E},
    })
    print(f"wrote {table_path}")
    print(f"wrote {overlay_path}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    samples = read_bending_samples_csv(args.samples)
    fitted = calibrate_bending_map(
        samples, max_knob=cfg["bending_map.max_knob_deg"])

    print(f"dead_zone_half_width_deg: {fitted.dead_zone_half_width:.4f}")
    print(f"backlash_play_deg: {fitted.backlash_play:.4f}")
    print(f"gain_right: {fitted.gain_right:.4f}")
    print(f"gain_left: {fitted.gain_left:.4f}")

    overlay_path = os.path.join(out, "bending_map_overlay.json")
    write_overlay(overlay_path, {"bending_map": {
        "dead_zone_half_width_deg": fitted.dead_zone_half_width,
        "backlash_play_deg": fitted.backlash_play,
        "gain_right": fitted.gain_right,
        "gain_left": fitted.gain_left,
        "max_knob_deg": fitted.max_knob,
    }})
    print(f"wrote {overlay_path}")
    return 0


def cmd_track(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    session = _make_session(cfg)
    program = gen_path(args.kind, cfg["scenario.repetitions"])
    log = run_scenario(
        program,
        session,
        transport=_make_transport(cfg, session),
        command_rate_hz=cfg["link.command_rate_hz"],
        sample_rate_hz=cfg["scenario.sample_rate_hz"],
    )
    log = _apply_noise(log, cfg["scenario.noise_std_cm"], cfg["seed"])
    reference = ideal_reference(program, cfg.catheter_spec(),
                                cfg["scenario.sample_rate_hz"])
    report = compute_errors(log, reference)

    traj_path = os.path.join(out, f"{args.kind}_trajectory.csv")
    write_trajectory_csv(log, traj_path)
    report_path = os.path.join(out, f"{args.kind}_errors.csv")
    write_error_report(report, report_path)
    print(format_error_report(report), end="")
    print(f"wrote {traj_path}")
    print(f"wrote {report_path}")
    return 0


def cmd_approach(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    session = _make_session(cfg)
    log, stats = run_approaching(
        session,
        cycles=cfg["scenario.cycles"],
        transport=_make_transport(cfg, session),
        command_rate_hz=cfg["link.command_rate_hz"],
        sample_rate_hz=cfg["scenario.sample_rate_hz"],
    )
    log = _apply_noise(log, cfg["scenario.noise_std_cm"], cfg["seed"])

    traj_path = os.path.join(out, "approach_trajectory.csv")
    write_trajectory_csv(log, traj_path)
    stats_path = os.path.join(out, "approach_stats.csv")
    table = format_approach_stats(stats)
    with open(stats_path, "w") as fh:
        fh.write(table)
    print(table, end="")
    print(f"wrote {traj_path}")
    print(f"wrote {stats_path}")
    return 0


def cmd_serve(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    link = cfg.data["link"]
    session = _make_session(cfg)
    try:
        follower = UdpFollowerServer(session, host=link["host"],
                                     port=link["port"])
    except OSError as err:
        raise CathSimError(
            f"follower cannot bind udp {link['host']}:{link['port']}: {err}")

    log_path = os.path.join(out, "events.jsonl")
    log_queue: "queue.Queue" = queue.Queue()

    def write_events() -> None:
        with open(log_path, "w") as fh:
            while True:
                line = log_queue.get()
                if line is None:
                    fh.flush()
                    return
                fh.write(line + "\n")

    writer = threading.Thread(target=write_events, daemon=True)

    # Console commands re-enter through the datagram socket, so the
    # follower loop stays the single writer of actuation state.
    injector = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        injector.connect((link["host"], follower.port))
        bridge = BridgeServer(
            pose_model=cfg.build_model(),
            command_sink=injector.send,
            host=link["host"],
            port=link["bridge_port"],
            event_log=log_queue.put,
            seq_hint=lambda: session.last_seq,
        )
    except Exception:
        injector.close()
        follower.stop()
        raise
    session.observer = bridge.observer

    stop = threading.Event()
    previous = signal.signal(signal.SIGINT, lambda *_: stop.set())
    writer.start()
    follower.start()
    bridge.start()
    print(f"follower: udp {follower.host}:{follower.port}", flush=True)
    print(f"bridge: tcp {bridge.host}:{bridge.port}", flush=True)
    try:
        while not stop.wait(0.2):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        signal.signal(signal.SIGINT, previous)
        bridge.stop()
        follower.stop()
        injector.close()
        log_queue.put(None)
        writer.join(timeout=5.0)
    print(f"stopped; events flushed to {log_path}", flush=True)
    return 0


def cmd_rtt(args) -> int:
    cfg = _load_config(args)
    host = args.host if args.host is not None else cfg["link.host"]
    port = args.port if args.port is not None else cfg["link.port"]
    transport = UdpTransport(host, port)
    try:
        stats = measure_rtt(transport, args.count)
    finally:
        transport.close()
    print(f"sent: {stats.sent} received: {stats.received} "
          f"loss: {stats.loss_fraction * 100.0:.2f}%")
    print(f"rtt_us min/median/max: {stats.min_us:.0f}/"
          f"{stats.median_us:.0f}/{stats.max_us:.0f}")
    print(f"degraded: {'yes' if stats.degraded else 'no'}")
    return 0


# ---------------------------------------------------------------------------
# Argument wiring.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="JSON config file (env CATHSIM_CONFIG "
                             "is the fallback)")
    common.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (default from config)")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for all injected randomness")
    common.add_argument("--ideal", action="store_true",
                        help="disable dead zone, play, and gravity")

    parser = argparse.ArgumentParser(
        prog="cathsim",
        description="Desk-scale digital twin of a master-follower "
                    "robotic catheterization platform.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("characterize", parents=[common],
                       help="run the virtual loading-unloading bench")
    p.add_argument("--fixture", metavar="CSV", default=None,
                   help="load cases (default: bundled bench dataset)")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("calibrate", parents=[common],
                       help="fit a bending map from sweep samples")
    p.add_argument("samples", metavar="CSV",
                   help="bending sweep samples (knob_deg,tip_deg,direction)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("track", parents=[common],
                       help="run a tracking scenario and report errors")
    p.add_argument("kind", choices=SCENARIO_KINDS)
    p.add_argument("--reps", type=int, default=None,
                   help="repetitions (default from config)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("approach", parents=[common],
                       help="run the station-approaching protocol")
    p.add_argument("--cycles", type=int, default=None,
                   help="cycles (default from config)")
    p.set_defaults(func=cmd_approach)

    p = sub.add_parser("serve", parents=[common],
                       help="run the UDP follower and console bridge")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("rtt", parents=[common],
                       help="measure round-trip time to a running follower")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_rtt)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CathSimError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
