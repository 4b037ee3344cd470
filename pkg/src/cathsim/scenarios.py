"""Actuation programs and open-loop scenario runners.

Programs are sequences of absolute (translation mm, rotation deg,
bending deg) target tuples.  Runners interpolate between targets at
stepper-scale resolution, stream the setpoints through a follower
session at the command rate, and sample the tip pose at the capture
rate.  Hysteresis memory persists across repetitions, as it does on
the physical rig after extended testing.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .catheter import BendingMapConfig, CatheterModel, CatheterSpec
from .errors import AbortedRepError, ParameterError, PreconditionError
from .link import FollowerSession
from .protocol import command as make_command, decode, encode

Tuple3 = Tuple[float, float, float]

COMMAND_RATE_HZ = 100.0
SAMPLE_RATE_HZ = 250.0
TRANSLATION_STEP_MM = 0.5
ANGLE_STEP_DEG = 1.0
DEFAULT_STEP: Tuple3 = (TRANSLATION_STEP_MM, ANGLE_STEP_DEG, ANGLE_STEP_DEG)
DEFAULT_REPETITIONS = 5

HOME: Tuple3 = (0.0, 0.0, 0.0)
APPROACH_TARGETS: Tuple[Tuple3, ...] = (
    (55.0, 0.0, 25.0),
    (10.0, -90.0, 0.0),
    (0.0, 0.0, -50.0),
    (20.0, 90.0, 0.0),
    (25.0, 90.0, 0.0),
)

SCENARIO_KINDS = ("circular", "infinity", "spiral")


@dataclass(frozen=True)
class Segment:
    """One leg of a program: drive to target at the given resolution."""

    target: Tuple3
    step: Tuple3 = DEFAULT_STEP


@dataclass(frozen=True)
class ScenarioProgram:
    name: str
    init: Tuple3
    segments: Tuple[Segment, ...]
    repetitions: int = DEFAULT_REPETITIONS

    def closes(self) -> bool:
        return self.segments[-1].target == self.init


def gen_path(kind: str, repetitions: int = DEFAULT_REPETITIONS) -> ScenarioProgram:
    """Build one of the three full-cycle tracking programs.

    circular: bend 25 deg at 55 mm, rotate 0 -> 360 -> 0.
    infinity: bend +30 deg at 55 mm, then rotate +90, bend -60,
      rotate -90, bend +30, and retrace those legs in reverse order
      back to the start.
    spiral: bend 30 deg at 55 mm, ramp translation and rotation
      together to (100 mm, 360 deg) and back.
    """
    kind = kind.lower()
    if kind == "circular":
        init = (55.0, 0.0, 25.0)
        waypoints = [(55.0, 360.0, 25.0), (55.0, 0.0, 25.0)]
    elif kind == "infinity":
        init = (55.0, 0.0, 30.0)
        forward = [
            (55.0, 90.0, 30.0),
            (55.0, 90.0, -30.0),
            (55.0, 0.0, -30.0),
            (55.0, 0.0, 0.0),
        ]
        # Return half retraces the outbound legs in reverse order.
        back = [(55.0, 0.0, -30.0), (55.0, 90.0, -30.0),
                (55.0, 90.0, 30.0), init]
        waypoints = forward + back
    elif kind == "spiral":
        init = (55.0, 0.0, 30.0)
        waypoints = [(100.0, 360.0, 30.0), (55.0, 0.0, 30.0)]
    else:
        raise ParameterError(
            f"unknown scenario kind {kind!r}; expected one of "
            f"{', '.join(SCENARIO_KINDS)}"
        )
    if repetitions < 1:
        raise ParameterError("repetitions must be >= 1")
    return ScenarioProgram(
        name=kind,
        init=init,
        segments=tuple(Segment(w) for w in waypoints),
        repetitions=repetitions,
    )


def interpolate(start: Tuple3, segment: Segment) -> List[Tuple3]:
    """Linear actuation-space ramp from start (exclusive) to target.

    The step count is set by the axis needing the most increments at
    the segment's per-axis resolution, so no axis ever moves faster
    than its step per command.
    """
    deltas = [t - s for s, t in zip(start, segment.target)]
    n = max(
        (int(math.ceil(abs(d) / h - 1e-12)) for d, h in zip(deltas, segment.step)),
        default=0,
    )
    n = max(n, 1)
    out = []
    for k in range(1, n + 1):
        f = k / n
        out.append(tuple(s + f * d for s, d in zip(start, deltas)))
    out[-1] = segment.target
    return out


def program_commands(program: ScenarioProgram) -> List[Tuple3]:
    """One repetition's command stream, starting at the init tuple."""
    stream = [program.init]
    cursor = program.init
    for seg in program.segments:
        stream.extend(interpolate(cursor, seg))
        cursor = seg.target
    return stream


# ---------------------------------------------------------------------------
# Trajectory logging.
# ---------------------------------------------------------------------------

TRAJECTORY_HEADER = (
    "rep,t_s,cmd_T_mm,cmd_R_deg,cmd_B_deg,tip_x_cm,tip_y_cm,tip_z_cm,flags"
)


@dataclass(frozen=True)
class LogSample:
    rep: int
    t_s: float
    cmd: Tuple3
    tip_cm: Tuple3
    flags: int


@dataclass
class TrajectoryLog:
    sample_rate_hz: float = SAMPLE_RATE_HZ
    samples: List[LogSample] = field(default_factory=list)

    def reps(self) -> Tuple[int, ...]:
        return tuple(sorted({s.rep for s in self.samples}))

    def rep_samples(self, rep: int) -> List[LogSample]:
        return [s for s in self.samples if s.rep == rep]

    def positions(self, rep: Optional[int] = None) -> np.ndarray:
        rows = self.samples if rep is None else self.rep_samples(rep)
        if not rows:
            return np.zeros((0, 3))
        return np.array([s.tip_cm for s in rows])


def write_trajectory_csv(log: TrajectoryLog, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        writer = csv.writer(fh)
        for s in log.samples:
            writer.writerow([
                s.rep,
                f"{s.t_s:.6f}",
                f"{s.cmd[0]:.6f}", f"{s.cmd[1]:.6f}", f"{s.cmd[2]:.6f}",
                f"{s.tip_cm[0]:.6f}", f"{s.tip_cm[1]:.6f}",
                f"{s.tip_cm[2]:.6f}",
                s.flags,
            ])


def read_trajectory_csv(path) -> TrajectoryLog:
    log = TrajectoryLog()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or ",".join(header) != TRAJECTORY_HEADER:
            raise PreconditionError(f"{path}: unrecognized trajectory header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 9:
                raise PreconditionError(
                    f"{path}:{lineno}: expected 9 columns, got {len(row)}"
                )
            try:
                log.samples.append(LogSample(
                    rep=int(row[0]),
                    t_s=float(row[1]),
                    cmd=(float(row[2]), float(row[3]), float(row[4])),
                    tip_cm=(float(row[5]), float(row[6]), float(row[7])),
                    flags=int(row[8]),
                ))
            except ValueError as err:
                raise PreconditionError(f"{path}:{lineno}: {err}") from None
    return log


# ---------------------------------------------------------------------------
# Scenario execution.
# ---------------------------------------------------------------------------

class _CommandPump:
    """Streams command tuples into a session, in-process or via transport."""

    def __init__(self, session: FollowerSession, transport=None,
                 reply_timeout_s: float = 0.05):
        self.session = session
        self.transport = transport
        self.reply_timeout_s = reply_timeout_s
        self.seq = 0
        self.lost = 0

    def push(self, cmd: Tuple3) -> Optional[int]:
        """Send one absolute setpoint; returns status flags or None."""
        self.seq += 1
        msg = make_command(self.seq, cmd[0], cmd[1], cmd[2])
        if self.transport is None:
            result = self.session.apply(msg)
            if result is None:
                self.lost += 1
                return None
            return result[1].flags
        self.transport.send(encode(msg))
        raw = self.transport.recv(self.reply_timeout_s)
        if raw is None:
            self.lost += 1
            return None
        return decode(raw).flags


def _drive_quiet(pump: _CommandPump, start: Tuple3, target: Tuple3) -> None:
    # Unlogged setup motion (homing to the program's init tuple); it
    # still primes hysteresis memory like any other motion.
    for cmd in interpolate(start, Segment(target)):
        pump.push(cmd)


def _run_rep(
    pump: _CommandPump,
    commands: Sequence[Tuple3],
    rep: int,
    log: TrajectoryLog,
    command_rate_hz: float,
    sample_rate_hz: float,
    loss_abort_fraction: float,
    station_indices: Optional[Sequence[int]] = None,
) -> List[Tuple3]:
    """Stream one repetition, sampling the tip on the capture clock."""
    model = pump.session.model
    lost_before = pump.lost
    flags = 0
    next_sample = 0
    stations: List[Tuple3] = []
    station_set = set(station_indices or ())
    for i, cmd in enumerate(commands):
        got = pump.push(cmd)
        if got is not None:
            flags = got
        t_next = (i + 1) / command_rate_hz
        while next_sample / sample_rate_hz < t_next - 1e-12:
            pose = model.tip_pose()
            log.samples.append(LogSample(
                rep=rep,
                t_s=next_sample / sample_rate_hz,
                cmd=cmd,
                tip_cm=tuple(pose.position_cm),
                flags=flags,
            ))
            next_sample += 1
        if i in station_set:
            stations.append(tuple(model.tip_pose().position_cm))
    lost = pump.lost - lost_before
    if lost / len(commands) > loss_abort_fraction:
        raise AbortedRepError(
            f"rep {rep}: lost {lost}/{len(commands)} commands",
            partial_log=log,
        )
    return stations


def run_scenario(
    program: ScenarioProgram,
    session: Optional[FollowerSession] = None,
    transport=None,
    command_rate_hz: float = COMMAND_RATE_HZ,
    sample_rate_hz: float = SAMPLE_RATE_HZ,
    loss_abort_fraction: float = 0.1,
    reply_timeout_s: float = 0.05,
) -> TrajectoryLog:
    """Run a full-cycle program for its configured repetitions.

    The session's model is homed to the program's init tuple first
    (unlogged), then each repetition streams an identical command
    sequence; tip poses are sampled at the capture rate.  The knob's
    hysteresis memory carries across repetitions.
    """
    if session is None:
        session = FollowerSession()
    pump = _CommandPump(session, transport, reply_timeout_s)
    state = session.model.state
    _drive_quiet(pump, (state.translation, state.rotation, state.knob),
                 program.init)
    commands = program_commands(program)
    log = TrajectoryLog(sample_rate_hz=sample_rate_hz)
    for rep in range(program.repetitions):
        _run_rep(pump, commands, rep, log, command_rate_hz,
                 sample_rate_hz, loss_abort_fraction)
    return log


@dataclass(frozen=True)
class ApproachStats:
    """Per-station tip statistics over approach cycles."""

    stations: Tuple[Tuple3, ...]
    mean_cm: np.ndarray
    std_cm: np.ndarray
    cycles: int
    clamped: Tuple[bool, ...]


def run_approaching(
    session: Optional[FollowerSession] = None,
    targets: Sequence[Tuple3] = APPROACH_TARGETS,
    cycles: int = 5,
    transport=None,
    command_rate_hz: float = COMMAND_RATE_HZ,
    sample_rate_hz: float = SAMPLE_RATE_HZ,
    loss_abort_fraction: float = 0.1,
    reply_timeout_s: float = 0.05,
) -> Tuple[TrajectoryLog, ApproachStats]:
    """Visit home plus each target in order, for several cycles.

    Station positions are recorded at each arrival; statistics are the
    per-axis mean and standard deviation across cycles.  Targets past
    an actuator limit are reached at the clamped value and flagged,
    not rejected.
    """
    if not targets:
        raise PreconditionError("approaching needs at least one target")
    if cycles < 1:
        raise ParameterError("cycles must be >= 1")
    if session is None:
        session = FollowerSession()
    stations = (HOME,) + tuple(tuple(float(v) for v in t) for t in targets)

    pump = _CommandPump(session, transport, reply_timeout_s)
    state = session.model.state
    _drive_quiet(pump, (state.translation, state.rotation, state.knob),
                 HOME)

    commands: List[Tuple3] = [HOME]
    arrival_idx = [0]
    cursor: Tuple3 = HOME
    for target in stations[1:]:
        leg = interpolate(cursor, Segment(target))
        commands.extend(leg)
        arrival_idx.append(len(commands) - 1)
        cursor = target
    # Close the cycle back at home so every cycle starts identically.
    leg = interpolate(cursor, Segment(HOME))
    commands.extend(leg)

    log = TrajectoryLog(sample_rate_hz=sample_rate_hz)
    visits = np.zeros((cycles, len(stations), 3))
    for cycle in range(cycles):
        got = _run_rep(pump, commands, cycle, log, command_rate_hz,
                       sample_rate_hz, loss_abort_fraction,
                       station_indices=arrival_idx)
        visits[cycle] = np.array(got)

    t_limit = session.translation_limit_mm
    b_limit = session.knob_limit_deg
    clamped = tuple(
        not (0.0 <= s[0] <= t_limit and -b_limit <= s[2] <= b_limit)
        for s in stations
    )
    stats = ApproachStats(
        stations=stations,
        mean_cm=visits.mean(axis=0),
        std_cm=visits.std(axis=0),
        cycles=cycles,
        clamped=clamped,
    )
    return log, stats


def format_approach_stats(stats: ApproachStats) -> str:
    """Structured-text table: one row per station, mean and std per axis."""
    lines = [
        "station_T_mm,station_R_deg,station_B_deg,"
        "mean_x_cm,mean_y_cm,mean_z_cm,std_x_cm,std_y_cm,std_z_cm,clamped"
    ]
    for i, s in enumerate(stats.stations):
        m, d = stats.mean_cm[i], stats.std_cm[i]
        lines.append(
            f"{s[0]:g},{s[1]:g},{s[2]:g},"
            f"{m[0]:.3f},{m[1]:.3f},{m[2]:.3f},"
            f"{d[0]:.3f},{d[1]:.3f},{d[2]:.3f},{int(stats.clamped[i])}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Ideal references.
# ---------------------------------------------------------------------------

def ideal_model(spec: CatheterSpec = CatheterSpec()) -> CatheterModel:
    """Nonlinearity-free twin: no dead zone, no play, no gravity."""
    cfg = BendingMapConfig(dead_zone_half_width=0.0, backlash_play=0.0)
    return CatheterModel(spec=spec, cfg=cfg, gravity_on=False)


def ideal_reference(
    program: ScenarioProgram,
    spec: CatheterSpec = CatheterSpec(),
    sample_rate_hz: float = SAMPLE_RATE_HZ,
) -> np.ndarray:
    """Desired tip path: one repetition of the program on the ideal twin."""
    ideal = ScenarioProgram(program.name, program.init, program.segments,
                            repetitions=1)
    log = run_scenario(ideal, FollowerSession(ideal_model(spec)),
                       sample_rate_hz=sample_rate_hz)
    return log.positions()
