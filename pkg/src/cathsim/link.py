"""Master and follower sessions over the datagram protocol.

The master session turns incremental handle motion into absolute
setpoints, with a foot-pedal clutch whose offsets let the short handle
track cover the full follower range in several strokes.  The follower
session clamps incoming setpoints to actuator limits, deduplicates
out-of-order datagrams, schedules the feeder grippers, and answers
with status frames.  Transports are pluggable: real UDP sockets or an
in-process link with injected delay/jitter/loss.
"""

import heapq
import random
import socket
import statistics
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

from .catheter import ActuationState, CatheterModel
from .errors import EmptyInputError, LinkError, ProtocolError
from .protocol import (
    FLAG_CLAMPED,
    FLAG_GRIPPER_A,
    FLAG_GRIPPER_B,
    FLAG_PEDAL,
    MSG_COMMAND,
    MSG_PING,
    MSG_PONG,
    WireMessage,
    decode,
    encode,
    ping,
    pong_for,
    status,
)

FOLLOWER_PORT = 47001
FOLLOWER_RANGE_MM = 115.0
# The handle track is about one third of the follower's linear range;
# the operator clutch-strokes to cover the rest.
MASTER_TRAVEL_MM = FOLLOWER_RANGE_MM / 3.0
GRIPPER_OVERLAP_MS = 50.0
COMMAND_PERIOD_MS = 10.0


def _now_us() -> int:
    return time.time_ns() // 1000


# ---------------------------------------------------------------------------
# Master side: clutched increment accumulation.
# ---------------------------------------------------------------------------

@dataclass
class ClutchState:
    """Foot-pedal clutch bookkeeping on the master side.

    The outgoing translation setpoint is handle travel minus the offset
    accumulated while disengaged, so re-engaging resumes 1-to-1 motion
    from wherever the follower already is.  Rotation is clutched the
    same way; bending is never clutched.
    """

    engaged: bool = True
    master_offset_mm: float = 0.0
    master_offset_deg: float = 0.0
    master_travel_mm: float = 0.0
    rotation_input_deg: float = 0.0
    knob_deg: float = 0.0
    travel_limit_mm: float = MASTER_TRAVEL_MM

    def command(self) -> Tuple[float, float, float]:
        """Current outgoing absolute (T mm, R deg, B deg) setpoint."""
        return (
            self.master_travel_mm - self.master_offset_mm,
            self.rotation_input_deg - self.master_offset_deg,
            self.knob_deg,
        )


def set_pedal(clutch: ClutchState, engaged: bool) -> None:
    """Engage or release the clutch; offsets freeze the command."""
    clutch.engaged = engaged


def master_apply(
    input_delta: Tuple[float, float, float], clutch: ClutchState
) -> Tuple[float, float, float]:
    """Fold one handle increment into the outgoing absolute command.

    input_delta is (translation mm, rotation deg, bending deg).  The
    handle stops at its track ends, so an oversized translation delta
    is truncated to the physically realizable motion.  While the pedal
    is disengaged, translation and rotation motion is absorbed into
    the offsets and the command holds; bending always passes through.
    """
    d_mm, d_deg, d_knob = input_delta
    new_travel = min(max(clutch.master_travel_mm + d_mm, 0.0),
                     clutch.travel_limit_mm)
    moved_mm = new_travel - clutch.master_travel_mm
    clutch.master_travel_mm = new_travel
    clutch.rotation_input_deg += d_deg
    clutch.knob_deg += d_knob
    if not clutch.engaged:
        clutch.master_offset_mm += moved_mm
        clutch.master_offset_deg += d_deg
    return clutch.command()


# ---------------------------------------------------------------------------
# Feeder grippers: alternate holds with a both-engaged handoff overlap.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GripperState:
    cart_gripper: bool = False
    static_gripper: bool = True
    overlap_timer: float = 0.0

    def __post_init__(self):
        if not (self.cart_gripper or self.static_gripper):
            raise ProtocolError("at least one gripper must hold the shaft")


def gripper_schedule(
    handler_translating: bool,
    state: GripperState,
    dt_ms: float,
    overlap_ms: float = GRIPPER_OVERLAP_MS,
) -> GripperState:
    """Advance the gripper handoff state machine by one tick.

    The cart gripper should hold while the handler translates, the
    static gripper at all other times.  A handoff first engages the
    target gripper, holds both through the overlap window, then
    releases the other; the shaft is never unheld.
    """
    target_cart = handler_translating
    holding = state.cart_gripper if target_cart else state.static_gripper
    other = state.static_gripper if target_cart else state.cart_gripper
    if holding and not other:
        return GripperState(target_cart, not target_cart, 0.0)
    if not holding:
        # Engage the target; the overlap window starts now.
        return GripperState(True, True, 0.0)
    timer = state.overlap_timer + dt_ms
    if timer >= overlap_ms:
        return GripperState(target_cart, not target_cart, 0.0)
    return GripperState(True, True, timer)


# ---------------------------------------------------------------------------
# Follower side: clamping, dedup, gripper flags, status replies.
# ---------------------------------------------------------------------------

class FollowerSession:
    """Single-owner follower loop body: datagrams in, status out.

    The session is the only writer of the catheter model's actuation
    state.  Stale sequence numbers (out-of-order or duplicated UDP) are
    dropped and counted; commands are clamped to actuator limits with
    the clamp flagged in the status reply.
    """

    def __init__(
        self,
        model: Optional[CatheterModel] = None,
        overlap_ms: float = GRIPPER_OVERLAP_MS,
        command_period_ms: float = COMMAND_PERIOD_MS,
    ):
        self.model = model if model is not None else CatheterModel()
        self.grippers = GripperState()
        self.overlap_ms = overlap_ms
        self.command_period_ms = command_period_ms
        self.last_seq: Optional[int] = None
        self.duplicates = 0
        self.rejected = 0
        self._status_seq = 0
        # Called with (state, reply) after each applied command, in the
        # thread that owns the session; used to mirror state outward.
        self.observer: Optional[
            Callable[[ActuationState, WireMessage], None]
        ] = None

    @property
    def translation_limit_mm(self) -> float:
        return self.model.spec.insertion_length * 1e3

    @property
    def knob_limit_deg(self) -> float:
        return self.model.cfg.max_knob

    def apply(
        self, cmd: WireMessage
    ) -> Optional[Tuple[ActuationState, WireMessage]]:
        """Clamp and apply one command; None means it was dropped."""
        if cmd.msg_type != MSG_COMMAND:
            raise ProtocolError("follower apply expects a command message")
        if self.last_seq is not None and cmd.seq <= self.last_seq:
            self.duplicates += 1
            return None
        self.last_seq = cmd.seq

        t_cmd = cmd.translation_mm
        b_cmd = cmd.knob_deg
        t_mm = min(max(t_cmd, 0.0), self.translation_limit_mm)
        b_deg = min(max(b_cmd, -self.knob_limit_deg), self.knob_limit_deg)
        clamped = (t_mm != t_cmd) or (b_deg != b_cmd)

        translating = abs(t_mm - self.model.state.translation) > 1e-12
        self.grippers = gripper_schedule(
            translating, self.grippers, self.command_period_ms,
            self.overlap_ms,
        )
        self.model.command(
            translation=t_mm, rotation=cmd.rotation_deg, knob=b_deg,
            solve=False,
        )

        flags = cmd.flags & FLAG_PEDAL  # echo the master's clutch state
        if clamped:
            flags |= FLAG_CLAMPED
        if self.grippers.cart_gripper:
            flags |= FLAG_GRIPPER_A
        if self.grippers.static_gripper:
            flags |= FLAG_GRIPPER_B
        self._status_seq += 1
        reply = status(
            self._status_seq,
            self.model.state.translation,
            self.model.state.rotation,
            self.model.state.knob,
            flags=flags,
            timestamp_us=cmd.timestamp_us,
        )
        state = self.model.state.copy()
        if self.observer is not None:
            self.observer(state, reply)
        return state, reply

    def handle_datagram(self, raw: bytes) -> Optional[bytes]:
        """Transport-facing entry: decode, dispatch, encode the reply."""
        try:
            msg = decode(raw)
        except ProtocolError:
            self.rejected += 1
            return None
        if msg.msg_type == MSG_PING:
            return encode(pong_for(msg))
        if msg.msg_type == MSG_COMMAND:
            result = self.apply(msg)
            if result is None:
                return None
            return encode(result[1])
        return None


# ---------------------------------------------------------------------------
# Transports.
# ---------------------------------------------------------------------------

def _pong_responder(raw: bytes) -> Optional[bytes]:
    try:
        msg = decode(raw)
    except ProtocolError:
        return None
    if msg.msg_type == MSG_PING:
        return encode(pong_for(msg))
    return None


class SimulatedTransport:
    """In-process link to a responder with delay/jitter/loss injection.

    send() runs the responder synchronously and schedules its reply for
    delivery after the injected one-way delay; recv() blocks until the
    earliest scheduled reply is due or the timeout expires.  Loss is
    applied independently to each direction.
    """

    def __init__(
        self,
        responder: Optional[Callable[[bytes], Optional[bytes]]] = None,
        delay_ms: float = 0.0,
        jitter_ms: float = 0.0,
        loss: float = 0.0,
        seed: int = 0,
    ):
        if not 0.0 <= loss < 1.0:
            raise ProtocolError(f"loss fraction {loss} outside [0, 1)")
        self._responder = responder if responder is not None else _pong_responder
        self._delay_ms = delay_ms
        self._jitter_ms = jitter_ms
        self._loss = loss
        self._rng = random.Random(seed)
        self._inbox: list = []
        self._tie = 0

    def send(self, data: bytes) -> None:
        if self._loss and self._rng.random() < self._loss:
            return
        reply = self._responder(bytes(data))
        if reply is None:
            return
        if self._loss and self._rng.random() < self._loss:
            return
        delay_s = (self._delay_ms
                   + self._rng.uniform(0.0, self._jitter_ms)) / 1e3
        self._tie += 1
        heapq.heappush(
            self._inbox, (time.perf_counter() + delay_s, self._tie, reply)
        )

    def recv(self, timeout: float = 0.0) -> Optional[bytes]:
        deadline = time.perf_counter() + max(timeout, 0.0)
        while True:
            now = time.perf_counter()
            if self._inbox:
                due = self._inbox[0][0]
                if due <= now:
                    return heapq.heappop(self._inbox)[2]
                target = min(due, deadline)
            else:
                target = deadline
            if target <= now:
                return None
            time.sleep(min(target - now, 1e-3))

    def close(self) -> None:
        self._inbox.clear()


class UdpTransport:
    """Client-side datagram socket bound to one follower endpoint."""

    def __init__(self, host: str = "127.0.0.1", port: int = FOLLOWER_PORT):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.connect((host, port))

    def send(self, data: bytes) -> None:
        self._sock.send(data)

    def recv(self, timeout: float = 0.0) -> Optional[bytes]:
        self._sock.settimeout(max(timeout, 1e-4))
        try:
            return self._sock.recv(256)
        except (socket.timeout, ConnectionRefusedError):
            return None

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "UdpTransport":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class UdpFollowerServer:
    """Threaded UDP endpoint running one FollowerSession."""

    def __init__(
        self,
        session: Optional[FollowerSession] = None,
        host: str = "127.0.0.1",
        port: int = FOLLOWER_PORT,
    ):
        self.session = session if session is not None else FollowerSession()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.05)
        self.host, self.port = self._sock.getsockname()[:2]
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "UdpFollowerServer":
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()
        return self

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(256)
            except socket.timeout:
                continue
            except OSError:
                break
            reply = self.session.handle_datagram(data)
            if reply is not None:
                try:
                    self._sock.sendto(reply, addr)
                except OSError:
                    break

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None
        self._sock.close()

    def __enter__(self) -> "UdpFollowerServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# ---------------------------------------------------------------------------
# Round-trip latency measurement.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RttStats:
    sent: int
    received: int
    min_us: float
    median_us: float
    max_us: float
    loss_fraction: float
    degraded: bool


def measure_rtt(
    transport, n: int, timeout_s: float = 0.25
) -> RttStats:
    """Ping the follower n times and report the RTT distribution.

    Pongs are matched to pings by sequence number; pings with no pong
    inside the timeout count as losses.  A loss fraction above 10%
    marks the link degraded.
    """
    if n <= 0:
        raise EmptyInputError("rtt measurement needs at least one ping")
    send_at: Dict[int, float] = {}
    rtts: Dict[int, float] = {}
    for seq in range(n):
        send_at[seq] = time.perf_counter()
        transport.send(encode(ping(seq, timestamp_us=_now_us())))
        deadline = send_at[seq] + timeout_s
        while seq not in rtts:
            remaining = deadline - time.perf_counter()
            if remaining <= 0.0:
                break
            raw = transport.recv(remaining)
            if raw is None:
                continue
            try:
                msg = decode(raw)
            except ProtocolError:
                continue
            if (msg.msg_type == MSG_PONG and msg.seq in send_at
                    and msg.seq not in rtts):
                rtts[msg.seq] = time.perf_counter() - send_at[msg.seq]
    if not rtts:
        raise LinkError(f"no pongs received for {n} pings")
    us = sorted(r * 1e6 for r in rtts.values())
    loss = 1.0 - len(us) / n
    return RttStats(
        sent=n,
        received=len(us),
        min_us=us[0],
        median_us=float(statistics.median(us)),
        max_us=us[-1],
        loss_fraction=loss,
        degraded=loss > 0.10,
    )
