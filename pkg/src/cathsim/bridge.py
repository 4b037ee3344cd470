"""Observer bridge: live follower state out, console commands in.

The bridge speaks line-delimited JSON over a local TCP socket, with a
minimal WebSocket upgrade for browser clients (sniffed from a leading
HTTP GET).  It mirrors every applied follower command as a BridgeEvent
with a gap-free monotone id, computes the tip pose on its own shadow
model (the follower loop never pays for display solves), and translates
client steering commands into master-side setpoints injected through a
caller-supplied sink.  Observers never write simulation state directly.
"""

import base64
import hashlib
import json
import queue
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

from .catheter import ActuationState, CatheterModel
from .errors import LinkError
from .link import ClutchState, master_apply, set_pedal
from .protocol import (
    FLAG_CLAMPED,
    FLAG_GRIPPER_A,
    FLAG_GRIPPER_B,
    FLAG_PEDAL,
    WireMessage,
    command,
    encode,
)

BRIDGE_PORT = 47002
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_MAX_FRAME = 1 << 20
_CLIENT_BACKLOG = 1024


def _now_us() -> int:
    return time.time_ns() // 1000


@dataclass(frozen=True)
class BridgeEvent:
    """One mirrored follower state change, as sent to console clients."""

    id: int
    seq: int
    timestamp_us: int
    translation_mm: float
    rotation_deg: float
    knob_deg: float
    bend_deg: float
    tip_cm: Tuple[float, float, float]
    flags: int

    @property
    def pedal(self) -> bool:
        return bool(self.flags & FLAG_PEDAL)

    @property
    def grip_cart(self) -> bool:
        return bool(self.flags & FLAG_GRIPPER_A)

    @property
    def grip_static(self) -> bool:
        return bool(self.flags & FLAG_GRIPPER_B)

    @property
    def clamped(self) -> bool:
        return bool(self.flags & FLAG_CLAMPED)

    def to_json(self) -> str:
        return json.dumps({
            "event": "state",
            "id": self.id,
            "seq": self.seq,
            "timestamp_us": self.timestamp_us,
            "t_mm": round(self.translation_mm, 6),
            "r_deg": round(self.rotation_deg, 6),
            "b_deg": round(self.knob_deg, 6),
            "bend_deg": round(self.bend_deg, 6),
            "tip_cm": [round(c, 6) for c in self.tip_cm],
            "flags": self.flags,
            "pedal": self.pedal,
            "grip_cart": self.grip_cart,
            "grip_static": self.grip_static,
            "clamped": self.clamped,
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "BridgeEvent":
        obj = json.loads(line)
        if obj.get("event") != "state":
            raise LinkError(f"not a state event: {line!r}")
        return cls(
            id=obj["id"],
            seq=obj["seq"],
            timestamp_us=obj["timestamp_us"],
            translation_mm=obj["t_mm"],
            rotation_deg=obj["r_deg"],
            knob_deg=obj["b_deg"],
            bend_deg=obj["bend_deg"],
            tip_cm=tuple(obj["tip_cm"]),
            flags=obj["flags"],
        )


# ---------------------------------------------------------------------------
# Minimal RFC 6455 framing (unfragmented text frames only).
# ---------------------------------------------------------------------------

def ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_text_frame(payload: bytes) -> bytes:
    n = len(payload)
    if n < 126:
        header = bytes((0x81, n))
    elif n < 1 << 16:
        header = bytes((0x81, 126)) + n.to_bytes(2, "big")
    else:
        header = bytes((0x81, 127)) + n.to_bytes(8, "big")
    return header + payload


class _SockReader:
    """Buffered exact-count reads over a stream socket."""

    def __init__(self, sock: socket.socket, initial: bytes = b""):
        self._sock = sock
        self._buf = bytearray(initial)

    def read(self, n: int) -> bytes:
        while len(self._buf) < n:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionError("peer closed")
            self._buf.extend(chunk)
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def read_until(self, marker: bytes, limit: int = 1 << 14) -> bytes:
        while marker not in self._buf:
            if len(self._buf) > limit:
                raise ConnectionError("header too long")
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionError("peer closed")
            self._buf.extend(chunk)
        idx = self._buf.index(marker) + len(marker)
        out = bytes(self._buf[:idx])
        del self._buf[:idx]
        return out


def _ws_read_frame(reader: _SockReader) -> Tuple[int, bytes]:
    """Return (opcode, unmasked payload) for one client frame."""
    b0, b1 = reader.read(2)
    opcode = b0 & 0x0F
    if not b0 & 0x80:
        raise ConnectionError("fragmented frames unsupported")
    length = b1 & 0x7F
    if length == 126:
        length = int.from_bytes(reader.read(2), "big")
    elif length == 127:
        length = int.from_bytes(reader.read(8), "big")
    if length > _MAX_FRAME:
        raise ConnectionError("frame too large")
    if not b1 & 0x80:
        raise ConnectionError("client frames must be masked")
    mask = reader.read(4)
    payload = bytearray(reader.read(length))
    for i in range(length):
        payload[i] ^= mask[i % 4]
    return opcode, bytes(payload)


# ---------------------------------------------------------------------------
# The bridge server.
# ---------------------------------------------------------------------------

class _Client:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.websocket = False
        self.outbox: deque = deque(maxlen=_CLIENT_BACKLOG)
        self.cond = threading.Condition()
        self.alive = True

    def enqueue(self, line: str) -> None:
        with self.cond:
            self.outbox.append(line)
            self.cond.notify()

    def close(self) -> None:
        with self.cond:
            self.alive = False
            self.cond.notify()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class BridgeServer:
    """TCP/WebSocket fan-out of BridgeEvents plus command ingestion.

    Plug .observer into a FollowerSession to mirror its applied
    commands.  Events are queued by the session thread and emitted by
    the publisher thread, which coalesces any backlog to the latest
    state so slow tip-pose solves never stall the follower loop; ids
    are assigned at emission and are therefore gap-free.  Client
    steering commands are folded through a master-side clutch and
    pushed into the follower via command_sink.
    """

    def __init__(
        self,
        pose_model: CatheterModel,
        command_sink: Callable[[bytes], Optional[bytes]],
        host: str = "127.0.0.1",
        port: int = BRIDGE_PORT,
        event_log: Optional[Callable[[str], None]] = None,
        seq_hint: Optional[Callable[[], Optional[int]]] = None,
    ):
        self._pose_model = pose_model
        self._sink = command_sink
        self._event_log = event_log
        # Read-only peek at the follower's highest applied sequence
        # number, so console commands stay fresh after a scripted
        # master with its own counter has driven the same follower.
        self._seq_hint = seq_hint
        try:
            self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._listener.setsockopt(
                socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._listener.bind((host, port))
            self._listener.listen(8)
        except OSError as err:
            raise LinkError(f"bridge cannot listen on {host}:{port}: {err}")
        self._listener.settimeout(0.1)
        self.host, self.port = self._listener.getsockname()[:2]

        self.clutch = ClutchState()
        self._master_seq = 0
        self._master_lock = threading.Lock()
        self.malformed = 0

        self._queue: "queue.Queue" = queue.Queue()
        self._next_id = 0
        self._clients: Dict[int, _Client] = {}
        self._clients_lock = threading.Lock()
        self._client_counter = 0
        self._stop = threading.Event()
        self._threads: list = []

    # -- follower-side mirroring ------------------------------------------

    def observer(self, state: ActuationState, reply: WireMessage) -> None:
        """FollowerSession hook: cheap enqueue in the session thread."""
        self._queue.put((state, reply))

    @property
    def last_id(self) -> int:
        return self._next_id

    def _publish_loop(self) -> None:
        while not self._stop.is_set():
            try:
                state, reply = self._queue.get(timeout=0.05)
            except queue.Empty:
                continue
            # Latest state wins when the display path lags the link.
            while True:
                try:
                    state, reply = self._queue.get_nowait()
                except queue.Empty:
                    break
            self._pose_model.state = state
            pose = self._pose_model.tip_pose()
            self._next_id += 1
            event = BridgeEvent(
                id=self._next_id,
                seq=reply.seq,
                timestamp_us=reply.timestamp_us,
                translation_mm=reply.translation_mm,
                rotation_deg=reply.rotation_deg,
                knob_deg=reply.knob_deg,
                bend_deg=pose.bend_angle_deg,
                tip_cm=(float(pose.position_cm[0]),
                        float(pose.position_cm[1]),
                        float(pose.position_cm[2])),
                flags=reply.flags,
            )
            line = event.to_json()
            if self._event_log is not None:
                self._event_log(line)
            with self._clients_lock:
                clients = list(self._clients.values())
            for client in clients:
                client.enqueue(line)

    # -- console-side command ingestion ------------------------------------

    def _dispatch(self, client: _Client, line: str) -> None:
        try:
            obj = json.loads(line)
            cmd = obj["cmd"]
        except (json.JSONDecodeError, TypeError, KeyError):
            self.malformed += 1
            client.enqueue(json.dumps(
                {"event": "error", "detail": "malformed command"},
                separators=(",", ":")))
            return
        if cmd == "ping":
            client.enqueue(json.dumps(
                {"event": "pong", "t": obj.get("t")},
                separators=(",", ":")))
            return
        if cmd == "pedal":
            with self._master_lock:
                set_pedal(self.clutch, bool(obj.get("engaged", True)))
            return
        if cmd == "delta":
            delta = (float(obj.get("t_mm", 0.0)),
                     float(obj.get("r_deg", 0.0)),
                     float(obj.get("b_deg", 0.0)))
            with self._master_lock:
                t_mm, r_deg, b_deg = master_apply(delta, self.clutch)
                flags = FLAG_PEDAL if self.clutch.engaged else 0
                if self._seq_hint is not None:
                    hint = self._seq_hint()
                    if hint is not None:
                        self._master_seq = max(self._master_seq, hint)
                self._master_seq += 1
                wire = command(self._master_seq, t_mm, r_deg, b_deg,
                               flags=flags, timestamp_us=_now_us())
                self._sink(encode(wire))
            return
        self.malformed += 1
        client.enqueue(json.dumps(
            {"event": "error", "detail": f"unknown command {cmd!r}"},
            separators=(",", ":")))

    # -- per-client plumbing ------------------------------------------------

    def _writer_loop(self, client: _Client) -> None:
        while True:
            with client.cond:
                while client.alive and not client.outbox:
                    client.cond.wait(timeout=0.1)
                    if self._stop.is_set():
                        client.alive = False
                if not client.alive and not client.outbox:
                    return
                line = client.outbox.popleft()
            payload = line.encode()
            try:
                if client.websocket:
                    client.sock.sendall(ws_text_frame(payload))
                else:
                    client.sock.sendall(payload + b"\n")
            except OSError:
                client.alive = False
                return

    def _reader_loop(self, client_id: int, client: _Client) -> None:
        sock = client.sock
        try:
            # Sniff the transport: WebSocket clients open with an HTTP
            # GET immediately; a silent connection is a raw subscriber.
            sock.settimeout(0.25)
            try:
                first = sock.recv(4096)
                if not first:
                    return
            except socket.timeout:
                first = b""
            sock.settimeout(None)
            reader = _SockReader(sock, first)
            if first.startswith(b"GET "):
                if not self._ws_handshake(client, reader):
                    return
            # Hello first, then join the broadcast set, so the greeting
            # always precedes any state event on the wire.
            self._hello(client)
            with self._clients_lock:
                self._clients[client_id] = client
            if client.websocket:
                self._ws_session(client, reader)
            else:
                self._raw_session(client, reader)
        except (OSError, ConnectionError):
            pass
        finally:
            client.close()
            with self._clients_lock:
                self._clients.pop(client_id, None)

    def _raw_session(self, client: _Client, reader: _SockReader) -> None:
        while not self._stop.is_set():
            line = reader.read_until(b"\n", limit=_MAX_FRAME)
            text = line.decode(errors="replace").strip()
            if text:
                self._dispatch(client, text)

    def _ws_handshake(self, client: _Client, reader: _SockReader) -> bool:
        request = reader.read_until(b"\r\n\r\n")
        key = None
        for header in request.split(b"\r\n")[1:]:
            name, _, value = header.partition(b":")
            if name.strip().lower() == b"sec-websocket-key":
                key = value.strip().decode()
        if key is None:
            client.sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return False
        client.sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + ws_accept_key(key).encode()
            + b"\r\n\r\n"
        )
        client.websocket = True
        return True

    def _ws_session(self, client: _Client, reader: _SockReader) -> None:
        while not self._stop.is_set():
            opcode, payload = _ws_read_frame(reader)
            if opcode == 0x8:  # close
                try:
                    client.sock.sendall(b"\x88\x00")
                except OSError:
                    pass
                return
            if opcode == 0x9:  # ping
                frame = bytes((0x8A, len(payload))) + payload
                client.sock.sendall(frame)
                continue
            if opcode != 0x1:
                continue
            for text in payload.decode(errors="replace").split("\n"):
                if text.strip():
                    self._dispatch(client, text.strip())

    def _hello(self, client: _Client) -> None:
        client.enqueue(json.dumps(
            {"event": "hello", "last_id": self._next_id},
            separators=(",", ":")))

    # -- lifecycle -----------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            client = _Client(sock)
            with self._clients_lock:
                self._client_counter += 1
                cid = self._client_counter
            for target, args in ((self._reader_loop, (cid, client)),
                                 (self._writer_loop, (client,))):
                t = threading.Thread(target=target, args=args, daemon=True)
                t.start()

    def start(self) -> "BridgeServer":
        for target in (self._accept_loop, self._publish_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        self._stop.set()
        self._listener.close()
        with self._clients_lock:
            clients = list(self._clients.values())
            self._clients.clear()
        for client in clients:
            client.close()
        for t in self._threads:
            t.join(timeout=2.0)
        self._threads.clear()

    def __enter__(self) -> "BridgeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


class BridgeClient:
    """Blocking line-JSON client for tests and scripted consoles."""

    def __init__(self, host: str, port: int, timeout_s: float = 2.0):
        self._sock = socket.create_connection((host, port), timeout=timeout_s)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = _SockReader(self._sock)

    def send(self, obj: dict) -> None:
        self._sock.sendall(json.dumps(obj).encode() + b"\n")

    def recv(self) -> dict:
        line = self._reader.read_until(b"\n", limit=_MAX_FRAME)
        return json.loads(line.decode())

    def recv_event(self, kind: str = "state") -> dict:
        while True:
            obj = self.recv()
            if obj.get("event") == kind:
                return obj

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
