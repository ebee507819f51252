"""Live streaming service: one simulated session, many observers.

A single thread advances the closed loop against the wall clock (optionally
compressed by a time-scale factor) while network threads fan frames out and
feed commands in.  Commands are queued on arrival and applied between
control steps, so a gains change can never split a control period; every
command is answered with exactly one ack or error carrying its seq.

Transport: clients connect over plain TCP and speak newline-delimited JSON,
or browsers connect to the same port with an HTTP Upgrade and speak the
identical messages over WebSocket.  The first bytes of the connection pick
the dialect: an HTTP GET starts a WebSocket handshake, anything else (or
initial silence) is treated as a raw NDJSON peer.

Fan-out policy: control replies are never dropped; frames to a subscriber
that cannot keep up are dropped oldest-first from a bounded queue and the
cumulative count is reported in that subscriber's subsequent frames, so a
slow reader can see it fell behind while the loop itself never blocks.
"""
from __future__ import annotations

import base64
import hashlib
import json
import queue
import socket
import threading
import time
from collections import deque

import numpy as np

from .config import SessionConfig, parse_endpoint
from .loop import LoopStepper, RunLog, standard_controllers
from .plant import FaultSpec, PlantMatrix, synthesize_plant
from .presets import DIAG_PARAMS
from .protocol import (
    ProtocolError,
    WireMessage,
    ack_message,
    decode,
    encode,
    error_message,
    frame_message,
    snapshot_message,
)
from .tuner import PiGains

__all__ = ["Service", "serve"]

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

# Wait this long for a first byte before assuming a silent NDJSON subscriber.
_SNIFF_TIMEOUT = 0.25


def _ws_accept(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _ws_frame_text(payload: bytes) -> bytes:
    n = len(payload)
    if n < 126:
        head = bytes((0x81, n))
    elif n < 65536:
        head = bytes((0x81, 126)) + n.to_bytes(2, "big")
    else:
        head = bytes((0x81, 127)) + n.to_bytes(8, "big")
    return head + payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed")
        buf += chunk
    return buf


class _Client:
    """One connection: bounded frame queue, unbounded control queue, writer."""

    def __init__(self, sock: socket.socket, kind: str, frame_limit: int):
        self.sock = sock
        self.kind = kind  # "tcp" | "ws"
        self.frames: deque = deque(maxlen=frame_limit)
        self.control: deque = deque()
        self.dropped = 0
        self.cond = threading.Condition()
        self.closed = False

    def push_frame(self, payload: dict) -> None:
        with self.cond:
            if self.closed:
                return
            if len(self.frames) == self.frames.maxlen:
                self.dropped += 1
            self.frames.append(payload)
            self.cond.notify()

    def push_control(self, line: str) -> None:
        with self.cond:
            if self.closed:
                return
            self.control.append(("line", line))
            self.cond.notify()

    def push_raw(self, data: bytes) -> None:
        """Pre-framed bytes (pong replies); sent ahead of queued frames."""
        with self.cond:
            if self.closed:
                return
            self.control.append(("raw", data))
            self.cond.notify()

    def next_item(self):
        """Blocks for the next outgoing item; None once closed and drained."""
        with self.cond:
            while not self.control and not self.frames and not self.closed:
                self.cond.wait()
            if self.control:
                return self.control.popleft()
            if self.frames:
                payload = self.frames.popleft()
                obj = {"type": "frame", **payload, "drops": self.dropped}
                return "line", json.dumps(obj, separators=(",", ":"), allow_nan=False)
            return None

    def close(self) -> None:
        with self.cond:
            self.closed = True
            self.cond.notify_all()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class Service:
    """Run one session and serve it; see the module docstring for the model.

    start() binds and spawns the threads; wait() blocks until the scenario
    completes; stop() tears everything down.  runlog() returns the same
    record a headless run of the scenario would produce.
    """

    def __init__(
        self,
        session: SessionConfig,
        *,
        time_scale: float = 1.0,
        plant: PlantMatrix | None = None,
        controllers=None,
        frame_queue_limit: int = 256,
        sndbuf: int | None = None,
    ):
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.session = session
        self.time_scale = float(time_scale)
        scenario = session.scenario
        if plant is None:
            plant = synthesize_plant(DIAG_PARAMS, scenario.coupling)
        if controllers is None:
            controllers = standard_controllers(scenario)
        self.stepper = LoopStepper(plant, controllers, scenario)
        self.frame_queue_limit = int(frame_queue_limit)
        # cap per-connection kernel buffering so a stalled peer shifts
        # backpressure into the bounded frame queue instead of the kernel
        self.sndbuf = sndbuf

        self._frame_period = 1.0 / session.stream_rate  # sim seconds
        self._commands: queue.SimpleQueue = queue.SimpleQueue()
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._done = threading.Event()
        self._paused = False
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._last_sp = self.stepper.setpoint_vector(0.0)
        self._last_u = np.zeros(self._last_sp.size)
        self._next_frame_t = 0.0
        self._rebase = False

    # ------------------------------------------------------------ lifecycle

    def start(self) -> None:
        host, port = parse_endpoint(self.session.listen_endpoint)
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((host, port))
        listener.listen(32)
        self._listener = listener
        for fn in (self._accept_loop, self._sim_loop):
            th = threading.Thread(target=fn, daemon=True)
            th.start()
            self._threads.append(th)

    @property
    def endpoint(self) -> tuple[str, int]:
        """Actual bound address, resolving an ephemeral port request."""
        if self._listener is None:
            raise RuntimeError("service not started")
        host, port = self._listener.getsockname()[:2]
        return host, port

    def wait(self, timeout: float | None = None) -> bool:
        return self._done.wait(timeout)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.close()
        self._done.set()

    def runlog(self) -> RunLog:
        if not self._done.is_set():
            raise RuntimeError("session still running")
        return self.stepper.runlog()

    # ------------------------------------------------------------ sim side

    def _sim_loop(self) -> None:
        scale = self.time_scale
        wall0 = time.monotonic()
        try:
            while not self._stop.is_set():
                self._drain_commands()
                if self._rebase:
                    # reset rewound sim time, or pause idled the wall clock;
                    # realign so pacing does not try to catch up
                    wall0 = time.monotonic() - self.stepper.t / scale
                    self._rebase = False
                if self._paused:
                    self._broadcast_frame(self.stepper.t, self.stepper.true_now)
                    time.sleep(self._frame_period)
                    self._rebase = True
                    continue
                if self.stepper.finished:
                    break
                self._emit_due(self.stepper.t)

                def pace(sim_t, truth):
                    if self._stop.is_set():
                        return
                    lag = wall0 + sim_t / scale - time.monotonic()
                    if lag > 0:
                        time.sleep(lag)
                    self._emit_due(sim_t, truth)

                _, sp, u = self.stepper.step(on_substep=pace)
                self._last_sp, self._last_u = sp, u
        finally:
            self._done.set()

    def _emit_due(self, sim_t: float, truth=None) -> None:
        while self._next_frame_t <= sim_t + 1e-9:
            self._broadcast_frame(self._next_frame_t, truth)
            self._next_frame_t += self._frame_period

    def _broadcast_frame(self, t: float, truth=None) -> None:
        frame = self.stepper.camera_frame(
            t, truth, include_image=self.session.include_image
        )
        image = None
        if frame.image is not None:
            image = [float(v) for v in frame.image.ravel()]
        msg = frame_message(
            t,
            frame.points,
            frame.ffc_event,
            image=image,
            setpoints=self._last_sp,
            drives=self._last_u,
        )
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.push_frame(msg.payload)

    def _drain_commands(self) -> None:
        while True:
            try:
                client, msg = self._commands.get_nowait()
            except queue.Empty:
                return
            self._apply_command(client, msg)

    def _apply_command(self, client: _Client, msg: WireMessage) -> None:
        seq = msg.seq
        t = self.stepper.t
        try:
            if msg.type == "setpoint":
                self.stepper.set_setpoint(msg.payload["channel"], msg.payload["value"])
            elif msg.type == "gains":
                self.stepper.set_gains(
                    msg.payload["channel"],
                    PiGains(msg.payload["prop"], msg.payload["integ"]),
                )
            elif msg.type == "fault":
                self.stepper.inject_fault(
                    FaultSpec(
                        kind=msg.payload["kind"],
                        target=msg.payload["target"],
                        onset=t,
                        magnitude=msg.payload.get("magnitude", 0.0),
                        duration=msg.payload.get("duration"),
                    )
                )
            elif msg.type == "pause":
                self._paused = True
            elif msg.type == "resume":
                self._paused = False
            elif msg.type == "reset":
                self.stepper.reset()
                self._next_frame_t = 0.0
                self._last_sp = self.stepper.setpoint_vector(0.0)
                self._last_u = np.zeros(self._last_sp.size)
                self._rebase = True
            elif msg.type == "snapshot_request":
                pass  # handled below so the ack precedes the snapshot
            else:
                client.push_control(
                    encode(error_message(f"not a client command: {msg.type}", seq))
                )
                return
        except ValueError as exc:
            client.push_control(encode(error_message(str(exc), seq)))
            return
        client.push_control(encode(ack_message(seq, t)))
        if msg.type == "snapshot_request":
            client.push_control(encode(self._snapshot(seq, client)))

    def _snapshot(self, seq: int, client: _Client) -> WireMessage:
        st = self.stepper
        frame = st.camera_frame(st.t)
        gains = [(c.gains.prop_K, c.gains.integ_I) for c in st.ctl]
        return snapshot_message(
            seq,
            st.t,
            frame.points,
            st.setpoint_vector(st.t),
            gains,
            self._paused,
            drops=client.dropped,
            seed=st.scenario.seed,
        )

    # -------------------------------------------------------- network side

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            threading.Thread(
                target=self._client_session, args=(sock,), daemon=True
            ).start()

    def _client_session(self, sock: socket.socket) -> None:
        try:
            if self.sndbuf is not None:
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, self.sndbuf)
            sock.settimeout(_SNIFF_TIMEOUT)
            try:
                first = sock.recv(4, socket.MSG_PEEK)
            except (socket.timeout, TimeoutError):
                first = b""
            sock.settimeout(None)
            # NDJSON peers open with "{" or stay silent; an HTTP request is
            # the only thing that starts with G here
            if first.startswith(b"G"):
                client = self._ws_handshake(sock)
                if client is None:
                    sock.close()
                    return
            else:
                client = _Client(sock, "tcp", self.frame_queue_limit)
        except OSError:
            sock.close()
            return

        with self._clients_lock:
            self._clients.append(client)
        writer = threading.Thread(target=self._writer_loop, args=(client,), daemon=True)
        writer.start()
        try:
            if client.kind == "ws":
                self._ws_reader(client)
            else:
                self._tcp_reader(client)
        except (OSError, ConnectionError):
            pass
        finally:
            with self._clients_lock:
                if client in self._clients:
                    self._clients.remove(client)
            client.close()

    def _ws_handshake(self, sock: socket.socket) -> _Client | None:
        sock.settimeout(5.0)
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                return None
            data += chunk
            if len(data) > 65536:
                return None
        head, _, _rest = data.partition(b"\r\n\r\n")
        lines = head.decode("latin-1").split("\r\n")
        headers = {}
        for line in lines[1:]:
            name, _, value = line.partition(":")
            headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if key is None or "websocket" not in headers.get("upgrade", "").lower():
            sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return None
        resp = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {_ws_accept(key)}\r\n\r\n"
        )
        sock.sendall(resp.encode("latin-1"))
        sock.settimeout(None)
        return _Client(sock, "ws", self.frame_queue_limit)

    def _tcp_reader(self, client: _Client) -> None:
        buf = b""
        while not client.closed:
            chunk = client.sock.recv(4096)
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                line, _, buf = buf.partition(b"\n")
                if line.strip():
                    self._ingest(client, line)

    def _ws_reader(self, client: _Client) -> None:
        sock = client.sock
        message = b""
        while not client.closed:
            head = _recv_exact(sock, 2)
            fin = head[0] & 0x80
            opcode = head[0] & 0x0F
            masked = head[1] & 0x80
            length = head[1] & 0x7F
            if length == 126:
                length = int.from_bytes(_recv_exact(sock, 2), "big")
            elif length == 127:
                length = int.from_bytes(_recv_exact(sock, 8), "big")
            mask = _recv_exact(sock, 4) if masked else b""
            payload = _recv_exact(sock, length) if length else b""
            if masked:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == 0x8:  # close
                try:
                    sock.sendall(b"\x88\x00")
                except OSError:
                    pass
                return
            if opcode == 0x9:  # ping -> pong, serialized through the writer
                client.push_raw(bytes((0x8A, len(payload))) + payload)
                continue
            if opcode in (0x1, 0x0):
                message += payload
                if fin:
                    if message.strip():
                        self._ingest(client, message)
                    message = b""

    def _ingest(self, client: _Client, raw: bytes) -> None:
        try:
            msg = decode(raw)
        except ProtocolError as exc:
            seq = None
            try:
                maybe = json.loads(raw)
                if isinstance(maybe, dict) and isinstance(maybe.get("seq"), int):
                    seq = maybe["seq"]
            except (json.JSONDecodeError, UnicodeDecodeError):
                pass
            client.push_control(encode(error_message(str(exc), seq)))
            return
        if msg.seq is None:
            client.push_control(
                encode(error_message("commands must carry a seq", None))
            )
            return
        self._commands.put((client, msg))

    def _writer_loop(self, client: _Client) -> None:
        while True:
            item = client.next_item()
            if item is None:
                return
            kind, data = item
            try:
                if kind == "raw":
                    client.sock.sendall(data)
                elif client.kind == "ws":
                    client.sock.sendall(_ws_frame_text(data.encode()))
                else:
                    client.sock.sendall(data.encode() + b"\n")
            except OSError:
                client.close()
                return


def serve(session: SessionConfig, *, time_scale: float = 1.0, **kwargs) -> Service:
    """Construct and start a Service; returns it running."""
    svc = Service(session, time_scale=time_scale, **kwargs)
    svc.start()
    return svc
