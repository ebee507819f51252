"""Wire format for the streaming service: one JSON object per message.

Messages travel as newline-delimited JSON over TCP and as one-text-frame-
per-message over WebSocket; both carry the same objects.  Every message has
a "type" field; the remaining fields are the payload.

Server -> client:
    frame     {"type":"frame","t":s,"points":[16 degC],"ffc":bool}
              plus optional "image" (flat row-major 80x60 list),
              "setpoints" [16], "drives" [16 counts] and "drops"
              (cumulative frames dropped for this subscriber).
              Non-finite samples are carried as null.
    ack       {"type":"ack","seq":n,"applied_t":s}
    error     {"type":"error","message":str} with "seq" when the failing
              command carried one.
    snapshot  full session state, sent in reply to snapshot_request and
              echoing its seq.

Client -> server (every command carries an integer "seq"; the server
answers each with exactly one ack or error bearing that seq):
    setpoint  {"type":"setpoint","seq":n,"channel":0-15|"all","value":degC}
    gains     {"type":"gains","seq":n,"channel":0-15,"prop":K,"integ":I}
              gains are in drive counts per degC (per degC-second).
    fault     {"type":"fault","seq":n,"kind":...,"target":0-15|"all",
               "magnitude":x,"duration":s|null}  onset is the next control
              boundary after application.
    pause / resume / reset / snapshot_request   {"type":...,"seq":n}

decode() validates shape and field types strictly so a malformed line can
be answered with a descriptive error without touching the session.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .plant import FAULT_KINDS, IMAGE_H, IMAGE_W, N_CHANNELS

__all__ = [
    "WIRE_TYPES",
    "COMMAND_TYPES",
    "WireMessage",
    "ProtocolError",
    "encode",
    "decode",
    "frame_message",
    "ack_message",
    "error_message",
    "snapshot_message",
    "setpoint_command",
    "gains_command",
    "fault_command",
    "pause_command",
    "resume_command",
    "reset_command",
    "snapshot_request",
    "points_array",
]

WIRE_TYPES = (
    "frame",
    "ack",
    "error",
    "setpoint",
    "gains",
    "fault",
    "pause",
    "resume",
    "reset",
    "snapshot_request",
    "snapshot",
)

# Types a client may send; everything else is server-originated.
COMMAND_TYPES = (
    "setpoint",
    "gains",
    "fault",
    "pause",
    "resume",
    "reset",
    "snapshot_request",
)

_IMAGE_LEN = IMAGE_W * IMAGE_H


class ProtocolError(ValueError):
    """Raised by decode() for anything that is not a valid wire message."""


@dataclass(frozen=True)
class WireMessage:
    type: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.type not in WIRE_TYPES:
            raise ProtocolError(f"unknown message type {self.type!r}")

    @property
    def seq(self):
        return self.payload.get("seq")


def encode(msg: WireMessage) -> str:
    """One line of JSON, no trailing newline.  Rejects NaN/inf outright;
    builders encode bad samples as null before this point."""
    obj = {"type": msg.type, **msg.payload}
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _numeric(value, what) -> float:
    # bool is an int subclass; True is not a temperature
    if isinstance(value, bool):
        raise ProtocolError(f"{what} must be a number")
    if isinstance(value, (int, float, np.floating, np.integer)):
        return float(value)
    raise ProtocolError(f"{what} must be a number")


def _clean_samples(values, n, what):
    try:
        vals = list(values)
    except TypeError:
        raise ProtocolError(f"{what} must be a list") from None
    if len(vals) != n:
        raise ProtocolError(f"{what} must have {n} entries, got {len(vals)}")
    out = []
    for v in vals:
        if v is None:
            out.append(None)
            continue
        f = _numeric(v, what)
        out.append(f if math.isfinite(f) else None)
    return out


def _finite(value, what) -> float:
    f = _numeric(value, what)
    if not math.isfinite(f):
        raise ProtocolError(f"{what} must be finite")
    return f


def _seq_int(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ProtocolError("seq must be an integer")
    if value < 0:
        raise ProtocolError("seq must be >= 0")
    return value


def _channel(value, allow_all: bool):
    if value == "all":
        if not allow_all:
            raise ProtocolError('channel "all" is not valid here')
        return "all"
    if isinstance(value, bool) or not isinstance(value, int):
        raise ProtocolError("channel must be an integer" + (' or "all"' if allow_all else ""))
    if not (0 <= value < N_CHANNELS):
        raise ProtocolError(f"channel must lie in [0, {N_CHANNELS})")
    return value


# ---------------------------------------------------------------- builders

def frame_message(
    t: float,
    points,
    ffc: bool,
    *,
    image=None,
    setpoints=None,
    drives=None,
    drops: int | None = None,
) -> WireMessage:
    payload = {
        "t": _finite(t, "t"),
        "points": _clean_samples(points, N_CHANNELS, "points"),
        "ffc": bool(ffc),
    }
    if image is not None:
        flat = [v for row in image for v in row] if _nested(image) else list(image)
        payload["image"] = _clean_samples(flat, _IMAGE_LEN, "image")
    if setpoints is not None:
        payload["setpoints"] = _clean_samples(setpoints, N_CHANNELS, "setpoints")
    if drives is not None:
        payload["drives"] = _clean_samples(drives, N_CHANNELS, "drives")
    if drops is not None:
        payload["drops"] = int(drops)
    return WireMessage("frame", payload)


def _nested(image) -> bool:
    try:
        first = image[0]
    except (TypeError, IndexError):
        return False
    return hasattr(first, "__len__")


def ack_message(seq: int, applied_t: float) -> WireMessage:
    return WireMessage("ack", {"seq": _seq_int(seq), "applied_t": _finite(applied_t, "applied_t")})


def error_message(message: str, seq: int | None = None) -> WireMessage:
    payload = {"message": str(message)}
    if seq is not None:
        payload["seq"] = _seq_int(seq)
    return WireMessage("error", payload)


def snapshot_message(
    seq: int,
    t: float,
    points,
    setpoints,
    gains,
    paused: bool,
    *,
    drops: int = 0,
    seed: int | None = None,
) -> WireMessage:
    rows = [[_finite(p, "gain"), _finite(i, "gain")] for p, i in gains]
    if len(rows) != N_CHANNELS:
        raise ProtocolError(f"gains must have {N_CHANNELS} rows")
    payload = {
        "seq": _seq_int(seq),
        "t": _finite(t, "t"),
        "points": _clean_samples(points, N_CHANNELS, "points"),
        "setpoints": _clean_samples(setpoints, N_CHANNELS, "setpoints"),
        "gains": rows,
        "paused": bool(paused),
        "drops": int(drops),
    }
    if seed is not None:
        payload["seed"] = int(seed)
    return WireMessage("snapshot", payload)


def setpoint_command(seq: int, channel, value: float) -> WireMessage:
    return WireMessage(
        "setpoint",
        {
            "seq": _seq_int(seq),
            "channel": _channel(channel, allow_all=True),
            "value": _finite(value, "value"),
        },
    )


def gains_command(seq: int, channel: int, prop: float, integ: float) -> WireMessage:
    p = _finite(prop, "prop")
    i = _finite(integ, "integ")
    if p <= 0 or i <= 0:
        raise ProtocolError("gains must be positive")
    return WireMessage(
        "gains",
        {"seq": _seq_int(seq), "channel": _channel(channel, allow_all=False),
         "prop": p, "integ": i},
    )


def fault_command(
    seq: int,
    kind: str,
    target,
    *,
    magnitude: float = 0.0,
    duration: float | None = None,
) -> WireMessage:
    if kind not in FAULT_KINDS:
        raise ProtocolError(f"unknown fault kind {kind!r}")
    if target == "all" and kind != "sensor_offset":
        raise ProtocolError('target "all" is only valid for sensor_offset')
    payload = {
        "seq": _seq_int(seq),
        "kind": kind,
        "target": _channel(target, allow_all=True),
        "magnitude": _finite(magnitude, "magnitude"),
        "duration": None if duration is None else _finite(duration, "duration"),
    }
    if payload["duration"] is not None and payload["duration"] <= 0:
        raise ProtocolError("duration must be positive or null")
    return WireMessage("fault", payload)


def pause_command(seq: int) -> WireMessage:
    return WireMessage("pause", {"seq": _seq_int(seq)})


def resume_command(seq: int) -> WireMessage:
    return WireMessage("resume", {"seq": _seq_int(seq)})


def reset_command(seq: int) -> WireMessage:
    return WireMessage("reset", {"seq": _seq_int(seq)})


def snapshot_request(seq: int) -> WireMessage:
    return WireMessage("snapshot_request", {"seq": _seq_int(seq)})


def points_array(samples):
    """Payload sample list -> floats with null mapped to nan."""
    return [math.nan if v is None else float(v) for v in samples]


# ---------------------------------------------------------------- decoding

def _need(obj: dict, key: str):
    if key not in obj:
        raise ProtocolError(f"missing field {key!r}")
    return obj[key]


def _only(obj: dict, allowed) -> None:
    extra = set(obj) - set(allowed) - {"type"}
    if extra:
        raise ProtocolError(f"unexpected field {sorted(extra)[0]!r}")


def decode(line: str | bytes) -> WireMessage:
    """Parse and validate one wire message.

    Raises ProtocolError with a client-presentable reason for anything off:
    bad JSON, unknown type, missing or mistyped fields, out-of-range values.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("message is not valid UTF-8") from None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    mtype = obj.get("type")
    if mtype not in WIRE_TYPES:
        raise ProtocolError(f"unknown message type {mtype!r}")

    if mtype == "frame":
        _only(obj, ("t", "points", "ffc", "image", "setpoints", "drives", "drops"))
        ffc = _need(obj, "ffc")
        if not isinstance(ffc, bool):
            raise ProtocolError("ffc must be a boolean")
        return frame_message(
            _need(obj, "t"),
            _need(obj, "points"),
            ffc,
            image=obj.get("image"),
            setpoints=obj.get("setpoints"),
            drives=obj.get("drives"),
            drops=obj.get("drops"),
        )
    if mtype == "ack":
        _only(obj, ("seq", "applied_t"))
        return ack_message(_need(obj, "seq"), _need(obj, "applied_t"))
    if mtype == "error":
        _only(obj, ("message", "seq"))
        msg = _need(obj, "message")
        if not isinstance(msg, str):
            raise ProtocolError("message must be a string")
        return error_message(msg, obj.get("seq"))
    if mtype == "snapshot":
        _only(obj, ("seq", "t", "points", "setpoints", "gains", "paused", "drops", "seed"))
        gains = _need(obj, "gains")
        if not isinstance(gains, list) or any(
            not isinstance(g, list) or len(g) != 2 for g in gains
        ):
            raise ProtocolError("gains must be a list of [prop, integ] pairs")
        paused = _need(obj, "paused")
        if not isinstance(paused, bool):
            raise ProtocolError("paused must be a boolean")
        return snapshot_message(
            _need(obj, "seq"),
            _need(obj, "t"),
            _need(obj, "points"),
            _need(obj, "setpoints"),
            gains,
            paused,
            drops=obj.get("drops", 0),
            seed=obj.get("seed"),
        )
    if mtype == "setpoint":
        _only(obj, ("seq", "channel", "value"))
        return setpoint_command(_need(obj, "seq"), _need(obj, "channel"), _need(obj, "value"))
    if mtype == "gains":
        _only(obj, ("seq", "channel", "prop", "integ"))
        return gains_command(
            _need(obj, "seq"), _need(obj, "channel"),
            _need(obj, "prop"), _need(obj, "integ"),
        )
    if mtype == "fault":
        _only(obj, ("seq", "kind", "target", "magnitude", "duration"))
        return fault_command(
            _need(obj, "seq"),
            _need(obj, "kind"),
            _need(obj, "target"),
            magnitude=obj.get("magnitude", 0.0),
            duration=obj.get("duration"),
        )
    # pause / resume / reset / snapshot_request carry only a seq
    _only(obj, ("seq",))
    seq = _seq_int(_need(obj, "seq"))
    return WireMessage(mtype, {"seq": seq})
