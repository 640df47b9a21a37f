"""Binary forecast messages (wire format v1).

Frame:    [version u8][flags u8, bit0 = compressed][payload_len u16][payload]
Payload:  [sender u16][gps_time_us u64][anchor_x f64][anchor_y f64][n_agents u16]
Agent:    [class u8][n_waypoints u8][cur_dx_cm i32][cur_dy_cm i32]
Waypoint: [dt_ms u16][dx_cm i16][dy_cm i16][var_x u16][var_y u16]

Everything is little-endian. Current positions are centimeter offsets from
the anchor, waypoint positions are centimeter offsets from the quantized
current position, and variances are in units of 1e-3 m^2 (saturating).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import zstandard

from ..core import AgentClass, PredictedTrajectory, State2D, Timestamp

VERSION = 1
FLAG_COMPRESSED = 0x01
MAX_FRAME_BYTES = 1500
ZSTD_LEVEL = 3

POS_QUANTUM = 0.01  # m
VAR_QUANTUM = 1e-3  # m^2
VAR_CODE_MAX = 0xFFFF

_FRAME = struct.Struct("<BBH")
_HEADER = struct.Struct("<HQddH")
_AGENT = struct.Struct("<BBii")
_WAYPOINT = struct.Struct("<HhhHH")
_WAYPOINT_DTYPE = np.dtype([("dt", "<u2"), ("dx", "<i2"), ("dy", "<i2"), ("vx", "<u2"), ("vy", "<u2")])

FRAME_HEADER_BYTES = _FRAME.size
PAYLOAD_HEADER_BYTES = _HEADER.size
AGENT_BYTES = _AGENT.size
WAYPOINT_BYTES = _WAYPOINT.size

_MAX_DECOMPRESSED = 1 << 20


class CodecError(ValueError):
    pass


class ParseError(CodecError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class VersionError(CodecError):
    def __init__(self, version: int) -> None:
        super().__init__(f"unsupported wire version {version}")
        self.version = version


class BudgetError(CodecError):
    def __init__(self, size: int, budget: int) -> None:
        super().__init__(f"frame of {size} bytes exceeds the {budget}-byte budget")
        self.size = size


class OffsetRangeError(CodecError):
    def __init__(self, message: str, agent_index: int) -> None:
        super().__init__(message)
        self.agent_index = agent_index


@dataclass(frozen=True)
class AgentForecast:
    cls: AgentClass
    current: State2D
    pred: PredictedTrajectory


@dataclass(frozen=True)
class ForecastMessage:
    sender_id: int
    gps_time: Timestamp
    anchor: tuple[float, float]
    agents: tuple[AgentForecast, ...]


_COMPRESSOR = zstandard.ZstdCompressor(level=ZSTD_LEVEL)
_DECOMPRESSOR = zstandard.ZstdDecompressor()


def _cm(v: float) -> int:
    return int(np.rint(v / POS_QUANTUM))


def _var_codes(v: np.ndarray) -> np.ndarray:
    return np.minimum(np.rint(v / VAR_QUANTUM), VAR_CODE_MAX).astype("<u2")


def _var_values(codes: np.ndarray) -> np.ndarray:
    # Code 0 stands for (0, quantum/2]; decode to its upper end so variances
    # stay positive and the round-trip error stays within half a quantum.
    v = codes.astype(float) * VAR_QUANTUM
    v[codes == 0] = 0.5 * VAR_QUANTUM
    return v


def encode_payload(
    sender_id: int,
    gps_time: Timestamp,
    agents: Sequence[AgentForecast],
    anchor: tuple[float, float] = (0.0, 0.0),
) -> bytes:
    """Serialize the uncompressed payload."""
    if not 0 <= sender_id <= 0xFFFF:
        raise CodecError(f"sender_id {sender_id} does not fit in 16 bits")
    if gps_time < 0:
        raise CodecError("gps_time must be non-negative")
    if len(agents) > 0xFFFF:
        raise CodecError("too many agents for one message")
    parts = [_HEADER.pack(sender_id, gps_time, float(anchor[0]), float(anchor[1]), len(agents))]
    for i, a in enumerate(agents):
        n = len(a.pred)
        if n > 255:
            raise OffsetRangeError(f"agent {i}: {n} waypoints exceed 255", i)
        cx, cy = _cm(a.current.x - anchor[0]), _cm(a.current.y - anchor[1])
        if not (-(2**31) <= cx < 2**31 and -(2**31) <= cy < 2**31):
            raise OffsetRangeError(f"agent {i}: current position out of int32 range", i)
        parts.append(_AGENT.pack(a.cls.code, n, cx, cy))
        if n == 0:
            continue
        dt_us = np.asarray(a.pred.t_us, dtype=np.int64) - gps_time
        if (dt_us % 1000).any() or dt_us.min() < 0 or dt_us.max() > 0xFFFF * 1000:
            raise OffsetRangeError(f"agent {i}: waypoint times must be whole ms in [0, 65535] ms after gps_time", i)
        qx = anchor[0] + cx * POS_QUANTUM
        qy = anchor[1] + cy * POS_QUANTUM
        d = np.rint((a.pred.mean - (qx, qy)) / POS_QUANTUM)
        if np.abs(d).max() > 32767:
            raise OffsetRangeError(f"agent {i}: waypoint offset beyond +/-327.67 m of current state", i)
        wp = np.empty(n, dtype=_WAYPOINT_DTYPE)
        wp["dt"] = dt_us // 1000
        wp["dx"] = d[:, 0]
        wp["dy"] = d[:, 1]
        codes = _var_codes(a.pred.var)
        wp["vx"] = codes[:, 0]
        wp["vy"] = codes[:, 1]
        parts.append(wp.tobytes())
    return b"".join(parts)


def encode(
    sender_id: int,
    gps_time: Timestamp,
    agents: Sequence[AgentForecast],
    anchor: tuple[float, float] = (0.0, 0.0),
    compress: bool = True,
    budget: int = MAX_FRAME_BYTES,
) -> bytes:
    """Build a frame, keeping the smaller of the raw and compressed payloads.

    Raises ``BudgetError`` if the final frame is larger than ``budget``.
    """
    payload = encode_payload(sender_id, gps_time, agents, anchor)
    flags = 0
    if compress:
        packed = _COMPRESSOR.compress(payload)
        if len(packed) < len(payload):
            payload, flags = packed, FLAG_COMPRESSED
    size = FRAME_HEADER_BYTES + len(payload)
    if size > budget or len(payload) > 0xFFFF:
        raise BudgetError(size, budget)
    return _FRAME.pack(VERSION, flags, len(payload)) + payload


def decode(frame: bytes) -> ForecastMessage:
    """Inverse of ``encode``; values come back at quantization centers."""
    frame = bytes(frame)
    if len(frame) < FRAME_HEADER_BYTES:
        raise ParseError("truncated frame header", len(frame))
    version, flags, length = _FRAME.unpack_from(frame, 0)
    if version != VERSION:
        raise VersionError(version)
    if flags & ~FLAG_COMPRESSED:
        raise ParseError(f"unknown flag bits 0x{flags:02x}", 1)
    if length != len(frame) - FRAME_HEADER_BYTES:
        raise ParseError(f"payload_len {length} but {len(frame) - FRAME_HEADER_BYTES} payload bytes present", 2)
    payload = frame[FRAME_HEADER_BYTES:]
    if flags & FLAG_COMPRESSED:
        try:
            payload = _DECOMPRESSOR.decompress(payload, max_output_size=_MAX_DECOMPRESSED)
        except zstandard.ZstdError as exc:
            raise ParseError(f"bad compressed payload: {exc}", FRAME_HEADER_BYTES) from None
        base = None  # offsets inside a decompressed payload are payload-relative
    else:
        base = FRAME_HEADER_BYTES
    return _parse_payload(payload, base or 0)


def _parse_payload(buf: bytes, base: int) -> ForecastMessage:
    def need(pos: int, n: int, what: str) -> None:
        if pos + n > len(buf):
            raise ParseError(f"truncated {what}", base + pos)

    need(0, PAYLOAD_HEADER_BYTES, "payload header")
    sender, gps, ax, ay, n_agents = _HEADER.unpack_from(buf, 0)
    if not (np.isfinite(ax) and np.isfinite(ay)):
        raise ParseError("non-finite anchor", base + 10)
    pos = PAYLOAD_HEADER_BYTES
    agents = []
    for i in range(n_agents):
        need(pos, AGENT_BYTES, f"agent {i} record")
        code, n_wp, cx, cy = _AGENT.unpack_from(buf, pos)
        try:
            cls = AgentClass.from_code(code & 0x0F)
        except ValueError:
            raise ParseError(f"agent {i}: unknown class code {code}", base + pos) from None
        pos += AGENT_BYTES
        need(pos, n_wp * WAYPOINT_BYTES, f"agent {i} waypoints")
        wp = np.frombuffer(buf, dtype=_WAYPOINT_DTYPE, count=n_wp, offset=pos)
        qx, qy = ax + cx * POS_QUANTUM, ay + cy * POS_QUANTUM
        t = (gps + 1000 * wp["dt"].astype(np.int64)).tolist()
        mean = np.empty((n_wp, 2))
        mean[:, 0] = qx + wp["dx"] * POS_QUANTUM
        mean[:, 1] = qy + wp["dy"] * POS_QUANTUM
        var = np.empty((n_wp, 2), dtype="<u2")
        var[:, 0] = wp["vx"]
        var[:, 1] = wp["vy"]
        var = _var_values(var)
        try:
            pred = PredictedTrajectory(t, mean, var)
        except ValueError as exc:
            raise ParseError(f"agent {i}: {exc}", base + pos) from None
        agents.append(AgentForecast(cls, State2D(qx, qy), pred))
        pos += n_wp * WAYPOINT_BYTES
    if pos != len(buf):
        raise ParseError(f"{len(buf) - pos} trailing bytes", base + pos)
    return ForecastMessage(sender, gps, (ax, ay), tuple(agents))


def raw_payload_section_bytes(n_waypoints: Sequence[int]) -> int:
    """Uncompressed bytes after the version and length fields (flags + payload)."""
    return 1 + PAYLOAD_HEADER_BYTES + sum(AGENT_BYTES + WAYPOINT_BYTES * n for n in n_waypoints)
