"""Wire formats: binary frame packets, channel framing and config/pose types.

The peer stream multiplexes two logical channels over one reliable
connection: channel 0 carries newline-free JSON data messages (hello, pose,
control, error), channel 1 carries binary frame packets.  Each channel
message is [channel u8][payload_len u32 LE][payload].

Frame packet layout (all little-endian):

    magic u32 = 0x33445354, version u8 = 1, frame_id u32,
    width u16, height u16, pixel_format u8 (0=RGB8, 1=RGBA8),
    timestamp_us u64, payload_len u32, payload bytes
"""

from __future__ import annotations

import asyncio
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import BadMagic, LengthMismatch, UnsupportedVersion
from ..render.raycast import RenderFrame

FRAME_MAGIC = 0x33445354
FRAME_VERSION = 1
_HEADER = struct.Struct("<IBIHHBQI")

_FORMAT_CODES = {"RGB8": 0, "RGBA8": 1}
_FORMAT_NAMES = {v: k for k, v in _FORMAT_CODES.items()}

CHANNEL_DATA = 0
CHANNEL_FRAME = 1

_CHANNEL_HEADER = struct.Struct("<BI")


def encode_frame_packet(frame: RenderFrame) -> bytes:
    header = _HEADER.pack(
        FRAME_MAGIC,
        FRAME_VERSION,
        frame.frame_id,
        frame.width,
        frame.height,
        _FORMAT_CODES[frame.pixel_format],
        frame.timestamp_us,
        len(frame.pixels),
    )
    return header + frame.pixels


def decode_frame_packet(data: bytes) -> RenderFrame:
    if len(data) < _HEADER.size:
        raise LengthMismatch(f"packet of {len(data)} bytes is shorter than the header")
    magic, version, frame_id, width, height, fmt, timestamp_us, payload_len = _HEADER.unpack_from(
        data, 0
    )
    if magic != FRAME_MAGIC:
        raise BadMagic(f"magic 0x{magic:08x}")
    if version != FRAME_VERSION:
        raise UnsupportedVersion(f"version {version}")
    if fmt not in _FORMAT_NAMES:
        raise UnsupportedVersion(f"pixel_format code {fmt}")
    payload = data[_HEADER.size :]
    if len(payload) != payload_len:
        raise LengthMismatch(f"payload_len {payload_len} but {len(payload)} bytes follow")
    return RenderFrame(
        width=width,
        height=height,
        pixel_format=_FORMAT_NAMES[fmt],
        frame_id=frame_id,
        timestamp_us=timestamp_us,
        pixels=payload,
    )


async def write_channel_message(writer: asyncio.StreamWriter, channel: int, payload: bytes) -> None:
    writer.write(_CHANNEL_HEADER.pack(channel, len(payload)) + payload)
    await writer.drain()


async def read_channel_message(reader: asyncio.StreamReader) -> tuple[int, bytes]:
    head = await reader.readexactly(_CHANNEL_HEADER.size)
    channel, length = _CHANNEL_HEADER.unpack(head)
    payload = await reader.readexactly(length)
    return channel, payload


async def write_data_message(writer: asyncio.StreamWriter, msg: dict) -> None:
    await write_channel_message(writer, CHANNEL_DATA, json.dumps(msg).encode("utf-8"))


@dataclass(frozen=True)
class PoseUpdate:
    """Absolute camera pose from the viewer; quaternion renormalized on receipt."""

    position: tuple[float, float, float]
    rotation: tuple[float, float, float, float]
    timestamp_us: int

    @classmethod
    def from_message(cls, msg: dict) -> "PoseUpdate":
        pos = tuple(float(v) for v in msg["position"])
        rot = np.asarray([float(v) for v in msg["rotation"]], dtype=np.float64)
        if len(pos) != 3 or rot.shape != (4,):
            raise ValueError("pose needs a 3-vector position and 4-vector rotation")
        norm = float(np.linalg.norm(rot))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("degenerate rotation quaternion")
        rot = rot / norm
        return cls(position=pos, rotation=tuple(rot), timestamp_us=int(msg["timestamp_us"]))

    def to_message(self) -> dict:
        return {
            "type": "pose",
            "position": list(self.position),
            "rotation": list(self.rotation),
            "timestamp_us": self.timestamp_us,
        }


@dataclass
class ServerConfig:
    """Streaming server settings, loadable from a JSON file."""

    max_peers: int = 2
    target_fps: float = 18.0
    heartbeat_timeout_s: float = 10.0
    signal_host: str = "127.0.0.1"
    signal_port: int = 0
    stream_host: str = "127.0.0.1"
    stream_port: int = 0
    frame_width: int = 256
    frame_height: int = 256

    def __post_init__(self):
        if self.max_peers < 1:
            raise ValueError(f"max_peers must be >= 1, got {self.max_peers}")
        if not 1.0 <= self.target_fps <= 120.0:
            raise ValueError(f"target_fps {self.target_fps} outside [1, 120]")
        if self.heartbeat_timeout_s <= 0:
            raise ValueError("heartbeat_timeout_s must be > 0")

    @classmethod
    def from_json(cls, text: str) -> "ServerConfig":
        doc = json.loads(text)
        kwargs = {}
        for key in ("max_peers", "target_fps", "heartbeat_timeout_s", "frame_width", "frame_height"):
            if key in doc:
                kwargs[key] = doc[key]
        listen = doc.get("listen", {})
        for name, target in (("signaling", "signal"), ("stream", "stream")):
            if name in listen:
                host, _, port = listen[name].rpartition(":")
                kwargs[f"{target}_host"] = host
                kwargs[f"{target}_port"] = int(port)
        return cls(**kwargs)
