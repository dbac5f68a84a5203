"""Signaling and frame-streaming service for remote interactive rendering."""

from .protocol import (
    CHANNEL_DATA,
    CHANNEL_FRAME,
    FRAME_MAGIC,
    PoseUpdate,
    ServerConfig,
    decode_frame_packet,
    encode_frame_packet,
    read_channel_message,
    write_channel_message,
)
from .signaling import PeerRecord, PeerRegistry, SignalingServer
from .session import RenderServer, RenderSession, apply_control, apply_pose
from .client import StreamClient

__all__ = [
    "CHANNEL_DATA",
    "CHANNEL_FRAME",
    "FRAME_MAGIC",
    "PoseUpdate",
    "ServerConfig",
    "decode_frame_packet",
    "encode_frame_packet",
    "read_channel_message",
    "write_channel_message",
    "PeerRecord",
    "PeerRegistry",
    "SignalingServer",
    "RenderServer",
    "RenderSession",
    "apply_control",
    "apply_pose",
    "StreamClient",
]
