"""Headless protocol client: the same handshake and channels the viewer uses.

Drives loopback tests and the `view` CLI: register with the signaling
server, connect to the render peer, then receive frames while sending pose
and control messages.
"""

from __future__ import annotations

import asyncio
import json

from ..render.raycast import RenderFrame
from .protocol import (
    CHANNEL_DATA,
    CHANNEL_FRAME,
    decode_frame_packet,
    read_channel_message,
    write_channel_message,
)


class StreamClient:
    def __init__(self, name: str = "viewer", width: int = 64, height: int = 64):
        self.name = name
        self.width = width
        self.height = height
        self.peer_id: int | None = None
        self._sig_reader = None
        self._sig_writer = None
        self._stream_reader = None
        self._stream_writer = None
        self.data_messages: list[dict] = []

    async def _signal_send(self, msg: dict):
        self._sig_writer.write((json.dumps(msg) + "\n").encode())
        await self._sig_writer.drain()

    async def _signal_recv(self) -> dict:
        line = await self._sig_reader.readline()
        if not line:
            raise ConnectionError("signaling closed")
        return json.loads(line)

    async def register(self, host: str, port: int) -> dict:
        """Register with the signaling server; returns the first reply."""
        self._sig_reader, self._sig_writer = await asyncio.open_connection(host, port)
        await self._signal_send({"type": "register", "name": self.name, "role": "client"})
        reply = await self._signal_recv()
        if reply.get("type") == "registered":
            self.peer_id = reply["peer_id"]
        return reply

    async def wait_for_server_peer(self) -> int:
        """Consume signaling messages until a server peer appears in a peer list."""
        while True:
            msg = await self._signal_recv()
            if msg.get("type") == "peer-list":
                for peer in msg["peers"]:
                    if peer["role"] == "server":
                        return peer["peer_id"]

    async def connect(self, server_peer_id: int) -> str:
        """Handshake via signaling, then dial the direct stream. Returns the endpoint."""
        await self._signal_send({"type": "connect-request", "target_id": server_peer_id})
        while True:
            msg = await self._signal_recv()
            if msg.get("type") == "connect-accept":
                endpoint = msg["endpoint"]
                break
            if msg.get("type") == "error":
                raise ConnectionError(msg.get("reason", "signaling error"))
        host, _, port = endpoint.rpartition(":")
        self._stream_reader, self._stream_writer = await asyncio.open_connection(host, int(port))
        await self.send_data(
            {"type": "hello", "peer_id": self.peer_id, "width": self.width, "height": self.height}
        )
        return endpoint

    async def send_data(self, msg: dict):
        await write_channel_message(
            self._stream_writer, CHANNEL_DATA, json.dumps(msg).encode("utf-8")
        )

    async def next_frame(self, timeout: float = 5.0) -> RenderFrame:
        """Next frame packet; JSON data messages seen meanwhile are queued."""
        while True:
            channel, payload = await asyncio.wait_for(
                read_channel_message(self._stream_reader), timeout
            )
            if channel == CHANNEL_FRAME:
                return decode_frame_packet(payload)
            self.data_messages.append(json.loads(payload))

    async def heartbeat(self):
        await self._signal_send({"type": "heartbeat"})

    async def close(self):
        for writer in (self._stream_writer, self._sig_writer):
            if writer is not None:
                try:
                    writer.close()
                except Exception:
                    pass
        self._stream_writer = self._sig_writer = None
