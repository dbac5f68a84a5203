"""Signaling: peer registry and the rendezvous server.

The registry is pure bookkeeping driven by (message, sender, now) calls, so
eviction and the peer limit are testable with a simulated clock.  The
asyncio server wraps it with newline-delimited JSON transport.  Frames
never pass through here: after connect-accept the peers talk directly.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

BROADCAST = -1  # pseudo peer id meaning "all registered peers"


@dataclass
class PeerRecord:
    peer_id: int
    name: str
    role: str  # client | server
    last_heartbeat: float
    state: str = "registered"  # registered | connected | closed
    endpoint: str = ""  # stream endpoint, for role=server peers


class PeerRegistry:
    """Peer bookkeeping plus the signaling state machine.

    `handle` consumes one message from `sender_id` (None until registered)
    and returns (replies, new_sender_id) where replies is a list of
    (target_peer_id, message) pairs; BROADCAST targets every live peer.
    """

    def __init__(self, max_peers: int = 2, heartbeat_timeout_s: float = 10.0):
        self.max_peers = max_peers
        self.heartbeat_timeout_s = heartbeat_timeout_s
        self.peers: dict[int, PeerRecord] = {}
        self._next_id = 1

    def client_count(self) -> int:
        return sum(1 for p in self.peers.values() if p.role == "client" and p.state != "closed")

    def peer_list_message(self) -> dict:
        return {
            "type": "peer-list",
            "peers": [
                {"peer_id": p.peer_id, "name": p.name, "role": p.role, "state": p.state}
                for p in self.peers.values()
                if p.state != "closed"
            ],
        }

    def register(self, name: str, role: str, now: float) -> PeerRecord:
        peer = PeerRecord(peer_id=self._next_id, name=name, role=role, last_heartbeat=now)
        self._next_id += 1
        self.peers[peer.peer_id] = peer
        return peer

    def evict_stale(self, now: float) -> list[int]:
        """Drop peers whose last heartbeat is older than the timeout."""
        stale = [
            pid
            for pid, p in self.peers.items()
            if p.state != "closed" and now - p.last_heartbeat > self.heartbeat_timeout_s
        ]
        for pid in stale:
            del self.peers[pid]
        return stale

    def handle(self, msg: dict, sender_id: int | None, now: float):
        mtype = msg.get("type")
        replies: list[tuple[int, dict]] = []

        if mtype == "register":
            role = msg.get("role", "client")
            if role not in ("client", "server"):
                return [(sender_id, {"type": "error", "reason": "bad-role"})], sender_id
            if role == "client" and self.client_count() >= self.max_peers:
                return [(sender_id, {"type": "error", "reason": "peer-limit"})], sender_id
            peer = self.register(str(msg.get("name", "")), role, now)
            if role == "server":
                peer.endpoint = str(msg.get("endpoint", ""))
            replies.append((peer.peer_id, {"type": "registered", "peer_id": peer.peer_id}))
            replies.append((BROADCAST, self.peer_list_message()))
            return replies, peer.peer_id

        if sender_id is None or sender_id not in self.peers:
            return [(sender_id, {"type": "error", "reason": "not-registered"})], sender_id
        sender = self.peers[sender_id]

        if mtype == "heartbeat":
            sender.last_heartbeat = max(sender.last_heartbeat, now)
        elif mtype == "connect-request":
            target = self.peers.get(msg.get("target_id"))
            if target is None or target.state == "closed":
                replies.append((sender_id, {"type": "error", "reason": "unknown-target"}))
            else:
                replies.append(
                    (target.peer_id, {"type": "connect-request", "peer_id": sender_id})
                )
        elif mtype == "connect-accept":
            target = self.peers.get(msg.get("target_id"))
            if target is None or target.state == "closed":
                replies.append((sender_id, {"type": "error", "reason": "unknown-target"}))
            else:
                sender.state = "connected"
                target.state = "connected"
                endpoint = msg.get("endpoint", sender.endpoint)
                replies.append(
                    (
                        target.peer_id,
                        {"type": "connect-accept", "peer_id": sender_id, "endpoint": endpoint},
                    )
                )
        elif mtype == "bye":
            sender.state = "closed"
            replies.append((BROADCAST, self.peer_list_message()))
        else:
            replies.append((sender_id, {"type": "error", "reason": "unknown-type"}))
        return replies, sender_id


def handle_signal(msg: dict, registry: PeerRegistry, sender_id: int | None = None, now: float = 0.0):
    """One signaling step: returns ([(target, reply), ...], sender_id)."""
    return registry.handle(msg, sender_id, now)


class SignalingServer:
    """Newline-delimited JSON rendezvous over TCP."""

    def __init__(self, registry: PeerRegistry, host: str = "127.0.0.1", port: int = 0,
                 clock=time.monotonic, sweep_interval_s: float | None = None):
        self.registry = registry
        self.host = host
        self.port = port
        self.clock = clock
        self.sweep_interval_s = sweep_interval_s or min(1.0, registry.heartbeat_timeout_s / 4.0)
        self._writers: dict[int, asyncio.StreamWriter] = {}
        self._server: asyncio.AbstractServer | None = None
        self._sweeper: asyncio.Task | None = None

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    async def start(self):
        self._server = await asyncio.start_server(self._serve, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._sweeper = asyncio.ensure_future(self._sweep_loop())

    async def stop(self):
        if self._sweeper:
            self._sweeper.cancel()
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        for w in list(self._writers.values()):
            w.close()
        self._writers.clear()

    async def _sweep_loop(self):
        while True:
            await asyncio.sleep(self.sweep_interval_s)
            evicted = self.registry.evict_stale(self.clock())
            if evicted:
                log.info("evicted stale peers: %s", evicted)
                for pid in evicted:
                    writer = self._writers.pop(pid, None)
                    if writer:
                        writer.close()
                await self._broadcast(self.registry.peer_list_message())

    async def _broadcast(self, msg: dict):
        data = (json.dumps(msg) + "\n").encode("utf-8")
        for writer in list(self._writers.values()):
            try:
                writer.write(data)
                await writer.drain()
            except ConnectionError:
                pass

    async def _send(self, target: int, msg: dict, fallback: asyncio.StreamWriter | None):
        if target == BROADCAST:
            await self._broadcast(msg)
            return
        writer = self._writers.get(target, fallback if target is None else None)
        if writer is None:
            writer = fallback
        if writer is None:
            return
        try:
            writer.write((json.dumps(msg) + "\n").encode("utf-8"))
            await writer.drain()
        except ConnectionError:
            pass

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        sender_id: int | None = None
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    await self._send(None, {"type": "error", "reason": "parse"}, writer)
                    break  # malformed JSON drops the connection
                replies, sender_id = self.registry.handle(msg, sender_id, self.clock())
                if sender_id is not None:
                    self._writers[sender_id] = writer
                for target, reply in replies:
                    await self._send(target, reply, writer)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            if sender_id is not None and self._writers.get(sender_id) is writer:
                del self._writers[sender_id]
            writer.close()
