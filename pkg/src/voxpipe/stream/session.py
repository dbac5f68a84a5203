"""Per-peer render sessions and the streaming render server.

One session owns a scene and a camera.  Pose and control messages mutate
the session between renders (asyncio serializes them against the render
loop), and every frame reflects the latest state at render start.  Frames
go out as binary packets on the frame channel; the camera/interaction data
travels the data channel in JSON.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time

import numpy as np

from ..catalog import VolumeCatalog
from ..errors import InvalidArgs, NoVolumeLoaded, UnknownVolumeId, VoxpipeError
from ..render.raycast import MinMaxBlockGrid, build_minmax_blocks, render_frame
from ..render.scene import (
    Camera,
    ClipPlane,
    Projection,
    SceneState,
    build_transfer_function,
    quat_multiply,
    quat_normalize,
)
from ..volume import WindowLevel
from .protocol import (
    CHANNEL_DATA,
    CHANNEL_FRAME,
    PoseUpdate,
    ServerConfig,
    encode_frame_packet,
    read_channel_message,
    write_channel_message,
    write_data_message,
)
from .signaling import PeerRegistry, SignalingServer

log = logging.getLogger(__name__)

_AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


class RenderSession:
    """One connected viewer: scene, camera and frame counter."""

    def __init__(self, peer_id: int, catalog: VolumeCatalog, width: int, height: int):
        self.peer_id = peer_id
        self.catalog = catalog
        self.width = width
        self.height = height
        self.scene = SceneState()
        self.camera = Camera()
        self.last_pose_us = -1
        self.next_frame_id = 1
        self.blocks: MinMaxBlockGrid | None = None
        self.closed = False

    def render(self) -> "bytes":
        frame = render_frame(
            self.scene,
            self.camera,
            self.width,
            self.height,
            frame_id=self.next_frame_id,
            timestamp_us=time.time_ns() // 1000,
            blocks=self.blocks,
        )
        self.next_frame_id += 1
        return encode_frame_packet(frame)


def apply_pose(session: RenderSession, pose: PoseUpdate) -> Camera:
    """Latest-wins camera replacement; stale timestamps are discarded."""
    if pose.timestamp_us < session.last_pose_us:
        return session.camera
    rot = tuple(quat_normalize(pose.rotation))
    session.camera = Camera(
        position=tuple(pose.position),
        rotation=rot,
        projection=session.camera.projection,
        fov_deg=session.camera.fov_deg,
        view_extent_mm=session.camera.view_extent_mm,
    )
    session.last_pose_us = pose.timestamp_us
    return session.camera


def _default_framing(session: RenderSession) -> None:
    """Frame the freshly loaded volume with an axis-on orthographic camera."""
    vol = session.scene.volume
    ex = vol.nx * vol.spacing[0]
    ey = vol.ny * vol.spacing[1]
    ez = vol.nz * vol.spacing[2]
    session.camera = Camera(
        position=(ex / 2.0, ey / 2.0, ez * 2.0 + ez / 2.0),
        rotation=(0.0, 0.0, 0.0, 1.0),  # looking down -z at the volume
        projection=Projection.ORTHOGRAPHIC,
        view_extent_mm=1.5 * max(ex, ey),
    )


def apply_control(session: RenderSession, ctl: dict) -> SceneState:
    """Apply one control message to the session's scene.

    Raises NoVolumeLoaded / UnknownVolumeId / InvalidArgs; transport layers
    translate those into error replies.
    """
    op = ctl.get("op")
    scene = session.scene

    if op == "load":
        volume_id = ctl.get("volume_id", "")
        vol = session.catalog.load(volume_id)  # raises UnknownVolumeId
        scene.volume = vol
        lo, hi = float(vol.voxels.min()), float(vol.voxels.max())
        if vol.voxels.dtype == np.uint8:
            scene.transfer = build_transfer_function(WindowLevel(127.5, 255.0))
        elif hi <= 1.0 and lo >= 0.0:
            scene.transfer = build_transfer_function(WindowLevel(0.5, 1.0))
        else:
            scene.transfer = build_transfer_function(WindowLevel(50.0, 400.0))
        scene.clip_plane = None
        session.blocks = build_minmax_blocks(vol)
        _default_framing(session)
        return scene
    if op == "unload":
        scene.volume = None
        session.blocks = None
        return scene

    if scene.volume is None:
        raise NoVolumeLoaded(f"control {op!r} needs a loaded volume")

    if op == "transform":
        action = ctl.get("action")
        if action == "scale":
            factor = float(ctl.get("factor", 0.0))
            if factor <= 0:
                raise InvalidArgs(f"scale factor {factor}")
            scene.scale *= factor
        elif action == "translate":
            delta = ctl.get("delta")
            if not isinstance(delta, (list, tuple)) or len(delta) != 3:
                raise InvalidArgs("translate needs a 3-vector delta")
            scene.translation = tuple(
                float(a) + float(b) for a, b in zip(scene.translation, delta)
            )
        elif action == "rotate":
            q = ctl.get("quaternion")
            if not isinstance(q, (list, tuple)) or len(q) != 4:
                raise InvalidArgs("rotate needs a 4-vector quaternion")
            try:
                composed = quat_normalize(quat_multiply(q, scene.rotation))
            except ValueError as exc:
                raise InvalidArgs(str(exc)) from exc
            scene.rotation = tuple(composed)
        else:
            raise InvalidArgs(f"transform action {action!r}")
    elif op == "slice":
        axis = ctl.get("axis")
        if axis not in _AXES:
            raise InvalidArgs(f"slice axis {axis!r}")
        offset = float(ctl.get("offset", -1.0))
        if not 0.0 <= offset <= 1.0:
            raise InvalidArgs(f"slice offset {offset}")
        scene.clip_plane = ClipPlane(axis=_AXES[axis], offset_fraction=offset)
    elif op == "window":
        level = float(ctl.get("level", 0.0))
        width = float(ctl.get("width", 0.0))
        if width <= 0:
            raise InvalidArgs(f"window width {width}")
        scene.transfer = build_transfer_function(
            WindowLevel(level, width), brightness=scene.transfer.brightness
        )
    else:
        raise InvalidArgs(f"unknown control op {op!r}")
    return scene


class RenderServer:
    """Streams frames to connected peers and registers itself for signaling."""

    def __init__(self, config: ServerConfig, catalog: VolumeCatalog, name: str = "renderer"):
        self.config = config
        self.catalog = catalog
        self.name = name
        self.sessions: dict[int, RenderSession] = {}
        self._server: asyncio.AbstractServer | None = None
        self._signal_task: asyncio.Task | None = None
        self._tasks: set[asyncio.Task] = set()

    @property
    def stream_endpoint(self) -> str:
        return f"{self.config.stream_host}:{self.config.stream_port}"

    async def start(self, signaling: SignalingServer):
        self._server = await asyncio.start_server(
            self._serve_stream, self.config.stream_host, self.config.stream_port
        )
        self.config.stream_port = self._server.sockets[0].getsockname()[1]
        self._signal_task = asyncio.ensure_future(self._signaling_loop(signaling))

    async def stop(self):
        if self._signal_task:
            self._signal_task.cancel()
        for t in list(self._tasks):
            t.cancel()
        if self._server:
            self._server.close()
            await self._server.wait_closed()

    async def _signaling_loop(self, signaling: SignalingServer):
        """Register with the rendezvous and accept incoming connect requests."""
        reader, writer = await asyncio.open_connection(signaling.host, signaling.port)
        writer.write(
            (
                json.dumps(
                    {
                        "type": "register",
                        "name": self.name,
                        "role": "server",
                        "endpoint": self.stream_endpoint,
                    }
                )
                + "\n"
            ).encode()
        )
        await writer.drain()

        async def heartbeat():
            interval = self.config.heartbeat_timeout_s / 3.0
            while True:
                await asyncio.sleep(interval)
                writer.write(b'{"type": "heartbeat"}\n')
                await writer.drain()

        pulse = asyncio.ensure_future(heartbeat())
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                msg = json.loads(line)
                if msg.get("type") == "connect-request":
                    accept = {
                        "type": "connect-accept",
                        "target_id": msg["peer_id"],
                        "endpoint": self.stream_endpoint,
                    }
                    writer.write((json.dumps(accept) + "\n").encode())
                    await writer.drain()
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            pulse.cancel()
            writer.close()

    async def _serve_stream(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        task = asyncio.current_task()
        self._tasks.add(task)
        session: RenderSession | None = None
        try:
            channel, payload = await read_channel_message(reader)
            hello = json.loads(payload) if channel == CHANNEL_DATA else {}
            if hello.get("type") != "hello":
                await write_data_message(writer, {"type": "error", "reason": "expected-hello"})
                return
            session = RenderSession(
                peer_id=int(hello.get("peer_id", 0)),
                catalog=self.catalog,
                width=int(hello.get("width", self.config.frame_width)),
                height=int(hello.get("height", self.config.frame_height)),
            )
            self.sessions[session.peer_id] = session
            recv = asyncio.ensure_future(self._receive_loop(session, reader, writer))
            send = asyncio.ensure_future(self._frame_loop(session, writer))
            done, pending = await asyncio.wait({recv, send}, return_when=asyncio.FIRST_COMPLETED)
            for p in pending:
                p.cancel()
        except (ConnectionError, asyncio.IncompleteReadError, json.JSONDecodeError):
            pass
        finally:
            if session is not None:
                session.closed = True
                self.sessions.pop(session.peer_id, None)
            writer.close()
            self._tasks.discard(task)

    async def _receive_loop(self, session, reader, writer):
        while not session.closed:
            try:
                channel, payload = await read_channel_message(reader)
            except (ConnectionError, asyncio.IncompleteReadError):
                return
            if channel != CHANNEL_DATA:
                continue
            try:
                msg = json.loads(payload)
            except json.JSONDecodeError:
                log.warning("undecodable data message dropped")
                continue
            mtype = msg.get("type")
            if mtype == "pose":
                try:
                    apply_pose(session, PoseUpdate.from_message(msg))
                except (KeyError, ValueError, TypeError) as exc:
                    log.warning("malformed pose dropped: %s", exc)
            elif mtype == "control":
                try:
                    apply_control(session, msg)
                except VoxpipeError as exc:
                    await write_data_message(
                        writer,
                        {"type": "error", "reason": type(exc).__name__, "detail": str(exc)},
                    )
            elif mtype == "bye":
                return

    async def _frame_loop(self, session, writer):
        interval = 1.0 / self.config.target_fps
        loop = asyncio.get_event_loop()
        while not session.closed:
            started = loop.time()
            packet = session.render()
            try:
                await write_channel_message(writer, CHANNEL_FRAME, packet)
            except ConnectionError:
                return
            elapsed = loop.time() - started
            await asyncio.sleep(max(interval - elapsed, 0.0))
