"""Story session server: one live session, many connections.

The first connection to send `claim` becomes the Director and is the only
one allowed to steer (`choose` / `set` / `restart`); everyone else observes.
Every state mutation is broadcast as a `status` frame carrying the
paragraphs emitted since the previous broadcast; a connection's first
status instead carries the whole transcript so far.  Two transports share one
frame schema: newline-delimited JSON over TCP, and one-frame-per-message
over a websocket endpoint for browser clients.

All runtime mutations go through a single asyncio lock, so no two commands
ever touch the session concurrently.
"""
from __future__ import annotations

import asyncio
import logging
from typing import Any, Callable, Optional

from .compiler import StoryGraph
from .protocol import (
    MAX_FRAME_BYTES,
    PROTOCOL_VERSION,
    Frame,
    ProtocolError,
    decode_frame,
    encode_frame,
    make_frame,
)
from .runtime import EngineError, Session, Value, new_session, value_type

log = logging.getLogger("taleweaver.server")

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 7707
DEFAULT_WS_PORT = 7708
OUTBOUND_QUEUE_LIMIT = 256


class _Connection:
    """One client, transport-agnostic: frames go out through a bounded
    queue drained by a writer task; overflow disconnects the client."""

    _next_id = 0

    def __init__(self, hub: "SessionHub"):
        self.hub = hub
        self.role = "observer"
        self.queue: asyncio.Queue[Optional[bytes]] = asyncio.Queue(maxsize=OUTBOUND_QUEUE_LIMIT)
        self.closed = False
        # set by the transport handler; forcefully tears the socket down
        self.abort: Optional[Callable[[], None]] = None
        _Connection._next_id += 1
        self.id = _Connection._next_id

    def send(self, frame: Frame):
        if self.closed:
            return
        try:
            self.queue.put_nowait(encode_frame(frame))
        except asyncio.QueueFull:
            log.warning("connection %d too slow, dropping", self.id)
            self.close()

    def close(self):
        if not self.closed:
            self.closed = True
            try:
                self.queue.put_nowait(None)
            except asyncio.QueueFull:
                # writer will notice `closed` after draining
                pass


class SessionHub:
    """Owns the runtime session and the connection set."""

    def __init__(self, graph: StoryGraph, overrides: Optional[dict[str, Value]] = None,
                 step_limit: int = 10_000):
        self.graph = graph
        self.overrides = dict(overrides or {})
        self.step_limit = step_limit
        self.session: Optional[Session] = None
        self.connections: list[_Connection] = []
        self.director: Optional[_Connection] = None
        self.last_broadcast_len = 0
        self.lock = asyncio.Lock()

    # --- session driving ---

    def start_session(self):
        self.session = new_session(self.graph, self.overrides, step_limit=self.step_limit)
        self.last_broadcast_len = 0
        if not self.session.finished:
            self.session.continue_story()

    def _status_frame(self, since: int) -> Frame:
        s = self.session
        return make_frame(
            "status",
            seq=s.seq,
            knot=s.current_knot_name,
            finished=s.finished,
            paragraphs=[p.to_json() for p in s.transcript[since:]],
            choices=[c.to_json() for c in (s.pending or [])],
            vars=dict(s.variables),
        )

    def broadcast_status(self):
        frame = self._status_frame(self.last_broadcast_len)
        self.last_broadcast_len = len(self.session.transcript)
        for conn in list(self.connections):
            conn.send(frame)
        if self.session.finished:
            end = make_frame("end", seq=self.session.seq)
            for conn in list(self.connections):
                conn.send(end)

    # --- connection lifecycle ---

    def attach(self, conn: _Connection):
        self.connections.append(conn)
        conn.send(self._hello(conn))
        # late joiners get the whole transcript so far in their first status
        conn.send(self._status_frame(0))
        if self.session.finished:
            conn.send(make_frame("end", seq=self.session.seq))

    def detach(self, conn: _Connection):
        if conn in self.connections:
            self.connections.remove(conn)
        if self.director is conn:
            # the director is the narrative authority: the session simply
            # pauses until someone else claims the token
            self.director = None
        conn.close()

    def _hello(self, conn: _Connection) -> Frame:
        return make_frame(
            "hello",
            protocol=PROTOCOL_VERSION,
            story=self.graph.title or "",
            story_hash=self.graph.content_hash,
            role=conn.role,
        )

    # --- frame handling (caller holds self.lock) ---

    async def handle(self, conn: _Connection, frame: Frame):
        handler = getattr(self, f"_on_{frame.type}", None)
        if handler is None:
            conn.send(make_frame("error", code="unexpected_frame",
                                 message=f"server does not accept {frame.type!r} frames"))
            return
        handler(conn, frame)

    def _on_ping(self, conn: _Connection, frame: Frame):
        conn.send(make_frame("pong"))

    def _on_pong(self, conn: _Connection, frame: Frame):
        pass

    def _on_claim(self, conn: _Connection, frame: Frame):
        if self.director is not None and self.director is not conn:
            conn.send(make_frame("error", code="not_director_claim_denied",
                                 message="another connection holds the director token"))
            return
        self.director = conn
        conn.role = "director"
        conn.send(self._hello(conn))

    def _on_release(self, conn: _Connection, frame: Frame):
        if self.director is conn:
            self.director = None
            conn.role = "observer"
            conn.send(self._hello(conn))

    def _on_sync(self, conn: _Connection, frame: Frame):
        conn.send(make_frame("sync", seq=self.session.seq,
                             paragraphs=[p.to_json() for p in self.session.transcript]))

    def _require_director(self, conn: _Connection) -> bool:
        if self.director is not conn:
            conn.send(make_frame("error", code="not_director",
                                 message="only the director may steer the story"))
            return False
        return True

    def _on_choose(self, conn: _Connection, frame: Frame):
        if not self._require_director(conn):
            return
        seq = frame.get("seq")
        choice_id = frame.get("id")
        if seq != self.session.seq:
            conn.send(make_frame("error", code="stale_seq",
                                 message=f"expected seq {self.session.seq}, got {seq}"))
            return
        if not isinstance(choice_id, int) or isinstance(choice_id, bool):
            conn.send(make_frame("error", code="invalid_choice_id",
                                 message="choice id must be an integer"))
            return
        try:
            self.session.choose(choice_id)
        except EngineError as e:
            conn.send(make_frame("error", code=e.code, message=str(e)))
            return
        try:
            if not self.session.finished:
                self.session.continue_story()
        except EngineError as e:
            conn.send(make_frame("error", code=e.code, message=str(e)))
        self.broadcast_status()

    def _on_set(self, conn: _Connection, frame: Frame):
        if not self._require_director(conn):
            return
        name = frame.get("name")
        value = frame.get("value")
        if not isinstance(name, str):
            conn.send(make_frame("error", code="unknown_variable",
                                 message="variable name must be a string"))
            return
        try:
            value_type(value)
        except TypeError:
            conn.send(make_frame("error", code="type_mismatch",
                                 message="value must be an int, string, or bool"))
            return
        try:
            self.session.set_variable(name, value)
        except EngineError as e:
            conn.send(make_frame("error", code=e.code, message=str(e)))
            return
        self.broadcast_status()

    def _on_restart(self, conn: _Connection, frame: Frame):
        if not self._require_director(conn):
            return
        try:
            self.start_session()
        except EngineError as e:
            conn.send(make_frame("error", code=e.code, message=str(e)))
            return
        self.broadcast_status()


class StoryServer:
    def __init__(self, graph: StoryGraph, overrides: Optional[dict[str, Value]] = None,
                 host: str = DEFAULT_HOST, port: int = DEFAULT_PORT,
                 ws_port: Optional[int] = DEFAULT_WS_PORT, step_limit: int = 10_000):
        self.hub = SessionHub(graph, overrides, step_limit)
        self.host = host
        self.port = port
        self.ws_port = ws_port
        self._tcp_server: Optional[asyncio.AbstractServer] = None
        self._ws_server: Any = None
        self._handler_tasks: set[asyncio.Task] = set()

    async def start(self):
        self.hub.start_session()
        # no connections yet; this just moves the broadcast watermark past
        # the opening paragraphs, which every joiner receives at attach
        self.hub.broadcast_status()
        self._tcp_server = await asyncio.start_server(
            self._handle_tcp, self.host, self.port, limit=MAX_FRAME_BYTES * 2
        )
        if self.ws_port is not None:
            import websockets

            self._ws_server = await websockets.serve(self._handle_ws, self.host, self.ws_port)
        log.info("listening on %s:%d (tcp)%s", self.host, self.port,
                 f" and :{self.ws_port}/ws" if self.ws_port is not None else "")

    @property
    def bound_port(self) -> int:
        return self._tcp_server.sockets[0].getsockname()[1]

    @property
    def bound_ws_port(self) -> Optional[int]:
        if self._ws_server is None:
            return None
        return self._ws_server.sockets[0].getsockname()[1]

    async def stop(self):
        if self._tcp_server is not None:
            self._tcp_server.close()
            await self._tcp_server.wait_closed()
        if self._ws_server is not None:
            self._ws_server.close()
            await self._ws_server.wait_closed()
        for conn in list(self.hub.connections):
            self.hub.detach(conn)
            if conn.abort is not None:
                conn.abort()
        if self._handler_tasks:
            await asyncio.gather(*self._handler_tasks, return_exceptions=True)

    async def serve_forever(self):
        await asyncio.Event().wait()

    # --- TCP transport ---

    async def _handle_tcp(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        task = asyncio.current_task()
        self._handler_tasks.add(task)
        task.add_done_callback(self._handler_tasks.discard)
        conn = _Connection(self.hub)
        conn.abort = writer.transport.abort
        writer_task = asyncio.create_task(self._drain_tcp(conn, writer))
        async with self.hub.lock:
            self.hub.attach(conn)
        try:
            while not conn.closed:
                try:
                    line = await reader.readline()
                except (ConnectionError, asyncio.LimitOverrunError, ValueError):
                    break
                if not line:
                    break
                await self._dispatch(conn, line.rstrip(b"\n"))
        finally:
            async with self.hub.lock:
                self.hub.detach(conn)
            await writer_task
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def _drain_tcp(self, conn: _Connection, writer: asyncio.StreamWriter):
        try:
            while True:
                data = await conn.queue.get()
                if data is None:
                    break
                writer.write(data)
                await writer.drain()
        except (ConnectionError, OSError):
            conn.closed = True

    # --- websocket transport ---

    async def _handle_ws(self, websocket):
        path = getattr(getattr(websocket, "request", None), "path", "/ws")
        if path.split("?")[0] not in ("/ws", "/"):
            await websocket.close(code=4004, reason="unknown path")
            return
        conn = _Connection(self.hub)
        writer_task = asyncio.create_task(self._drain_ws(conn, websocket))
        async with self.hub.lock:
            self.hub.attach(conn)
        try:
            async for message in websocket:
                if conn.closed:
                    break
                data = message.encode("utf-8") if isinstance(message, str) else message
                await self._dispatch(conn, data.rstrip(b"\n"))
        except Exception:
            pass
        finally:
            async with self.hub.lock:
                self.hub.detach(conn)
            await writer_task
            await websocket.close()

    async def _drain_ws(self, conn: _Connection, websocket):
        try:
            while True:
                data = await conn.queue.get()
                if data is None:
                    break
                await websocket.send(data.decode("utf-8").rstrip("\n"))
        except Exception:
            conn.closed = True

    # --- shared dispatch ---

    async def _dispatch(self, conn: _Connection, line: bytes):
        if not line.strip():
            return
        try:
            frame = decode_frame(line[:MAX_FRAME_BYTES + 1])
        except ProtocolError as e:
            conn.send(make_frame("error", code=e.code, message=str(e)))
            return
        log.debug("conn %d -> %s", conn.id, frame.type)
        async with self.hub.lock:
            await self.hub.handle(conn, frame)


async def run_server(graph: StoryGraph, overrides: Optional[dict[str, Value]] = None,
                     host: str = DEFAULT_HOST, port: int = DEFAULT_PORT,
                     ws_port: Optional[int] = DEFAULT_WS_PORT) -> None:
    server = StoryServer(graph, overrides, host, port, ws_port)
    await server.start()
    try:
        await server.serve_forever()
    finally:
        await server.stop()
