"""Network front end for a context manager.

Two listening ports:

* subscriber port: applications speak the envelope protocol. The first
  envelope must be ``subscribe`` with body ``{"app_id": ..., "agents": [...]}``;
  afterwards the service sends ``context-publish``, ``suggestion`` and
  ``confirm-request`` envelopes and accepts ``confirm-reply``.
* ingest port: plain trace lines, one event per line. When the client shuts
  down its write side the service answers ``done <n>`` and closes.

Everything runs on one asyncio loop, which serializes access to the manager.
"""

from __future__ import annotations

import asyncio
import logging
import signal
from typing import Any

from .formats.trace import TraceError, parse_trace_line
from .formats.wire import (
    ACK,
    CONFIRM_REPLY,
    CONFIRM_REQUEST,
    ERROR,
    SUBSCRIBE,
    EnvelopeReader,
    EnvelopeWriter,
    ProtocolError,
)
from .manager import ContextManager

log = logging.getLogger(__name__)

DEFAULT_CONFIRM_TIMEOUT = 30.0


class _Connection:
    def __init__(self, writer: asyncio.StreamWriter):
        self.writer = writer
        self.out = EnvelopeWriter()
        self.inp = EnvelopeReader()
        self.requests: dict[int, tuple[str, str]] = {}  # seq -> (agent, request id)

    def send(self, kind: str, body: dict[str, Any]) -> None:
        if self.writer.is_closing():
            raise ConnectionError("subscriber connection closed")
        env, data = self.out.next(kind, body)
        if kind == CONFIRM_REQUEST:
            self.requests[env.seq] = (body["agent"], body["request_id"])
        self.writer.write(data)


class ContextService:
    def __init__(
        self,
        manager: ContextManager,
        host: str = "127.0.0.1",
        port: int = 0,
        ingest_port: int = 0,
        confirm_timeout: float = DEFAULT_CONFIRM_TIMEOUT,
    ):
        self.manager = manager
        self.host = host
        self.port = port
        self.ingest_port = ingest_port
        self.confirm_timeout = confirm_timeout
        self.ingested = 0
        self._servers: list[asyncio.base_events.Server] = []
        self._timers: dict[str, asyncio.TimerHandle] = {}
        self._connections: set[_Connection] = set()
        self._stopped = asyncio.Event()

    @property
    def addresses(self) -> tuple[tuple[str, int], tuple[str, int]]:
        sub, ingest = self._servers
        return sub.sockets[0].getsockname()[:2], ingest.sockets[0].getsockname()[:2]

    async def start(self) -> None:
        sub = await asyncio.start_server(self._subscriber, self.host, self.port)
        ingest = await asyncio.start_server(self._ingest, self.host, self.ingest_port)
        self._servers = [sub, ingest]

    async def stop(self) -> None:
        for s in self._servers:
            s.close()
        for t in self._timers.values():
            t.cancel()
        for conn in list(self._connections):
            conn.writer.close()
        for s in self._servers:
            await s.wait_closed()
        self._stopped.set()

    async def wait_stopped(self) -> None:
        await self._stopped.wait()

    def install_signal_handlers(self) -> None:
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, lambda: asyncio.ensure_future(self.stop()))
            except (NotImplementedError, RuntimeError):
                pass

    # -- ingest --------------------------------------------------------------

    async def _ingest(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        count = 0
        lineno = 0
        try:
            while True:
                raw = await reader.readline()
                if not raw:
                    break
                lineno += 1
                try:
                    event = parse_trace_line(raw.decode("utf-8", errors="replace"), lineno)
                except TraceError as exc:
                    self.manager.log.emit(None, None, 0, "skipped", reason=str(exc))
                    continue
                if event is None:
                    continue
                self.manager.handle(event)
                count += 1
                self.ingested += 1
                self._arm_confirmation_timers()
            writer.write(f"done {count}\n".encode())
            await writer.drain()
        except ConnectionError:
            pass
        finally:
            writer.close()

    def _arm_confirmation_timers(self) -> None:
        if self.manager.config.confirm_timeout_steps is not None:
            return
        loop = asyncio.get_running_loop()
        for agent in self.manager.ontology.agents:
            req = self.manager.pending_confirmation(agent)
            if req is None or req.request_id in self._timers:
                continue
            self._timers[req.request_id] = loop.call_later(
                self.confirm_timeout, self._expire, agent, req.request_id
            )

    def _expire(self, agent: str, request_id: str) -> None:
        req = self.manager.pending_confirmation(agent)
        if req is not None and req.request_id == request_id:
            self.manager.expire_confirmation(agent)

    # -- subscribers ---------------------------------------------------------

    async def _subscriber(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = _Connection(writer)
        self._connections.add(conn)
        app_id = None
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    conn.inp.close()
                    break
                for env in conn.inp.feed(data):
                    if app_id is None:
                        if env.kind != SUBSCRIBE or not isinstance(env.body.get("app_id"), str):
                            raise ProtocolError("first envelope must be subscribe with an app_id")
                        app_id = env.body["app_id"]
                        agents = env.body.get("agents") or None
                        conn.send(ACK, {"ref": env.seq, "app_id": app_id})
                        try:
                            self.manager.subscribe(app_id, conn.send, agents)
                        except ValueError as exc:
                            app_id = None
                            raise ProtocolError(str(exc)) from None
                    elif env.kind == CONFIRM_REPLY:
                        self._confirm_reply(conn, env)
                    else:
                        conn.send(ERROR, {"ref": env.seq, "message": f"unexpected {env.kind}"})
                await writer.drain()
        except ProtocolError as exc:
            log.info("dropping subscriber %s: %s", app_id, exc)
            if not writer.is_closing():
                try:
                    conn.send(ERROR, {"message": str(exc)})
                except ConnectionError:
                    pass
        except ConnectionError:
            pass
        finally:
            self._connections.discard(conn)
            if app_id is not None and self.manager.subscriptions.get(app_id) is not None:
                if self.manager.subscriptions[app_id].deliver == conn.send:
                    self.manager.unsubscribe(app_id)
            writer.close()

    def _confirm_reply(self, conn: _Connection, env) -> None:
        ref = env.body.get("ref")
        if ref not in conn.requests:
            conn.send(ERROR, {"ref": env.seq, "message": f"confirm-reply references unknown request seq {ref!r}"})
            return
        agent, request_id = conn.requests.pop(ref)
        ok = self.manager.answer_confirmation(agent, request_id, env.body.get("choice"))
        timer = self._timers.pop(request_id, None)
        if timer is not None and ok:
            timer.cancel()
        conn.send(ACK, {"ref": env.seq, "accepted": ok})


async def serve(manager: ContextService | ContextManager, host: str, port: int, ingest_port: int, ready=None, **kw) -> ContextService:
    service = manager if isinstance(manager, ContextService) else ContextService(manager, host, port, ingest_port, **kw)
    await service.start()
    service.install_signal_handlers()
    if ready is not None:
        ready(service)
    await service.wait_stopped()
    return service
