"""Shared fixtures: small schedules, deterministic RNG, and a minimal
in-process wire-protocol server for exercising the external client."""

from __future__ import annotations

import socket
import threading

import numpy as np
import pytest

from diffaudit import build_linear_schedule
from diffaudit import protocol


@pytest.fixture(scope="session")
def schedule_1000():
    return build_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def schedule_100():
    return build_linear_schedule(100, 1e-3, 0.05)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


class WireServer:
    """Tiny threaded server speaking the framed tensor protocol.

    ``handler`` maps (t, batch) -> batch; raising inside it produces a
    model-failure status.  ``raw_handler`` (when set) receives the raw
    request body and returns raw response bytes, for fault injection.
    """

    def __init__(self, handler=None, raw_handler=None):
        self.handler = handler or (lambda t, batch: np.zeros_like(batch))
        self.raw_handler = raw_handler
        self._listener = socket.create_server(("127.0.0.1", 0))
        self.port = self._listener.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    @property
    def endpoint(self) -> str:
        return f"127.0.0.1:{self.port}"

    def _serve(self):
        self._listener.settimeout(0.1)
        workers = []
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            worker = threading.Thread(target=self._session, args=(conn,),
                                      daemon=True)
            worker.start()
            workers.append(worker)
        self._listener.close()

    def _session(self, conn: socket.socket):
        conn.settimeout(5.0)
        try:
            while not self._stop.is_set():
                try:
                    body = protocol.read_frame(conn)
                except (protocol.TransportError, protocol.FrameError):
                    return
                if self.raw_handler is not None:
                    conn.sendall(self.raw_handler(body))
                    continue
                try:
                    t, batch = protocol.decode_request(body)
                except protocol.FrameError:
                    conn.sendall(protocol.encode_response(
                        None, status=protocol.STATUS_MALFORMED))
                    continue
                try:
                    out = self.handler(t, batch)
                except Exception:
                    conn.sendall(protocol.encode_response(
                        None, status=protocol.STATUS_MODEL_FAILURE))
                    continue
                conn.sendall(protocol.encode_response(out))
        finally:
            conn.close()

    def close(self):
        self._stop.set()
        self._thread.join(timeout=2.0)


@pytest.fixture()
def wire_server():
    servers = []

    def factory(handler=None, raw_handler=None) -> WireServer:
        server = WireServer(handler=handler, raw_handler=raw_handler)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.close()
