"""Network endpoints: a raw stream socket and a browser-facing WebSocket.

Both carry identical newline-delimited frames; the WebSocket sends one frame
per text message. Reader threads feed the coordination core directly (its
lock is the serialization point); outbound sends are guarded per connection.
"""

from __future__ import annotations

import logging
import socket
import threading

from websockets.sync.server import serve as ws_serve

from ..protocol import DecodeError, Message, MessageKind, decode_message, encode_message
from .core import CoordinationServer

logger = logging.getLogger(__name__)

DEFAULT_TCP_PORT = 7450
DEFAULT_WS_PORT = 7451
WS_PATH = "/ws"


class SocketPort:
    """Server-side endpoint over a connected TCP socket."""

    def __init__(self, sock: socket.socket, label: str, clock=None):
        self.sock = sock
        self.label = label
        self.clock = clock or (lambda: 0)
        self.on_message = None
        self.on_close = None
        self.closed = False
        self._seq = 0
        self._send_lock = threading.Lock()

    def send(self, kind: MessageKind, payload: dict) -> None:
        with self._send_lock:
            self._seq += 1
            msg = Message(kind=kind, seq=self._seq, ts=self.clock(), payload=payload)
            self.sock.sendall(encode_message(msg))

    def close(self) -> None:
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def reader_loop(self) -> None:
        try:
            with self.sock.makefile("rb") as stream:
                for line in stream:
                    try:
                        msg = decode_message(line)
                    except DecodeError as exc:
                        logger.warning("%s: undecodable frame: %s", self.label, exc)
                        continue
                    if self.on_message is not None:
                        self.on_message(msg)
        except OSError:
            pass
        finally:
            if not self.closed and self.on_close is not None:
                self.closed = True
                self.on_close()


class WebSocketPort:
    """Server-side endpoint over one WebSocket connection."""

    def __init__(self, connection, label: str, clock=None):
        self.connection = connection
        self.label = label
        self.clock = clock or (lambda: 0)
        self.on_message = None
        self.on_close = None
        self.closed = False
        self._seq = 0
        self._send_lock = threading.Lock()

    def send(self, kind: MessageKind, payload: dict) -> None:
        with self._send_lock:
            self._seq += 1
            msg = Message(kind=kind, seq=self._seq, ts=self.clock(), payload=payload)
            self.connection.send(encode_message(msg).decode("utf-8"))

    def close(self) -> None:
        self.closed = True
        self.connection.close()

    def reader_loop(self) -> None:
        try:
            for data in self.connection:
                if isinstance(data, bytes):
                    data = data.decode("utf-8", errors="replace")
                try:
                    msg = decode_message(data)
                except DecodeError as exc:
                    logger.warning("%s: undecodable frame: %s", self.label, exc)
                    continue
                if self.on_message is not None:
                    self.on_message(msg)
        except Exception:
            pass
        finally:
            if not self.closed and self.on_close is not None:
                self.closed = True
                self.on_close()


class NetworkFrontend:
    """Owns the listening sockets and hands connections to the core."""

    def __init__(self, core: CoordinationServer, host: str = "127.0.0.1",
                 tcp_port: int = DEFAULT_TCP_PORT, ws_port: int | None = DEFAULT_WS_PORT):
        self.core = core
        self.host = host
        self.tcp_port = tcp_port
        self.ws_port = ws_port
        self._listener: socket.socket | None = None
        self._ws_server = None
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        self._listener = socket.create_server((self.host, self.tcp_port))
        self.tcp_port = self._listener.getsockname()[1]
        accept = threading.Thread(target=self._accept_loop, name="tcp-accept", daemon=True)
        accept.start()
        self._threads.append(accept)
        if self.ws_port is not None:
            self._ws_server = ws_serve(self._ws_handler, self.host, self.ws_port)
            self.ws_port = self._ws_server.socket.getsockname()[1]
            ws_thread = threading.Thread(target=self._ws_server.serve_forever,
                                         name="ws-serve", daemon=True)
            ws_thread.start()
            self._threads.append(ws_thread)
        logger.info("listening on tcp %s:%s ws %s:%s%s", self.host, self.tcp_port,
                    self.host, self.ws_port, WS_PATH)

    def _accept_loop(self) -> None:
        while True:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            port = SocketPort(sock, label=f"tcp:{addr[0]}:{addr[1]}",
                              clock=self.core.scheduler.now_ms)
            self.core.attach(port)
            t = threading.Thread(target=port.reader_loop,
                                 name=f"reader-{addr[1]}", daemon=True)
            t.start()
            self._threads.append(t)

    def _ws_handler(self, connection) -> None:
        path = connection.request.path.split("?", 1)[0]
        if path != WS_PATH:
            connection.close(code=1008, reason=f"connect to {WS_PATH}")
            return
        port = WebSocketPort(connection, label=f"ws:{connection.remote_address}",
                             clock=self.core.scheduler.now_ms)
        self.core.attach(port)
        port.reader_loop()  # the library gives each connection its own thread

    def stop(self) -> None:
        if self._listener is not None:
            self._listener.close()
        if self._ws_server is not None:
            self._ws_server.shutdown()


class TcpClientPort:
    """Client-side endpoint for agents connecting over TCP (robot CLI)."""

    def __init__(self, host: str, port: int, clock=None):
        self.sock = socket.create_connection((host, port))
        self.clock = clock or (lambda: 0)
        self.on_message = None
        self.on_close = None
        self.closed = False
        self._seq = 0
        self._send_lock = threading.Lock()
        self._thread = threading.Thread(target=self._reader, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def send(self, kind: MessageKind, payload: dict) -> None:
        with self._send_lock:
            self._seq += 1
            msg = Message(kind=kind, seq=self._seq, ts=self.clock(), payload=payload)
            self.sock.sendall(encode_message(msg))

    def close(self) -> None:
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def _reader(self) -> None:
        try:
            with self.sock.makefile("rb") as stream:
                for line in stream:
                    try:
                        msg = decode_message(line)
                    except DecodeError:
                        continue
                    if self.on_message is not None:
                        self.on_message(msg)
        except OSError:
            pass
        finally:
            if not self.closed and self.on_close is not None:
                self.on_close()
