"""Socket service exposing a cell array over the framed wire protocol.

The server is an honest-but-curious storage node: it answers downloads and
uploads and sees only the fixed-length records the client sends. Multiple
concurrent sessions are accepted; each individual download/upload is atomic
per address (a single lock serializes array access), with no cross-address
ordering guarantees between sessions.
"""

from __future__ import annotations

import socketserver
import threading

from ..errors import AddressError, FrameError
from .array import ServerArray
from . import wire


class _SessionHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        while True:
            try:
                opcode, addr0, payload = wire.read_frame(self.request)
            except Exception:
                return  # peer closed or sent garbage; drop the session
            response = self._dispatch(opcode, addr0, payload)
            try:
                self.request.sendall(response)
            except OSError:
                return

    def _dispatch(self, opcode: int, addr0: int, payload: bytes) -> bytes:
        server: BlockStoreServer = self.server.blockstore  # type: ignore[attr-defined]
        addr = addr0 + 1
        try:
            if opcode == wire.OP_DOWNLOAD:
                with server.lock:
                    cell = server.array.download(addr)
                return wire.encode_frame(wire.OP_DOWNLOAD, addr0, cell)
            if opcode == wire.OP_UPLOAD:
                with server.lock:
                    server.array.upload(addr, payload)
                return wire.encode_frame(wire.OP_UPLOAD, addr0)
            message = wire.FRAME_ERROR_PREFIX + f"unknown opcode 0x{opcode:02x}"
        except AddressError as exc:
            message = wire.ADDRESS_ERROR_PREFIX + str(exc)
        except FrameError as exc:
            message = wire.FRAME_ERROR_PREFIX + str(exc)
        return wire.encode_frame(wire.OP_ERROR, addr0, message.encode())


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class BlockStoreServer:
    """Serve ``array`` on ``host:port``; ``port=0`` picks a free port."""

    def __init__(self, array: ServerArray, host: str = "127.0.0.1", port: int = 0):
        self.array = array
        self.lock = threading.Lock()
        self._tcp = _ThreadingServer((host, port), _SessionHandler)
        self._tcp.blockstore = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    def start(self) -> "BlockStoreServer":
        """Serve in a background thread; returns self for chaining."""
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._tcp.serve_forever()

    def stop(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "BlockStoreServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
