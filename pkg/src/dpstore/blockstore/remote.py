"""Client-side array backed by a remote block store.

Geometry (cell count and record size) is a deployment parameter shared
out-of-band with the server; the wire protocol itself carries none of it.
Bounds and record length are validated locally before any bytes move, and
the server enforces the same rules, so a remote array is byte-for-byte
interchangeable with a local one.
"""

from __future__ import annotations

import socket

from ..errors import WireProtocolError
from .array import ServerArray
from . import wire


class RemoteArray(ServerArray):
    """One session against a :class:`BlockStoreServer`; not thread-safe."""

    def __init__(self, host: str, port: int, cells: int, record_size: int):
        super().__init__(cells, record_size)
        self._sock = socket.create_connection((host, port))
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _roundtrip(self, opcode: int, addr0: int, payload: bytes) -> bytes:
        self._sock.sendall(wire.encode_frame(opcode, addr0, payload))
        r_opcode, r_addr0, r_payload = wire.read_frame(self._sock)
        if r_opcode == wire.OP_ERROR:
            wire.raise_remote_error(r_payload.decode("utf-8", "replace"))
        if r_opcode != opcode or r_addr0 != addr0:
            raise WireProtocolError(
                f"response (op=0x{r_opcode:02x}, addr={r_addr0}) does not match "
                f"request (op=0x{opcode:02x}, addr={addr0})"
            )
        return r_payload

    def _read_cell(self, index: int) -> bytes:
        cell = self._roundtrip(wire.OP_DOWNLOAD, index, b"")
        if len(cell) != self._record_size:
            raise WireProtocolError(
                f"server returned {len(cell)} bytes, expected {self._record_size}"
            )
        return cell

    def _write_cell(self, index: int, payload: bytes) -> None:
        self._roundtrip(wire.OP_UPLOAD, index, payload)

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "RemoteArray":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
