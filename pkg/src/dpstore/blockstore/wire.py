"""Framed wire protocol for the remote cell array.

Every message is one frame, big-endian:

    opcode (1 byte) || address (8 bytes, 0-based) || length (4 bytes) || payload

Opcodes:

    0x01 DOWNLOAD   request: length == 0; response: payload carries the cell
    0x02 UPLOAD     request: payload is the record; response: length == 0
    0x7F ERROR      response only; payload is a UTF-8 message

Responses echo the request's opcode and address (ERROR frames echo the
address of the failing request). Addresses travel 0-based on the wire and are
converted to the 1-based convention at both endpoints. One request/response
pair is in flight per session at a time.

Error messages carry a machine-readable prefix (``address-error:`` or
``frame-error:``) so the client can re-raise the matching exception type.
"""

from __future__ import annotations

import socket
import struct

from ..errors import AddressError, FrameError, WireProtocolError

OP_DOWNLOAD = 0x01
OP_UPLOAD = 0x02
OP_ERROR = 0x7F

HEADER = struct.Struct(">BQI")
HEADER_SIZE = HEADER.size

# Guard against absurd allocations from corrupt headers.
MAX_PAYLOAD = 1 << 24

ADDRESS_ERROR_PREFIX = "address-error: "
FRAME_ERROR_PREFIX = "frame-error: "


def encode_frame(opcode: int, addr0: int, payload: bytes = b"") -> bytes:
    """Serialize one frame; ``addr0`` is the 0-based wire address."""
    if len(payload) > MAX_PAYLOAD:
        raise FrameError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(opcode, addr0, len(payload)) + payload


def recv_exactly(sock: socket.socket, count: int) -> bytes:
    """Read exactly ``count`` bytes or raise on EOF mid-frame."""
    chunks = []
    remaining = count
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise WireProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[int, int, bytes]:
    """Read one frame from the socket; returns (opcode, addr0, payload)."""
    opcode, addr0, length = HEADER.unpack(recv_exactly(sock, HEADER_SIZE))
    if length > MAX_PAYLOAD:
        raise FrameError(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    payload = recv_exactly(sock, length) if length else b""
    return opcode, addr0, payload


def raise_remote_error(message: str) -> None:
    """Map a received ERROR payload back onto the local exception types."""
    if message.startswith(ADDRESS_ERROR_PREFIX):
        raise AddressError(message[len(ADDRESS_ERROR_PREFIX):])
    if message.startswith(FRAME_ERROR_PREFIX):
        raise FrameError(message[len(FRAME_ERROR_PREFIX):])
    raise WireProtocolError(message)
