"""Binary tensor wire protocol for remote noise predictors.

Frames are length-prefixed over a byte stream; every integer is
little-endian.  A request carries the step index and a float32 image
batch, a response carries a status and (on status 0) a payload of the
same element count:

    frame    := length:u32 body
    request  := "FCRE" version:u16 t:u32 batch:u32 channels:u32
                height:u32 width:u32 payload(batch*C*H*W float32)
    response := "FCRE" version:u16 status:u16 payload(float32...)

Payload order is row-major, channel-major per image, i.e. [b][c][h][w].
A non-zero status carries no payload.  Each failure mode surfaces as a
distinct exception so callers can report transport, framing, shape and
value problems separately.
"""

from __future__ import annotations

import socket
import struct

import numpy as np

MAGIC = b"FCRE"
PROTOCOL_VERSION = 1

STATUS_OK = 0
STATUS_MALFORMED = 1
STATUS_UNSUPPORTED_VERSION = 2
STATUS_MODEL_FAILURE = 3
STATUS_BAD_SHAPE = 4

# Refuse to allocate for absurd length prefixes (256 MiB of payload).
MAX_FRAME_BYTES = 256 * 1024 * 1024

_REQUEST_HEADER = struct.Struct("<4sHIIIII")
_RESPONSE_HEADER = struct.Struct("<4sHH")
_LENGTH = struct.Struct("<I")


class ProtocolError(Exception):
    """Base class for wire-protocol failures."""


class TransportError(ProtocolError):
    """Connection failures and timeouts."""


class FrameError(ProtocolError):
    """Malformed frame: bad magic, bad version, truncated payload."""


class RemoteStatusError(ProtocolError):
    """The remote end reported a non-zero status."""

    def __init__(self, status: int):
        super().__init__(f"remote predictor returned status {status}")
        self.status = status


class PayloadShapeError(ProtocolError):
    """Response payload size disagrees with the request batch shape."""


class PayloadValueError(ProtocolError):
    """Response payload contains non-finite values."""


def encode_request(t: int, batch: np.ndarray) -> bytes:
    """Frame a (B, C, H, W) float batch as a length-prefixed request."""
    arr = np.ascontiguousarray(batch, dtype="<f4")
    if arr.ndim != 4:
        raise ValueError(f"batch must be 4-D (B, C, H, W), got ndim={arr.ndim}")
    b, c, h, w = arr.shape
    if t < 0:
        raise ValueError(f"step index must be >= 0, got {t}")
    body = _REQUEST_HEADER.pack(MAGIC, PROTOCOL_VERSION, t, b, c, h, w) + arr.tobytes()
    return _LENGTH.pack(len(body)) + body


def decode_request(body: bytes) -> tuple[int, np.ndarray]:
    """Parse a request body into (t, batch); raises FrameError when malformed."""
    if len(body) < _REQUEST_HEADER.size:
        raise FrameError(f"request body too short: {len(body)} bytes")
    magic, version, t, b, c, h, w = _REQUEST_HEADER.unpack_from(body)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise FrameError(f"unsupported protocol version {version}")
    expected = b * c * h * w * 4
    payload = body[_REQUEST_HEADER.size:]
    if len(payload) != expected:
        raise FrameError(
            f"request payload is {len(payload)} bytes, header promises {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(b, c, h, w)
    return t, arr.astype(np.float64)


def encode_response(payload: np.ndarray | None, status: int = STATUS_OK) -> bytes:
    """Frame a response; a non-zero status must not carry a payload."""
    if status != STATUS_OK:
        body = _RESPONSE_HEADER.pack(MAGIC, PROTOCOL_VERSION, status)
    else:
        arr = np.ascontiguousarray(payload, dtype="<f4")
        body = _RESPONSE_HEADER.pack(MAGIC, PROTOCOL_VERSION, STATUS_OK) + arr.tobytes()
    return _LENGTH.pack(len(body)) + body


def decode_response(body: bytes, expected_shape: tuple[int, ...]) -> np.ndarray:
    """Parse a response body into a float64 array of expected_shape."""
    if len(body) < _RESPONSE_HEADER.size:
        raise FrameError(f"response body too short: {len(body)} bytes")
    magic, version, status = _RESPONSE_HEADER.unpack_from(body)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise FrameError(f"unsupported protocol version {version}")
    if status != STATUS_OK:
        raise RemoteStatusError(status)
    payload = body[_RESPONSE_HEADER.size:]
    expected = int(np.prod(expected_shape)) * 4
    if len(payload) != expected:
        raise PayloadShapeError(
            f"response payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(expected_shape)
    if not np.all(np.isfinite(arr)):
        raise PayloadValueError("response payload contains non-finite values")
    return arr


def read_exact(sock: socket.socket, n: int) -> bytes:
    """Read exactly n bytes from a socket; TransportError on EOF/timeout."""
    chunks = []
    remaining = n
    while remaining > 0:
        try:
            chunk = sock.recv(min(remaining, 1 << 20))
        except socket.timeout as exc:
            raise TransportError("timed out waiting for predictor response") from exc
        except OSError as exc:
            raise TransportError(f"socket error: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    """Read one length-prefixed frame body from a socket."""
    length = _LENGTH.unpack(read_exact(sock, _LENGTH.size))[0]
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {length} bytes exceeds limit {MAX_FRAME_BYTES}")
    return read_exact(sock, length)


def write_frame(sock: socket.socket, frame: bytes) -> None:
    try:
        sock.sendall(frame)
    except socket.timeout as exc:
        raise TransportError("timed out sending request") from exc
    except OSError as exc:
        raise TransportError(f"socket error: {exc}") from exc
