"""Wire format for coordinator/worker traffic.

Every frame is ``u32 length (big-endian) | u8 msg_type | payload`` where
``length`` counts the type byte plus the payload. Integers inside payloads
are little-endian, strings carry a u16 length prefix and byte blobs a u32
length prefix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from difet.errors import ProtocolError

PROTOCOL_VERSION = 1
DEFAULT_PORT = 7411
MAX_FRAME = 64 * 1024 * 1024
_LENGTH = struct.Struct(">I")


class MsgType(IntEnum):
    HELLO = 1
    HELLO_ACK = 2
    TASK_ASSIGN = 3
    TASK_RESULT = 4
    TASK_ERROR = 5
    HEARTBEAT = 6
    SHUTDOWN = 7


@dataclass(frozen=True)
class Hello:
    worker_id: int
    protocol_version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class HelloAck:
    accepted: bool


@dataclass(frozen=True)
class TaskAssign:
    task_id: int
    entry_index: int
    attempt: int
    job_spec_bytes: bytes
    image_format: int
    image_bytes: bytes


@dataclass(frozen=True)
class TaskResultMsg:
    task_id: int
    attempt: int
    result_bytes: bytes


@dataclass(frozen=True)
class TaskError:
    task_id: int
    attempt: int
    reason: str


@dataclass(frozen=True)
class Heartbeat:
    pass


@dataclass(frozen=True)
class Shutdown:
    pass


Message = Hello | HelloAck | TaskAssign | TaskResultMsg | TaskError | Heartbeat | Shutdown

_TYPES = {
    Hello: MsgType.HELLO,
    HelloAck: MsgType.HELLO_ACK,
    TaskAssign: MsgType.TASK_ASSIGN,
    TaskResultMsg: MsgType.TASK_RESULT,
    TaskError: MsgType.TASK_ERROR,
    Heartbeat: MsgType.HEARTBEAT,
    Shutdown: MsgType.SHUTDOWN,
}


class _Reader:
    def __init__(self, data: bytes, msg: str):
        self.data = data
        self.pos = 0
        self.msg = msg

    def take(self, fmt: str, field: str):
        s = struct.Struct("<" + fmt)
        if self.pos + s.size > len(self.data):
            raise ProtocolError(f"{self.msg}: truncated payload at field '{field}'")
        values = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return values[0] if len(values) == 1 else values

    def blob(self, prefix: str, field: str) -> bytes:
        n = self.take(prefix, field)
        if self.pos + n > len(self.data):
            raise ProtocolError(f"{self.msg}: truncated payload at field '{field}'")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return bytes(out)

    def done(self):
        if self.pos != len(self.data):
            raise ProtocolError(f"{self.msg}: {len(self.data) - self.pos} unexpected trailing bytes")


def _payload(msg) -> bytes:
    if isinstance(msg, Hello):
        return struct.pack("<QH", msg.worker_id, msg.protocol_version)
    if isinstance(msg, HelloAck):
        return struct.pack("<B", 1 if msg.accepted else 0)
    if isinstance(msg, TaskAssign):
        return b"".join([
            struct.pack("<QII", msg.task_id, msg.entry_index, msg.attempt),
            struct.pack("<I", len(msg.job_spec_bytes)), msg.job_spec_bytes,
            struct.pack("<B", msg.image_format),
            struct.pack("<I", len(msg.image_bytes)), msg.image_bytes,
        ])  # fmt: skip
    if isinstance(msg, TaskResultMsg):
        return struct.pack("<QII", msg.task_id, msg.attempt, len(msg.result_bytes)) + msg.result_bytes
    if isinstance(msg, TaskError):
        reason = msg.reason.encode("utf-8")
        if len(reason) > 0xFFFF:
            reason = reason[:0xFFFF].decode("utf-8", "ignore").encode("utf-8")
        return struct.pack("<QIH", msg.task_id, msg.attempt, len(reason)) + reason
    return b""


def encode(msg) -> bytes:
    try:
        mtype = _TYPES[type(msg)]
    except KeyError:
        raise ProtocolError(f"cannot encode {type(msg).__name__}") from None
    try:
        payload = _payload(msg)
    except struct.error as exc:
        raise ProtocolError(f"{mtype.name}: field out of range: {exc}") from None
    if 1 + len(payload) > MAX_FRAME:
        raise ProtocolError(f"{mtype.name}: frame of {1 + len(payload)} bytes exceeds limit")
    return _LENGTH.pack(1 + len(payload)) + bytes([mtype]) + payload


def decode_body(body: bytes):
    """Decode ``msg_type | payload`` (a frame without its length prefix)."""
    if not body:
        raise ProtocolError("empty frame body")
    try:
        mtype = MsgType(body[0])
    except ValueError:
        raise ProtocolError(f"unknown msg_type {body[0]}") from None
    r = _Reader(body[1:], mtype.name)
    if mtype == MsgType.HELLO:
        msg = Hello(r.take("Q", "worker_id"), r.take("H", "protocol_version"))
    elif mtype == MsgType.HELLO_ACK:
        msg = HelloAck(bool(r.take("B", "accepted")))
    elif mtype == MsgType.TASK_ASSIGN:
        task_id = r.take("Q", "task_id")
        entry = r.take("I", "entry_index")
        attempt = r.take("I", "attempt")
        spec = r.blob("I", "job_spec_bytes")
        fmt = r.take("B", "image_format")
        msg = TaskAssign(task_id, entry, attempt, spec, fmt, r.blob("I", "image_bytes"))
    elif mtype == MsgType.TASK_RESULT:
        task_id = r.take("Q", "task_id")
        attempt = r.take("I", "attempt")
        msg = TaskResultMsg(task_id, attempt, r.blob("I", "result_bytes"))
    elif mtype == MsgType.TASK_ERROR:
        task_id = r.take("Q", "task_id")
        attempt = r.take("I", "attempt")
        raw = r.blob("H", "reason")
        try:
            reason = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("TASK_ERROR: field 'reason' is not UTF-8") from None
        msg = TaskError(task_id, attempt, reason)
    elif mtype == MsgType.HEARTBEAT:
        msg = Heartbeat()
    else:
        msg = Shutdown()
    r.done()
    return msg


def check_length(length: int) -> None:
    if length < 1:
        raise ProtocolError("frame length must be at least 1 (type byte)")
    if length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} exceeds limit of {MAX_FRAME} bytes")


def decode(data: bytes):
    """Decode exactly one complete frame."""
    if len(data) < _LENGTH.size:
        raise ProtocolError("truncated frame: missing length prefix")
    (length,) = _LENGTH.unpack_from(data)
    check_length(length)
    if len(data) - _LENGTH.size != length:
        raise ProtocolError(f"frame declares {length} bytes but carries {len(data) - _LENGTH.size}")
    return decode_body(data[_LENGTH.size :])


def _recv_exact(sock, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock):
    """Read one message from a socket; ``None`` on a clean EOF.

    The declared length is validated before any body buffer is allocated.
    """
    head = _recv_exact(sock, _LENGTH.size)
    if head is None:
        return None
    (length,) = _LENGTH.unpack(head)
    check_length(length)
    body = _recv_exact(sock, length)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    return decode_body(body)


def write_frame(sock, msg) -> None:
    sock.sendall(encode(msg))
