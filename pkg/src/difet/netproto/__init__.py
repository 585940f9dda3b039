"""Coordinator/worker protocol: framing, scheduling state machine, sockets."""

from difet.netproto.messages import (
    DEFAULT_PORT,
    MAX_FRAME,
    PROTOCOL_VERSION,
    Heartbeat,
    Hello,
    HelloAck,
    MsgType,
    Shutdown,
    TaskAssign,
    TaskError,
    TaskResultMsg,
    decode,
    encode,
    read_frame,
    write_frame,
)
from difet.netproto.server import Coordinator, RemoteRunner, connect, spawn_worker, worker_loop
from difet.netproto.state import (
    Close,
    CoordinatorState,
    DeadlineElapsed,
    FrameReceived,
    Send,
    WorkerDisconnected,
    WorkerJoined,
    coordinator_step,
    overdue_workers,
)

__all__ = [
    "DEFAULT_PORT",
    "MAX_FRAME",
    "PROTOCOL_VERSION",
    "Close",
    "Coordinator",
    "CoordinatorState",
    "DeadlineElapsed",
    "FrameReceived",
    "Heartbeat",
    "Hello",
    "HelloAck",
    "MsgType",
    "RemoteRunner",
    "Send",
    "Shutdown",
    "TaskAssign",
    "TaskError",
    "TaskResultMsg",
    "WorkerDisconnected",
    "WorkerJoined",
    "connect",
    "coordinator_step",
    "decode",
    "encode",
    "overdue_workers",
    "read_frame",
    "spawn_worker",
    "worker_loop",
    "write_frame",
]
