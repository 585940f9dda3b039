"""Coordinator scheduling as a pure state machine.

``coordinator_step(state, event)`` returns a new state plus the actions the
I/O layer must perform; it never mutates its input and never touches a
socket. Each task id lives in exactly one of ``pending``, ``in_flight`` and
``done``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from difet.engine import Task, TaskResult
from difet.errors import DifetError
from difet.netproto.messages import (
    PROTOCOL_VERSION,
    Heartbeat,
    HelloAck,
    Shutdown,
    TaskAssign,
    TaskError,
    TaskResultMsg,
)

DEFAULT_TASK_DEADLINE = 30.0
DEFAULT_HEARTBEAT_INTERVAL = 5.0
MISSED_HEARTBEATS = 3


# -- events --


@dataclass(frozen=True)
class WorkerJoined:
    worker_id: int
    protocol_version: int = PROTOCOL_VERSION
    now: float = 0.0


@dataclass(frozen=True)
class FrameReceived:
    worker_id: int
    message: object
    now: float = 0.0


@dataclass(frozen=True)
class DeadlineElapsed:
    worker_id: int
    now: float = 0.0


@dataclass(frozen=True)
class WorkerDisconnected:
    worker_id: int
    now: float = 0.0


# -- actions --


@dataclass(frozen=True)
class Send:
    worker_id: int
    message: object


@dataclass(frozen=True)
class Close:
    worker_id: int
    reason: str


@dataclass(frozen=True)
class InFlight:
    worker_id: int
    attempt: int
    deadline: float


@dataclass(frozen=True)
class WorkerInfo:
    last_seen: float
    joined_seq: int


@dataclass(frozen=True)
class CoordinatorState:
    """Scheduler state.

    ``payloads`` maps task id to ``(image_format, image_bytes)``; it may be
    any read-only mapping, including one that loads lazily from a bundle.
    """

    tasks: Mapping[int, Task]
    job_spec_bytes: bytes
    payloads: Mapping[int, tuple[int, bytes]]
    pending: tuple[Task, ...] = ()
    in_flight: Mapping[int, InFlight] = field(default_factory=dict)
    done: Mapping[int, TaskResult] = field(default_factory=dict)
    workers: Mapping[int, WorkerInfo] = field(default_factory=dict)
    joined_total: int = 0
    min_workers: int = 1
    window: int = 1
    task_deadline: float = DEFAULT_TASK_DEADLINE
    heartbeat_interval: float = DEFAULT_HEARTBEAT_INTERVAL
    shutdown_sent: bool = False

    @classmethod
    def initial(cls, tasks, job_spec_bytes: bytes, payloads, **kwargs) -> CoordinatorState:
        tasks = tuple(tasks)
        return cls(
            tasks={t.task_id: t for t in tasks},
            job_spec_bytes=job_spec_bytes,
            payloads=payloads,
            pending=tasks,
            **kwargs,
        )

    @property
    def complete(self) -> bool:
        return len(self.done) == len(self.tasks)

    def results(self) -> list[TaskResult]:
        return [self.done[t] for t in sorted(self.done)]

    def assigned_to(self, worker_id: int) -> list[int]:
        return sorted(t for t, f in self.in_flight.items() if f.worker_id == worker_id)


def overdue_workers(state: CoordinatorState, now: float) -> list[int]:
    """Workers holding an expired task or silent for too many heartbeat intervals."""
    stale_after = MISSED_HEARTBEATS * state.heartbeat_interval
    out = {f.worker_id for f in state.in_flight.values() if f.deadline <= now}
    out.update(w for w, info in state.workers.items() if now - info.last_seen > stale_after)
    return sorted(out)


class _Draft:
    """Mutable working copy used inside a single step."""

    def __init__(self, s: CoordinatorState):
        self.s = s
        self.pending = list(s.pending)
        self.in_flight = dict(s.in_flight)
        self.done = dict(s.done)
        self.workers = dict(s.workers)
        self.joined_total = s.joined_total
        self.shutdown_sent = s.shutdown_sent
        self.out: list = []

    def freeze(self) -> CoordinatorState:
        return replace(
            self.s,
            pending=tuple(self.pending),
            in_flight=self.in_flight,
            done=self.done,
            workers=self.workers,
            joined_total=self.joined_total,
            shutdown_sent=self.shutdown_sent,
        )

    def requeue(self, worker_id: int):
        held = sorted(t for t, f in self.in_flight.items() if f.worker_id == worker_id)
        front = []
        for task_id in held:
            flight = self.in_flight.pop(task_id)
            front.append(replace(self.s.tasks[task_id], attempt=flight.attempt + 1))
        self.pending[:0] = front

    def drop_worker(self, worker_id: int):
        self.workers.pop(worker_id, None)
        self.requeue(worker_id)

    def complete(self, task_id: int, result: TaskResult):
        if task_id in self.done:
            return
        self.in_flight.pop(task_id, None)
        self.pending = [t for t in self.pending if t.task_id != task_id]
        self.done[task_id] = result

    def dispatch(self, now: float):
        if self.joined_total < self.s.min_workers:
            return
        load: dict[int, int] = {}
        for f in self.in_flight.values():
            load[f.worker_id] = load.get(f.worker_id, 0) + 1
        for worker_id in sorted(self.workers, key=lambda w: self.workers[w].joined_seq):
            while self.pending and load.get(worker_id, 0) < self.s.window:
                task = self.pending.pop(0)
                fmt, image = self.s.payloads[task.task_id]
                self.in_flight[task.task_id] = InFlight(worker_id, task.attempt, now + self.s.task_deadline)
                load[worker_id] = load.get(worker_id, 0) + 1
                self.out.append(
                    Send(
                        worker_id,
                        TaskAssign(task.task_id, task.entry_index, task.attempt, self.s.job_spec_bytes, fmt, image),
                    )
                )

    def maybe_finish(self):
        if len(self.done) == len(self.s.tasks) and not self.shutdown_sent:
            self.shutdown_sent = True
            for worker_id in sorted(self.workers, key=lambda w: self.workers[w].joined_seq):
                self.out.append(Send(worker_id, Shutdown()))


def _protocol_error(d: _Draft, worker_id: int, reason: str):
    d.out.append(Close(worker_id, f"protocol error: {reason}"))
    d.drop_worker(worker_id)


def coordinator_step(state: CoordinatorState, event) -> tuple[CoordinatorState, list]:
    d = _Draft(state)
    now = getattr(event, "now", 0.0)

    if isinstance(event, WorkerJoined):
        if event.protocol_version != PROTOCOL_VERSION:
            d.out.append(Send(event.worker_id, HelloAck(False)))
            d.out.append(Close(event.worker_id, f"unsupported protocol version {event.protocol_version}"))
            return d.freeze(), d.out
        if event.worker_id in d.workers:
            _protocol_error(d, event.worker_id, "duplicate worker id")
        else:
            d.workers[event.worker_id] = WorkerInfo(now, d.joined_total)
            d.joined_total += 1
            d.out.append(Send(event.worker_id, HelloAck(True)))
            if d.shutdown_sent:
                d.out.append(Send(event.worker_id, Shutdown()))
    elif isinstance(event, (DeadlineElapsed, WorkerDisconnected)):
        if isinstance(event, DeadlineElapsed) and event.worker_id in d.workers:
            d.out.append(Close(event.worker_id, "deadline elapsed"))
        d.drop_worker(event.worker_id)
    elif isinstance(event, FrameReceived):
        _on_frame(d, event)
    else:
        raise TypeError(f"unknown event {event!r}")

    d.dispatch(now)
    d.maybe_finish()
    return d.freeze(), d.out


def _on_frame(d: _Draft, event: FrameReceived):
    wid, msg = event.worker_id, event.message
    if wid not in d.workers:
        d.out.append(Close(wid, "frame from unregistered worker"))
        return
    d.workers[wid] = replace(d.workers[wid], last_seen=event.now)
    if isinstance(msg, Heartbeat):
        for task_id, f in list(d.in_flight.items()):
            if f.worker_id == wid:
                d.in_flight[task_id] = replace(f, deadline=event.now + d.s.task_deadline)
    elif isinstance(msg, (TaskResultMsg, TaskError)):
        task = d.s.tasks.get(msg.task_id)
        if task is None:
            _protocol_error(d, wid, f"result for unknown task {msg.task_id}")
            return
        if msg.task_id in d.done:
            return  # duplicate or late: the first accepted result stands
        if isinstance(msg, TaskError):
            result = TaskResult(task.entry_index, error=msg.reason)
        else:
            try:
                result = TaskResult.from_bytes(msg.result_bytes)
            except DifetError as exc:
                _protocol_error(d, wid, str(exc))
                return
            if result.entry_index != task.entry_index:
                _protocol_error(d, wid, f"result for task {msg.task_id} names entry {result.entry_index}")
                return
        d.complete(msg.task_id, result)
    else:
        _protocol_error(d, wid, f"unexpected {type(msg).__name__} from worker")
