"""Socket shell around the coordinator state machine, and the worker loop."""

from __future__ import annotations

import logging
import os
import queue
import random
import socket
import subprocess
import sys
import threading
import time
from collections.abc import Mapping

from difet.bundle import Bundle
from difet.engine import JobSpec, Task, TaskResult, plan_job, run_entry
from difet.errors import JobError, ProtocolError
from difet.netproto.messages import (
    DEFAULT_PORT,
    PROTOCOL_VERSION,
    Heartbeat,
    Hello,
    HelloAck,
    Shutdown,
    TaskAssign,
    TaskError,
    TaskResultMsg,
    read_frame,
    write_frame,
)
from difet.netproto.state import (
    DEFAULT_HEARTBEAT_INTERVAL,
    DEFAULT_TASK_DEADLINE,
    Close,
    CoordinatorState,
    FrameReceived,
    Send,
    WorkerDisconnected,
    WorkerJoined,
    coordinator_step,
    overdue_workers,
    DeadlineElapsed,
)

log = logging.getLogger(__name__)


def default_port() -> int:
    return int(os.environ.get("DIFET_PORT", DEFAULT_PORT))


class BundlePayloads(Mapping):
    """Read-only task id -> (format, bytes) view that reads lazily from a bundle."""

    def __init__(self, bundle: Bundle, tasks):
        self.bundle = bundle
        self.entry_of = {t.task_id: t.entry_index for t in tasks}

    def __getitem__(self, task_id):
        entry = self.entry_of[task_id]
        return int(self.bundle.entries[entry].format), self.bundle.payload(entry)

    def __iter__(self):
        return iter(self.entry_of)

    def __len__(self):
        return len(self.entry_of)


class _Conn:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.lock = threading.Lock()
        self.closed = False

    def send(self, msg) -> bool:
        with self.lock:
            if self.closed:
                return False
            try:
                write_frame(self.sock, msg)
                return True
            except OSError:
                return False

    def close(self):
        with self.lock:
            if self.closed:
                return
            self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class Coordinator:
    """Serves one job to any number of workers over TCP.

    Socket reader threads only enqueue events; a single loop applies them to
    the state machine one at a time, so scheduling state has one owner.
    ``on_step`` (if given) is called after every transition with
    ``(event, state, actions)`` from that loop.
    """

    def __init__(
        self,
        bundle_path,
        spec: JobSpec,
        host: str = "127.0.0.1",
        port: int | None = None,
        min_workers: int = 1,
        task_deadline: float = DEFAULT_TASK_DEADLINE,
        heartbeat_interval: float = DEFAULT_HEARTBEAT_INTERVAL,
        orphan_timeout: float = 30.0,
        on_step=None,
    ):
        self.bundle = Bundle(bundle_path)
        self.spec = spec
        tasks = plan_job(self.bundle, spec)
        self.state = CoordinatorState.initial(
            tasks,
            spec.to_bytes(),
            BundlePayloads(self.bundle, tasks),
            min_workers=min_workers,
            task_deadline=task_deadline,
            heartbeat_interval=heartbeat_interval,
        )
        self.orphan_timeout = orphan_timeout
        self.on_step = on_step
        self.events: queue.Queue = queue.Queue()
        self.conns: dict[int, _Conn] = {}
        self._listener = socket.create_server((host, default_port() if port is None else port))
        self.address = self._listener.getsockname()[:2]
        self._stop = threading.Event()

    @property
    def port(self) -> int:
        return self.address[1]

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(target=self._reader, args=(sock,), daemon=True).start()

    def _reader(self, sock: socket.socket):
        conn = _Conn(sock)
        worker_id = None
        try:
            hello = read_frame(sock)
            if not isinstance(hello, Hello):
                raise ProtocolError("first frame must be HELLO")
            worker_id = hello.worker_id
            if worker_id in self.conns:
                raise ProtocolError(f"worker id {worker_id} already connected")
            self.conns[worker_id] = conn
            self.events.put(WorkerJoined(worker_id, hello.protocol_version, time.monotonic()))
            while True:
                msg = read_frame(sock)
                if msg is None:
                    break
                self.events.put(FrameReceived(worker_id, msg, time.monotonic()))
        except (ProtocolError, OSError) as exc:
            log.info("connection from worker %s ended: %s", worker_id, exc)
        finally:
            if worker_id is not None and self.conns.get(worker_id) is conn:
                self.events.put(WorkerDisconnected(worker_id, time.monotonic()))
            else:
                conn.close()

    def _apply(self, event):
        self.state, actions = coordinator_step(self.state, event)
        for action in actions:
            conn = self.conns.get(action.worker_id)
            if conn is None:
                continue
            if isinstance(action, Send):
                if not conn.send(action.message):
                    log.info("send to worker %d failed", action.worker_id)
            elif isinstance(action, Close):
                log.warning("closing worker %d: %s", action.worker_id, action.reason)
                conn.close()
        if isinstance(event, WorkerDisconnected):
            conn = self.conns.pop(event.worker_id, None)
            if conn is not None:
                conn.close()
        if self.on_step is not None:
            self.on_step(event, self.state, actions)

    def serve(self, timeout: float | None = None) -> list[TaskResult]:
        """Run the job to completion and return results ordered by entry index."""
        threading.Thread(target=self._accept_loop, daemon=True).start()
        start = time.monotonic()
        orphaned_since = None
        try:
            while not self.state.complete:
                try:
                    event = self.events.get(timeout=0.05)
                except queue.Empty:
                    event = None
                if event is not None:
                    self._apply(event)
                now = time.monotonic()
                for worker_id in overdue_workers(self.state, now):
                    self._apply(DeadlineElapsed(worker_id, now))
                if self.state.workers or self.state.joined_total == 0:
                    orphaned_since = None
                elif orphaned_since is None:
                    orphaned_since = now
                elif now - orphaned_since > self.orphan_timeout:
                    raise JobError("all workers are gone and none rejoined")
                if timeout is not None and now - start > timeout:
                    raise JobError(f"job did not finish within {timeout} s")
            return self.state.results()
        finally:
            self.close()

    def close(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for conn in list(self.conns.values()):
            # let workers read SHUTDOWN before the socket goes away
            with conn.lock:
                try:
                    conn.sock.shutdown(socket.SHUT_WR)
                except OSError:
                    pass
        self.conns.clear()


def _execute_assignment(msg: TaskAssign):
    try:
        spec = JobSpec.from_bytes(msg.job_spec_bytes)
    except Exception as exc:
        return TaskError(msg.task_id, msg.attempt, f"malformed job spec: {exc}")
    task = Task(msg.task_id, msg.entry_index, msg.attempt)
    result = run_entry(task, msg.image_bytes, msg.image_format, spec)
    if not result.ok:
        return TaskError(msg.task_id, msg.attempt, result.error)
    return TaskResultMsg(msg.task_id, msg.attempt, result.to_bytes())


def worker_loop(
    sock: socket.socket,
    executor=_execute_assignment,
    heartbeat_interval: float = DEFAULT_HEARTBEAT_INTERVAL,
    worker_id: int | None = None,
    protocol_version: int = PROTOCOL_VERSION,
) -> int:
    """Serve tasks until SHUTDOWN. Returns a process exit status.

    ``executor`` maps a :class:`TaskAssign` to the reply message.
    """
    lock = threading.Lock()
    stop = threading.Event()

    def send(msg):
        with lock:
            write_frame(sock, msg)

    def beat():
        while not stop.wait(heartbeat_interval):
            try:
                send(Heartbeat())
            except OSError:
                return

    wid = random.getrandbits(64) if worker_id is None else worker_id
    try:
        send(Hello(wid, protocol_version))
        ack = read_frame(sock)
        if not isinstance(ack, HelloAck) or not ack.accepted:
            log.error("coordinator rejected this worker")
            return 1
        threading.Thread(target=beat, daemon=True).start()
        while True:
            msg = read_frame(sock)
            if msg is None:
                log.error("connection to coordinator lost")
                return 1
            if isinstance(msg, Shutdown):
                return 0
            if isinstance(msg, TaskAssign):
                send(executor(msg))
            else:
                log.warning("ignoring unexpected %s", type(msg).__name__)
    except (OSError, ProtocolError) as exc:
        log.error("worker failed: %s", exc)
        return 1
    finally:
        stop.set()
        try:
            sock.close()
        except OSError:
            pass


def connect(address: str, retries: int = 50, delay: float = 0.1) -> socket.socket:
    host, _, port = address.rpartition(":")
    if not host:
        host, port = address, str(default_port())
    last = None
    for _ in range(retries):
        try:
            sock = socket.create_connection((host, int(port)))
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            last = exc
            time.sleep(delay)
    raise OSError(f"cannot connect to {address}: {last}")


def spawn_worker(address: str, extra_args=()) -> subprocess.Popen:
    """Start ``difet worker`` as a child process."""
    cmd = [sys.executable, "-m", "difet", "worker", "--connect", address, *extra_args]
    return subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)


class RemoteRunner:
    """Runs a job through a :class:`Coordinator`.

    With ``spawn_workers`` > 0 the runner launches that many local worker
    processes; otherwise it waits for external workers to connect.
    """

    def __init__(self, host="127.0.0.1", port: int = 0, spawn_workers: int = 0,
                 min_workers: int = 1, timeout: float | None = None, on_step=None,
                 **coordinator_kwargs):  # fmt: skip
        self.host = host
        self.port = port
        self.spawn_workers = spawn_workers
        self.min_workers = max(min_workers, spawn_workers)
        self.timeout = timeout
        self.on_step = on_step
        self.coordinator_kwargs = coordinator_kwargs
        self.processes: list[subprocess.Popen] = []

    def run(self, bundle, spec, tasks, parallelism):
        coord = Coordinator(
            bundle.path, spec, self.host, self.port, min_workers=self.min_workers,
            on_step=self.on_step, **self.coordinator_kwargs,
        )  # fmt: skip
        address = f"{coord.address[0]}:{coord.port}"
        self.processes = [spawn_worker(address) for _ in range(self.spawn_workers)]
        try:
            return coord.serve(timeout=self.timeout)
        finally:
            for proc in self.processes:
                try:
                    proc.wait(timeout=10)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    proc.wait()
