import socket
import struct
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_bundle
from difet.engine import JobSpec, LocalRunner, Task, TaskResult, run_job
from difet.detect import Keypoint
from difet.errors import ProtocolError
from difet.featio import format_result
from difet.netproto import (
    MAX_FRAME,
    Close,
    Coordinator,
    CoordinatorState,
    DeadlineElapsed,
    FrameReceived,
    Heartbeat,
    Hello,
    HelloAck,
    RemoteRunner,
    Send,
    Shutdown,
    TaskAssign,
    TaskError,
    TaskResultMsg,
    WorkerDisconnected,
    WorkerJoined,
    coordinator_step,
    decode,
    encode,
    overdue_workers,
    read_frame,
    worker_loop,
)
from difet.netproto.server import default_port
from strategies import messages


class TestFraming:
    def test_heartbeat_bytes(self):
        assert encode(Heartbeat()) == bytes([0, 0, 0, 1, 6])
        assert encode(Shutdown()) == bytes([0, 0, 0, 1, 7])

    def test_hello_layout(self):
        assert encode(Hello(1, 1)) == bytes([0, 0, 0, 11, 1]) + struct.pack("<QH", 1, 1)

    @given(messages)
    def test_round_trip(self, msg):
        assert decode(encode(msg)) == msg

    def test_oversize_rejected_before_allocation(self):
        a, b = socket.socketpair()
        try:
            a.sendall(struct.pack(">I", 100 * 1024 * 1024) + b"\x06")
            with pytest.raises(ProtocolError, match="exceeds"):
                read_frame(b)
        finally:
            a.close()
            b.close()
        assert MAX_FRAME == 64 * 1024 * 1024

    def test_unknown_type(self):
        with pytest.raises(ProtocolError, match="msg_type 9"):
            decode(bytes([0, 0, 0, 1, 9]))

    def test_truncated_names_field(self):
        frame = encode(TaskAssign(1, 2, 3, b"spec", 1, b"img"))
        body = frame[4:-2]
        with pytest.raises(ProtocolError, match="image_bytes"):
            decode(struct.pack(">I", len(body)) + body)

    def test_length_mismatch_and_trailing(self):
        with pytest.raises(ProtocolError):
            decode(bytes([0, 0, 0, 2, 6]))
        with pytest.raises(ProtocolError, match="trailing"):
            decode(bytes([0, 0, 0, 2, 6, 0]))

    def test_eof_and_mid_frame(self):
        a, b = socket.socketpair()
        a.close()
        assert read_frame(b) is None
        b.close()
        a, b = socket.socketpair()
        a.sendall(bytes([0, 0, 0, 5, 4]))
        a.close()
        with pytest.raises(ProtocolError, match="mid-frame"):
            read_frame(b)
        b.close()


# -- pure state machine --

SPEC = b"{}"


def state_for(n, **kw):
    tasks = [Task(i, i, 0) for i in range(n)]
    return CoordinatorState.initial(tasks, SPEC, {i: (2, b"img%d" % i) for i in range(n)}, **kw)


def result_for(task_id, attempt=0, n_kps=1):
    r = TaskResult(task_id, (Keypoint(task_id, 0, 1),) * n_kps)
    return TaskResultMsg(task_id, attempt, r.to_bytes())


def assigns(actions):
    return [(a.worker_id, a.message.task_id, a.message.attempt) for a in actions
            if isinstance(a, Send) and isinstance(a.message, TaskAssign)]  # fmt: skip


def conserved(s):
    ids = [t.task_id for t in s.pending] + list(s.in_flight) + list(s.done)
    return sorted(ids) == sorted(s.tasks)


class TestStateMachine:
    def test_sequential_walk(self):
        s, out = coordinator_step(state_for(3), WorkerJoined(1))
        assert out[0] == Send(1, HelloAck(True)) and assigns(out) == [(1, 0, 0)]
        for t in range(3):
            s, out = coordinator_step(s, FrameReceived(1, result_for(t)))
            assert conserved(s)
            if t < 2:
                assert assigns(out) == [(1, t + 1, 0)]
        assert s.complete and out == [Send(1, Shutdown())]
        assert [r.entry_index for r in s.results()] == [0, 1, 2]

    def test_step_is_pure(self):
        s0 = state_for(2)
        s1, _ = coordinator_step(s0, WorkerJoined(1))
        assert s0.pending == tuple(Task(i, i) for i in range(2)) and not s0.in_flight and not s0.workers
        assert s1 is not s0

    def test_dead_worker_requeues_to_front(self):
        s = state_for(8)
        s, _ = coordinator_step(s, WorkerJoined(1))
        s, _ = coordinator_step(s, WorkerJoined(2))
        for t in range(2):
            wid = s.in_flight[t].worker_id
            s, _ = coordinator_step(s, FrameReceived(wid, result_for(t)))
        # worker 1 holds one task, worker 2 holds another
        held = s.assigned_to(1)
        s, out = coordinator_step(s, WorkerDisconnected(1))
        assert held and s.pending[0].task_id == held[0] and s.pending[0].attempt == 1
        assert conserved(s)
        # worker 2 finishes its task and picks up the requeued one
        (mine,) = s.assigned_to(2)
        s, out = coordinator_step(s, FrameReceived(2, result_for(mine)))
        assert assigns(out) == [(2, held[0], 1)]

    def test_deadline_closes_and_requeues(self):
        s, _ = coordinator_step(state_for(2, task_deadline=10), WorkerJoined(1, now=0))
        assert overdue_workers(s, 9.9) == [] and overdue_workers(s, 10) == [1]
        s, out = coordinator_step(s, DeadlineElapsed(1, now=10))
        assert any(isinstance(a, Close) for a in out) and s.pending[0] == Task(0, 0, 1)

    def test_heartbeat_renews_deadline(self):
        s, _ = coordinator_step(state_for(1, task_deadline=10), WorkerJoined(1, now=0))
        s, out = coordinator_step(s, FrameReceived(1, Heartbeat(), now=8))
        assert out == [] and s.in_flight[0].deadline == 18

    def test_silent_worker_overdue(self):
        s, _ = coordinator_step(state_for(0, heartbeat_interval=1), WorkerJoined(1, now=0))
        assert overdue_workers(s, 3.0) == [] and overdue_workers(s, 3.1) == [1]

    def test_duplicate_result_ignored(self):
        s = state_for(3)
        s, _ = coordinator_step(s, WorkerJoined(1))
        s, _ = coordinator_step(s, FrameReceived(1, result_for(0)))
        s, _ = coordinator_step(s, FrameReceived(1, result_for(1)))
        before = dict(s.done)
        s, out = coordinator_step(s, FrameReceived(1, result_for(1, n_kps=5)))
        assert dict(s.done) == before and out == [] and len(s.done[1].keypoints) == 1

    def test_unknown_task_closes(self):
        s, _ = coordinator_step(state_for(2), WorkerJoined(1))
        s, out = coordinator_step(s, FrameReceived(1, result_for(99)))
        assert out and isinstance(out[0], Close) and 1 not in s.workers
        assert s.pending[0] == Task(0, 0, 1)

    def test_mismatched_entry_closes(self):
        s, _ = coordinator_step(state_for(2), WorkerJoined(1))
        bad = TaskResultMsg(0, 0, TaskResult(1).to_bytes())
        _, out = coordinator_step(s, FrameReceived(1, bad))
        assert isinstance(out[0], Close)

    def test_task_error_recorded(self):
        s, _ = coordinator_step(state_for(1), WorkerJoined(1))
        s, _ = coordinator_step(s, FrameReceived(1, TaskError(0, 0, "image decode failed: x")))
        assert s.complete and s.done[0].error == "image decode failed: x"

    def test_version_reject(self):
        s, out = coordinator_step(state_for(1), WorkerJoined(1, protocol_version=2))
        assert out[0] == Send(1, HelloAck(False)) and isinstance(out[1], Close) and not s.workers

    def test_min_workers_gate(self):
        s, out = coordinator_step(state_for(4, min_workers=2), WorkerJoined(1))
        assert assigns(out) == []
        s, out = coordinator_step(s, WorkerJoined(2))
        assert assigns(out) == [(1, 0, 0), (2, 1, 0)]

    def test_empty_job(self):
        s, out = coordinator_step(state_for(0), WorkerJoined(1))
        assert s.complete and out == [Send(1, HelloAck(True)), Send(1, Shutdown())]


@st.composite
def schedules(draw):
    return draw(st.lists(st.tuples(st.sampled_from(["join", "result", "dup", "die", "beat", "deadline"]),
                                   st.integers(0, 3)), max_size=60))  # fmt: skip


@settings(max_examples=200)
@given(st.integers(1, 10), schedules())
def test_random_schedules_conserve_and_single_assign(n, schedule):
    s = state_for(n)
    now = 0.0
    for kind, w in schedule:
        now += 1
        if kind == "join" and w not in s.workers:
            ev = WorkerJoined(w, now=now)
        elif kind in ("result", "dup") and s.assigned_to(w):
            t = s.assigned_to(w)[0]
            ev = FrameReceived(w, result_for(t, s.in_flight[t].attempt), now)
        elif kind == "dup" and s.done:
            t = sorted(s.done)[0]
            ev = FrameReceived(w, result_for(t), now) if w in s.workers else WorkerJoined(w, now=now)
        elif kind == "die":
            ev = WorkerDisconnected(w, now)
        elif kind == "beat" and w in s.workers:
            ev = FrameReceived(w, Heartbeat(), now)
        elif kind == "deadline":
            ev = DeadlineElapsed(w, now)
        else:
            continue
        done_before = dict(s.done)
        s, _ = coordinator_step(s, ev)
        assert conserved(s)
        assert all(f.worker_id in s.workers for f in s.in_flight.values())
        assert all(len(s.assigned_to(w)) <= 1 for w in s.workers)
        assert all(s.done[k] is v for k, v in done_before.items())
    # survivors leave, a fresh worker drains: everything finishes exactly once
    for w in list(s.workers):
        s, _ = coordinator_step(s, WorkerDisconnected(w, now))
        assert conserved(s)
    s, _ = coordinator_step(s, WorkerJoined(99, now=now))
    while not s.complete:
        (t,) = s.assigned_to(99)
        s, _ = coordinator_step(s, FrameReceived(99, result_for(t, s.in_flight[t].attempt)))
        assert conserved(s)
    assert [r.entry_index for r in s.results()] == list(range(n))


# -- sockets --


def fake_coordinator(sock, *messages_to_send):
    """Accept HELLO, ack it, send the given frames and collect replies until EOF."""
    replies = []
    hello = read_frame(sock)
    sock.sendall(encode(HelloAck(True)))
    for m in messages_to_send:
        sock.sendall(encode(m))
        if isinstance(m, TaskAssign):
            while True:
                r = read_frame(sock)
                if not isinstance(r, Heartbeat):
                    replies.append(r)
                    break
    return hello, replies


def run_worker_against(*frames, **kw):
    a, b = socket.socketpair()
    status = {}
    t = threading.Thread(target=lambda: status.setdefault("rc", worker_loop(a, heartbeat_interval=0.05, **kw)))
    t.start()
    try:
        hello, replies = fake_coordinator(b, *frames)
        t.join(timeout=30)
        tail = b.recv(1 << 16)
        return hello, replies, status.get("rc"), tail
    finally:
        b.close()


def test_worker_garbage_image_reports_decode(bundle_factory):
    path, _ = bundle_factory(1)
    spec = JobSpec.for_bundle(path, "harris").to_bytes()
    hello, replies, rc, _ = run_worker_against(TaskAssign(4, 4, 0, spec, 2, b"junk"), Shutdown(), worker_id=5)
    assert hello == Hello(5, 1)
    (err,) = replies
    assert isinstance(err, TaskError) and err.task_id == 4 and "decode" in err.reason
    assert rc == 0


def test_worker_malformed_spec():
    _, replies, rc, _ = run_worker_against(TaskAssign(0, 0, 2, b"{nope", 2, b""), Shutdown())
    assert isinstance(replies[0], TaskError) and replies[0].attempt == 2 and rc == 0


def test_worker_shutdown_sends_nothing_more():
    _, replies, rc, tail = run_worker_against(Shutdown())
    assert rc == 0 and replies == []
    # anything still buffered can only be heartbeats
    assert tail.replace(encode(Heartbeat()), b"") == b""


def test_worker_rejected_exits_1():
    a, b = socket.socketpair()
    rc = {}
    t = threading.Thread(target=lambda: rc.setdefault("rc", worker_loop(a, protocol_version=2)))
    t.start()
    assert read_frame(b).protocol_version == 2
    b.sendall(encode(HelloAck(False)))
    t.join(timeout=10)
    b.close()
    assert rc["rc"] == 1


def test_worker_connection_lost_exits_1():
    a, b = socket.socketpair()
    rc = {}
    t = threading.Thread(target=lambda: rc.setdefault("rc", worker_loop(a)))
    t.start()
    read_frame(b)
    b.sendall(encode(HelloAck(True)))
    b.close()
    t.join(timeout=10)
    assert rc["rc"] == 1


def test_default_port(monkeypatch):
    monkeypatch.delenv("DIFET_PORT", raising=False)
    assert default_port() == 7411
    monkeypatch.setenv("DIFET_PORT", "9001")
    assert default_port() == 9001


def kp_texts(results, alg):
    return [format_result(r, alg) for r in results]


def test_coordinator_in_process_workers(tmp_path):
    path, _ = make_bundle(tmp_path / "b.fib", 8, size=(64, 64))
    spec = JobSpec.for_bundle(path, "harris")
    ref, _ = run_job(path, spec, LocalRunner("thread"), 1)
    coord = Coordinator(path, spec, port=0, min_workers=2)
    rcs = []

    def worker():
        s = socket.create_connection(coord.address)
        rcs.append(worker_loop(s, heartbeat_interval=0.2))

    threads = [threading.Thread(target=worker) for _ in range(2)]
    for t in threads:
        t.start()
    got = coord.serve(timeout=60)
    for t in threads:
        t.join(timeout=10)
    assert kp_texts(got, "harris") == kp_texts(ref, "harris")
    assert rcs == [0, 0]


@pytest.mark.slow
def test_remote_runner_two_processes(tmp_path):
    path, _ = make_bundle(tmp_path / "b.fib", 8, size=(64, 64))
    spec = JobSpec.for_bundle(path, "harris")
    ref, _ = run_job(path, spec, LocalRunner("thread"), 1)
    runner = RemoteRunner(spawn_workers=2, timeout=120)
    got, rep = run_job(path, spec, runner, 2)
    assert kp_texts(got, "harris") == kp_texts(ref, "harris")
    assert [p.returncode for p in runner.processes] == [0, 0]
