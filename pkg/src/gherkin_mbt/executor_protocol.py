"""JSON-lines protocol for driving steps in an external executor process.

One JSON object per line in each direction, UTF-8. The engine writes a
request and waits for exactly one response before writing the next::

    -> {"type":"reset","protocol":"1"}
    <- {"type":"ok"}
    -> {"type":"step","phase":"action","text":"I click on laboratory results","test":0,"index":1}
    <- {"type":"ok"}
    -> {"type":"shutdown"}
    <- {"type":"ok"}
"""
from __future__ import annotations

import json
import queue
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

PROTOCOL_VERSION = "1"
DEFAULT_TIMEOUT_MS = 10_000
PHASES = ("precondition", "action", "postcondition")


@dataclass(frozen=True)
class Reset:
    protocol: str = PROTOCOL_VERSION


@dataclass(frozen=True)
class Step:
    phase: str
    text: str
    test_index: int = 0
    path_index: int = 0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if not self.text:
            raise ValueError("step text must be nonempty")


@dataclass(frozen=True)
class Shutdown:
    pass


@dataclass(frozen=True)
class Ok:
    pass


@dataclass(frozen=True)
class Fail:
    reason: str = ""


@dataclass(frozen=True)
class Error:
    reason: str = ""


EngineMessage = Union[Reset, Step, Shutdown]
ExecutorMessage = Union[Ok, Fail, Error]


class ExecutorFault(Exception):
    """Transport-level failure talking to an executor."""


class SpawnFailed(ExecutorFault):
    pass


class ExecutorTimeout(ExecutorFault):
    pass


class HandshakeTimeout(ExecutorTimeout):
    pass


class ExecutorGone(ExecutorFault):
    """The child closed its pipes or exited."""


class MalformedFrame(ExecutorFault):
    pass


class ProtocolViolation(ExecutorFault):
    pass


def encode(msg) -> str:
    """Serialize one message to a single line (no trailing newline)."""
    if isinstance(msg, Reset):
        obj = {"type": "reset", "protocol": msg.protocol}
    elif isinstance(msg, Step):
        obj = {"type": "step", "phase": msg.phase, "text": msg.text,
               "test": msg.test_index, "index": msg.path_index}
    elif isinstance(msg, Shutdown):
        obj = {"type": "shutdown"}
    elif isinstance(msg, Ok):
        obj = {"type": "ok"}
    elif isinstance(msg, Fail):
        obj = {"type": "fail", "reason": msg.reason}
    elif isinstance(msg, Error):
        obj = {"type": "error", "reason": msg.reason}
    else:
        raise TypeError(f"not a protocol message: {msg!r}")
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _field(obj, key, kind):
    if key not in obj:
        raise MalformedFrame(f"missing field {key!r}")
    value = obj[key]
    if kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise MalformedFrame(f"field {key!r} has wrong type")
    return value


def decode(line: Union[str, bytes]):
    """Parse one frame. Raises :class:`MalformedFrame` on anything unexpected."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"invalid UTF-8: {exc}") from None
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedFrame(f"not JSON: {line[:80]!r} ({exc})") from None
    if not isinstance(obj, dict):
        raise MalformedFrame("frame is not a JSON object")
    kind = obj.get("type")
    if kind == "reset":
        return Reset(_field(obj, "protocol", str))
    if kind == "step":
        phase = _field(obj, "phase", str)
        text = _field(obj, "text", str)
        if phase not in PHASES or not text:
            raise MalformedFrame("bad step frame")
        return Step(phase, text, _field(obj, "test", int), _field(obj, "index", int))
    if kind == "shutdown":
        return Shutdown()
    if kind == "ok":
        return Ok()
    if kind == "fail":
        return Fail(_field(obj, "reason", str))
    if kind == "error":
        return Error(_field(obj, "reason", str))
    raise MalformedFrame(f"unknown frame type {kind!r}")


@dataclass(frozen=True)
class StepResult:
    status: str  # "ok" | "fail" | "error"
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def from_message(cls, msg) -> "StepResult":
        if isinstance(msg, Ok):
            return cls("ok")
        if isinstance(msg, Fail):
            return cls("fail", msg.reason)
        return cls("error", msg.reason)


class ExecutorHandle:
    """A running executor child process. Requests are strictly serialized."""

    def __init__(self, proc: subprocess.Popen, timeout_ms: int = DEFAULT_TIMEOUT_MS, log: bool = False):
        self.proc = proc
        self.timeout_ms = timeout_ms
        self.log: Optional[list] = [] if log else None
        self._lines: queue.Queue = queue.Queue()
        self._closed = False
        self._exit_status: Optional[int] = None
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        stream = self.proc.stdout
        try:
            for raw in iter(stream.readline, b""):
                self._lines.put(raw)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    @property
    def alive(self) -> bool:
        return not self._closed and self.proc.poll() is None

    def request(self, msg):
        """Send one frame and return the decoded response."""
        if self._closed:
            raise ExecutorGone("executor handle is closed")
        if self.proc.poll() is not None:
            raise ExecutorGone(f"executor exited with status {self.proc.returncode}")
        data = (encode(msg) + "\n").encode("utf-8")
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise ExecutorGone(f"cannot write to executor: {exc}") from None

        try:
            raw = self._lines.get(timeout=self.timeout_ms / 1000)
        except queue.Empty:
            # A late reply would desynchronize every later exchange.
            self._kill()
            raise ExecutorTimeout(f"no response within {self.timeout_ms} ms") from None
        if raw is None:
            self._lines.put(None)
            raise ExecutorGone("executor closed its output")
        try:
            reply = decode(raw.rstrip(b"\r\n"))
        except MalformedFrame:
            self._kill()
            raise
        if not isinstance(reply, (Ok, Fail, Error)):
            self._kill()
            raise ProtocolViolation(f"executor sent a request frame: {reply!r}")
        if isinstance(reply, Fail) and not isinstance(msg, Step):
            self._kill()
            raise ProtocolViolation("'fail' is only valid in response to a step")
        if self.log is not None:
            self.log.append((msg, reply))
        return reply

    def reset(self) -> StepResult:
        return StepResult.from_message(self.request(Reset()))

    def send_step(self, phase: str, text: str, test_index: int = 0, path_index: int = 0) -> StepResult:
        return StepResult.from_message(self.request(Step(phase, text, test_index, path_index)))

    def shutdown(self, grace_s: float = 2.0) -> Optional[int]:
        """Ask the child to exit, then terminate it if it lingers. Idempotent."""
        if self._closed:
            return self._exit_status
        if self.proc.poll() is None:
            try:
                saved, self.timeout_ms = self.timeout_ms, min(self.timeout_ms, int(grace_s * 1000))
                self.request(Shutdown())
            except ExecutorFault:
                pass
            finally:
                self.timeout_ms = saved
        self._closed = True
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self._exit_status = self.proc.wait(timeout=grace_s)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self._exit_status = self.proc.wait()
        self.proc.stdout.close()
        return self._exit_status

    def _kill(self):
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()
        self._closed = True
        self._exit_status = self.proc.returncode

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def spawn_executor(command: Sequence[str], timeout_ms: int = DEFAULT_TIMEOUT_MS, log: bool = False,
                   stderr=None) -> ExecutorHandle:
    """Start ``command`` and complete the reset handshake."""
    if not command:
        raise SpawnFailed("empty executor command")
    try:
        proc = subprocess.Popen(list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=stderr)
    except OSError as exc:
        raise SpawnFailed(f"cannot start {command[0]!r}: {exc}") from None
    handle = ExecutorHandle(proc, timeout_ms, log)
    try:
        result = handle.reset()
    except ExecutorTimeout:
        handle._kill()
        raise HandshakeTimeout(f"no handshake reply within {timeout_ms} ms") from None
    except ExecutorFault:
        handle._kill()
        raise
    if not result.ok:
        handle.shutdown()
        raise ProtocolViolation(f"handshake rejected: {result.reason}")
    return handle


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def check_conformance(command: Sequence[str], timeout_ms: int = DEFAULT_TIMEOUT_MS,
                      probe_step: Optional[tuple[str, str]] = None) -> list[CheckResult]:
    """Run the third-party executor conformance checklist against ``command``.

    ``probe_step`` is a ``(phase, text)`` the executor is known to handle;
    it is used to check that behaviour is reproducible across resets.
    """
    results: list[CheckResult] = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except ExecutorFault as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, ok, detail))
        return ok

    try:
        handle = spawn_executor(command, timeout_ms, log=True)
    except ExecutorFault as exc:
        return [CheckResult("handshake", False, f"{type(exc).__name__}: {exc}")]
    results.append(CheckResult("handshake", True, "reset answered with ok"))

    try:
        def unknown_step():
            r = handle.send_step("action", "☃ step text no executor should know ☃")
            return r.status in ("fail", "error"), f"got {r.status}"

        def reset_again():
            r1, r2 = handle.reset(), handle.reset()
            return r1.ok and r2.ok, f"{r1.status}, {r2.status}"

        def deterministic():
            if probe_step is None:
                return True, "skipped (no probe step given)"
            outs = []
            for _ in range(2):
                handle.reset()
                outs.append(handle.send_step(*probe_step))
            return outs[0] == outs[1], f"{outs[0].status} then {outs[1].status}"

        def alternation():
            log = handle.log or []
            ok = all(isinstance(req, (Reset, Step, Shutdown)) and isinstance(rsp, (Ok, Fail, Error))
                     for req, rsp in log)
            return ok, f"{len(log)} exchanges"

        check("unknown step is not ok", unknown_step)
        check("reset is repeatable", reset_again)
        check("deterministic after reset", deterministic)
        check("strict request/response alternation", alternation)
    finally:
        start = time.monotonic()
        status = handle.shutdown()
        elapsed = time.monotonic() - start
    results.append(CheckResult("clean shutdown", status == 0 and elapsed < 5,
                               f"exit status {status} after {elapsed:.2f}s"))
    return results
