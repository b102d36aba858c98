"""Sandbox protocol and orchestration for candidate-program execution.

Candidate programs never run inside this process in production.  A
*runner* — any executable speaking the line-delimited JSON protocol
below on stdio — is spawned per candidate, asked to load code and call
its entry points, and killed outright when a deadline passes.

Protocol v1, one JSON object per line:

* runner -> orchestrator, first line: ``{"hello":"arcforge-runner","version":1}``
* request: ``{"id": <int>, "op": "load"|"generate_input"|"main"|"shutdown",
  "code"?: str, "input"?: grid, "seed"?: int}``
* response: ``{"id": <int>, "ok": bool, "grid"?: matrix,
  "error_kind"?: "exception"|"malformed"|"import_denied", "error"?: str}``

Request ids are assigned by the session, strictly monotonic, and every
response must echo the id of the request it answers.  After a timeout
the runner process is killed and the session is permanently dead.

For tests (and anywhere the real runner package is not installed) the
module ships :class:`FakeRunnerCore`, an in-process stand-in that speaks
the identical wire format.
"""

from __future__ import annotations

import builtins
import contextlib
import io
import json
import numbers
import queue
import random
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass

from arcforge.grid import Grid, validate_grid

PROTOCOL_VERSION = 1
RUNNER_NAME = "arcforge-runner"
HANDSHAKE_LINE = '{"hello":"arcforge-runner","version":1}'

OPS = ("load", "generate_input", "main", "shutdown")
ERROR_KINDS = ("exception", "malformed", "import_denied")

#: Modules candidate code may not import: filesystem, network, process
#: control, and escape hatches into the interpreter.
DENIED_MODULES = frozenset(
    {
        "os", "sys", "subprocess", "shutil", "pathlib", "tempfile", "glob",
        "socket", "ssl", "http", "urllib", "ftplib", "smtplib", "requests",
        "multiprocessing", "threading", "concurrent", "signal",
        "ctypes", "importlib", "builtins", "pickle", "shelve",
    }
)

#: Module constant a fixture can define to make the fake runner pretend
#: the named entry points never return (the real runner ignores it and
#: genuinely relies on the orchestrator's kill).
HANG_MARKER = "FAKE_HANGS"


class SpawnError(Exception):
    """Runner could not be started or did not handshake correctly."""


class ProtocolError(Exception):
    """The runner violated the wire protocol; the session is dead."""


class SessionDead(Exception):
    """A call was attempted on a session that already failed or closed."""


class CallTimeout(Exception):
    """A call exceeded its deadline; the runner was killed."""


@dataclass(frozen=True)
class RunnerRequest:
    id: int
    op: str
    code: str | None = None
    input: Grid | None = None
    seed: int | None = None

    def to_line(self) -> str:
        doc: dict = {"id": self.id, "op": self.op}
        if self.code is not None:
            doc["code"] = self.code
        if self.input is not None:
            doc["input"] = self.input
        if self.seed is not None:
            doc["seed"] = self.seed
        return json.dumps(doc, separators=(",", ":"))


@dataclass(frozen=True)
class RunnerResponse:
    id: int
    ok: bool
    grid: object = None
    error_kind: str | None = None
    error: str | None = None

    @classmethod
    def from_line(cls, line: str) -> "RunnerResponse":
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable response line: {exc}") from None
        if not isinstance(doc, dict):
            raise ProtocolError(f"response is not an object: {line[:80]!r}")
        if not isinstance(doc.get("id"), int) or isinstance(doc.get("id"), bool):
            raise ProtocolError(f"response id missing or not an int: {line[:80]!r}")
        if not isinstance(doc.get("ok"), bool):
            raise ProtocolError(f"response ok missing or not a bool: {line[:80]!r}")
        kind = doc.get("error_kind")
        if kind is not None and kind not in ERROR_KINDS:
            raise ProtocolError(f"unknown error_kind {kind!r}")
        return cls(
            id=doc["id"],
            ok=doc["ok"],
            grid=doc.get("grid"),
            error_kind=kind,
            error=doc.get("error"),
        )


@dataclass(frozen=True)
class ExecutionBudget:
    """Deadlines in seconds: per protocol call, and for a whole candidate."""

    per_call_secs: float = 30.0
    per_task_secs: float = 300.0

    def __post_init__(self) -> None:
        if self.per_call_secs <= 0 or self.per_task_secs <= 0:
            raise ValueError("budget durations must be positive")
        if self.per_call_secs > self.per_task_secs:
            raise ValueError("per-call deadline cannot exceed the per-task deadline")

    def start(self) -> "BudgetClock":
        return BudgetClock(self)


class BudgetClock:
    """Tracks the per-task deadline from the moment a candidate starts."""

    def __init__(self, budget: ExecutionBudget) -> None:
        self.budget = budget
        self._deadline = time.monotonic() + budget.per_task_secs

    def remaining(self) -> float:
        return self._deadline - time.monotonic()

    def call_timeout(self) -> float:
        """Timeout for the next call: the tighter of the two deadlines."""
        return min(self.budget.per_call_secs, self.remaining())


@dataclass(frozen=True)
class ExecFailure:
    """A candidate-level failure from one protocol call."""

    kind: str  # timeout | exception | import_denied | malformed_grid | session_dead
    detail: str = ""


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------


class TransportClosed(Exception):
    """The runner went away (EOF / broken pipe)."""


class ProcessTransport:
    """Line transport over a spawned runner subprocess.

    A background thread drains stdout into a queue so calls can wait with
    a real deadline; stderr is drained separately and kept for
    diagnostics.
    """

    def __init__(self, cmd: tuple[str, ...]) -> None:
        try:
            self.proc = subprocess.Popen(
                list(cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SpawnError(f"could not start runner {cmd!r}: {exc}") from None
        self._lines: queue.Queue = queue.Queue()
        self.stderr_tail: deque[str] = deque(maxlen=50)
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()

    def _pump_stdout(self) -> None:
        try:
            for line in self.proc.stdout:
                self._lines.put(line.rstrip("\n"))
        except ValueError:  # stream closed underneath us
            pass
        self._lines.put(None)  # EOF sentinel

    def _pump_stderr(self) -> None:
        try:
            for line in self.proc.stderr:
                self.stderr_tail.append(line.rstrip("\n"))
        except ValueError:
            pass

    def send(self, line: str) -> None:
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise TransportClosed(f"runner stdin closed: {exc}") from None

    def recv(self, timeout_s: float) -> str:
        try:
            line = self._lines.get(timeout=max(timeout_s, 0.0))
        except queue.Empty:
            self.kill()
            raise CallTimeout(f"no response within {timeout_s:.3f}s") from None
        if line is None:
            raise TransportClosed("runner closed its stdout")
        return line

    def request(self, line: str, timeout_s: float) -> str:
        self.send(line)
        return self.recv(timeout_s)

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout, self.proc.stderr):
            with contextlib.suppress(Exception):
                stream.close()

    def close(self) -> None:
        with contextlib.suppress(Exception):
            self.proc.stdin.close()
        self.kill()


class FakeTransport:
    """In-process transport around a :class:`FakeRunnerCore`."""

    def __init__(self, core: "FakeRunnerCore") -> None:
        self.core = core
        self._pending: deque[str] = deque([core.handshake_line()])

    def send(self, line: str) -> None:
        reply = self.core.handle_line(line)
        self._pending.append(reply)

    def recv(self, timeout_s: float) -> str:
        if not self._pending:
            raise TransportClosed("fake runner has nothing to say")
        line = self._pending.popleft()
        if line is _HANG:  # type: ignore[comparison-overlap]
            raise CallTimeout(f"no response within {timeout_s:.3f}s (simulated)")
        return line

    def request(self, line: str, timeout_s: float) -> str:
        self.send(line)
        return self.recv(timeout_s)

    def kill(self) -> None:
        self.core.dead = True

    def close(self) -> None:
        self.kill()


_HANG = object()  # sentinel reply meaning "this call never returns"


# ---------------------------------------------------------------------------
# the in-process fake runner
# ---------------------------------------------------------------------------


def to_plain_matrix(value: object) -> list[list[int]]:
    """Coerce a candidate's return value to a plain int matrix.

    Accepts nested lists/tuples and anything exposing ``tolist`` (array
    types).  Cell values must be integral.  Raises ``TypeError`` when the
    value has no sensible matrix form — shape problems are left for grid
    validation upstream.
    """
    if hasattr(value, "tolist"):
        value = value.tolist()
    if not isinstance(value, (list, tuple)):
        raise TypeError(f"expected a matrix, got {type(value).__name__}")
    rows = []
    for row in value:
        if hasattr(row, "tolist"):
            row = row.tolist()
        if not isinstance(row, (list, tuple)):
            raise TypeError(f"expected a row of cells, got {type(row).__name__}")
        cells = []
        for cell in row:
            if isinstance(cell, numbers.Integral):
                cells.append(int(cell))
            else:
                raise TypeError(f"cell {cell!r} is not an integer")
        rows.append(cells)
    return rows


def make_denying_import(allow_denied: bool = False):
    original_import = __import__

    def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if not allow_denied and root in DENIED_MODULES:
            raise ImportError(f"import of {root!r} is denied in the sandbox")
        return original_import(name, globals, locals, fromlist, level)

    return guarded_import


class _DeniedImport(ImportError):
    pass


class FakeRunnerCore:
    """Protocol-identical in-process runner used by the test suite.

    It executes candidate code with a denying import hook and swallowed
    stdout, mirroring the real runner's behavior.  Fixtures that would
    genuinely hang declare ``FAKE_HANGS = ("main",)`` and the core
    simulates the timeout instead of looping.
    """

    def __init__(
        self,
        common_lib: str = "",
        version: int = PROTOCOL_VERSION,
        misbehavior: str | None = None,
    ) -> None:
        self.common_lib = common_lib
        self.version = version
        self.misbehavior = misbehavior  # None | "wrong_id"
        self.namespace: dict | None = None
        self.dead = False
        self.seen_ids: list[int] = []

    def handshake_line(self) -> str:
        if self.version == PROTOCOL_VERSION:
            return HANDSHAKE_LINE
        return json.dumps({"hello": RUNNER_NAME, "version": self.version})

    # -- helpers -----------------------------------------------------------

    def _respond(self, rid: int, ok: bool, **fields) -> str:
        if self.misbehavior == "wrong_id":
            rid += 1
        doc: dict = {"id": rid, "ok": ok}
        doc.update({k: v for k, v in fields.items() if v is not None})
        return json.dumps(doc, separators=(",", ":"))

    def _error(self, rid: int, kind: str, message: str) -> str:
        return self._respond(rid, False, error_kind=kind, error=message)

    # -- dispatch ------------------------------------------------------------

    def handle_line(self, line: str):
        if self.dead:
            raise TransportClosed("fake runner was killed")
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error(-1, "malformed", f"request is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            return self._error(-1, "malformed", "request is not an object")
        rid = doc.get("id")
        if not isinstance(rid, int) or isinstance(rid, bool):
            return self._error(-1, "malformed", "request id missing or not an int")
        self.seen_ids.append(rid)
        op = doc.get("op")
        if op not in OPS:
            return self._error(rid, "malformed", f"unknown op {op!r}")
        if op == "shutdown":
            self.dead = True
            return self._respond(rid, True)
        if op == "load":
            return self._load(rid, doc.get("code"))
        return self._call_entry(rid, op, doc)

    def _load(self, rid: int, code: object) -> str:
        if self.namespace is not None:
            return self._error(rid, "exception", "candidate already loaded; one per session")
        if not isinstance(code, str):
            return self._error(rid, "malformed", "load needs a string code field")
        sandbox_builtins = dict(vars(builtins))
        sandbox_builtins["__import__"] = make_denying_import()
        sandbox_builtins.pop("open", None)
        namespace: dict = {"__builtins__": sandbox_builtins}
        try:
            with contextlib.redirect_stdout(io.StringIO()):
                if self.common_lib:
                    exec(compile(self.common_lib, "<common>", "exec"), namespace)
                exec(compile(code, "<candidate>", "exec"), namespace)
        except ImportError as exc:
            if "denied" in str(exc):
                return self._error(rid, "import_denied", str(exc))
            return self._error(rid, "exception", f"{type(exc).__name__}: {exc}")
        except BaseException as exc:
            return self._error(rid, "exception", f"{type(exc).__name__}: {exc}")
        self.namespace = namespace
        return self._respond(rid, True)

    def _call_entry(self, rid: int, op: str, doc: dict):
        if self.namespace is None:
            return self._error(rid, "exception", "no candidate loaded")
        if op in self.namespace.get(HANG_MARKER, ()):
            self.dead = True
            return _HANG
        fn = self.namespace.get(op)
        if not callable(fn):
            return self._error(rid, "exception", f"entry point {op!r} is missing or not callable")
        seed = doc.get("seed")
        try:
            with contextlib.redirect_stdout(io.StringIO()):
                if seed is not None:
                    random.seed(seed)
                if op == "generate_input":
                    result = fn()
                else:
                    result = fn(doc.get("input"))
            grid = to_plain_matrix(result)
        except ImportError as exc:
            kind = "import_denied" if "denied" in str(exc) else "exception"
            return self._error(rid, kind, f"{type(exc).__name__}: {exc}")
        except BaseException as exc:
            return self._error(rid, "exception", f"{type(exc).__name__}: {exc}")
        return self._respond(rid, True, grid=grid)


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunnerConfig:
    """How to obtain a runner: a command line, or the in-process fake."""

    cmd: tuple[str, ...] | None = None  # None => FakeRunnerCore
    common_lib: str = ""
    handshake_timeout_s: float = 10.0


class Session:
    """One live runner conversation with monotonic request ids."""

    def __init__(self, transport) -> None:
        self.transport = transport
        self.alive = True
        self._next_id = 1

    def _take_id(self) -> int:
        rid = self._next_id
        self._next_id += 1
        return rid

    def call(
        self,
        op: str,
        *,
        code: str | None = None,
        input: Grid | None = None,
        seed: int | None = None,
        timeout_s: float = 30.0,
    ) -> RunnerResponse:
        if not self.alive:
            raise SessionDead("session is no longer usable")
        request = RunnerRequest(id=self._take_id(), op=op, code=code, input=input, seed=seed)
        try:
            line = self.transport.request(request.to_line(), timeout_s)
        except CallTimeout:
            self.alive = False
            raise
        except TransportClosed as exc:
            self.alive = False
            raise SessionDead(f"runner went away: {exc}") from None
        try:
            response = RunnerResponse.from_line(line)
        except ProtocolError:
            self.alive = False
            self.transport.kill()
            raise
        if response.id != request.id:
            self.alive = False
            self.transport.kill()
            raise ProtocolError(
                f"response id {response.id} does not match request id {request.id}"
            )
        return response

    def shutdown(self) -> None:
        if self.alive:
            with contextlib.suppress(Exception):
                self.call("shutdown", timeout_s=5.0)
        self.close()

    def close(self) -> None:
        self.alive = False
        self.transport.close()

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc_info) -> None:
        self.shutdown()


def open_session(transport, handshake_timeout_s: float = 10.0) -> Session:
    """Consume and verify the runner's handshake, returning a live session."""
    try:
        line = transport.recv(handshake_timeout_s)
    except CallTimeout:
        transport.kill()
        raise SpawnError(f"no handshake within {handshake_timeout_s}s") from None
    except TransportClosed as exc:
        transport.kill()
        raise SpawnError(f"runner exited before handshaking: {exc}") from None
    try:
        doc = json.loads(line)
    except json.JSONDecodeError:
        transport.kill()
        raise SpawnError(f"handshake is not JSON: {line[:80]!r}") from None
    if not isinstance(doc, dict) or doc.get("hello") != RUNNER_NAME:
        transport.kill()
        raise SpawnError(f"unexpected handshake: {line[:80]!r}")
    if doc.get("version") != PROTOCOL_VERSION:
        transport.kill()
        raise SpawnError(
            f"protocol version mismatch: runner speaks {doc.get('version')!r}, "
            f"orchestrator speaks {PROTOCOL_VERSION}"
        )
    return Session(transport)


def spawn_runner(config: RunnerConfig) -> Session:
    """Start a runner per ``config`` and complete the handshake."""
    if config.cmd is None:
        transport = FakeTransport(FakeRunnerCore(common_lib=config.common_lib))
    else:
        transport = ProcessTransport(config.cmd)
    return open_session(transport, config.handshake_timeout_s)


# ---------------------------------------------------------------------------
# orchestration helpers
# ---------------------------------------------------------------------------


def _failure_from_exception(exc: Exception) -> ExecFailure:
    if isinstance(exc, CallTimeout):
        return ExecFailure("timeout", str(exc))
    return ExecFailure("session_dead", str(exc))


def load_candidate(session: Session, code: str, clock: BudgetClock) -> ExecFailure | None:
    timeout = clock.call_timeout()
    if timeout <= 0:
        return ExecFailure("timeout", "per-task budget exhausted before load")
    try:
        response = session.call("load", code=code, timeout_s=timeout)
    except (CallTimeout, SessionDead, ProtocolError) as exc:
        return _failure_from_exception(exc)
    if not response.ok:
        return ExecFailure(response.error_kind or "exception", response.error or "load failed")
    return None


def run_generate_input(session: Session, seed: int, clock: BudgetClock) -> Grid | ExecFailure:
    """One generator call; the result is validated as an input grid."""
    timeout = clock.call_timeout()
    if timeout <= 0:
        return ExecFailure("timeout", "per-task budget exhausted")
    try:
        response = session.call("generate_input", seed=seed, timeout_s=timeout)
    except (CallTimeout, SessionDead, ProtocolError) as exc:
        return _failure_from_exception(exc)
    if not response.ok:
        return ExecFailure(response.error_kind or "exception", response.error or "")
    verdict = validate_grid(response.grid, role="input")
    if not verdict.ok:
        return ExecFailure("malformed_grid", verdict.detail)
    return response.grid  # type: ignore[return-value]


def run_main(session: Session, input_grid: Grid, clock: BudgetClock) -> Grid | ExecFailure:
    """One transformation call; the result is validated as an output grid."""
    timeout = clock.call_timeout()
    if timeout <= 0:
        return ExecFailure("timeout", "per-task budget exhausted")
    try:
        response = session.call("main", input=input_grid, timeout_s=timeout)
    except (CallTimeout, SessionDead, ProtocolError) as exc:
        return _failure_from_exception(exc)
    if not response.ok:
        return ExecFailure(response.error_kind or "exception", response.error or "")
    verdict = validate_grid(response.grid, role="output")
    if not verdict.ok:
        return ExecFailure("malformed_grid", verdict.detail)
    return response.grid  # type: ignore[return-value]
