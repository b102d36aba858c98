"""Sandboxed execution runner speaking line-delimited JSON on stdio.

The runner hosts exactly one untrusted candidate program per process.
An orchestrator spawns it, reads one handshake line, and then sends one
JSON request per line:

* first line out: ``{"hello":"arcforge-runner","version":1}``
* request:  ``{"id": <int>, "op": "load"|"generate_input"|"main"|"shutdown",
  "code"?: str, "input"?: grid, "seed"?: int}``
* response: ``{"id": <int>, "ok": bool, "grid"?: matrix,
  "error_kind"?: "exception"|"malformed"|"import_denied", "error"?: str}``

Every response echoes the id of the request it answers; lines that are
not valid requests are answered with id ``-1`` and the loop keeps going.
The runner never times itself out — a stuck candidate is the
orchestrator's problem, solved by killing the process.

Candidate code runs in a namespace whose builtins have ``open`` removed
and ``__import__`` replaced by a denylisting wrapper; stdout and stdin
are pointed at ``os.devnull`` before the first candidate byte executes,
so stray prints cannot corrupt the protocol stream and ``input()`` sees
EOF instead of the orchestrator's requests.
"""

from __future__ import annotations

import builtins
import contextlib
import io
import json
import numbers
import os
import random
import sys

PROTOCOL_VERSION = 1
HANDSHAKE_LINE = '{"hello":"arcforge-runner","version":1}'

OPS = ("load", "generate_input", "main", "shutdown")

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


def make_denying_import():
    original_import = __import__

    def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if root in DENIED_MODULES:
            raise ImportError(f"import of {root!r} is denied in the sandbox")
        return original_import(name, globals, locals, fromlist, level)

    return guarded_import


def to_matrix(value):
    """Coerce a candidate's return value to a plain int matrix.

    Accepts nested lists/tuples and anything exposing ``tolist`` (array
    types).  Cell values must be integral.  Raises ``TypeError`` when
    the value has no sensible matrix form — shape problems are the
    orchestrator's to judge.
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


class Runner:
    """Request dispatcher for one candidate's lifetime."""

    def __init__(self, common_lib: str = "") -> None:
        self.common_lib = common_lib
        self.namespace: dict | None = None
        self.shutting_down = False

    # -- reply construction --------------------------------------------------

    @staticmethod
    def _reply(rid: int, ok: bool, **fields) -> dict:
        doc: dict = {"id": rid, "ok": ok}
        doc.update({k: v for k, v in fields.items() if v is not None})
        return doc

    @classmethod
    def _error(cls, rid: int, kind: str, message: str) -> dict:
        return cls._reply(rid, False, error_kind=kind, error=message)

    # -- dispatch --------------------------------------------------------------

    def handle_line(self, line: str) -> dict:
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error(-1, "malformed", f"request is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            return self._error(-1, "malformed", "request is not an object")
        rid = doc.get("id")
        if not isinstance(rid, int) or isinstance(rid, bool):
            return self._error(-1, "malformed", "request id missing or not an int")
        op = doc.get("op")
        if op not in OPS:
            return self._error(rid, "malformed", f"unknown op {op!r}")
        if op == "shutdown":
            self.shutting_down = True
            return self._reply(rid, True)
        if op == "load":
            return self._load(rid, doc.get("code"))
        return self._call_entry(rid, op, doc)

    def _load(self, rid: int, code) -> dict:
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
        return self._reply(rid, True)

    def _call_entry(self, rid: int, op: str, doc: dict) -> dict:
        if self.namespace is None:
            return self._error(rid, "exception", "no candidate loaded")
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
            grid = to_matrix(result)
        except ImportError as exc:
            kind = "import_denied" if "denied" in str(exc) else "exception"
            return self._error(rid, kind, f"{type(exc).__name__}: {exc}")
        except BaseException as exc:
            return self._error(rid, "exception", f"{type(exc).__name__}: {exc}")
        return self._reply(rid, True, grid=grid)


def serve(common_lib: str = "") -> int:
    """Run the request loop over this process's stdio until EOF or shutdown.

    The real stdio handles are captured for the wire and then replaced
    with ``os.devnull`` so nothing a candidate does can touch them.
    """
    wire_in = sys.stdin
    wire_out = sys.stdout
    sys.stdin = open(os.devnull, encoding="utf-8")
    sys.stdout = open(os.devnull, "w", encoding="utf-8")

    runner = Runner(common_lib)
    try:
        wire_out.write(HANDSHAKE_LINE + "\n")
        wire_out.flush()
        for line in iter(wire_in.readline, ""):
            reply = runner.handle_line(line)
            wire_out.write(json.dumps(reply, separators=(",", ":")) + "\n")
            wire_out.flush()
            if runner.shutting_down:
                break
    except BrokenPipeError:
        pass  # the orchestrator went away; nothing left to talk to
    return 0
