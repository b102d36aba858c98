"""Lexical complexity metrics for generated solution programs.

The four metrics (line count, cyclomatic complexity, nesting depth,
distinct operators) are computed from a hand-rolled token stream plus
indentation tracking rather than a full parse tree.  That keeps the
analyzer self-contained and tolerant of the mildly odd code LLMs emit,
and it is exact for the constructs those programs actually use.

Conventions pinned here (and by the test corpus):

* ``loc`` counts physical lines that are neither blank nor comment-only,
  after removing the shared library prelude.
* ``cyclomatic`` is McCabe per function aggregated by sum: one per
  function (module counts as one when no function exists) plus one per
  decision keyword ``if``/``elif``/``while``/``for``/``except``/``assert``
  and per boolean ``and``/``or``.  Ternary and comprehension clauses
  count through their ``if``/``for`` keywords.
* ``nesting_depth`` is the maximum number of simultaneously open
  indentation levels (a function body sits at depth 1).
* ``unique_ops`` counts distinct operator lexemes drawn from
  :data:`OPERATOR_LEXICON`.  The ``in`` of a ``for`` construct and a
  decorator ``@`` are structural, not operators; slicing ``:`` is not in
  the lexicon at all.
"""

from __future__ import annotations

import keyword
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:  # pragma: no cover
    from arcforge.model import CandidateProgram

TAB_WIDTH = 4

#: Operator lexemes that count toward ``unique_ops``.  Arithmetic and
#: bitwise, comparison, assignment and augmented assignment, the boolean
#: keywords, and membership ``in``.
OPERATOR_LEXICON = frozenset(
    {
        "+", "-", "*", "/", "//", "%", "**", "@",
        "&", "|", "^", "~", "<<", ">>",
        "==", "!=", "<", ">", "<=", ">=",
        "=", ":=",
        "+=", "-=", "*=", "/=", "//=", "%=", "**=",
        "&=", "|=", "^=", ">>=", "<<=",
        "and", "or", "not", "in",
    }
)

#: Keywords that open a decision point for cyclomatic complexity.
DECISION_KEYWORDS = frozenset({"if", "elif", "while", "for", "except", "assert", "and", "or"})

_OPERATOR_TABLE = sorted(
    [
        "**=", "//=", ">>=", "<<=", "...",
        "==", "!=", "<=", ">=", "->", "+=", "-=", "*=", "/=", "%=",
        "&=", "|=", "^=", "**", "//", "<<", ">>", ":=",
        "+", "-", "*", "/", "%", "@", "&", "|", "^", "~", "<", ">", "=",
        "(", ")", "[", "]", "{", "}", ",", ":", ".", ";",
    ],
    key=len,
    reverse=True,
)

_OPEN_BRACKETS = {"(": ")", "[": "]", "{": "}"}
_CLOSE_BRACKETS = {")", "]", "}"}
_STRING_PREFIXES = {"r", "b", "u", "f", "rb", "br", "rf", "fr"}


class MetricsError(Exception):
    """Raised when a source program cannot be analyzed."""


class LexError(MetricsError):
    """Raised on malformed lexical input (e.g. an unterminated string)."""


class StructureError(MetricsError):
    """Raised on inconsistent indentation or unclosed brackets."""


@dataclass(frozen=True)
class SourceToken:
    kind: str  # keyword | identifier | operator | literal | comment | newline | indent | dedent
    text: str
    line: int


@dataclass(frozen=True)
class ComplexityReport:
    loc: int
    cyclomatic: int
    nesting_depth: int
    unique_ops: int

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


def _indent_width(prefix: str) -> int:
    width = 0
    for ch in prefix:
        if ch == "\t":
            width += TAB_WIDTH - (width % TAB_WIDTH)
        else:
            width += 1
    return width


class _Lexer:
    def __init__(self, source: str) -> None:
        self.lines = source.splitlines()
        self.tokens: list[SourceToken] = []
        self.indents = [0]
        self.brackets: list[str] = []
        self.row = 0  # 0-based physical line index
        self.col = 0
        self.continuation = False  # previous line ended with a backslash
        self.line_had_code = False

    # -- emission helpers -------------------------------------------------

    def _emit(self, kind: str, text: str, line: int | None = None) -> None:
        self.tokens.append(SourceToken(kind, text, self.row + 1 if line is None else line))

    def _handle_indent(self, width: int) -> None:
        if width > self.indents[-1]:
            self.indents.append(width)
            self._emit("indent", "")
        else:
            while width < self.indents[-1]:
                self.indents.pop()
                self._emit("dedent", "")
            if width != self.indents[-1]:
                raise StructureError(f"line {self.row + 1}: unbalanced indentation")

    # -- scanning ---------------------------------------------------------

    def run(self) -> list[SourceToken]:
        while self.row < len(self.lines):
            self._scan_line()
        if self.brackets:
            raise StructureError(f"unclosed bracket {self.brackets[-1]!r} at end of source")
        while len(self.indents) > 1:
            self.indents.pop()
            self._emit("dedent", "", line=len(self.lines))
        return self.tokens

    def _scan_line(self) -> None:
        line = self.lines[self.row]
        self.col = 0
        fresh_logical = not self.brackets and not self.continuation
        self.continuation = False

        stripped = line.strip()
        if fresh_logical:
            self.line_had_code = False
            if not stripped:
                self.row += 1
                return
            if stripped.startswith("#"):
                self._emit("comment", stripped)
                self.row += 1
                return
            self._handle_indent(_indent_width(line[: len(line) - len(line.lstrip())]))
            self.col = len(line) - len(line.lstrip())

        ended_with_backslash = self._scan_tokens()
        if ended_with_backslash:
            self.continuation = True
        elif not self.brackets and self.line_had_code:
            self._emit("newline", "")
        self.row += 1

    def _scan_tokens(self) -> bool:
        """Scan the current physical line from ``self.col``; True if it ends in ``\\``.

        ``self.row`` can advance mid-scan (multi-line strings), so the
        line is re-fetched on every iteration.
        """
        while True:
            line = self.lines[self.row]
            if self.col >= len(line):
                return False
            ch = line[self.col]
            if ch in " \t":
                self.col += 1
                continue
            if ch == "\\" and self.col == len(line) - 1:
                return True
            if ch == "#":
                self._emit("comment", line[self.col :])
                self.col = len(line)
                return False
            if ch in "'\"":
                self._scan_string(prefix="")
                continue
            if ch.isdigit() or (ch == "." and self.col + 1 < len(line) and line[self.col + 1].isdigit()):
                self._scan_number()
                continue
            if ch.isalpha() or ch == "_":
                self._scan_name()
                continue
            op = self._match_operator(line)
            if op is None:
                raise LexError(f"line {self.row + 1}: unexpected character {ch!r}")
            if op in _OPEN_BRACKETS:
                self.brackets.append(op)
            elif op in _CLOSE_BRACKETS:
                if not self.brackets or _OPEN_BRACKETS[self.brackets[-1]] != op:
                    raise StructureError(f"line {self.row + 1}: unmatched {op!r}")
                self.brackets.pop()
            self._emit("operator", op)
            self.line_had_code = True
            self.col += len(op)

    def _match_operator(self, line: str) -> str | None:
        for op in _OPERATOR_TABLE:
            if line.startswith(op, self.col):
                return op
        return None

    def _scan_name(self) -> None:
        line = self.lines[self.row]
        start = self.col
        while self.col < len(line) and (line[self.col].isalnum() or line[self.col] == "_"):
            self.col += 1
        word = line[start : self.col]
        lowered = word.lower()
        if lowered in _STRING_PREFIXES and self.col < len(line) and line[self.col] in "'\"":
            self.col = start
            self._scan_string(prefix=word)
            return
        self._emit("keyword" if keyword.iskeyword(word) else "identifier", word)
        self.line_had_code = True

    def _scan_number(self) -> None:
        line = self.lines[self.row]
        start = self.col
        if line[self.col] == "0" and self.col + 1 < len(line) and line[self.col + 1] in "xXoObB":
            self.col += 2
            while self.col < len(line) and (line[self.col].isalnum() or line[self.col] == "_"):
                self.col += 1
        else:
            seen_dot = seen_exp = False
            while self.col < len(line):
                ch = line[self.col]
                if ch.isdigit() or ch == "_":
                    self.col += 1
                elif ch == "." and not seen_dot and not seen_exp:
                    seen_dot = True
                    self.col += 1
                elif ch in "eE" and not seen_exp and self.col + 1 < len(line) and (
                    line[self.col + 1].isdigit() or line[self.col + 1] in "+-"
                ):
                    seen_exp = True
                    self.col += 2
                elif ch in "jJ":
                    self.col += 1
                    break
                else:
                    break
        self._emit("literal", line[start : self.col])
        self.line_had_code = True

    def _scan_string(self, prefix: str) -> None:
        start_row = self.row
        line = self.lines[self.row]
        start = self.col
        self.col += len(prefix)
        quote = line[self.col]
        triple = line.startswith(quote * 3, self.col)
        closer = quote * 3 if triple else quote
        self.col += len(closer)
        text_parts = [line[start : self.col]]

        while True:
            line = self.lines[self.row]
            while self.col < len(line):
                if line[self.col] == "\\" and self.col + 1 < len(line):
                    text_parts.append(line[self.col : self.col + 2])
                    self.col += 2
                    continue
                if line.startswith(closer, self.col):
                    text_parts.append(closer)
                    self.col += len(closer)
                    self._emit("literal", "".join(text_parts), line=start_row + 1)
                    self.line_had_code = True
                    return
                text_parts.append(line[self.col])
                self.col += 1
            # end of physical line without a closer
            if not triple:
                if line.endswith("\\"):  # escaped newline inside a 1-quote string
                    self.row += 1
                    self.col = 0
                    text_parts.append("\n")
                    if self.row >= len(self.lines):
                        raise LexError(f"line {start_row + 1}: unterminated string")
                    continue
                raise LexError(f"line {start_row + 1}: unterminated string")
            self.row += 1
            self.col = 0
            text_parts.append("\n")
            if self.row >= len(self.lines):
                raise LexError(f"line {start_row + 1}: unterminated string")


def tokenize(source: str) -> list[SourceToken]:
    """Lex ``source`` into a flat token stream (see :class:`SourceToken`)."""
    return _Lexer(source).run()


# ---------------------------------------------------------------------------
# metrics over token streams
# ---------------------------------------------------------------------------


def loc(source: str) -> int:
    """Count physical lines that are neither blank nor comment-only."""
    lines = source.splitlines()
    touched: set[int] = set()
    for tok in tokenize(source):
        if tok.kind in ("keyword", "identifier", "operator", "literal"):
            for ln in range(tok.line, tok.line + tok.text.count("\n") + 1):
                touched.add(ln)
    return sum(1 for ln in touched if lines[ln - 1].strip())


def cyclomatic(source: str) -> int:
    """Summed per-function McCabe complexity (module body counts once)."""
    functions = 0
    decisions = 0
    for tok in tokenize(source):
        if tok.kind != "keyword":
            continue
        if tok.text == "def":
            functions += 1
        elif tok.text in DECISION_KEYWORDS:
            decisions += 1
    return max(1, functions) + decisions


def nesting_depth(source: str) -> int:
    """Maximum number of simultaneously open indentation levels."""
    depth = 0
    deepest = 0
    for tok in tokenize(source):
        if tok.kind == "indent":
            depth += 1
            deepest = max(deepest, depth)
        elif tok.kind == "dedent":
            depth -= 1
    return deepest


def unique_ops(source: str) -> int:
    """Count distinct operator lexemes from :data:`OPERATOR_LEXICON`.

    Two structural usages are excluded: the ``in`` that belongs to a
    ``for`` target (loops and comprehensions both) and a decorator ``@``
    at the start of a logical line.
    """
    seen: set[str] = set()
    pending_for = 0
    at_line_start = True
    for tok in tokenize(source):
        if tok.kind in ("newline", "indent", "dedent"):
            at_line_start = True
            continue
        if tok.kind == "comment":
            continue
        if tok.kind == "keyword":
            if tok.text == "for":
                pending_for += 1
            elif tok.text == "in" and pending_for > 0:
                pending_for -= 1
            elif tok.text in OPERATOR_LEXICON:
                seen.add(tok.text)
        elif tok.kind == "operator" and tok.text in OPERATOR_LEXICON:
            if tok.text == "@" and at_line_start:
                at_line_start = False
                continue
            seen.add(tok.text)
        at_line_start = False
    return len(seen)


# ---------------------------------------------------------------------------
# whole-program report
# ---------------------------------------------------------------------------


def _strip_prelude(total_source: str, prelude: str) -> str:
    if prelude and prelude.strip():
        idx = total_source.find(prelude)
        if idx != -1:
            return total_source[:idx] + total_source[idx + len(prelude) :]
    return total_source


def _require_entry_point(tokens: list[SourceToken], name: str) -> None:
    """Ensure ``def <name>`` exists and opens a non-empty body."""
    i = 0
    while i < len(tokens) - 1:
        if tokens[i].kind == "keyword" and tokens[i].text == "def":
            if tokens[i + 1].kind == "identifier" and tokens[i + 1].text == name:
                j = i + 2
                while j < len(tokens) and tokens[j].kind != "newline":
                    j += 1
                while j < len(tokens) and tokens[j].kind == "comment":
                    j += 1
                j += 1  # past the newline
                while j < len(tokens) and tokens[j].kind == "comment":
                    j += 1
                if j < len(tokens) and tokens[j].kind == "indent":
                    return
                raise MetricsError(f"no entry point: def {name} has an empty body")
        i += 1
    raise MetricsError(f"no entry point: def {name} not found")


def complexity_report(program: "CandidateProgram") -> ComplexityReport:
    """Compute all four metrics for a candidate program.

    The shared library prelude is removed before counting, so the report
    reflects only the code the generator actually wrote.
    """
    source = _strip_prelude(program.total_source, program.library_prelude)
    tokens = tokenize(source)
    _require_entry_point(tokens, "main")
    _require_entry_point(tokens, "generate_input")
    return ComplexityReport(
        loc=loc(source),
        cyclomatic=cyclomatic(source),
        nesting_depth=nesting_depth(source),
        unique_ops=unique_ops(source),
    )
