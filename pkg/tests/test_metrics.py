"""Lexical metrics against a double-derived snippet corpus.

Every corpus expectation in ``expected.json`` was produced by the
independent stdlib-based reference in ``oracles.py``; the tests check
implementation == frozen values == freshly recomputed reference, so
drift on either side is caught.
"""

import json
import pathlib

import pytest

import oracles
from arcforge.metrics import (
    ComplexityReport,
    LexError,
    MetricsError,
    StructureError,
    cyclomatic,
    loc,
    nesting_depth,
    tokenize,
    unique_ops,
    complexity_report,
)
from arcforge.model import CandidateProgram

CORPUS = pathlib.Path(__file__).parent / "fixtures" / "metrics_corpus"
EXPECTED = json.loads((CORPUS / "expected.json").read_text())
SNIPPETS = sorted(CORPUS.glob("s*.py"))


def report_of(source: str) -> dict:
    return {
        "loc": loc(source),
        "cyclomatic": cyclomatic(source),
        "nesting_depth": nesting_depth(source),
        "unique_ops": unique_ops(source),
    }


def test_corpus_has_twenty_snippets():
    assert len(SNIPPETS) == 20
    assert set(EXPECTED) == {p.name for p in SNIPPETS}


@pytest.mark.parametrize("path", SNIPPETS, ids=lambda p: p.name)
def test_corpus_matches_frozen_expectations(path):
    assert report_of(path.read_text()) == EXPECTED[path.name]


@pytest.mark.parametrize("path", SNIPPETS, ids=lambda p: p.name)
def test_reference_still_agrees_with_frozen_expectations(path):
    assert oracles.reference_report(path.read_text()) == EXPECTED[path.name]


@pytest.mark.parametrize("path", SNIPPETS, ids=lambda p: p.name)
def test_keyword_and_operator_stream_matches_reference_tokenizer(path):
    source = path.read_text()
    mine = [(t.kind, t.text) for t in tokenize(source) if t.kind in ("keyword", "operator")]
    assert mine == oracles.reference_token_stream(source)


class TestTokenizer:
    def test_indent_dedent_balance(self):
        for path in SNIPPETS:
            tokens = tokenize(path.read_text())
            assert sum(t.kind == "indent" for t in tokens) == sum(
                t.kind == "dedent" for t in tokens
            )

    def test_unterminated_string_is_a_lex_error(self):
        with pytest.raises(LexError):
            tokenize('x = "oops\n')
        with pytest.raises(LexError):
            tokenize('s = """never closed\nmore text\n')

    def test_unbalanced_indentation_is_a_structure_error(self):
        with pytest.raises(StructureError):
            tokenize("def f():\n        x = 1\n    y = 2\n")

    def test_unclosed_bracket_is_a_structure_error(self):
        with pytest.raises(StructureError):
            tokenize("x = (1 + 2\n")

    def test_string_prefixes_lex_as_single_literals(self):
        tokens = tokenize("a = r'\\d+'\nb = b'bytes'\nc = f'v={1}'\n")
        literals = [t.text for t in tokens if t.kind == "literal"]
        assert literals == ["r'\\d+'", "b'bytes'", "f'v={1}'"]


class TestMetricConventions:
    def test_adding_an_if_raises_cyclomatic_by_exactly_one(self):
        base = "def f(x):\n    return x\n"
        extended = "def f(x):\n    if x:\n        return 1\n    return x\n"
        assert cyclomatic(extended) == cyclomatic(base) + 1

    def test_straight_line_function_has_cyclomatic_one(self):
        assert cyclomatic("def f():\n    return 0\n") == 1

    def test_module_without_functions_counts_once(self):
        assert cyclomatic("x = 1\n") == 1

    def test_reindentation_does_not_change_any_metric(self):
        for path in SNIPPETS:
            source = path.read_text()
            if "\t" in source or "\\\n" in source:
                continue  # widening is only well-defined for space indents
            widened = "\n".join(
                line.replace("    ", "        ", 1) if line.startswith("    ") else line
                for line in source.splitlines()
            )
            widened = "\n".join(
                line.replace("        ", "                ")
                if line.startswith("        ")
                else line
                for line in widened.splitlines()
            )
            assert report_of(widened)["nesting_depth"] == EXPECTED[path.name]["nesting_depth"]
            assert report_of(widened)["cyclomatic"] == EXPECTED[path.name]["cyclomatic"]

    def test_tab_indents_nest_like_four_spaces(self):
        tabbed = "def f(g):\n\tfor row in g:\n\t\tif row:\n\t\t\treturn row\n"
        spaced = tabbed.replace("\t", "    ")
        assert nesting_depth(tabbed) == nesting_depth(spaced) == 3

    def test_loc_ignores_blank_and_comment_lines(self):
        source = "# header\n\nx = 1\n   \n# trailing\ny = 2\n"
        assert loc(source) == 2

    def test_nesting_zero_without_blocks(self):
        assert nesting_depth("x = 1\ny = 2\n") == 0

    def test_slicing_colon_is_not_an_operator(self):
        assert unique_ops("a = g[1:3]\n") == 1  # just the =

    def test_for_in_is_structural_but_membership_counts(self):
        assert unique_ops("for x in y:\n    pass\n") == 0
        assert unique_ops("t = a in b\n") == 2  # = and in

    def test_decorator_at_is_not_an_operator(self):
        source = "@staticmethod\ndef f():\n    return 0\n"
        assert unique_ops(source) == 0

    def test_matmul_at_still_counts(self):
        assert unique_ops("c = a @ b\n") == 2


class TestComplexityReport:
    def make_program(self, total, prelude=""):
        return CandidateProgram(
            library_prelude=prelude,
            main_source="",
            generate_input_source="",
            total_source=total,
        )

    def test_report_strips_library_prelude(self):
        prelude = "from common import *\nimport random\n"
        body = (
            "def generate_input():\n"
            "    return [[1]]\n"
            "\n"
            "def main(grid):\n"
            "    return grid\n"
        )
        report = complexity_report(self.make_program(prelude + body, prelude))
        assert report == ComplexityReport(loc=4, cyclomatic=2, nesting_depth=1, unique_ops=0)

    def test_report_counts_prelude_when_not_found(self):
        body = "def generate_input():\n    return [[1]]\n\ndef main(grid):\n    return grid\n"
        report = complexity_report(self.make_program(body, "import numpy as np\n"))
        assert report.loc == 4

    def test_missing_main_is_an_error(self):
        source = "def generate_input():\n    return [[1]]\n"
        with pytest.raises(MetricsError, match="main"):
            complexity_report(self.make_program(source))

    def test_empty_main_body_is_an_error(self):
        source = "def generate_input():\n    return [[1]]\n\ndef main(grid):\n"
        with pytest.raises(MetricsError, match="empty body"):
            complexity_report(self.make_program(source))

    def test_report_dict_round_trip(self):
        report = ComplexityReport(loc=5, cyclomatic=2, nesting_depth=1, unique_ops=3)
        assert report.as_dict() == {
            "loc": 5,
            "cyclomatic": 2,
            "nesting_depth": 1,
            "unique_ops": 3,
        }
