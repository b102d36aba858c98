"""Behavioral quality gate for candidate programs.

A candidate is a self-contained Python source with two entry points:
``generate_input()`` (stochastic, no arguments) and ``main(grid)``.
Validation runs it in a sandboxed runner session and checks, fail-fast,
in this order:

1.  every generated input is a well-formed grid (``NonWellFormedInput``),
2.  generated inputs are pairwise distinct — duplicates consume a retry
    from a bounded attempt budget (``DuplicateInput`` on exhaustion),
3.  every output is a well-formed grid (``NonWellFormedOutput``),
4.  no output is entirely background-colored (``BlackOutput``),
5.  repeated ``main`` calls reproduce the same outputs (``NonDeterministic``),
6.  recoloring commutes with the transformation: ``main(p(x)) == p(main(x))``
    for random color permutations ``p`` fixing the background
    (``NonColorInvariant`` — whether by mismatch, by a crash that only
    appears under recolored input, or by a malformed recolored output),
7.  the transformation is not the identity on every pair (``Identity``).

Any call that exceeds its deadline kills the runner (``Timeout``);
loading failures, missing entry points, and entry points that raise
map to ``EntryPointError``.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from arcforge.execution import (
    BudgetClock,
    ExecFailure,
    ExecutionBudget,
    RunnerConfig,
    Session,
    load_candidate,
    run_generate_input,
    run_main,
    spawn_runner,
)
from arcforge.grid import (
    ColorPermutation,
    Grid,
    apply_color_permutation,
    grid_hash,
    grids_equal,
    is_all_background,
    sample_permutations,
)
from arcforge.model import GridPair


class FilterVerdict(str, enum.Enum):
    """Exactly one verdict per validated candidate."""

    PASS = "Pass"
    NON_DETERMINISTIC = "NonDeterministic"
    NON_COLOR_INVARIANT = "NonColorInvariant"
    IDENTITY = "Identity"
    NON_WELL_FORMED_OUTPUT = "NonWellFormedOutput"
    BLACK_OUTPUT = "BlackOutput"
    TIMEOUT = "Timeout"
    NON_WELL_FORMED_INPUT = "NonWellFormedInput"
    DUPLICATE_INPUT = "DuplicateInput"
    ENTRY_POINT_ERROR = "EntryPointError"


REJECTING_VERDICTS = tuple(v for v in FilterVerdict if v is not FilterVerdict.PASS)


@dataclass(frozen=True)
class ValidationConfig:
    """Knobs for one validation run.

    ``pair_count`` is the number of demonstrations to collect (train
    pairs plus the single held-out test pair).  The generation attempt
    budget defaults to three per required pair.
    """

    pair_count: int = 4
    max_generation_attempts: int | None = None
    determinism_repeats: int = 2
    color_permutations: int = 3
    fix_background: bool = True
    budget: ExecutionBudget = field(default_factory=ExecutionBudget)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.pair_count < 2:
            raise ValueError("need at least two pairs (train and test)")
        if self.determinism_repeats < 2:
            raise ValueError("determinism needs at least two evaluations per input")
        if self.color_permutations < 1:
            raise ValueError("need at least one color permutation")
        if self.max_generation_attempts is not None and (
            self.max_generation_attempts < self.pair_count
        ):
            raise ValueError("attempt budget cannot be below the pair count")

    @property
    def generation_attempts(self) -> int:
        if self.max_generation_attempts is not None:
            return self.max_generation_attempts
        return 3 * self.pair_count


@dataclass(frozen=True)
class ValidationOutcome:
    verdict: FilterVerdict
    detail: str = ""
    pairs: tuple[GridPair, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.verdict is FilterVerdict.PASS


def _failure_outcome(failure: ExecFailure, stage: str) -> ValidationOutcome:
    """Map a call failure to a verdict, given which call it came from."""
    if failure.kind == "timeout":
        return ValidationOutcome(FilterVerdict.TIMEOUT, f"{stage}: {failure.detail}")
    if failure.kind == "malformed_grid":
        verdict = (
            FilterVerdict.NON_WELL_FORMED_INPUT
            if stage == "generate_input"
            else FilterVerdict.NON_WELL_FORMED_OUTPUT
        )
        return ValidationOutcome(verdict, failure.detail)
    return ValidationOutcome(FilterVerdict.ENTRY_POINT_ERROR, f"{stage}: {failure.detail}")


def collect_inputs(
    session: Session, config: ValidationConfig, clock: BudgetClock, seed_rng: random.Random
) -> list[Grid] | ValidationOutcome:
    """Draw distinct inputs, retrying duplicates within the attempt budget."""
    inputs: list[Grid] = []
    seen: set[str] = set()
    attempts = 0
    while len(inputs) < config.pair_count and attempts < config.generation_attempts:
        attempts += 1
        seed = seed_rng.randrange(2**32)
        result = run_generate_input(session, seed, clock)
        if isinstance(result, ExecFailure):
            return _failure_outcome(result, "generate_input")
        digest = grid_hash(result)
        if digest in seen:
            continue
        seen.add(digest)
        inputs.append(result)
    if len(inputs) < config.pair_count:
        return ValidationOutcome(
            FilterVerdict.DUPLICATE_INPUT,
            f"only {len(inputs)} distinct inputs after {attempts} attempts "
            f"(need {config.pair_count})",
        )
    return inputs


def compute_outputs(
    session: Session, inputs: list[Grid], clock: BudgetClock
) -> list[Grid] | ValidationOutcome:
    """First transformation pass; rejects malformed and all-black outputs."""
    outputs: list[Grid] = []
    for index, grid in enumerate(inputs):
        result = run_main(session, grid, clock)
        if isinstance(result, ExecFailure):
            return _failure_outcome(result, "main")
        if is_all_background(result):
            return ValidationOutcome(
                FilterVerdict.BLACK_OUTPUT, f"output for input {index} is entirely background"
            )
        outputs.append(result)
    return outputs


def check_determinism(
    session: Session,
    inputs: list[Grid],
    outputs: list[Grid],
    repeats: int,
    clock: BudgetClock,
) -> ValidationOutcome | None:
    """Re-run ``main`` and demand byte-identical outputs every time."""
    for _ in range(repeats - 1):
        for index, (grid, expected) in enumerate(zip(inputs, outputs)):
            result = run_main(session, grid, clock)
            if isinstance(result, ExecFailure):
                if result.kind in ("timeout", "session_dead"):
                    return _failure_outcome(result, "main (repeat)")
                return ValidationOutcome(
                    FilterVerdict.NON_DETERMINISTIC,
                    f"input {index}: succeeded once, then failed on repeat: {result.detail}",
                )
            if not grids_equal(result, expected):
                return ValidationOutcome(
                    FilterVerdict.NON_DETERMINISTIC,
                    f"input {index}: repeated evaluation produced a different output",
                )
    return None


def check_color_invariance(
    session: Session,
    inputs: list[Grid],
    outputs: list[Grid],
    permutations: list[ColorPermutation],
    clock: BudgetClock,
) -> ValidationOutcome | None:
    """Demand ``main(p(x)) == p(main(x))`` for every sampled recoloring."""
    for perm_index, perm in enumerate(permutations):
        for index, (grid, expected) in enumerate(zip(inputs, outputs)):
            recolored = run_main(session, apply_color_permutation(grid, perm), clock)
            if isinstance(recolored, ExecFailure):
                if result_is_fatal(recolored):
                    return _failure_outcome(recolored, "main (recolored)")
                return ValidationOutcome(
                    FilterVerdict.NON_COLOR_INVARIANT,
                    f"input {index}, permutation {perm_index}: "
                    f"{'malformed output' if recolored.kind == 'malformed_grid' else 'crash'} "
                    f"under recolored input: {recolored.detail}",
                )
            if not grids_equal(recolored, apply_color_permutation(expected, perm)):
                return ValidationOutcome(
                    FilterVerdict.NON_COLOR_INVARIANT,
                    f"input {index}, permutation {perm_index}: "
                    "recoloring does not commute with the transformation",
                )
    return None


def result_is_fatal(failure: ExecFailure) -> bool:
    """Failures that end the session rather than describe the candidate."""
    return failure.kind in ("timeout", "session_dead")


def check_identity(inputs: list[Grid], outputs: list[Grid]) -> ValidationOutcome | None:
    """Reject candidates whose transformation changed nothing, anywhere."""
    if all(grids_equal(x, y) for x, y in zip(inputs, outputs)):
        return ValidationOutcome(
            FilterVerdict.IDENTITY, "every output equals its input"
        )
    return None


def validate_candidate(
    code: str,
    config: ValidationConfig | None = None,
    runner: RunnerConfig | None = None,
) -> ValidationOutcome:
    """Run the whole gate over one candidate and return its verdict.

    Spawn problems raise (they indict the environment, not the
    candidate); everything the candidate itself does wrong comes back
    as a rejecting :class:`ValidationOutcome`.
    """
    config = config or ValidationConfig()
    runner = runner or RunnerConfig()
    master = random.Random(config.rng_seed)
    seed_rng = random.Random(master.randrange(2**32))
    perm_rng = random.Random(master.randrange(2**32))

    session = spawn_runner(runner)
    try:
        clock = config.budget.start()
        failure = load_candidate(session, code, clock)
        if failure is not None:
            return _failure_outcome(failure, "load")

        inputs = collect_inputs(session, config, clock, seed_rng)
        if isinstance(inputs, ValidationOutcome):
            return inputs

        outputs = compute_outputs(session, inputs, clock)
        if isinstance(outputs, ValidationOutcome):
            return outputs

        rejection = check_determinism(
            session, inputs, outputs, config.determinism_repeats, clock
        )
        if rejection is not None:
            return rejection

        permutations = sample_permutations(
            perm_rng, config.color_permutations, config.fix_background
        )
        rejection = check_color_invariance(session, inputs, outputs, permutations, clock)
        if rejection is not None:
            return rejection

        rejection = check_identity(inputs, outputs)
        if rejection is not None:
            return rejection

        pairs = tuple(GridPair(input=x, output=y) for x, y in zip(inputs, outputs))
        return ValidationOutcome(FilterVerdict.PASS, pairs=pairs)
    finally:
        session.shutdown()
