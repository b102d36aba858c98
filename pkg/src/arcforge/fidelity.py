"""Conditional success-rate bookkeeping across pipeline stages.

Each stage tallies attempts and successes independently; a stage's
attempt is only recorded for items that survived the previous stage, so
the reported rates are conditional (stage-2 rate = successes among
items that actually reached stage 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

#: Stage keys in pipeline order.
STAGES = ("abstraction", "sketch", "task", "validation")

NO_DATA = "—"  # em dash: no attempts recorded


def format_rate(successes: int, attempts: int) -> str:
    """Render a percentage with two decimals, e.g. ``"94.12%"``.

    Zero attempts renders as an em dash rather than a division error.
    """
    if attempts < 0 or successes < 0 or successes > attempts:
        raise ValueError(f"impossible tally: {successes}/{attempts}")
    if attempts == 0:
        return NO_DATA
    return f"{100 * successes / attempts:.2f}%"


@dataclass
class StageTally:
    attempts: int = 0
    successes: int = 0

    def record(self, success: bool) -> None:
        self.attempts += 1
        if success:
            self.successes += 1

    def rate(self) -> str:
        return format_rate(self.successes, self.attempts)


@dataclass
class FidelityReport:
    """Attempt/success tallies for every pipeline stage."""

    stages: dict[str, StageTally] = field(
        default_factory=lambda: {name: StageTally() for name in STAGES}
    )

    def record(self, stage: str, success: bool) -> None:
        if stage not in self.stages:
            raise KeyError(f"unknown stage {stage!r}; expected one of {STAGES}")
        self.stages[stage].record(success)

    def merge(self, other: "FidelityReport") -> "FidelityReport":
        merged = FidelityReport()
        for name in STAGES:
            mine, theirs = self.stages[name], other.stages[name]
            merged.stages[name] = StageTally(
                attempts=mine.attempts + theirs.attempts,
                successes=mine.successes + theirs.successes,
            )
        return merged

    def as_dict(self) -> dict:
        return {
            name: {
                "attempts": tally.attempts,
                "successes": tally.successes,
                "rate": tally.rate(),
            }
            for name, tally in self.stages.items()
        }

    def render_table(self) -> str:
        width = max(len(name) for name in STAGES)
        lines = [f"{'stage':<{width}}  attempts  successes  rate"]
        for name in STAGES:
            tally = self.stages[name]
            lines.append(
                f"{name:<{width}}  {tally.attempts:>8}  {tally.successes:>9}  {tally.rate()}"
            )
        return "\n".join(lines)
