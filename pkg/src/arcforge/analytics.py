"""Dataset-level measurements: size statistics, task typing, analogy overlap.

Everything here consumes finished tasks; nothing feeds back into the
synthesis pipeline.
"""

from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from arcforge.gateway import ChatRequest, ExtractionError, extract_json
from arcforge.model import ArcTask, TaskSketch
from arcforge.pipeline import load_template
from arcforge.retrieval import cosine_similarity

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# size statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatSummary:
    """Mean and spread of one measured quantity."""

    mean: float
    std: float
    count: int

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "count": self.count}


@dataclass(frozen=True)
class DatasetStats:
    task_count: int
    pair_count: int
    input_cells: StatSummary
    output_cells: StatSummary
    colors: StatSummary

    def as_dict(self) -> dict:
        return {
            "task_count": self.task_count,
            "pair_count": self.pair_count,
            "input_cells": self.input_cells.as_dict(),
            "output_cells": self.output_cells.as_dict(),
            "colors": self.colors.as_dict(),
        }


def _summarize(samples: Sequence[float], sample_std: bool) -> StatSummary:
    if sample_std:
        if len(samples) < 2:
            raise ValueError("sample standard deviation needs at least two samples")
        spread = statistics.stdev(samples)
    else:
        spread = statistics.pstdev(samples)
    return StatSummary(mean=statistics.fmean(samples), std=spread, count=len(samples))


def _cell_count(grid) -> int:
    return len(grid) * len(grid[0])


def _distinct_colors(grid) -> int:
    return len({value for row in grid for value in row})


def dataset_stats(tasks: Iterable[ArcTask], sample_std: bool = False) -> DatasetStats:
    """Cell-count and color statistics over every grid in ``tasks``.

    Inputs and outputs are sampled per pair; the color count is sampled
    per grid (inputs and outputs pooled), counting distinct cell values
    including the background when present.  The spread is the population
    standard deviation unless ``sample_std`` asks for the n-1 form.
    """
    input_cells: list[float] = []
    output_cells: list[float] = []
    colors: list[float] = []
    task_count = 0
    pair_count = 0
    for task in tasks:
        task_count += 1
        for pair in task.pairs:
            pair_count += 1
            input_cells.append(_cell_count(pair.input))
            output_cells.append(_cell_count(pair.output))
            colors.append(_distinct_colors(pair.input))
            colors.append(_distinct_colors(pair.output))
    if task_count == 0:
        raise ValueError("no tasks to summarize")
    return DatasetStats(
        task_count=task_count,
        pair_count=pair_count,
        input_cells=_summarize(input_cells, sample_std),
        output_cells=_summarize(output_cells, sample_std),
        colors=_summarize(colors, sample_std),
    )


# ---------------------------------------------------------------------------
# task typing
# ---------------------------------------------------------------------------

#: The fixed motion-category vocabulary tasks are sorted into.  The
#: classifier may only answer with these exact labels; anything else is
#: dropped with a warning.
TASK_TYPES: tuple[str, ...] = (
    "Rotational Symmetry & Perspective Spin",
    "Kaleidoscope & Symmetry Expansion",
    "Pendulum & Pivot Rotation",
    "Walking & Forward Locomotion",
    "Falling & Stacking Blocks",
    "Periodic Movement & Horizontal Loop",
    "Color Flicker & Blinking",
    "Gradient & Layered Color Changes",
    "Glitch & Breaking Patterns",
    "Wave & Diagonal Flow",
    "Gravity & Liquid Flow",
    "Slow Environmental Change",
    "Scaling Burst & Shape Morphing",
    "Attach/Detach Clusters",
    "Layer Separation & Merging",
    "Text & Punctuation Transformation",
    "Minimal Motion Overlay",
    "Static Verification & No Change",
    "Fractal Expansion & Self-Similar Repeats",
    "Sequential Pattern Growth & Transition",
)


def type_list_block() -> str:
    return "\n".join(f"- {label}" for label in TASK_TYPES)


def classify_types(provider, sketch: TaskSketch) -> list[str]:
    """Ask the classifier stage which of :data:`TASK_TYPES` fit a sketch.

    Returns the verbatim labels the model picked, order preserved,
    duplicates and unknown labels dropped (the latter with a warning).
    A sketch with nothing to classify yields ``[]`` without a call.
    """
    if not sketch.concepts and not sketch.description:
        return []
    template = load_template("classifier")
    system, user = template.render(
        type_list=type_list_block(),
        concepts=", ".join(sketch.concepts),
        description=sketch.description,
    )
    reply = provider.complete(ChatRequest(stage="classifier", system=system, user=user))
    doc = extract_json(reply.text)
    value = doc.get("types")
    if not isinstance(value, list):
        raise ExtractionError('classifier reply carries no "types" list')
    kept: list[str] = []
    for item in value:
        if item in TASK_TYPES:
            if item not in kept:
                kept.append(item)
        else:
            logger.warning("classifier answered with unknown type %r; dropped", item)
    return kept


def type_histogram(provider, tasks: Iterable[ArcTask]) -> dict[str, int]:
    """Count how many tasks fall under each label (a task may hit several)."""
    counts = {label: 0 for label in TASK_TYPES}
    for task in tasks:
        sketch = task.sketch or TaskSketch(concepts=(), description=task.analogy)
        for label in classify_types(provider, sketch):
            counts[label] += 1
    return counts


# ---------------------------------------------------------------------------
# analogy overlap
# ---------------------------------------------------------------------------


def embed_similarity(embedder, text_a: str, text_b: str) -> float:
    """Cosine similarity of two texts under ``embedder``."""
    for label, text in (("first", text_a), ("second", text_b)):
        if not text.strip():
            raise ValueError(f"the {label} text is empty; its embedding would be a zero vector")
    vec_a = embedder.embed(text_a)
    vec_b = embedder.embed(text_b)
    return cosine_similarity(vec_a.values, vec_b.values)


_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def parse_judge_score(text: str) -> float:
    """First number in ``text`` that lies inside [0, 1].

    The judge is told to answer with a bare number, but replies often
    arrive wrapped in prose; any stray numbers outside the valid range
    (years, counts) are skipped rather than treated as scores.
    """
    for match in _NUMBER.finditer(text):
        value = float(match.group())
        if 0.0 <= value <= 1.0:
            return value
    raise ExtractionError(f"no score in [0, 1] found in judge reply: {text[:80]!r}")


def judge_similarity(provider, analogy_a: str, analogy_b: str) -> float:
    """Model-judged similarity of two analogy texts, in [0, 1]."""
    template = load_template("judge")
    system, user = template.render(analogy_a=analogy_a, analogy_b=analogy_b)
    reply = provider.complete(ChatRequest(stage="judge", system=system, user=user))
    return parse_judge_score(reply.text)
