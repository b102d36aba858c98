"""Regenerate the committed replay fixtures for the pipeline tests.

Run from the repository root after changing prompt templates, the seed
pool, or the scripted replies:

    python3 scripts/bless_replay.py

It rewrites, under tests/fixtures/pipeline/:

* ``sources/*.json``       — three precomputed scene summaries,
* ``seed_examples.json``   — the worked-example pool,
* ``replies/{digest}.json``— recorded model replies keyed by request digest,
* ``golden/*.json``        — expected task files, fidelity, and reply digests.

Review the diff before committing: the goldens define test expectations.
"""

import json
import pathlib
import shutil
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from arcforge.gateway import ChatReply, RecordingProvider, ReplayProvider
from arcforge.model import parse_abstraction, parse_seed_examples, serialize_task_file
from arcforge.pipeline import PipelineConfig, precomputed_source, run_pipeline

FIXTURES = ROOT / "tests" / "fixtures" / "pipeline"

# ---------------------------------------------------------------------------
# the three scene summaries
# ---------------------------------------------------------------------------

SOURCES = {
    "amp-gain": {
        "scenario": "a signal pulse travels through an amplifier and grows",
        "visual_elements": [
            "a horizontal wire",
            "a triangular amplifier body",
            "a moving pulse",
        ],
        "objects": [
            {"name": "signal pulse", "type": "explicit"},
            {"name": "amplifier", "type": "explicit"},
            {"name": "gain", "type": "implicit"},
        ],
        "static_patterns": ["the amplifier sits at the center of the wire"],
        "dynamic_patterns": [
            "the pulse moves rightward frame by frame",
            "the pulse doubles in height after passing the amplifier",
        ],
        "core_principles": ["amplification scales a signal while preserving its shape"],
        "interactions": [
            {
                "objects_involved": ["signal pulse", "amplifier"],
                "interaction_type": "clear",
                "interaction_parameters": ["gain factor 2"],
            },
            {
                "objects_involved": ["signal pulse", "gain"],
                "interaction_type": "constraint",
                "interaction_parameters": ["shape preserved while height scales"],
            },
        ],
    },
    "pendulum-arc": {
        "scenario": "a pendulum swings from left to right under gravity",
        "visual_elements": ["a pivot point", "a rod", "a weighted bob"],
        "objects": [
            {"name": "pendulum bob", "type": "explicit"},
            {"name": "pivot", "type": "explicit"},
            {"name": "gravity", "type": "implicit"},
        ],
        "static_patterns": ["the pivot stays fixed at the top center"],
        "dynamic_patterns": [
            "the bob sweeps an arc, mirroring its position across the vertical axis"
        ],
        "core_principles": ["swing endpoints mirror each other across the pivot axis"],
        "interactions": [
            {
                "objects_involved": ["pivot", "pendulum bob"],
                "interaction_type": "constraint",
                "interaction_parameters": ["fixed rod length"],
            },
            {
                "objects_involved": ["gravity", "pendulum bob"],
                "interaction_type": "clear",
                "interaction_parameters": ["acceleration toward the rest position"],
            },
        ],
    },
    "glitch-stripes": {
        "scenario": "a tidy striped pattern breaks into glitch artifacts",
        "visual_elements": ["a striped backdrop", "blocky artifacts"],
        "objects": [
            {"name": "stripe pattern", "type": "explicit"},
            {"name": "glitch block", "type": "explicit"},
        ],
        "static_patterns": ["stripes repeat with a fixed period"],
        "dynamic_patterns": ["random blocks displace and recolor parts of the stripes"],
        "core_principles": ["corruption disturbs an otherwise periodic structure"],
        "interactions": [
            {
                "objects_involved": ["glitch block", "stripe pattern"],
                "interaction_type": "ambiguous",
                "interaction_parameters": ["displacement amount"],
            },
            {
                "objects_involved": ["stripe pattern", "glitch block"],
                "interaction_type": "constraint",
                "interaction_parameters": ["stripes keep their period outside glitches"],
            },
        ],
    },
}

# ---------------------------------------------------------------------------
# the worked-example pool (prompt material only; never executed)
# ---------------------------------------------------------------------------


def seed(concepts, description, total):
    main_start = total.index("def main")
    return {
        "concepts": concepts,
        "description": description,
        "solution": {
            "library": "",
            "generate_input_code": total[:main_start].strip() + "\n",
            "main_code": total[main_start:].strip() + "\n",
            "total_code": total.strip() + "\n",
        },
    }


SEED_POOL = [
    seed(
        ["gravity", "stacking"],
        "In the input, colored cells float at arbitrary heights. In the output, every "
        "colored cell has fallen straight down and stacked on the bottom edge.",
        """
import random

def generate_input():
    h = random.randint(4, 8)
    w = random.randint(4, 8)
    grid = [[0] * w for _ in range(h)]
    for _ in range(random.randint(2, 6)):
        grid[random.randint(0, h - 2)][random.randint(0, w - 1)] = random.randint(1, 9)
    return grid

def main(grid):
    h = len(grid)
    w = len(grid[0])
    out = [[0] * w for _ in range(h)]
    for c in range(w):
        column = [grid[r][c] for r in range(h) if grid[r][c] != 0]
        for i, value in enumerate(column):
            out[h - len(column) + i][c] = value
    return out
""",
    ),
    seed(
        ["rotation"],
        "In the input, a square grid holds an arbitrary pattern. In the output, the "
        "whole pattern has been rotated a quarter turn clockwise.",
        """
import random

def generate_input():
    n = random.randint(3, 7)
    return [[random.randint(0, 9) for _ in range(n)] for _ in range(n)]

def main(grid):
    return [list(row) for row in zip(*grid[::-1])]
""",
    ),
    seed(
        ["reflection", "symmetry"],
        "In the input, a pattern occupies the left half of the grid. In the output, the "
        "pattern is completed by its mirror image on the right half.",
        """
import random

def generate_input():
    h = random.randint(3, 6)
    w = random.randint(2, 4)
    grid = [[0] * (2 * w) for _ in range(h)]
    for r in range(h):
        for c in range(w):
            grid[r][c] = random.randint(0, 9)
    return grid

def main(grid):
    w = len(grid[0]) // 2
    out = [row[:] for row in grid]
    for row in out:
        for c in range(w):
            row[2 * w - 1 - c] = row[c]
    return out
""",
    ),
    seed(
        ["counting", "majority"],
        "In the input, scattered cells use several colors. In the output, every nonzero "
        "cell is repainted with the most frequent nonzero color of the input.",
        """
import random

def generate_input():
    h = random.randint(4, 7)
    w = random.randint(4, 7)
    grid = [[0] * w for _ in range(h)]
    for _ in range(random.randint(5, 10)):
        grid[random.randint(0, h - 1)][random.randint(0, w - 1)] = random.choice([1, 2, 3])
    return grid

def main(grid):
    counts = {}
    for row in grid:
        for value in row:
            if value:
                counts[value] = counts.get(value, 0) + 1
    top = max(sorted(counts), key=lambda v: counts[v])
    return [[top if value else 0 for value in row] for row in grid]
""",
    ),
    seed(
        ["translation", "wrapping"],
        "In the input, a short horizontal bar sits somewhere in the grid. In the output, "
        "the bar has shifted one cell to the right, wrapping around the edge.",
        """
import random

def generate_input():
    h = random.randint(3, 6)
    w = random.randint(4, 8)
    grid = [[0] * w for _ in range(h)]
    r = random.randint(0, h - 1)
    start = random.randint(0, w - 1)
    color = random.randint(1, 9)
    for offset in range(3):
        grid[r][(start + offset) % w] = color
    return grid

def main(grid):
    w = len(grid[0])
    return [[row[(c - 1) % w] for c in range(w)] for row in grid]
""",
    ),
    seed(
        ["scaling"],
        "In the input, a small pattern fills the grid. In the output, the same pattern "
        "is drawn at twice the size, each cell becoming a 2x2 block.",
        """
import random

def generate_input():
    n = random.randint(2, 5)
    return [[random.randint(0, 9) for _ in range(n)] for _ in range(n)]

def main(grid):
    out = []
    for row in grid:
        wide = []
        for value in row:
            wide.extend([value, value])
        out.append(wide)
        out.append(list(wide))
    return out
""",
    ),
    seed(
        ["connectivity", "flood fill"],
        "In the input, one cell is marked inside a closed region. In the output, the "
        "whole region containing the marked cell has been filled with its color.",
        """
import random

def generate_input():
    h = random.randint(5, 8)
    w = random.randint(5, 8)
    grid = [[0] * w for _ in range(h)]
    for c in range(w):
        grid[h // 2][c] = 5
    grid[random.randint(0, h // 2 - 1)][random.randint(0, w - 1)] = random.randint(1, 4)
    return grid

def main(grid):
    h = len(grid)
    w = len(grid[0])
    out = [row[:] for row in grid]
    mark = None
    for r in range(h):
        for c in range(w):
            if out[r][c] not in (0, 5):
                mark = (r, c, out[r][c])
    stack = [(mark[0], mark[1])]
    while stack:
        r, c = stack.pop()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and out[nr][nc] == 0:
                out[nr][nc] = mark[2]
                stack.append((nr, nc))
    return out
""",
    ),
    seed(
        ["erosion", "boundaries"],
        "In the input, solid colored blobs sit on the background. In the output, only "
        "the boundary cells of each blob remain; interior cells turn black.",
        """
import random

def generate_input():
    h = random.randint(5, 8)
    w = random.randint(5, 8)
    grid = [[0] * w for _ in range(h)]
    r0 = random.randint(0, h - 4)
    c0 = random.randint(0, w - 4)
    color = random.randint(1, 9)
    for r in range(r0, r0 + 3):
        for c in range(c0, c0 + 3):
            grid[r][c] = color
    return grid

def main(grid):
    h = len(grid)
    w = len(grid[0])
    out = [row[:] for row in grid]
    for r in range(h):
        for c in range(w):
            if grid[r][c] == 0:
                continue
            neighbors = [
                grid[r + dr][c + dc]
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= r + dr < h and 0 <= c + dc < w
            ]
            if len(neighbors) == 4 and all(n == grid[r][c] for n in neighbors):
                out[r][c] = 0
    return out
""",
    ),
]

# ---------------------------------------------------------------------------
# scripted model replies
# ---------------------------------------------------------------------------

SKETCH_AMP = """\
# concepts: scaling, amplification
# description: The input grid contains one colored pulse column rising from the bottom edge on a black background. The output grid keeps the pulse column in place but doubles its height, capturing how the amplifier grows the signal while preserving its color.
"""

SKETCH_PENDULUM = """\
# concepts: mirror symmetry, oscillation
# description: The input grid contains a single colored bob placed in the left half of the grid and a marker cell on the top row. The output grid is the input mirrored left to right, showing the far end of the swing.
"""

SKETCH_GLITCH_BROKEN = """\
This animation shows digital corruption spreading across stripes. One could ask
solvers to repair the corrupted cells, or to propagate the corruption further,
but I would need to think more before fixing a single transformation.
"""

PROGRAM_AMP_TOTAL = """\
import random

def generate_input():
    h = random.randint(6, 10)
    w = random.randint(4, 8)
    grid = [[0 for _ in range(w)] for _ in range(h)]
    c = random.randint(0, w - 1)
    color = random.randint(1, 9)
    height = random.randint(1, h // 2 - 1)
    for r in range(h - height, h):
        grid[r][c] = color
    return grid

def main(grid):
    h = len(grid)
    w = len(grid[0])
    out = [[0 for _ in range(w)] for _ in range(h)]
    for c in range(w):
        column = [grid[r][c] for r in range(h) if grid[r][c] != 0]
        if not column:
            continue
        color = column[0]
        height = min(2 * len(column), h)
        for r in range(h - height, h):
            out[r][c] = color
    return out
"""

PROGRAM_PENDULUM_TOTAL = """\
import random

def generate_input():
    h = random.randint(4, 8)
    w = random.randint(5, 9)
    grid = [[0 for _ in range(w)] for _ in range(h)]
    grid[random.randint(1, h - 1)][random.randint(0, w // 2 - 1)] = random.randint(1, 9)
    grid[0][w // 2] = random.randint(1, 9)
    return grid

def main(grid):
    return [row[::-1] for row in grid]
"""


def program_reply(total: str) -> str:
    main_start = total.index("def main")
    doc = {
        "library": "",
        "main_code": total[main_start:].strip() + "\n",
        "generate_input_code": total[:main_start].strip() + "\n",
        "total_code": total,
    }
    return "Here is the implementation:\n\n```json\n" + json.dumps(doc, indent=2) + "\n```\n"


class ScriptedProvider:
    """Deterministic stand-in for the live model during blessing."""

    def complete(self, request):
        user = request.user
        if request.stage == "step2":
            if "signal pulse" in user:
                return ChatReply(text=SKETCH_AMP, model_id="scripted")
            if "pendulum bob" in user:
                return ChatReply(text=SKETCH_PENDULUM, model_id="scripted")
            if "glitch block" in user:
                return ChatReply(text=SKETCH_GLITCH_BROKEN, model_id="scripted")
        if request.stage == "step3":
            if "doubles its height" in user:
                return ChatReply(text=program_reply(PROGRAM_AMP_TOTAL), model_id="scripted")
            if "mirrored left to right" in user:
                return ChatReply(
                    text=program_reply(PROGRAM_PENDULUM_TOTAL), model_id="scripted"
                )
        raise AssertionError(f"no scripted reply for stage {request.stage!r}")


# ---------------------------------------------------------------------------
# blessing
# ---------------------------------------------------------------------------


def main() -> None:
    sources_dir = FIXTURES / "sources"
    replies_dir = FIXTURES / "replies"
    golden_dir = FIXTURES / "golden"
    for directory in (replies_dir, golden_dir):
        if directory.exists():
            shutil.rmtree(directory)
    for directory in (sources_dir, replies_dir, golden_dir):
        directory.mkdir(parents=True, exist_ok=True)

    for source_id, doc in SOURCES.items():
        (sources_dir / f"{source_id}.json").write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8"
        )
    (FIXTURES / "seed_examples.json").write_text(
        json.dumps(SEED_POOL, indent=2) + "\n", encoding="utf-8"
    )

    sources = [
        precomputed_source(source_id, parse_abstraction(doc))
        for source_id, doc in SOURCES.items()
    ]
    pool = parse_seed_examples((FIXTURES / "seed_examples.json").read_text())
    config = PipelineConfig(version="v1", rng_seed=0)

    recorder = RecordingProvider(ScriptedProvider(), replies_dir)
    recorded = run_pipeline(recorder, sources, pool, config)

    replayed = run_pipeline(ReplayProvider(replies_dir), sources, pool, config)
    assert [t.id for t in recorded.tasks] == [t.id for t in replayed.tasks]

    for task in replayed.tasks:
        (golden_dir / f"{task.id}.json").write_bytes(serialize_task_file(task))
    (golden_dir / "fidelity.json").write_text(
        json.dumps(replayed.fidelity.as_dict(), indent=2) + "\n", encoding="utf-8"
    )
    digests = sorted(path.name for path in replies_dir.glob("*.json"))
    (golden_dir / "reply_digests.json").write_text(
        json.dumps(digests, indent=2) + "\n", encoding="utf-8"
    )

    print(f"sources:  {len(sources)}")
    print(f"replies:  {len(digests)}")
    print(f"tasks:    {[task.id for task in replayed.tasks]}")
    print("fidelity:")
    print(replayed.fidelity.render_table())
    for failure in replayed.failures:
        print(f"failure:  {failure.source_id} @ {failure.stage}: {failure.message[:80]}")


if __name__ == "__main__":
    main()
