"""Core grid values and the operations everything else builds on.

A grid is a plain row-major matrix: ``list[list[int]]`` with cell values
0-9.  Value 0 is the background color (black) by convention.  All
functions in this module are pure; nothing mutates its arguments.
"""

from __future__ import annotations

import enum
import hashlib
import random
import struct
from dataclasses import dataclass

Grid = list[list[int]]

#: Canonical color names for cell values 0-9, in value order.
COLOR_NAMES = (
    "Black",
    "Blue",
    "Red",
    "Green",
    "Yellow",
    "Grey",
    "Pink",
    "Orange",
    "Teal",
    "Maroon",
)

NUM_COLORS = 10
BACKGROUND = 0

#: Side-length ceiling applied to *input* grids.  Output grids produced by a
#: transformation are allowed to grow past this.
INPUT_MAX_SIDE = 30
MIN_SIDE = 1


class GridFlaw(str, enum.Enum):
    """Outcome kinds for :func:`validate_grid`."""

    VALID = "valid"
    RAGGED = "ragged"
    INVALID_VALUE = "invalid_value"
    INVALID_SIZE = "invalid_size"


@dataclass(frozen=True)
class GridVerdict:
    """Result of validating one matrix.

    ``coord`` is the first offending ``(row, col)`` when the problem is
    localized to a cell or row; it is ``None`` for size-level problems.
    """

    kind: GridFlaw
    coord: tuple[int, int] | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.kind is GridFlaw.VALID

    def __bool__(self) -> bool:
        return self.ok


_VALID = GridVerdict(GridFlaw.VALID)


def validate_grid(grid: object, role: str = "input", max_side: int | None = None) -> GridVerdict:
    """Check that ``grid`` is a well-formed color matrix.

    A well-formed grid is a non-empty rectangular list of lists whose cells
    are integers in 0-9.  ``role`` selects the size policy: ``"input"``
    grids are capped at 30 cells per side, ``"output"`` grids have no upper
    bound (override either policy with ``max_side``).
    """
    if role not in ("input", "output"):
        raise ValueError(f"unknown grid role: {role!r}")
    if max_side is None and role == "input":
        max_side = INPUT_MAX_SIDE

    if not isinstance(grid, list):
        return GridVerdict(GridFlaw.INVALID_SIZE, detail=f"not a list: {type(grid).__name__}")
    height = len(grid)
    if height < MIN_SIDE:
        return GridVerdict(GridFlaw.INVALID_SIZE, detail="empty grid")
    first = grid[0]
    if not isinstance(first, list):
        return GridVerdict(
            GridFlaw.RAGGED, coord=(0, 0), detail=f"row 0 is not a list: {type(first).__name__}"
        )
    width = len(first)
    if width < MIN_SIDE:
        return GridVerdict(GridFlaw.INVALID_SIZE, detail="empty first row")
    if max_side is not None and (height > max_side or width > max_side):
        return GridVerdict(
            GridFlaw.INVALID_SIZE,
            detail=f"{height}x{width} exceeds {max_side}x{max_side} for role={role}",
        )

    for r, row in enumerate(grid):
        if not isinstance(row, list):
            return GridVerdict(
                GridFlaw.RAGGED, coord=(r, 0), detail=f"row {r} is not a list: {type(row).__name__}"
            )
        if len(row) != width:
            return GridVerdict(
                GridFlaw.RAGGED,
                coord=(r, min(len(row), width)),
                detail=f"row {r} has length {len(row)}, expected {width}",
            )
        for c, cell in enumerate(row):
            if isinstance(cell, bool) or not isinstance(cell, int):
                return GridVerdict(
                    GridFlaw.INVALID_VALUE,
                    coord=(r, c),
                    detail=f"cell ({r},{c}) is {cell!r}, not an int",
                )
            if not 0 <= cell < NUM_COLORS:
                return GridVerdict(
                    GridFlaw.INVALID_VALUE,
                    coord=(r, c),
                    detail=f"cell ({r},{c}) = {cell} outside 0-{NUM_COLORS - 1}",
                )
    return _VALID


def grid_shape(grid: Grid) -> tuple[int, int]:
    """Return ``(height, width)`` of a rectangular grid."""
    return len(grid), len(grid[0]) if grid else 0


def copy_grid(grid: Grid) -> Grid:
    return [row[:] for row in grid]


def distinct_colors(grid: Grid) -> int:
    """Number of distinct cell values present in the grid."""
    return len({cell for row in grid for cell in row})


def is_all_background(grid: Grid) -> bool:
    """True when every cell is the background color 0."""
    return all(cell == BACKGROUND for row in grid for cell in row)


@dataclass(frozen=True)
class ColorPermutation:
    """A bijection on the color values 0-9.

    ``mapping[i]`` is the image of color ``i``.  By default permutations
    used for invariance checking keep the background color fixed; build
    those with :meth:`sample`.
    """

    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.mapping) != NUM_COLORS or sorted(self.mapping) != list(range(NUM_COLORS)):
            raise ValueError(f"not a permutation of 0-{NUM_COLORS - 1}: {self.mapping!r}")

    def __call__(self, color: int) -> int:
        return self.mapping[color]

    @classmethod
    def identity(cls) -> "ColorPermutation":
        return cls(tuple(range(NUM_COLORS)))

    @classmethod
    def sample(cls, rng: random.Random, fix_background: bool = True) -> "ColorPermutation":
        """Draw a uniformly random permutation, optionally pinning color 0."""
        if fix_background:
            tail = list(range(1, NUM_COLORS))
            rng.shuffle(tail)
            return cls((BACKGROUND, *tail))
        values = list(range(NUM_COLORS))
        rng.shuffle(values)
        return cls(tuple(values))

    def inverse(self) -> "ColorPermutation":
        inv = [0] * NUM_COLORS
        for src, dst in enumerate(self.mapping):
            inv[dst] = src
        return ColorPermutation(tuple(inv))

    def compose(self, other: "ColorPermutation") -> "ColorPermutation":
        """Return the permutation ``self after other`` (apply ``other`` first)."""
        return ColorPermutation(tuple(self.mapping[other.mapping[c]] for c in range(NUM_COLORS)))

    def fixes_background(self) -> bool:
        return self.mapping[BACKGROUND] == BACKGROUND


def sample_permutations(
    rng: random.Random, count: int, fix_background: bool = True
) -> list[ColorPermutation]:
    """Draw ``count`` independent random color permutations."""
    return [ColorPermutation.sample(rng, fix_background=fix_background) for _ in range(count)]


def apply_color_permutation(grid: Grid, perm: ColorPermutation) -> Grid:
    """Remap every cell through ``perm``, preserving shape."""
    mapping = perm.mapping
    return [[mapping[cell] for cell in row] for row in grid]


def grid_hash(grid: Grid) -> str:
    """Canonical content digest of a grid.

    The digest is SHA-256 over a fixed byte encoding: height and width as
    4-byte big-endian unsigned ints, then the cells row-major, one byte
    each.  Encoding the dimensions keeps e.g. 1x4 and 4x1 grids of equal
    cell sequence distinct.
    """
    height, width = grid_shape(grid)
    payload = bytearray(struct.pack(">II", height, width))
    for row in grid:
        payload.extend(row)
    return hashlib.sha256(bytes(payload)).hexdigest()


def grids_equal(a: Grid, b: Grid) -> bool:
    """Structural equality (shape and every cell)."""
    return a == b
