# Build a histogram of cell values.
def histogram(grid):
    counts = {}  # value -> occurrences
    for row in grid:
        # each row contributes independently
        for cell in row:
            counts[cell] = counts.get(cell, 0) + 1

    # blank line above is intentional
    return counts
