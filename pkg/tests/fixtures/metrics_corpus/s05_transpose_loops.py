def transpose(grid):
    height = len(grid)
    width = len(grid[0])
    result = []
    for c in range(width):
        row = []
        for r in range(height):
            row.append(grid[r][c])
        result.append(row)
    return result
