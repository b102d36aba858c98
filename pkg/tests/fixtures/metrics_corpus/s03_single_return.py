def scale(grid, factor):
    return [[cell * factor for cell in row] for row in grid]
