def flood(grid, r, c, color):
    height = len(grid)
    width = len(grid[0])
    frontier = [(r, c)]
    while frontier:
        row, col = frontier.pop()
        if 0 <= row < height:
            if 0 <= col < width:
                if grid[row][col] == 0:
                    grid[row][col] = color
                    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        frontier.append((row + dr, col + dc))
    return grid
