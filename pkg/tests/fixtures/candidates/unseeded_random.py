import random


def generate_input():
    h = random.randint(2, 4)
    w = random.randint(2, 4)
    grid = [[random.randint(0, 9) for _ in range(w)] for _ in range(h)]
    grid[0][0] = random.randint(1, 9)
    return grid


def main(grid):
    out = copy_grid(grid)
    out[-1][-1] = random.randint(0, 9)
    return out
