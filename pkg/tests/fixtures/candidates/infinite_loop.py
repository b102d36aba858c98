import random

FAKE_HANGS = ("main",)


def generate_input():
    h = random.randint(2, 4)
    w = random.randint(2, 4)
    grid = [[random.randint(0, 9) for _ in range(w)] for _ in range(h)]
    grid[0][0] = 1
    return grid


def main(grid):
    total = 0
    while True:
        total += 1
