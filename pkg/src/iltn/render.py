"""Deterministic rasterization of puzzles to 84x84 grayscale bitmaps.

Pure integer drawing: white background, black grid lines, clue digits
drawn from a fixed 5x7 glyph set scaled to the cell. Images serialize as
binary (P5) PGM so corpus files diff bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .puzzles import Puzzle

IMAGE_SIZE = 84
BACKGROUND = 255
INK = 0

# 5x7 digit glyphs, row-major strings, '#' = ink
_GLYPHS = {
    1: ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    2: [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    3: [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."],
    4: ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    5: ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    6: [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."],
    7: ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    8: [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    9: [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
}


def cell_bounds(n: int) -> list[tuple[int, int]]:
    """Start/stop pixel rows (equivalently columns) per cell index; the
    last cell absorbs the remainder when 84 is not divisible by n."""
    step = IMAGE_SIZE // n
    bounds = [(i * step, (i + 1) * step) for i in range(n - 1)]
    bounds.append(((n - 1) * step, IMAGE_SIZE))
    return bounds


def render(puzzle: Puzzle) -> np.ndarray:
    """84x84 uint8 image of the clue grid; a pure function of the puzzle."""
    n = puzzle.n
    img = np.full((IMAGE_SIZE, IMAGE_SIZE), BACKGROUND, dtype=np.uint8)
    bounds = cell_bounds(n)
    for start, _ in bounds:
        img[start, :] = INK
        img[:, start] = INK
    img[IMAGE_SIZE - 1, :] = INK
    img[:, IMAGE_SIZE - 1] = INK
    clues = puzzle.clue_array()
    for r in range(n):
        for c in range(n):
            v = int(clues[r, c])
            if v:
                _draw_glyph(img, _GLYPHS[v], bounds[r], bounds[c])
    return img


def _draw_glyph(img: np.ndarray, glyph: list[str], row_b, col_b) -> None:
    r0, r1 = row_b
    c0, c1 = col_b
    cell_h, cell_w = r1 - r0 - 2, c1 - c0 - 2  # keep off the grid lines
    scale = max(1, min(cell_h // 7, cell_w // 5))
    gh, gw = 7 * scale, 5 * scale
    top = r0 + 1 + (cell_h - gh) // 2 + 1
    left = c0 + 1 + (cell_w - gw) // 2 + 1
    for gr, row in enumerate(glyph):
        for gc, ch in enumerate(row):
            if ch == "#":
                img[top + gr * scale: top + (gr + 1) * scale,
                    left + gc * scale: left + (gc + 1) * scale] = INK


def write_pgm(path, img: np.ndarray) -> None:
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("write_pgm expects a 2-d uint8 array")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM file: {magic!r}")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(x) for x in line.split())
        maxval = int(f.readline())
        if maxval != 255:
            raise ValueError(f"unsupported PGM maxval {maxval}")
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return data.reshape(h, w)
