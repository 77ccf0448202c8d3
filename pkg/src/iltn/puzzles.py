"""Grid puzzle generation, uniqueness checking, and strategy-ladder grading.

Grids are (n, n) int arrays with 0 for blank. Sudoku-style puzzles use
row/column/box units; KenKen-style puzzles are Latin squares (rows and
columns only) constrained by arithmetic cages, with leftover single cells
revealed as ordinary clues.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .fuzzy import CageSpec, KnowledgeBase, box_shape, build_knowledge_base

STRATEGY_LADDER = ("naked_single", "hidden_single", "naked_pair", "hidden_pair")
DIFFICULTIES = ("easy", "moderate", "hard")

SUPPORTED_SIZES = (4, 6, 9)


class GenerationError(RuntimeError):
    """Raised when no puzzle meeting the constraints is found in budget."""


class LadderError(RuntimeError):
    """Raised when sound deduction reaches a contradiction (internal bug)."""


@dataclass(frozen=True)
class Puzzle:
    n: int
    clues: tuple[tuple[int, ...], ...]
    solution: tuple[tuple[int, ...], ...]
    cages: tuple[CageSpec, ...] = ()
    difficulty: str = ""
    clue_digit_set: frozenset[int] = frozenset()
    seed: int = 0
    puzzle_id: str = ""

    @property
    def include_boxes(self) -> bool:
        return not self.cages

    def clue_array(self) -> np.ndarray:
        return np.array(self.clues, dtype=np.int64)

    def solution_array(self) -> np.ndarray:
        return np.array(self.solution, dtype=np.int64)

    def with_id(self, puzzle_id: str) -> "Puzzle":
        return replace(self, puzzle_id=puzzle_id)


def _to_tuples(grid: np.ndarray) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(v) for v in row) for row in grid)


def units_for(n: int, include_boxes: bool = True) -> list[list[int]]:
    units = [[r * n + c for c in range(n)] for r in range(n)]
    units += [[r * n + c for r in range(n)] for c in range(n)]
    if include_boxes:
        bh, bw = box_shape(n)
        for br in range(0, n, bh):
            for bc in range(0, n, bw):
                units.append([(br + i) * n + (bc + j) for i in range(bh) for j in range(bw)])
    return units


def _peer_masks(n: int, include_boxes: bool) -> np.ndarray:
    cells = n * n
    peers = np.zeros((cells, cells), dtype=bool)
    for unit in units_for(n, include_boxes):
        for a in unit:
            for b in unit:
                if a != b:
                    peers[a, b] = True
    return peers


def is_valid_solution(grid: np.ndarray, include_boxes: bool = True,
                      cages: tuple[CageSpec, ...] = ()) -> bool:
    """Boolean checker: complete grid, all units distinct, cages exact."""
    n = grid.shape[0]
    flat = grid.reshape(-1)
    if (flat < 1).any() or (flat > n).any():
        return False
    for unit in units_for(n, include_boxes):
        if len({int(flat[c]) for c in unit}) != n:
            return False
    for cage in cages:
        if cage_value(grid, cage) != cage.target:
            return False
    return True


def cage_value(grid: np.ndarray, cage: CageSpec) -> int:
    values = [int(grid[r, c]) for r, c in cage.cells]
    if cage.op == "add":
        return sum(values)
    if cage.op == "mul":
        out = 1
        for v in values:
            out *= v
        return out
    a, b = values
    if cage.op == "sub":
        return abs(a - b)
    hi, lo = max(a, b), min(a, b)
    return hi // lo if lo and hi % lo == 0 else 0


def generate_solution(n: int, seed: int) -> np.ndarray:
    """Complete valid grid via seeded backtracking; deterministic per seed."""
    return _fill_grid(n, seed, include_boxes=True)


def generate_latin_square(n: int, seed: int) -> np.ndarray:
    return _fill_grid(n, seed, include_boxes=False)


def _fill_grid(n: int, seed: int, include_boxes: bool) -> np.ndarray:
    if n not in SUPPORTED_SIZES:
        raise ValueError(f"unsupported grid size {n}; expected one of {SUPPORTED_SIZES}")
    rng = np.random.default_rng(seed)
    peers = _peer_masks(n, include_boxes)
    cells = n * n
    grid = np.zeros(cells, dtype=np.int64)
    orders = [rng.permutation(n) + 1 for _ in range(cells)]

    def backtrack(pos: int) -> bool:
        if pos == cells:
            return True
        taken = {int(grid[p]) for p in np.nonzero(peers[pos])[0] if grid[p]}
        for v in orders[pos]:
            if int(v) not in taken:
                grid[pos] = v
                if backtrack(pos + 1):
                    return True
        grid[pos] = 0
        return False

    if not backtrack(0):  # pragma: no cover - always satisfiable
        raise GenerationError(f"failed to fill a {n}x{n} grid")
    return grid.reshape(n, n)


# ----- exhaustive backtracking oracle -----

def count_solutions(clues: np.ndarray, include_boxes: bool = True,
                    cages: tuple[CageSpec, ...] = (), limit: int = 2,
                    node_cap: int | None = None) -> int:
    """Number of completions (stops at ``limit``); the uniqueness oracle."""
    n = clues.shape[0]
    peers = _peer_masks(n, include_boxes)
    cells = n * n
    grid = clues.reshape(-1).copy()
    blanks = [i for i in range(cells) if grid[i] == 0]
    cage_of: dict[int, CageSpec] = {}
    for cage in cages:
        for r, c in cage.cells:
            cage_of[r * n + c] = cage
    nodes = 0

    def cage_feasible(pos: int) -> bool:
        cage = cage_of.get(pos)
        if cage is None:
            return True
        vals = [int(grid[r * n + c]) for r, c in cage.cells]
        if 0 in vals:
            if cage.op == "add":
                filled = sum(v for v in vals if v)
                missing = vals.count(0)
                return filled + missing <= cage.target <= filled + missing * n
            if cage.op == "mul":
                prod = 1
                for v in vals:
                    prod *= v or 1
                return cage.target % prod == 0 if all(
                    v == 0 or cage.target % v == 0 for v in vals) else prod <= cage.target
            return True
        g = grid.reshape(n, n)
        return cage_value(g, cage) == cage.target

    count = 0

    def backtrack(i: int) -> bool:
        nonlocal count, nodes
        if i == len(blanks):
            count += 1
            return count >= limit
        pos = blanks[i]
        nodes += 1
        if node_cap is not None and nodes > node_cap:
            raise GenerationError(f"backtracking node cap {node_cap} exceeded")
        taken = {int(grid[p]) for p in np.nonzero(peers[pos])[0] if grid[p]}
        for v in range(1, n + 1):
            if v in taken:
                continue
            grid[pos] = v
            if cage_feasible(pos) and backtrack(i + 1):
                grid[pos] = 0
                return True
            grid[pos] = 0
        return False

    backtrack(0)
    return count


# ----- candidate propagation and the strategy ladder -----

@dataclass
class LadderResult:
    solved: bool
    grid: np.ndarray
    filled: int
    highest_strategy: str | None


def _cage_prune(cand: np.ndarray, grid: np.ndarray, cages, n: int) -> bool:
    """Filter candidates to those occurring in some consistent cage fill."""
    changed = False
    for cage in cages:
        ids = [r * n + c for r, c in cage.cells]
        pools = [np.nonzero(cand[i])[0] + 1 for i in ids]
        if any(len(p) == 0 for p in pools):
            raise LadderError("empty candidate set inside a cage")
        same_unit = {}
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                (ra, ca), (rb, cb) = cage.cells[a], cage.cells[b]
                if ra == rb or ca == cb:
                    same_unit[(a, b)] = True
        feasible = [set() for _ in ids]
        for combo in itertools.product(*pools):
            ok = all(combo[a] != combo[b] for (a, b) in same_unit)
            if not ok:
                continue
            g = np.zeros((n, n), dtype=np.int64)
            for (r, c), v in zip(cage.cells, combo):
                g[r, c] = v
            if cage_value(g, cage) != cage.target:
                continue
            for k, v in enumerate(combo):
                feasible[k].add(int(v))
        for k, i in enumerate(ids):
            for v in range(1, n + 1):
                if cand[i, v - 1] and v not in feasible[k]:
                    cand[i, v - 1] = False
                    changed = True
    return changed


def solve_ladder(puzzle: Puzzle, enabled_strategies=STRATEGY_LADDER) -> LadderResult:
    """Apply enabled deduction strategies to a fixpoint.

    Sound by construction: a cell is filled only when forced. Returns the
    partially or fully solved grid, how many blanks were filled, and the
    highest ladder rung that was needed.
    """
    n = puzzle.n
    include_boxes = puzzle.include_boxes
    units = units_for(n, include_boxes)
    peers = _peer_masks(n, include_boxes)
    grid = puzzle.clue_array().reshape(-1)
    cand = np.ones((n * n, n), dtype=bool)
    enabled = list(enabled_strategies)
    highest: str | None = None
    initial_blanks = int((grid == 0).sum())

    def assign(pos: int, v: int) -> None:
        if grid[pos] and grid[pos] != v:
            raise LadderError(f"conflicting assignment at cell {pos}")
        grid[pos] = v
        cand[pos] = False
        cand[pos, v - 1] = True
        for p in np.nonzero(peers[pos])[0]:
            cand[p, v - 1] = grid[p] == v

    for pos in range(n * n):
        if grid[pos]:
            assign(pos, int(grid[pos]))

    def rank(name: str) -> int:
        return STRATEGY_LADDER.index(name)

    def bump(name: str) -> None:
        nonlocal highest
        if highest is None or rank(name) > rank(highest):
            highest = name

    def naked_single() -> bool:
        for pos in range(n * n):
            if grid[pos]:
                continue
            opts = np.nonzero(cand[pos])[0]
            if len(opts) == 0:
                raise LadderError(f"cell {pos} has no remaining candidates")
            if len(opts) == 1:
                assign(pos, int(opts[0]) + 1)
                return True
        return False

    def hidden_single() -> bool:
        for unit in units:
            for v in range(n):
                spots = [c for c in unit if not grid[c] and cand[c, v]]
                if len(spots) == 1 and not any(grid[c] == v + 1 for c in unit):
                    assign(spots[0], v + 1)
                    return True
        return False

    def naked_pair() -> bool:
        changed = False
        for unit in units:
            open_cells = [c for c in unit if not grid[c]]
            for a, b in itertools.combinations(open_cells, 2):
                if cand[a].sum() == 2 and np.array_equal(cand[a], cand[b]):
                    for c in open_cells:
                        if c not in (a, b):
                            before = cand[c].copy()
                            cand[c] &= ~cand[a]
                            if not np.array_equal(before, cand[c]):
                                changed = True
        return changed

    def hidden_pair() -> bool:
        changed = False
        for unit in units:
            open_cells = [c for c in unit if not grid[c]]
            for u, v in itertools.combinations(range(n), 2):
                su = [c for c in open_cells if cand[c, u]]
                sv = [c for c in open_cells if cand[c, v]]
                if len(su) == 2 and su == sv and not any(
                        grid[c] in (u + 1, v + 1) for c in unit):
                    mask = np.zeros(n, dtype=bool)
                    mask[[u, v]] = True
                    for c in su:
                        if (cand[c] & ~mask).any():
                            cand[c] &= mask
                            changed = True
        return changed

    steps = {"naked_single": naked_single, "hidden_single": hidden_single,
             "naked_pair": naked_pair, "hidden_pair": hidden_pair}

    while True:
        if puzzle.cages and _cage_prune(cand, grid, puzzle.cages, n):
            continue
        for name in enabled:
            if steps[name]():
                bump(name)
                break
        else:
            break

    solved = bool((grid != 0).all())
    filled = initial_blanks - int((grid == 0).sum())
    return LadderResult(solved, grid.reshape(n, n), filled, highest)


def grade_difficulty(puzzle: Puzzle) -> str:
    """easy: singles suffice; moderate: pairs needed; hard: ladder stalls."""
    clues = puzzle.clue_array()
    if count_solutions(clues, puzzle.include_boxes, puzzle.cages, limit=2,
                       node_cap=200_000 if puzzle.n == 9 else None) != 1:
        raise ValueError("difficulty grading requires a uniquely solvable puzzle")
    if solve_ladder(puzzle, ("naked_single", "hidden_single")).solved:
        return "easy"
    if solve_ladder(puzzle, STRATEGY_LADDER).solved:
        return "moderate"
    return "hard"


# ----- puzzle construction -----

def carve_clues(solution: np.ndarray, target_clue_count: int,
                allowed_clue_digits: frozenset[int] | None = None,
                seed: int = 0, retries: int = 20) -> Puzzle:
    """Blank cells of a solved grid while uniqueness holds.

    When ``allowed_clue_digits`` is given, cells holding other digits are
    removed first so that at most ceil(0.1 * clue_count) of the revealed
    clues fall outside the set; failing that is a GenerationError.
    A target of 0 means best effort: carve as low as uniqueness allows.
    """
    n = solution.shape[0]
    cells = n * n
    if not (0 <= target_clue_count <= cells):
        raise ValueError(f"target clue count {target_clue_count} out of range")
    best_effort = target_clue_count == 0
    rng = np.random.default_rng(seed)
    flat_solution = solution.reshape(-1)

    for attempt in range(retries):
        if allowed_clue_digits:
            outside = [c for c in range(cells) if int(flat_solution[c]) not in allowed_clue_digits]
            inside = [c for c in range(cells) if int(flat_solution[c]) in allowed_clue_digits]
            order = list(rng.permutation(outside)) + list(rng.permutation(inside))
        else:
            order = list(rng.permutation(cells))
        clues = solution.copy()
        remaining = cells
        for pos in order:
            if not best_effort and remaining <= target_clue_count:
                break
            pos = int(pos)
            saved = clues.reshape(-1)[pos]
            clues.reshape(-1)[pos] = 0
            if count_solutions(clues, limit=2) == 1:
                remaining -= 1
            else:
                clues.reshape(-1)[pos] = saved
        if not best_effort and remaining > target_clue_count:
            continue
        clue_digits = [int(v) for v in clues.reshape(-1) if v]
        if allowed_clue_digits:
            exceptions = sum(1 for v in clue_digits if v not in allowed_clue_digits)
            if exceptions > int(np.ceil(0.1 * len(clue_digits))):
                continue
        puzzle = Puzzle(
            n=n, clues=_to_tuples(clues), solution=_to_tuples(solution),
            clue_digit_set=frozenset(clue_digits), seed=seed)
        return replace(puzzle, difficulty=grade_difficulty(puzzle))

    constraint = (f"clue digits mostly from {sorted(allowed_clue_digits)}"
                  if allowed_clue_digits else "unrestricted clue digits")
    raise GenerationError(
        f"no uniquely solvable puzzle with {target_clue_count} clues and "
        f"{constraint} found in {retries} attempts (seed {seed})")


def generate_kenken(n: int, seed: int, retries: int = 30) -> Puzzle:
    """Latin-square puzzle with arithmetic cages of size 2-3.

    Cells that cannot be grouped into a cage are revealed as clues. The
    emitted puzzle is uniquely solvable under cage + row/column
    constraints and every division cage has an integer quotient.
    """
    if n not in (4, 6):
        raise ValueError(f"kenken generation supports sizes 4 and 6, got {n}")
    rng = np.random.default_rng(seed)
    solution = generate_latin_square(n, seed)

    for attempt in range(retries):
        cages, singles = _partition_cages(n, rng)
        specs = []
        for cage_cells in cages:
            values = [int(solution[r, c]) for r, c in cage_cells]
            op = _pick_cage_op(values, cage_cells, rng)
            target = cage_value(solution, CageSpec(tuple(cage_cells), op, 1, 1.0)) \
                if op in ("sub", "div") else None
            if op == "add":
                target = sum(values)
            elif op == "mul":
                target = int(np.prod(values))
            specs.append(CageSpec(tuple(cage_cells), op, int(target)))
        clues = np.zeros((n, n), dtype=np.int64)
        for r, c in singles:
            clues[r, c] = solution[r, c]
        if count_solutions(clues, include_boxes=False, cages=tuple(specs), limit=2) == 1:
            clue_digits = frozenset(int(v) for v in clues.reshape(-1) if v)
            puzzle = Puzzle(n=n, clues=_to_tuples(clues), solution=_to_tuples(solution),
                            cages=tuple(specs), clue_digit_set=clue_digits, seed=seed)
            return replace(puzzle, difficulty=grade_difficulty(puzzle))
    raise GenerationError(f"no unique kenken found for n={n}, seed={seed} in {retries} attempts")


def _partition_cages(n: int, rng: np.random.Generator):
    unassigned = {(r, c) for r in range(n) for c in range(n)}
    cages, singles = [], []
    while unassigned:
        pool = sorted(unassigned)
        start = pool[int(rng.integers(len(pool)))]
        unassigned.remove(start)
        cage = [start]
        want = int(rng.choice([2, 2, 3]))
        while len(cage) < want:
            frontier = sorted({
                (r + dr, c + dc)
                for r, c in cage for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))
            } & unassigned)
            if not frontier:
                break
            nxt = frontier[int(rng.integers(len(frontier)))]
            unassigned.remove(nxt)
            cage.append(nxt)
        if len(cage) >= 2:
            cages.append(sorted(cage))
        else:
            singles.extend(cage)
    return cages, singles


def _pick_cage_op(values: list[int], cells, rng: np.random.Generator) -> str:
    if len(values) == 2:
        a, b = values
        ops = ["add", "mul"]
        if a != b:
            ops.append("sub")
            hi, lo = max(a, b), min(a, b)
            if hi % lo == 0 and hi // lo >= 2:
                ops.append("div")
        return str(rng.choice(sorted(ops)))
    return str(rng.choice(["add", "mul"]))


def knowledge_base_for(puzzle: Puzzle, tier: str = "easy",
                       inject_cages: bool = True, agg=None) -> KnowledgeBase:
    """Axiom set matching a puzzle's constraint family."""
    cages = puzzle.cages if inject_cages else ()
    return build_knowledge_base(puzzle.n, tier, include_boxes=puzzle.include_boxes,
                                cages=cages, agg=agg)
