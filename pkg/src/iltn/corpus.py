"""Corpora of generated puzzles with compositional-generalization splits.

A corpus is a directory: ``manifest.json`` (parameters, per-puzzle seeds,
split assignments, axiom tier names), ``puzzles.jsonl`` (one record per
puzzle) and ``images/<id>.pgm``. Every puzzle is regenerable bit-exactly
from its recorded seed and the manifest parameters.

The three split axes:
  entity      novel clue digits (train/test clue-digit subsets disjoint)
  relational  novel constraint types (train: plain grids; test: cages)
  rule        novel strategy depth (train: easy; test: hard)
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fuzzy import CageSpec
from .puzzles import (GenerationError, Puzzle, carve_clues, generate_kenken,
                      generate_solution, grade_difficulty)
from .render import read_pgm, render, write_pgm

AXES = ("entity", "relational", "rule")

# grid sizes per axis; the rule axis needs 6x6 because hard 4x4 puzzles
# do not exist (singles always suffice there)
AXIS_SIZES = {"entity": 4, "relational": 4, "rule": 6}


class SplitValidationError(ValueError):
    """Raised when a split cannot be constructed, not for report failures."""


@dataclass(frozen=True)
class SplitSpec:
    axis: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown split axis {self.axis!r}")
        if self.axis == "entity":
            train = frozenset(self.params["train_digits"])
            test = frozenset(self.params["test_digits"])
            if train & test:
                raise ValueError("entity split digit subsets must be disjoint")

    def _clue_majority(self, puzzle: Puzzle, digits: frozenset[int]) -> bool:
        clue_digits = [v for row in puzzle.clues for v in row if v]
        if not clue_digits:
            return False
        outside = sum(1 for v in clue_digits if v not in digits)
        return outside <= math.ceil(0.1 * len(clue_digits))

    def train_predicate(self, puzzle: Puzzle) -> bool:
        if self.axis == "entity":
            return self._clue_majority(puzzle, frozenset(self.params["train_digits"]))
        if self.axis == "relational":
            return not puzzle.cages
        return puzzle.difficulty == "easy"

    def test_predicate(self, puzzle: Puzzle) -> bool:
        if self.axis == "entity":
            return self._clue_majority(puzzle, frozenset(self.params["test_digits"]))
        if self.axis == "relational":
            return bool(puzzle.cages)
        return puzzle.difficulty == "hard"

    def to_json(self) -> dict:
        params = {k: sorted(v) if isinstance(v, (set, frozenset)) else v
                  for k, v in self.params.items()}
        return {"axis": self.axis, "params": params}

    @staticmethod
    def from_json(obj: dict) -> "SplitSpec":
        return SplitSpec(obj["axis"], dict(obj["params"]))


@dataclass
class Corpus:
    puzzles: list[Puzzle]
    manifest: dict
    root: Path | None = None
    _images: dict[str, np.ndarray] = field(default_factory=dict)

    def by_role(self, role: str) -> "Corpus":
        ids = set(self.manifest["split"][role])
        subset = [p for p in self.puzzles if p.puzzle_id in ids]
        return Corpus(subset, self.manifest, self.root, self._images)

    def image(self, puzzle_id: str) -> np.ndarray:
        if puzzle_id not in self._images:
            if self.root is None:
                raise KeyError(f"no image loaded for {puzzle_id}")
            self._images[puzzle_id] = read_pgm(self.root / "images" / f"{puzzle_id}.pgm")
        return self._images[puzzle_id]

    def images(self) -> np.ndarray:
        return np.stack([self.image(p.puzzle_id) for p in self.puzzles])

    @property
    def corpus_id(self) -> str:
        return self.manifest["corpus_id"]


# ----- per-puzzle generation (pure in (axis, role, n, seed, params)) -----

def child_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_axis_puzzle(axis: str, role: str, n: int, gen_seed: int,
                         params: dict) -> Puzzle | None:
    """One candidate puzzle; None when it fails the role's rejection rule."""
    rng = np.random.default_rng(gen_seed)
    try:
        if axis == "relational" and role == "test":
            return generate_kenken(n, gen_seed)
        if axis == "rule" and role == "test":
            solution = generate_solution(n, gen_seed)
            puzzle = carve_clues(solution, target_clue_count=0, seed=gen_seed)
            return puzzle if puzzle.difficulty == "hard" else None
        lo, hi = params["clue_range"]
        target = int(rng.integers(lo, hi + 1))
        allowed = None
        if axis == "entity":
            key = "train_digits" if role in ("train", "val") else "test_digits"
            allowed = frozenset(params[key])
        solution = generate_solution(n, gen_seed)
        puzzle = carve_clues(solution, target, allowed_clue_digits=allowed, seed=gen_seed)
        if axis == "rule" and puzzle.difficulty != "easy":
            return None
        return puzzle
    except GenerationError:
        return None


def _default_params(axis: str) -> dict:
    if axis == "entity":
        return {"train_digits": [1, 2], "test_digits": [3, 4], "clue_range": [8, 11]}
    if axis == "relational":
        return {"clue_range": [6, 10]}
    return {"clue_range": [14, 22]}


def build_corpus(axis: str, seed: int, train: int = 2000, val: int = 200,
                 test: int = 200, size: int | None = None,
                 params: dict | None = None, out_dir=None) -> Corpus:
    """Generate an axis corpus; writes it to ``out_dir`` when given."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}")
    n = size or AXIS_SIZES[axis]
    params = params or _default_params(axis)
    spec = _split_spec(axis, params)

    puzzles: list[Puzzle] = []
    split: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    index = 0
    for role, count in (("train", train), ("val", val), ("test", test)):
        made = 0
        while made < count:
            gen_seed = child_seed(seed, index)
            index += 1
            if index > 200 * (train + val + test):
                raise GenerationError(
                    f"generation budget exhausted for axis={axis} role={role}")
            puzzle = generate_axis_puzzle(axis, role, n, gen_seed, params)
            if puzzle is None:
                continue
            pred = spec.train_predicate if role in ("train", "val") else spec.test_predicate
            if not pred(puzzle):
                continue
            pid = f"{axis}-{role}-{made:05d}"
            puzzles.append(puzzle.with_id(pid))
            split[role].append(pid)
            made += 1

    generation = {"axis": axis, "size": n, "seed": seed, "params": params,
                  "counts": {"train": train, "val": val, "test": test}}
    manifest = {
        "corpus_id": hashlib.sha256(
            json.dumps(generation, sort_keys=True).encode()).hexdigest()[:12],
        **generation,
        "split": split,
        "split_spec": spec.to_json(),
        "tiers": {"train": "easy", "eval": "hard" if axis == "rule" else "easy"},
    }
    corpus = Corpus(puzzles, manifest)
    for p in puzzles:
        corpus._images[p.puzzle_id] = render(p)
    report = validate_split(spec, corpus.by_role("train"), corpus.by_role("test"))
    if not report["passed"]:
        raise SplitValidationError(f"generated corpus failed split validation: {report}")
    if out_dir is not None:
        save_corpus(corpus, out_dir)
    return corpus


def _split_spec(axis: str, params: dict) -> SplitSpec:
    if axis == "entity":
        return SplitSpec(axis, {"train_digits": params["train_digits"],
                                "test_digits": params["test_digits"]})
    if axis == "relational":
        return SplitSpec(axis, {"novel_relations": ["cage"]})
    return SplitSpec(axis, {})


def regenerate_puzzle(corpus: Corpus, puzzle_id: str) -> Puzzle:
    """Rebuild a puzzle from its recorded seed; must match bit-exactly."""
    stored = next(p for p in corpus.puzzles if p.puzzle_id == puzzle_id)
    role = puzzle_id.split("-")[1]
    fresh = generate_axis_puzzle(corpus.manifest["axis"], role, corpus.manifest["size"],
                                 stored.seed, corpus.manifest["params"])
    if fresh is None:
        raise GenerationError(f"stored seed for {puzzle_id} no longer generates a puzzle")
    return fresh.with_id(puzzle_id)


# ----- split construction and validation -----

def make_split(spec: SplitSpec, corpus: Corpus) -> tuple[Corpus, Corpus]:
    """Partition by the spec predicates; no puzzle may land in both."""
    train = [p for p in corpus.puzzles if spec.train_predicate(p)]
    test = [p for p in corpus.puzzles if spec.test_predicate(p)]
    if not train or not test:
        raise SplitValidationError(
            f"split produced {len(train)} train / {len(test)} test puzzles")
    overlap = {p.puzzle_id for p in train} & {p.puzzle_id for p in test}
    if overlap:
        raise SplitValidationError(f"puzzles matched both predicates: {sorted(overlap)[:5]}")
    return (Corpus(train, corpus.manifest, corpus.root, corpus._images),
            Corpus(test, corpus.manifest, corpus.root, corpus._images))


def validate_split(spec: SplitSpec, train: Corpus, test: Corpus) -> dict:
    """Machine-readable compound-disjointness and atom-familiarity report."""
    checks: list[dict] = []

    def add(name: str, passed: bool, offenders=()):
        checks.append({"check": name, "passed": bool(passed),
                       "offenders": [str(o) for o in list(offenders)[:10]]})

    bad = [p.puzzle_id for p in train.puzzles if not spec.train_predicate(p)]
    add("train_predicate_holds", not bad, bad)
    bad = [p.puzzle_id for p in test.puzzles if not spec.test_predicate(p)]
    add("test_predicate_holds", not bad, bad)
    add("no_shared_puzzles",
        not ({p.puzzle_id for p in train.puzzles} & {p.puzzle_id for p in test.puzzles}))

    if spec.axis == "entity":
        train_digits = frozenset(spec.params["train_digits"])
        test_digits = frozenset(spec.params["test_digits"])
        add("digit_subsets_disjoint", not (train_digits & test_digits))
        leak = [p.puzzle_id for p in test.puzzles if spec._clue_majority(p, train_digits)]
        add("no_test_puzzle_with_train_clue_majority", not leak, leak)
    elif spec.axis == "relational":
        cage_train = [p.puzzle_id for p in train.puzzles if p.cages]
        add("train_has_no_cages", not cage_train, cage_train)
        bare_test = [p.puzzle_id for p in test.puzzles if not p.cages]
        add("test_all_have_cages", not bare_test, bare_test)
    else:
        regraded = [(p.puzzle_id, grade_difficulty(p)) for p in train.puzzles]
        bad = [pid for pid, g in regraded if g != "easy"]
        add("train_regrades_easy", not bad, bad)
        regraded = [(p.puzzle_id, grade_difficulty(p)) for p in test.puzzles]
        bad = [pid for pid, g in regraded if g != "hard"]
        add("test_regrades_hard", not bad, bad)

    # atom familiarity: every symbol occurring in test solutions also occurs
    # in train solutions; novel axiom kinds must be declared
    train_symbols = {v for p in train.puzzles for row in p.solution for v in row}
    test_symbols = {v for p in test.puzzles for row in p.solution for v in row}
    add("test_symbols_familiar", test_symbols <= train_symbols,
        sorted(test_symbols - train_symbols))
    declared = set(spec.params.get("novel_relations", []))
    train_kinds = {"all_different"} | {"cage" for p in train.puzzles if p.cages}
    test_kinds = {"all_different"} | {"cage" for p in test.puzzles if p.cages}
    novel = test_kinds - train_kinds
    add("novel_relations_declared", novel <= declared, sorted(novel - declared))

    return {"axis": spec.axis, "passed": all(c["passed"] for c in checks),
            "checks": checks}


# ----- disk serialization -----

def _puzzle_record(p: Puzzle) -> dict:
    return {
        "id": p.puzzle_id,
        "n": p.n,
        "clues": [list(row) for row in p.clues],
        "solution": [list(row) for row in p.solution],
        "cages": [{"cells": [list(c) for c in cage.cells], "op": cage.op,
                   "target": cage.target, "sigma": cage.sigma} for cage in p.cages],
        "difficulty": p.difficulty,
        "clue_digit_set": sorted(p.clue_digit_set),
        "seed": p.seed,
    }


def _puzzle_from_record(rec: dict) -> Puzzle:
    cages = tuple(CageSpec(tuple(tuple(c) for c in cage["cells"]), cage["op"],
                           cage["target"], cage["sigma"]) for cage in rec["cages"])
    return Puzzle(
        n=rec["n"],
        clues=tuple(tuple(v) for v in rec["clues"]),
        solution=tuple(tuple(v) for v in rec["solution"]),
        cages=cages,
        difficulty=rec["difficulty"],
        clue_digit_set=frozenset(rec["clue_digit_set"]),
        seed=rec["seed"],
        puzzle_id=rec["id"],
    )


def save_corpus(corpus: Corpus, out_dir) -> Path:
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.json", "w") as f:
        json.dump(corpus.manifest, f, indent=2, sort_keys=True)
    with open(root / "puzzles.jsonl", "w") as f:
        for p in corpus.puzzles:
            f.write(json.dumps(_puzzle_record(p), sort_keys=True) + "\n")
    for p in corpus.puzzles:
        write_pgm(root / "images" / f"{p.puzzle_id}.pgm", corpus.image(p.puzzle_id))
    corpus.root = root
    return root


def load_corpus(root) -> Corpus:
    root = Path(root)
    with open(root / "manifest.json") as f:
        manifest = json.load(f)
    puzzles = []
    with open(root / "puzzles.jsonl") as f:
        for line in f:
            puzzles.append(_puzzle_from_record(json.loads(line)))
    return Corpus(puzzles, manifest, root)
