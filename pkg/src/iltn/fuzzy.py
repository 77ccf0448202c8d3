"""Differentiable first-order fuzzy logic over grid belief states.

Connectives use the Lukasiewicz t-norm T(a,b) = max(0, a+b-1) and its
dual t-conorm min(1, a+b); the universal quantifier is realized as an
error-form generalized mean, 1 - (mean((1-a)^p))^(1/p), which emphasizes
violated instances and therefore produces useful descent directions.

Belief probabilities are laid out as (batch, cells, vocab) with vocab
index d-1 for digit d and index n for the blank symbol. Axioms quantify
over digit slots only, so a belief parked on blank counts as a violation
of the solution axioms rather than a vacuous success.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TIERS = ("easy", "moderate", "hard")


@dataclass(frozen=True)
class AggregatorConfig:
    """Exponent of the generalized-mean quantifier; shared by the
    per-axiom quantifiers and the axiom-combination step."""

    p: float = 2.0

    def __post_init__(self):
        if self.p == 0:
            raise ValueError("aggregator exponent must be nonzero")


@dataclass(frozen=True)
class CageSpec:
    """Arithmetic cage: a cell group, an operator and a target value."""

    cells: tuple[tuple[int, int], ...]
    op: str
    target: int
    sigma: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple((int(r), int(c)) for r, c in self.cells))
        if self.op not in ("add", "sub", "mul", "div"):
            raise ValueError(f"unknown cage op {self.op!r}")
        if self.op in ("sub", "div") and len(self.cells) != 2:
            raise ValueError(f"{self.op} cage must have exactly 2 cells")
        if self.op in ("add", "mul") and len(self.cells) < 2:
            raise ValueError(f"{self.op} cage must have at least 2 cells")
        if len(set(self.cells)) != len(self.cells):
            raise ValueError("cage cells must be distinct")
        if self.target <= 0:
            raise ValueError("cage target must be positive")
        if self.sigma <= 0:
            raise ValueError("cage kernel width must be positive")


class EvalContext:
    """Per-evaluation cache shared by atom grounding functions."""

    def __init__(self, probs: Tensor, n: int, agg: AggregatorConfig):
        self.probs = probs  # (B, C, V)
        self.n = n
        self.agg = agg
        self._cache: dict[str, Tensor] = {}

    @property
    def digit_probs(self) -> Tensor:
        if "digits" not in self._cache:
            self._cache["digits"] = ad.index_select(self.probs, 2, list(range(self.n)))
        return self._cache["digits"]

    @property
    def cell_max(self) -> Tensor:
        if "cell_max" not in self._cache:
            self._cache["cell_max"] = ad.tmax(self.digit_probs, axis=-1)
        return self._cache["cell_max"]

    @property
    def expected_value(self) -> Tensor:
        if "ev" not in self._cache:
            vals = ad.Tensor(np.arange(1, self.n + 1, dtype=np.float64))
            self._cache["ev"] = ad.tsum(self.digit_probs * vals, axis=-1)
        return self._cache["ev"]

    @property
    def expected_log_value(self) -> Tensor:
        if "elv" not in self._cache:
            vals = ad.Tensor(np.log(np.arange(1, self.n + 1, dtype=np.float64)))
            self._cache["elv"] = ad.tsum(self.digit_probs * vals, axis=-1)
        return self._cache["elv"]


# ----- connectives -----

def _check_truth(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        d = t.data
        if d.size and (d.min() < -1e-9 or d.max() > 1.0 + 1e-9):
            raise ValueError(
                f"{name}: inputs must be truth values in [0, 1], "
                f"got range [{d.min():.6g}, {d.max():.6g}]"
            )


def t_and(a: Tensor, b: Tensor) -> Tensor:
    """Lukasiewicz conjunction max(0, a+b-1)."""
    _check_truth("t_and", a, b)
    return ad.relu(a + b - 1.0)


def t_or(a: Tensor, b: Tensor) -> Tensor:
    """Lukasiewicz disjunction min(1, a+b)."""
    _check_truth("t_or", a, b)
    return 1.0 - ad.relu(1.0 - (a + b))


def t_not(a: Tensor) -> Tensor:
    _check_truth("t_not", a)
    return 1.0 - a


def t_implies(a: Tensor, b: Tensor) -> Tensor:
    """Lukasiewicz implication min(1, 1-a+b)."""
    _check_truth("t_implies", a, b)
    return 1.0 - ad.relu(a - b)


def forall_agg(truths: Tensor, config: AggregatorConfig, axes=None) -> Tensor:
    """Error-form generalized mean: 1 - (mean((1-a)^p))^(1/p).

    Aggregates over ``axes`` (all axes when None). Equals 1 only when
    every instance is fully satisfied; raising any input never lowers
    the output.
    """
    if truths.size == 0:
        raise ValueError("universal quantifier over an empty domain")
    p = config.p
    err = 1.0 - truths
    m = ad.tmean(ad.powc(err, p), axis=axes)
    return 1.0 - ad.powc(m, 1.0 / p)


# ----- formula AST -----

class Formula:
    def eval(self, ctx: EvalContext) -> Tensor:
        raise NotImplementedError


@dataclass
class Atom(Formula):
    """Leaf whose truth tensor comes from a grounding function of the
    belief state (and, for learned predicates, embeddings)."""

    name: str
    ground: Callable[[EvalContext], Tensor]

    def eval(self, ctx: EvalContext) -> Tensor:
        return self.ground(ctx)


@dataclass
class Not(Formula):
    child: Formula

    def eval(self, ctx: EvalContext) -> Tensor:
        return t_not(self.child.eval(ctx))


@dataclass
class And(Formula):
    left: Formula
    right: Formula

    def eval(self, ctx: EvalContext) -> Tensor:
        return t_and(self.left.eval(ctx), self.right.eval(ctx))


@dataclass
class Or(Formula):
    left: Formula
    right: Formula

    def eval(self, ctx: EvalContext) -> Tensor:
        return t_or(self.left.eval(ctx), self.right.eval(ctx))


@dataclass
class Implies(Formula):
    left: Formula
    right: Formula

    def eval(self, ctx: EvalContext) -> Tensor:
        return t_implies(self.left.eval(ctx), self.right.eval(ctx))


@dataclass
class Forall(Formula):
    """Aggregates the child's truth tensor over every non-batch axis."""

    child: Formula

    def eval(self, ctx: EvalContext) -> Tensor:
        truths = self.child.eval(ctx)
        if truths.data.ndim <= 1:
            return truths
        axes = tuple(range(1, truths.data.ndim))
        return forall_agg(truths, ctx.agg, axes=axes)


# ----- axiom builders -----

def axiom_all_different(group: list[int]) -> Formula:
    """No two cells of the group may share a digit:
    forall pairs (i != j), forall digits v: not(P[i,v] and P[j,v])."""
    if len(set(group)) != len(group):
        raise ValueError(f"duplicate cells in all_different group: {group}")
    cells = list(group)
    if len(cells) < 2:
        # vacuous truth for a single-cell group
        return Atom("vacuous", lambda ctx: ad.Tensor(np.ones(ctx.probs.shape[0])))
    left = [cells[i] for i in range(len(cells)) for j in range(i + 1, len(cells))]
    right = [cells[j] for i in range(len(cells)) for j in range(i + 1, len(cells))]

    def ground_left(ctx: EvalContext) -> Tensor:
        return ad.index_select(ctx.digit_probs, 1, left)

    def ground_right(ctx: EvalContext) -> Tensor:
        return ad.index_select(ctx.digit_probs, 1, right)

    return Forall(Not(And(Atom("pair_left", ground_left), Atom("pair_right", ground_right))))


def axiom_exactly_one(cell: int) -> Formula:
    """The cell commits to a single digit: max over its digit beliefs."""

    def ground(ctx: EvalContext) -> Tensor:
        picked = ad.index_select(ctx.cell_max, 1, [cell])
        return ad.reshape(picked, (picked.shape[0],))

    return Atom(f"exactly_one_{cell}", ground)


def _units(n: int, include_boxes: bool) -> list[list[int]]:
    units = [[r * n + c for c in range(n)] for r in range(n)]
    units += [[r * n + c for r in range(n)] for c in range(n)]
    if include_boxes:
        bh, bw = box_shape(n)
        for br in range(0, n, bh):
            for bc in range(0, n, bw):
                units.append([(br + i) * n + (bc + j) for i in range(bh) for j in range(bw)])
    return units


def box_shape(n: int) -> tuple[int, int]:
    if n == 4:
        return 2, 2
    if n == 6:
        return 2, 3
    if n == 9:
        return 3, 3
    raise ValueError(f"unsupported grid size {n}")


def _peer_table(n: int, include_boxes: bool) -> np.ndarray:
    peers = [set() for _ in range(n * n)]
    for unit in _units(n, include_boxes):
        for c in unit:
            peers[c].update(x for x in unit if x != c)
    sizes = {len(p) for p in peers}
    assert len(sizes) == 1, "peer count must be uniform"
    return np.array([sorted(p) for p in peers], dtype=np.intp)


def axiom_naked_single(n: int, include_boxes: bool) -> Formula:
    """If every other digit is blocked by some peer, assert the remaining
    digit: forall cells c, digits v:
    (AND_{u != v} blocked(c,u)) -> P[c,v], with blocked(c,u) the maximal
    peer belief in u."""
    peers = _peer_table(n, include_boxes)
    k = peers.shape[1]
    flat = peers.reshape(-1).tolist()

    def ground(ctx: EvalContext) -> Tensor:
        bsz, cells = ctx.digit_probs.shape[0], n * n
        sel = ad.index_select(ctx.digit_probs, 1, flat)
        sel = ad.reshape(sel, (bsz, cells, k, n))
        blocked = ad.tmax(sel, axis=2)  # (B, C, n)
        total = ad.tsum(blocked, axis=-1, keepdims=True)
        antecedent = ad.relu(total - blocked - float(n - 2))
        return t_implies(antecedent, ctx.digit_probs)

    return Forall(Atom("naked_single", ground))


def axiom_digit_presence(n: int, include_boxes: bool) -> Formula:
    """Every digit occurs in every unit: forall units U, digits v:
    OR_{c in U} P[c,v]."""
    units = np.array(_units(n, include_boxes), dtype=np.intp)
    flat = units.reshape(-1).tolist()
    n_units = units.shape[0]

    def ground(ctx: EvalContext) -> Tensor:
        bsz = ctx.digit_probs.shape[0]
        sel = ad.index_select(ctx.digit_probs, 1, flat)
        sel = ad.reshape(sel, (bsz, n_units, n, n))
        total = ad.tsum(sel, axis=2)  # (B, U, n)
        return 1.0 - ad.relu(1.0 - total)

    return Forall(Atom("digit_presence", ground))


def axiom_naked_pair(n: int, include_boxes: bool) -> Formula:
    """If two cells of a unit are jointly confined to a digit pair, the
    remaining cells of the unit avoid that pair."""
    units = np.array(_units(n, include_boxes), dtype=np.intp)
    n_units = units.shape[0]
    cell_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    digit_pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    pi = [p[0] for p in cell_pairs]
    pj = [p[1] for p in cell_pairs]
    others = [[c for c in range(n) if c != i and c != j] for i, j in cell_pairs]
    others_flat = [c for row in others for c in row]
    du = [p[0] for p in digit_pairs]
    dv = [p[1] for p in digit_pairs]
    flat_units = units.reshape(-1).tolist()

    def ground(ctx: EvalContext) -> Tensor:
        bsz = ctx.digit_probs.shape[0]
        sel = ad.index_select(ctx.digit_probs, 1, flat_units)
        sel = ad.reshape(sel, (bsz, n_units, n, n))  # (B, U, cell-in-unit, digit)
        pm = ad.index_select(sel, 3, du) + ad.index_select(sel, 3, dv)  # (B,U,N,DP)
        pmi = ad.index_select(pm, 2, pi)
        pmj = ad.index_select(pm, 2, pj)
        antecedent = ad.relu(pmi + pmj - 1.0)  # (B,U,CP,DP)
        oth = ad.index_select(pm, 2, others_flat)
        oth = ad.reshape(oth, (bsz, n_units, len(cell_pairs), n - 2, pm.shape[3]))
        consequent = ad.relu(1.0 - ad.tsum(oth, axis=3))
        return 1.0 - ad.relu(antecedent - consequent)

    return Forall(Atom("naked_pair", ground))


def _gauss(d: Tensor, sigma: float) -> Tensor:
    return ad.exp((d * d) * (-1.0 / (2.0 * sigma * sigma)))


def axiom_cage(spec: CageSpec, n: int) -> Formula:
    """Analytic truth of an arithmetic cage on expected cell values.

    add: gaussian kernel around the target of the summed expectations;
    mul/div: the same in log domain; sub/div take the max over both cell
    orderings so the axiom is order-free.
    """
    size = len(spec.cells)
    for r, c in spec.cells:
        if not (0 <= r < n and 0 <= c < n):
            raise ValueError(f"cage cell {(r, c)} outside the {n}x{n} grid")
    if spec.op == "add" and not (size <= spec.target <= size * n):
        raise ValueError(f"add target {spec.target} unreachable with {size} cells of 1..{n}")
    if spec.op == "mul" and not (1 <= spec.target <= n**size):
        raise ValueError(f"mul target {spec.target} unreachable with {size} cells of 1..{n}")
    if spec.op == "sub" and not (1 <= spec.target <= n - 1):
        raise ValueError(f"sub target {spec.target} unreachable for digits 1..{n}")
    if spec.op == "div" and not (2 <= spec.target <= n):
        raise ValueError(f"div target {spec.target} unreachable for digits 1..{n}")
    ids = [r * n + c for r, c in spec.cells]
    sigma = spec.sigma

    def ground(ctx: EvalContext) -> Tensor:
        if spec.op in ("add", "sub"):
            ev = ad.index_select(ctx.expected_value, 1, ids)  # (B, m)
        else:
            ev = ad.index_select(ctx.expected_log_value, 1, ids)
        if spec.op == "add":
            return _gauss(ad.tsum(ev, axis=1) - float(spec.target), sigma)
        if spec.op == "mul":
            return _gauss(ad.tsum(ev, axis=1) - float(np.log(spec.target)), sigma)
        a = ad.reshape(ad.index_select(ev, 1, [0]), (ev.shape[0],))
        b = ad.reshape(ad.index_select(ev, 1, [1]), (ev.shape[0],))
        target = float(spec.target) if spec.op == "sub" else float(np.log(spec.target))
        return ad.maximum(_gauss(a - b - target, sigma), _gauss(b - a - target, sigma))

    return Atom(f"cage_{spec.op}", ground)


# ----- knowledge bases -----

# relative constraint mass per axiom kind in the satisfiability score:
# per-cell commitment axioms carry large errors on uncertain states and
# would otherwise drown out the informative elimination gradients
KIND_WEIGHTS = {
    "all_different": 30.0,
    "exactly_one": 1.0,
    "naked_single": 10.0,
    "digit_presence": 30.0,
    "naked_pair": 10.0,
    "cage": 30.0,
}


@dataclass
class AxiomEntry:
    name: str
    kind: str
    params: dict
    formula: Formula
    weight: float = 1.0


@dataclass
class KnowledgeBase:
    tier: str
    n: int
    include_boxes: bool
    agg: AggregatorConfig
    entries: list[AxiomEntry] = field(default_factory=list)

    @property
    def axiom_names(self) -> list[str]:
        return [e.name for e in self.entries]


def _cells_str(ids: list[int], n: int) -> str:
    return ";".join(f"{c // n},{c % n}" for c in ids)


def build_knowledge_base(n: int, tier: str = "easy", include_boxes: bool = True,
                         cages: tuple[CageSpec, ...] = (),
                         agg: AggregatorConfig | None = None) -> KnowledgeBase:
    """Construct the tiered axiom set for an n x n grid.

    easy: all_different per row/column/box plus exactly_one per cell.
    moderate: easy plus the naked-single implication.
    hard: moderate plus digit-presence (hidden singles) and naked-pair
    axioms. Cage axioms, when given, are appended to whichever tier is
    requested; they carry no learned parameters so they can be injected
    at evaluation time.
    """
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}")
    box_shape(n)  # validates n
    agg = agg or AggregatorConfig()
    kb = KnowledgeBase(tier=tier, n=n, include_boxes=include_boxes, agg=agg)
    unit_names = [f"row{r}" for r in range(n)] + [f"col{c}" for c in range(n)]
    if include_boxes:
        bh, bw = box_shape(n)
        unit_names += [f"box{i}" for i in range((n // bh) * (n // bw))]
    for name, unit in zip(unit_names, _units(n, include_boxes)):
        kb.entries.append(AxiomEntry(
            f"all_different_{name}", "all_different", {"cells": list(unit)},
            axiom_all_different(unit), KIND_WEIGHTS["all_different"]))
    for cell in range(n * n):
        kb.entries.append(AxiomEntry(
            f"exactly_one_{cell // n}_{cell % n}", "exactly_one", {"cell": cell},
            axiom_exactly_one(cell), KIND_WEIGHTS["exactly_one"]))
    if tier in ("moderate", "hard"):
        kb.entries.append(AxiomEntry(
            "naked_single", "naked_single", {}, axiom_naked_single(n, include_boxes),
            KIND_WEIGHTS["naked_single"]))
    if tier == "hard":
        kb.entries.append(AxiomEntry(
            "digit_presence", "digit_presence", {}, axiom_digit_presence(n, include_boxes),
            KIND_WEIGHTS["digit_presence"]))
        kb.entries.append(AxiomEntry(
            "naked_pair", "naked_pair", {}, axiom_naked_pair(n, include_boxes),
            KIND_WEIGHTS["naked_pair"]))
    for i, cage in enumerate(cages):
        kb.entries.append(AxiomEntry(
            f"cage{i}_{cage.op}_{cage.target}", "cage",
            {"op": cage.op, "target": cage.target, "sigma": cage.sigma,
             "cells": [r * n + c for r, c in cage.cells]},
            axiom_cage(cage, n), KIND_WEIGHTS["cage"]))
    return kb


def kb_to_text(kb: KnowledgeBase) -> str:
    """One axiom per line; header records tier, size and aggregator."""
    lines = [f"kb tier={kb.tier} n={kb.n} boxes={int(kb.include_boxes)} p={kb.agg.p:g}"]
    for e in kb.entries:
        if e.kind in ("all_different",):
            body = f"cells={_cells_str(e.params['cells'], kb.n)}"
        elif e.kind == "exactly_one":
            c = e.params["cell"]
            body = f"cell={c // kb.n},{c % kb.n}"
        elif e.kind == "cage":
            p = e.params
            body = (f"op={p['op']} target={p['target']} sigma={p['sigma']:g} "
                    f"cells={_cells_str(p['cells'], kb.n)}")
        else:
            body = ""
        lines.append(" ".join(filter(None, [e.kind, e.name, body, f"weight={e.weight:g}"])))
    return "\n".join(lines) + "\n"


def kb_from_text(text: str) -> KnowledgeBase:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "kb":
        raise ValueError("knowledge base text must start with a 'kb' header line")
    hdr = dict(kv.split("=", 1) for kv in head[1:])
    n = int(hdr["n"])
    include_boxes = bool(int(hdr["boxes"]))
    agg = AggregatorConfig(p=float(hdr["p"]))
    kb = KnowledgeBase(tier=hdr["tier"], n=n, include_boxes=include_boxes, agg=agg)

    def parse_cells(s: str) -> list[int]:
        out = []
        for part in s.split(";"):
            r, c = part.split(",")
            out.append(int(r) * n + int(c))
        return out

    for ln in lines[1:]:
        kind, name, *rest = ln.split()
        kv = dict(item.split("=", 1) for item in rest)
        weight = float(kv.get("weight", KIND_WEIGHTS.get(kind, 1.0)))
        if kind == "all_different":
            cells = parse_cells(kv["cells"])
            kb.entries.append(AxiomEntry(name, kind, {"cells": cells},
                                         axiom_all_different(cells), weight))
        elif kind == "exactly_one":
            r, c = kv["cell"].split(",")
            cell = int(r) * n + int(c)
            kb.entries.append(AxiomEntry(name, kind, {"cell": cell},
                                         axiom_exactly_one(cell), weight))
        elif kind == "naked_single":
            kb.entries.append(AxiomEntry(name, kind, {},
                                         axiom_naked_single(n, include_boxes), weight))
        elif kind == "digit_presence":
            kb.entries.append(AxiomEntry(name, kind, {},
                                         axiom_digit_presence(n, include_boxes), weight))
        elif kind == "naked_pair":
            kb.entries.append(AxiomEntry(name, kind, {},
                                         axiom_naked_pair(n, include_boxes), weight))
        elif kind == "cage":
            cells = kv["cells"]
            spec = CageSpec(
                cells=tuple((cid // n, cid % n) for cid in parse_cells(cells)),
                op=kv["op"], target=int(kv["target"]), sigma=float(kv["sigma"]))
            kb.entries.append(AxiomEntry(
                name, kind,
                {"op": spec.op, "target": spec.target, "sigma": spec.sigma,
                 "cells": parse_cells(cells)},
                axiom_cage(spec, n), weight))
        else:
            raise ValueError(f"unknown axiom kind {kind!r}")
    return kb


# ----- satisfiability -----

def _validate_probs(probs: Tensor, atol: float = 1e-6) -> None:
    d = probs.data
    if not np.isfinite(d).all():
        raise ValueError("belief state contains non-finite values")
    sums = d.sum(axis=-1)
    if np.abs(sums - 1.0).max() > atol:
        raise ValueError(
            f"belief rows must sum to 1 within {atol}, worst deviation "
            f"{np.abs(sums - 1.0).max():.3g}")


def sat(kb: KnowledgeBase, probs: Tensor, check: bool = True) -> Tensor:
    """Degree in [0, 1] to which the belief state satisfies every axiom.

    Per-axiom truths merge through the weighted error-form generalized
    mean 1 - (sum(w_k * (1-a_k)^p) / sum(w_k))^(1/p): the same aggregator
    shape as the universal quantifier, with per-kind weights balancing
    the constraint mass. Accepts (cells, vocab) for a single state or
    (batch, cells, vocab); the result has shape () or (batch,).
    """
    single = probs.data.ndim == 2
    if single:
        probs = ad.reshape(probs, (1,) + probs.shape)
    if check:
        _validate_probs(probs)
    ctx = EvalContext(probs, kb.n, kb.agg)
    bsz = probs.shape[0]
    truths = [ad.reshape(e.formula.eval(ctx), (bsz, 1)) for e in kb.entries]
    stacked = ad.concat(truths, axis=1)
    weights = np.array([e.weight for e in kb.entries])
    p = kb.agg.p
    errs = ad.powc(1.0 - stacked, p)
    weighted = ad.tsum(errs * Tensor(weights / weights.sum()), axis=1)
    out = 1.0 - ad.powc(weighted, 1.0 / p)
    if single:
        out = ad.reshape(out, ())
    return out


def logic_loss(kb: KnowledgeBase, probs: Tensor, check: bool = True) -> Tensor:
    """1 - sat; zero exactly at fully satisfying belief states."""
    return 1.0 - sat(kb, probs, check=check)
