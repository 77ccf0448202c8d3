import numpy as np
import pytest

from iltn import autodiff as ad
from iltn import fuzzy
from iltn.fuzzy import (AggregatorConfig, CageSpec, axiom_all_different,
                        axiom_cage, axiom_exactly_one, build_knowledge_base,
                        forall_agg, kb_from_text, kb_to_text, logic_loss, sat,
                        t_and, t_not, t_or)

VALID_4X4 = [
    [1, 2, 3, 4],
    [3, 4, 1, 2],
    [2, 1, 4, 3],
    [4, 3, 2, 1],
]


def one_hot_state(grid, n):
    """(cells, vocab) one-hot beliefs; vocab = digits 1..n then blank."""
    cells = n * n
    p = np.zeros((cells, n + 1))
    for r in range(n):
        for c in range(n):
            v = grid[r][c]
            p[r * n + c, (v - 1) if v else n] = 1.0
    return p


def sat_oracle_easy(p, n, exponent=2.0):
    """Straight-line numpy reimplementation of easy-tier satisfiability."""
    units = [[r * n + c for c in range(n)] for r in range(n)]
    units += [[r * n + c for r in range(n)] for c in range(n)]
    bh, bw = fuzzy.box_shape(n)
    for br in range(0, n, bh):
        for bc in range(0, n, bw):
            units.append([(br + i) * n + (bc + j) for i in range(bh) for j in range(bw)])
    digits = p[:, :n]
    truths, weights = [], []
    for unit in units:
        atoms = []
        for a in range(len(unit)):
            for b in range(a + 1, len(unit)):
                for v in range(n):
                    pair = max(0.0, digits[unit[a], v] + digits[unit[b], v] - 1.0)
                    atoms.append(1.0 - pair)
        errs = (1.0 - np.array(atoms)) ** exponent
        truths.append(1.0 - errs.mean() ** (1.0 / exponent))
        weights.append(fuzzy.KIND_WEIGHTS["all_different"])
    for cell in range(n * n):
        truths.append(digits[cell].max())
        weights.append(fuzzy.KIND_WEIGHTS["exactly_one"])
    errs = (1.0 - np.array(truths)) ** exponent
    w = np.array(weights) / np.sum(weights)
    return 1.0 - np.sum(w * errs) ** (1.0 / exponent)


def test_t_and_examples():
    assert t_and(ad.Tensor(1.0), ad.Tensor(1.0)).item() == 1.0
    assert t_and(ad.Tensor(0.7), ad.Tensor(0.6)).item() == pytest.approx(0.3)
    assert t_and(ad.Tensor(0.3), ad.Tensor(0.4)).item() == 0.0


def test_t_or_examples():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=100)
    np.testing.assert_allclose(t_or(ad.Tensor(0.0), ad.Tensor(x)).data, x)
    assert t_or(ad.Tensor(0.7), ad.Tensor(0.6)).item() == 1.0
    np.testing.assert_allclose(t_not(t_not(ad.Tensor(x))).data, x, atol=1e-15)


def test_truth_range_rejected():
    with pytest.raises(ValueError, match="truth"):
        t_and(ad.Tensor(1.2), ad.Tensor(0.5))
    with pytest.raises(ValueError, match="truth"):
        t_or(ad.Tensor(-0.1), ad.Tensor(0.5))


def test_lukasiewicz_laws_bulk():
    rng = np.random.default_rng(42)
    a, b, c = (ad.Tensor(rng.uniform(size=10_000)) for _ in range(3))
    tol = 1e-12
    np.testing.assert_allclose(t_and(a, b).data, t_and(b, a).data, atol=tol)
    np.testing.assert_allclose(t_and(t_and(a, b), c).data,
                               t_and(a, t_and(b, c)).data, atol=tol)
    np.testing.assert_allclose(t_and(a, ad.Tensor(np.ones(10_000))).data, a.data, atol=tol)
    np.testing.assert_allclose(t_and(a, ad.Tensor(np.zeros(10_000))).data, 0.0, atol=tol)
    # monotonicity in each argument
    a2 = ad.Tensor(np.minimum(a.data + rng.uniform(size=10_000) * 0.3, 1.0))
    assert (t_and(a2, b).data >= t_and(a, b).data - tol).all()


def test_de_morgan_duality():
    rng = np.random.default_rng(7)
    a = ad.Tensor(rng.uniform(size=10_000))
    b = ad.Tensor(rng.uniform(size=10_000))
    lhs = t_not(t_and(a, b)).data
    rhs = t_or(t_not(a), t_not(b)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_forall_agg_examples():
    cfg = AggregatorConfig(p=2.0)
    assert forall_agg(ad.Tensor(np.ones(9)), cfg).item() == 1.0
    two = forall_agg(ad.Tensor([1.0, 0.0]), cfg).item()
    assert two == pytest.approx(1.0 - np.sqrt(0.5), abs=1e-12)
    for p in (1.0, 2.0, 3.0, 0.5):
        out = forall_agg(ad.Tensor(np.full(7, 0.37)), AggregatorConfig(p=p)).item()
        assert out == pytest.approx(0.37, abs=1e-12)


def test_forall_agg_monotone_and_permutation_invariant():
    rng = np.random.default_rng(3)
    cfg = AggregatorConfig()
    x = rng.uniform(size=50)
    base = forall_agg(ad.Tensor(x), cfg).item()
    assert forall_agg(ad.Tensor(rng.permutation(x)), cfg).item() == pytest.approx(base, abs=1e-14)
    x2 = x.copy()
    x2[7] = min(1.0, x2[7] + 0.2)
    assert forall_agg(ad.Tensor(x2), cfg).item() >= base


def test_forall_agg_empty_rejected():
    with pytest.raises(ValueError, match="empty"):
        forall_agg(ad.Tensor(np.zeros(0)), AggregatorConfig())


def test_sat_valid_grid_is_one():
    kb = build_knowledge_base(4, "easy")
    p = one_hot_state(VALID_4X4, 4)
    assert sat(kb, ad.Tensor(p)).item() == 1.0


def test_sat_row_duplicate_below_one():
    grid = [row[:] for row in VALID_4X4]
    grid[0][0], grid[1][0] = grid[1][0], grid[0][0]  # row duplicates in rows 0 and 1
    kb = build_knowledge_base(4, "easy")
    value = sat(kb, ad.Tensor(one_hot_state(grid, 4))).item()
    assert value < 1.0


def test_sat_matches_straight_line_oracle_on_uniform_and_random():
    kb = build_knowledge_base(4, "easy")
    uniform = np.full((16, 5), 0.2)
    got = sat(kb, ad.Tensor(uniform)).item()
    want = sat_oracle_easy(uniform, 4)
    assert got == pytest.approx(want, abs=1e-12)

    rng = np.random.default_rng(11)
    logits = rng.normal(size=(16, 5))
    p = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    assert sat(kb, ad.Tensor(p)).item() == pytest.approx(sat_oracle_easy(p, 4), abs=1e-12)


def test_sat_rejects_bad_states():
    kb = build_knowledge_base(4, "easy")
    bad = np.full((16, 5), 0.25)
    with pytest.raises(ValueError, match="sum to 1"):
        sat(kb, ad.Tensor(bad))
    nan = np.full((16, 5), 0.2)
    nan[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        sat(kb, ad.Tensor(nan))


def test_logic_loss_complement_and_gradient():
    kb = build_knowledge_base(4, "easy")
    p = one_hot_state(VALID_4X4, 4)
    assert logic_loss(kb, ad.Tensor(p)).item() == 0.0

    rng = np.random.default_rng(5)
    logits = rng.normal(size=(16, 5)) * 0.5
    probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    t = ad.Tensor(probs, requires_grad=True)
    with ad.Tape() as tape:
        loss = logic_loss(kb, t)
        grads = tape.backward(loss)
    g = grads[t]
    h = 1e-5
    fd = np.zeros_like(probs)
    for idx in [(0, 0), (3, 2), (7, 4), (15, 1), (9, 3)]:
        pp, pm = probs.copy(), probs.copy()
        pp[idx] += h
        pm[idx] -= h
        fp = logic_loss(kb, ad.Tensor(pp), check=False).item()
        fm = logic_loss(kb, ad.Tensor(pm), check=False).item()
        fd[idx] = (fp - fm) / (2 * h)
        assert g[idx] == pytest.approx(fd[idx], rel=1e-4, abs=1e-8)


def test_logic_loss_gradient_zero_at_optimum():
    kb = build_knowledge_base(4, "easy")
    t = ad.Tensor(one_hot_state(VALID_4X4, 4), requires_grad=True)
    with ad.Tape() as tape:
        grads = tape.backward(logic_loss(kb, t))
    assert np.all(grads[t] == 0.0)


def test_all_different_axiom_values():
    cfg = AggregatorConfig()
    ctx_p = np.zeros((1, 16, 5))
    ctx_p[0, :, 4] = 1.0  # everything blank
    ctx_p[0, 0] = [1, 0, 0, 0, 0]
    ctx_p[0, 1] = [0, 1, 0, 0, 0]
    ctx = fuzzy.EvalContext(ad.Tensor(ctx_p), 4, cfg)
    f = axiom_all_different([0, 1])
    assert f.eval(ctx).item() == 1.0

    ctx_p[0, 1] = [1, 0, 0, 0, 0]  # both cells one-hot on the same digit
    ctx = fuzzy.EvalContext(ad.Tensor(ctx_p), 4, cfg)
    # one violated pair term among 4 digit slots: 1 - sqrt(1/4) = 0.5
    assert f.eval(ctx).item() == pytest.approx(0.5, abs=1e-12)

    single = axiom_all_different([3])
    assert single.eval(ctx).item() == 1.0

    with pytest.raises(ValueError, match="duplicate"):
        axiom_all_different([2, 2])


def test_exactly_one_axiom_values():
    cfg = AggregatorConfig()
    p = np.zeros((1, 16, 5))
    p[0, :, 4] = 1.0
    p[0, 0] = [0, 0, 1, 0, 0]
    p[0, 1] = [0.2, 0.2, 0.2, 0.2, 0.2]
    p[0, 2] = [0.5, 0.5, 0, 0, 0]
    ctx = fuzzy.EvalContext(ad.Tensor(p), 4, cfg)
    assert axiom_exactly_one(0).eval(ctx).item() == 1.0
    assert axiom_exactly_one(1).eval(ctx).item() == pytest.approx(0.2)
    assert axiom_exactly_one(2).eval(ctx).item() == pytest.approx(0.5)


def cage_ctx(values, n=4):
    p = np.zeros((1, n * n, n + 1))
    p[0, :, n] = 1.0
    for cell, v in values.items():
        p[0, cell] = 0.0
        p[0, cell, v - 1] = 1.0
    return fuzzy.EvalContext(ad.Tensor(p), n, AggregatorConfig())


def test_cage_axiom_values():
    add = axiom_cage(CageSpec(((0, 0), (0, 1)), "add", 5), 4)
    assert add.eval(cage_ctx({0: 2, 1: 3})).item() == pytest.approx(1.0)

    add6 = axiom_cage(CageSpec(((0, 0), (0, 1)), "add", 6), 4)
    assert add6.eval(cage_ctx({0: 2, 1: 3})).item() == pytest.approx(np.exp(-2.0), rel=1e-12)

    sub = axiom_cage(CageSpec(((0, 0), (0, 1)), "sub", 2), 4)
    # order-free: 5-3 would be out of range for 4x4, use 3 and 1 digits
    assert sub.eval(cage_ctx({0: 3, 1: 1})).item() == pytest.approx(1.0)
    assert sub.eval(cage_ctx({0: 1, 1: 3})).item() == pytest.approx(1.0)

    mul = axiom_cage(CageSpec(((0, 0), (0, 1)), "mul", 12), 4)
    assert mul.eval(cage_ctx({0: 3, 1: 4})).item() == pytest.approx(1.0)

    div = axiom_cage(CageSpec(((0, 0), (0, 1)), "div", 2), 4)
    assert div.eval(cage_ctx({0: 2, 1: 4})).item() == pytest.approx(1.0)
    assert div.eval(cage_ctx({0: 4, 1: 2})).item() == pytest.approx(1.0)


def test_cage_validation():
    with pytest.raises(ValueError, match="unreachable"):
        axiom_cage(CageSpec(((0, 0), (0, 1)), "add", 9), 4)
    with pytest.raises(ValueError, match="unreachable"):
        axiom_cage(CageSpec(((0, 0), (0, 1)), "sub", 4), 4)
    with pytest.raises(ValueError, match="exactly 2"):
        CageSpec(((0, 0), (0, 1), (0, 2)), "div", 2)
    with pytest.raises(ValueError, match="distinct"):
        CageSpec(((0, 0), (0, 0)), "add", 4)
    with pytest.raises(ValueError, match="outside"):
        axiom_cage(CageSpec(((0, 0), (5, 5)), "add", 4), 4)


def test_tier_nesting():
    easy = build_knowledge_base(4, "easy")
    moderate = build_knowledge_base(4, "moderate")
    hard = build_knowledge_base(4, "hard")
    assert set(easy.axiom_names) < set(moderate.axiom_names)
    assert set(moderate.axiom_names) < set(hard.axiom_names)


def test_harder_tiers_still_satisfied_by_valid_solution():
    p = ad.Tensor(one_hot_state(VALID_4X4, 4))
    for tier in ("easy", "moderate", "hard"):
        kb = build_knowledge_base(4, tier)
        assert sat(kb, p).item() == 1.0, tier


def test_kb_text_round_trip():
    cage = CageSpec(((0, 0), (1, 0)), "mul", 6)
    kb = build_knowledge_base(4, "hard", cages=(cage,))
    text = kb_to_text(kb)
    back = kb_from_text(text)
    assert back.axiom_names == kb.axiom_names
    assert back.tier == kb.tier and back.n == kb.n
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(16, 5))
    p = ad.Tensor(np.exp(logits) / np.exp(logits).sum(-1, keepdims=True))
    assert sat(back, p).item() == pytest.approx(sat(kb, p).item(), abs=1e-14)
    assert kb_to_text(back) == text


def test_latin_square_kb_without_boxes():
    # a latin square that violates box constraints must satisfy the
    # row/column-only knowledge base exactly
    latin = [
        [1, 2, 3, 4],
        [2, 3, 4, 1],
        [3, 4, 1, 2],
        [4, 1, 2, 3],
    ]
    p = ad.Tensor(one_hot_state(latin, 4))
    no_boxes = build_knowledge_base(4, "easy", include_boxes=False)
    with_boxes = build_knowledge_base(4, "easy", include_boxes=True)
    assert sat(no_boxes, p).item() == 1.0
    assert sat(with_boxes, p).item() < 1.0
