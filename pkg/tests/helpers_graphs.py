"""Random composite-graph generator shared by gradient-correctness tests.

A generated program is a list of instructions interpreted over either
Tensor ops (analytic path) or plain float evaluation (finite-difference
path uses the same Tensor interpreter without a tape). Kinked ops report
their distance to the nearest kink so callers can resample inputs that
would make finite differences invalid.
"""

from __future__ import annotations

import numpy as np

from iltn import autodiff as ad

SHAPE = (3, 4)

_UNARY = ["relu", "tanh", "sigmoid", "exp_s", "log_s", "powc", "clamp", "softmax", "neg"]
_BINARY = ["add", "sub", "mul", "div_s", "maximum"]
_REDUCE = ["mean_all", "sum_last", "logsumexp", "max_last"]


def make_program(rng: np.random.Generator, n_ops: int = 8):
    """Build a random op sequence over ``n_leaves`` inputs of shape SHAPE."""
    n_leaves = int(rng.integers(2, 4))
    prog: list[tuple] = []
    live = list(range(n_leaves))
    next_id = n_leaves
    for _ in range(n_ops):
        if rng.random() < 0.45:
            op = _BINARY[rng.integers(len(_BINARY))]
            a, b = rng.choice(live, size=2)
            prog.append((op, int(a), int(b), next_id))
        else:
            op = _UNARY[rng.integers(len(_UNARY))]
            a = rng.choice(live)
            extra = float(rng.uniform(1.5, 3.0)) if op == "powc" else None
            prog.append((op, int(a), extra, next_id))
        live.append(next_id)
        next_id += 1
    red = _REDUCE[rng.integers(len(_REDUCE))]
    prog.append((red, live[-1], None, next_id))
    return n_leaves, prog


def run_program(n_leaves: int, prog, leaf_values: list[np.ndarray]):
    """Interpret the program; returns (scalar Tensor, leaf Tensors, kink margin)."""
    leaves = [ad.Tensor(v, requires_grad=True) for v in leaf_values]
    vals: dict[int, ad.Tensor] = dict(enumerate(leaves))
    margin = np.inf
    for op, a, b, out in prog:
        x = vals[a]
        if op == "add":
            r = ad.add(x, vals[b])
        elif op == "sub":
            r = ad.sub(x, vals[b])
        elif op == "mul":
            r = ad.mul(x, vals[b])
        elif op == "div_s":
            den = ad.add(ad.mul(vals[b], vals[b]), ad.Tensor(0.5))
            r = ad.div(x, den)
        elif op == "maximum":
            y = vals[b]
            margin = min(margin, float(np.abs(x.data - y.data).min()))
            r = ad.maximum(x, y)
        elif op == "relu":
            margin = min(margin, float(np.abs(x.data).min()))
            r = ad.relu(x)
        elif op == "tanh":
            r = ad.tanh(x)
        elif op == "sigmoid":
            r = ad.sigmoid(x)
        elif op == "exp_s":
            r = ad.exp(ad.mul(x, ad.Tensor(0.3)))
        elif op == "log_s":
            r = ad.log(ad.add(ad.mul(x, x), ad.Tensor(0.5)))
        elif op == "powc":
            r = ad.powc(ad.add(ad.mul(x, x), ad.Tensor(0.1)), b)
        elif op == "clamp":
            margin = min(margin, float(np.abs(x.data + 1.5).min()),
                         float(np.abs(x.data - 1.5).min()))
            r = ad.clamp(x, -1.5, 1.5)
        elif op == "softmax":
            r = ad.softmax(x, axis=-1)
        elif op == "neg":
            r = ad.neg(x)
        elif op == "mean_all":
            r = ad.tmean(x)
        elif op == "sum_last":
            r = ad.tmean(ad.tsum(x, axis=-1))
        elif op == "logsumexp":
            r = ad.tmean(ad.logsumexp(x, axis=-1))
        elif op == "max_last":
            d = x.data
            part = np.partition(d.reshape(d.shape[0] if d.ndim > 1 else 1, -1), -2, axis=-1)
            margin = min(margin, float((part[..., -1] - part[..., -2]).min()))
            r = ad.tmean(ad.tmax(x, axis=-1))
        else:  # pragma: no cover
            raise AssertionError(op)
        vals[out] = r
    return vals[next(reversed(sorted(vals)))], leaves, margin


def sample_safe_inputs(rng: np.random.Generator, n_leaves: int, prog,
                       min_margin: float = 5e-2, tries: int = 50):
    """Draw leaf values whose evaluation stays clear of every kink."""
    for _ in range(tries):
        leaf_values = [rng.uniform(-1.5, 1.5, size=SHAPE) for _ in range(n_leaves)]
        _, _, margin = run_program(n_leaves, prog, leaf_values)
        if margin > min_margin:
            return leaf_values
    return None


def finite_difference_grads(n_leaves: int, prog, leaf_values, h: float = 1e-4):
    """Central-difference gradient of the program output per leaf element."""
    grads = []
    for li in range(n_leaves):
        g = np.zeros(SHAPE)
        for idx in np.ndindex(SHAPE):
            plus = [v.copy() for v in leaf_values]
            minus = [v.copy() for v in leaf_values]
            plus[li][idx] += h
            minus[li][idx] -= h
            fp, _, _ = run_program(n_leaves, prog, plus)
            fm, _, _ = run_program(n_leaves, prog, minus)
            g[idx] = (fp.item() - fm.item()) / (2 * h)
        grads.append(g)
    return grads


def check_random_graph(seed: int, rtol: float = 1e-4) -> float:
    """One gradient-correctness trial; returns the worst relative error."""
    rng = np.random.default_rng(seed)
    while True:
        n_leaves, prog = make_program(rng)
        leaf_values = sample_safe_inputs(rng, n_leaves, prog)
        if leaf_values is not None:
            break
    with ad.Tape() as tape:
        root, leaves, _ = run_program(n_leaves, prog, leaf_values)
        grads = tape.backward(root)
    fd = finite_difference_grads(n_leaves, prog, leaf_values)
    worst = 0.0
    for leaf, f in zip(leaves, fd):
        a = grads.get(leaf, np.zeros(SHAPE))
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-3)
        worst = max(worst, float((np.abs(a - f) / denom).max()))
    assert worst <= rtol, f"seed {seed}: worst relative error {worst:.3e}"
    return worst
