"""The iterative belief-refinement loop.

Each reasoning step refines the belief logits by a few gradient steps on
the logical loss (model weights held fixed), commits softly to a discrete
hypothesis through a Gumbel-Softmax sample, blends the two, and asks a
small halting head whether to stop.

The inner gradient is computed on its own tape and enters the outer graph
as a constant, so the outer backward pass differentiates through the loop
via the identity path of each update; this trains the upstream network to
produce refinable states without second-order derivatives. In eval mode
the Gumbel noise is replaced by the deterministic tempered softmax and the
whole loop runs tape-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fuzzy import KnowledgeBase, logic_loss, sat
from .nn import MlpSpec, ParamSet, mlp_apply
from .perception import BeliefState, vocab_size


@dataclass
class LoopConfig:
    t_max: int = 20
    inner_steps: int = 3
    inner_lr: float = 0.1
    tau_start: float = 1.0
    tau_end: float = 0.1
    tau_anneal_epochs: int = 50
    tau_schedule: str = "linear"
    alpha: float = 0.5
    halt_threshold: float = 0.5

    def __post_init__(self):
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be at least 1")
        if self.inner_lr <= 0:
            raise ValueError("inner_lr must be positive")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if not (0.0 < self.tau_end <= self.tau_start <= 1.0):
            raise ValueError("tau schedule must stay within (0, 1]")
        if self.tau_schedule not in ("linear", "exponential"):
            raise ValueError(f"unknown tau schedule {self.tau_schedule!r}")

    def tau_at(self, epoch: int) -> float:
        """Annealed temperature; clamped to [tau_end, tau_start]."""
        frac = min(max(epoch, 0), self.tau_anneal_epochs) / self.tau_anneal_epochs
        if self.tau_schedule == "linear":
            return self.tau_start + (self.tau_end - self.tau_start) * frac
        return float(self.tau_start * (self.tau_end / self.tau_start) ** frac)


def halting_spec(n: int) -> MlpSpec:
    return MlpSpec("halt", [vocab_size(n) + 1, 16, 1], output="sigmoid")


def init_reasoner(params: ParamSet, n: int, rng: np.random.Generator) -> None:
    params.add_mlp(halting_spec(n), rng)


def inner_refine(state: BeliefState, kb: KnowledgeBase, k: int,
                 inner_lr: float) -> BeliefState:
    """k SGD steps on the cell logits against the logical loss.

    Model weights are untouched; each gradient is taken on a detached
    copy of the logits so only the constant-step update lands on the
    caller's tape. The softmax parameterization keeps every intermediate
    state a valid distribution.
    """
    logits = state.logits
    for step in range(k):
        with ad.Tape() as tape:
            leaf = Tensor(logits.data, requires_grad=True)
            loss = logic_loss(kb, ad.softmax(leaf, axis=-1), check=False)
            total = ad.tsum(loss)
            grads = tape.backward(total)
        g = grads.get(leaf)
        if g is None:
            g = np.zeros_like(leaf.data)
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite inner gradient at refinement step {step}")
        logits = logits - Tensor(inner_lr * g)
    return BeliefState(logits, state.n)


def gumbel_sample(logits: Tensor, tau: float, rng: np.random.Generator) -> Tensor:
    """Relaxed one-hot sample per cell: softmax((logits + g) / tau)."""
    if tau <= 0:
        raise ValueError(f"gumbel temperature must be positive, got {tau}")
    u = rng.uniform(size=logits.shape)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    g = -np.log(-np.log(u))
    return ad.softmax((logits + Tensor(g)) * (1.0 / tau), axis=-1)


def deterministic_sample(logits: Tensor, tau: float) -> Tensor:
    """Noise-free eval-path commitment: tempered softmax of the logits."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return ad.softmax(logits * (1.0 / tau), axis=-1)


def update_belief(refined: BeliefState, sample: Tensor, alpha: float) -> BeliefState:
    """Convex blend of the committed sample and the refined distribution,
    carried back to logit space."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    blend = sample * alpha + refined.probs * (1.0 - alpha)
    logits = ad.log(ad.clamp(blend, lo=1e-30))
    return BeliefState(logits, refined.n)


def halt_prob(params: ParamSet, state: BeliefState) -> Tensor:
    """Halting probability from a globally pooled view of the beliefs:
    mean cell distribution concatenated with mean cell entropy."""
    pooled = ad.tmean(state.probs, axis=1)  # (B, V)
    mean_entropy = ad.tmean(state.entropy(), axis=1, keepdims=True)  # (B, 1)
    out = mlp_apply(params, halting_spec(state.n), ad.concat([pooled, mean_entropy], axis=-1))
    return ad.reshape(out, (out.shape[0],))


@dataclass
class TraceStep:
    probs: np.ndarray
    sat: np.ndarray
    logic_loss: np.ndarray
    halt: np.ndarray
    tau: float


@dataclass
class Trace:
    steps: list[TraceStep] = field(default_factory=list)
    halted_at: np.ndarray | None = None
    final_probs: np.ndarray | None = None
    # train mode keeps graph-connected objects for backpropagation
    step_states: list[BeliefState] = field(default_factory=list)
    step_halts: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def to_json(self, n: int) -> dict:
        grids = []
        for s in self.steps:
            idx = s.probs.argmax(axis=-1)
            grids.append(np.where(idx < n, idx + 1, 0).reshape(-1, n, n).tolist())
        return {
            "steps": [
                {"sat": s.sat.tolist(), "logic_loss": s.logic_loss.tolist(),
                 "halt_prob": s.halt.tolist(), "tau": s.tau, "argmax_grid": grids[i]}
                for i, s in enumerate(self.steps)
            ],
            "halted_at": self.halted_at.tolist() if self.halted_at is not None else None,
        }


def run_loop(state0: BeliefState, kb: KnowledgeBase, params: ParamSet,
             config: LoopConfig, mode: str, tau: float,
             rng: np.random.Generator | None = None,
             t_steps: int | None = None) -> Trace:
    """Unroll the refinement loop from an initial belief state.

    train: runs exactly ``t_steps`` steps with Gumbel noise, recording
    graph-connected states for backpropagation through time.
    eval: noise-free; each batch element freezes at its halting step
    (halt probability above threshold) or at ``t_max``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode requires an rng for the Gumbel samples")
    horizon = t_steps if t_steps is not None else config.t_max
    trace = Trace()
    state = state0
    bsz = state.batch_size
    if mode == "eval":
        halted = np.zeros(bsz, dtype=bool)
        halted_at = np.full(bsz, horizon, dtype=np.int64)
        frozen_probs = state.probs.data.copy()

    for t in range(1, horizon + 1):
        refined = inner_refine(state, kb, config.inner_steps, config.inner_lr)
        if mode == "train":
            sample = gumbel_sample(refined.logits, tau, rng)
        else:
            sample = deterministic_sample(refined.logits, tau)
        state = update_belief(refined, sample, config.alpha)
        h = halt_prob(params, state)
        sat_now = sat(kb, state.probs, check=False).data.copy()
        trace.steps.append(TraceStep(
            probs=state.probs.data.copy(), sat=sat_now, logic_loss=1.0 - sat_now,
            halt=h.data.copy(), tau=tau))
        if mode == "train":
            trace.step_states.append(state)
            trace.step_halts.append(h)
        else:
            just_halted = (~halted) & (h.data > config.halt_threshold)
            halted_at[just_halted] = t
            frozen_probs[~halted] = state.probs.data[~halted]
            halted |= just_halted
            if halted.all():
                break
            # carry frozen rows forward so halted elements stop moving
            carried = np.where(halted[:, None, None], frozen_probs,
                               state.probs.data)
            state = BeliefState(Tensor(np.log(np.clip(carried, 1e-30, None))), state.n)

    if mode == "eval":
        trace.halted_at = halted_at
        trace.final_probs = frozen_probs
    else:
        trace.halted_at = np.full(bsz, horizon, dtype=np.int64)
        trace.final_probs = state.probs.data.copy()
    return trace
