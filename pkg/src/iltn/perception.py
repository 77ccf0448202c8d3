"""Pixels to symbols: patch encoder, vocabulary projection, embeddings.

The vocabulary for an n x n grid has n digit symbols plus blank; belief
tensors are laid out (batch, cells, vocab) with blank at index n. The
encoder is a shared MLP over per-cell patches, so two identical patches
always produce identical latents.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MlpSpec, ParamSet
from .render import IMAGE_SIZE, cell_bounds

LATENT_DIM = 64
ENCODER_WIDTHS = (128, 128)
DIFF_HIDDEN = 64


def vocab_size(n: int) -> int:
    return n + 1  # digits 1..n plus blank


def blank_index(n: int) -> int:
    return n


def patch_dim(n: int) -> int:
    step = IMAGE_SIZE // n
    return (IMAGE_SIZE - (n - 1) * step) ** 2


def encoder_spec(n: int) -> MlpSpec:
    return MlpSpec("encoder", [patch_dim(n), *ENCODER_WIDTHS, LATENT_DIM])


def projection_spec(n: int) -> MlpSpec:
    return MlpSpec("project", [LATENT_DIM, vocab_size(n)])


def diff_spec() -> MlpSpec:
    return MlpSpec("diff", [2 * LATENT_DIM, DIFF_HIDDEN, 1], output="sigmoid")


def init_perception(params: ParamSet, n: int, rng: np.random.Generator) -> None:
    """Encoder, projection head, difference predicate and embedding tables.

    Symbol and cell embeddings start from a standard normal and train
    thereafter; the MLPs use the 1/fan_in scheme from the nn module.
    """
    params.add_mlp(encoder_spec(n), rng)
    params.add_mlp(projection_spec(n), rng)
    params.add_mlp(diff_spec(), rng)
    params.add("embeddings.digit", rng.normal(size=(vocab_size(n), LATENT_DIM)))
    params.add("embeddings.cell", rng.normal(size=(n * n, LATENT_DIM)))


def image_to_patches(images: np.ndarray, n: int) -> np.ndarray:
    """(B, 84, 84) uint8 -> (B, cells, patch_dim) float64 in [0, 1].

    Cells are cut on the same boundaries the renderer uses; the last row
    and column absorb the remainder pixels, and smaller patches are
    zero-padded to the largest patch size so the encoder input width is
    constant.
    """
    if images.ndim == 2:
        images = images[None]
    if images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} images, got {images.shape[1:]}")
    bounds = cell_bounds(n)
    side = bounds[-1][1] - bounds[-1][0]
    out = np.zeros((images.shape[0], n * n, side, side))
    scaled = images.astype(np.float64) / 255.0
    for r, (r0, r1) in enumerate(bounds):
        for c, (c0, c1) in enumerate(bounds):
            out[:, r * n + c, : r1 - r0, : c1 - c0] = scaled[:, r0:r1, c0:c1]
    return out.reshape(images.shape[0], n * n, side * side)


def encode_cells(params: ParamSet, images: np.ndarray, n: int) -> Tensor:
    """Per-cell latents, shape (batch, cells, 64)."""
    from .nn import mlp_apply
    patches = image_to_patches(images, n)
    return mlp_apply(params, encoder_spec(n), Tensor(patches))


def project_logits(params: ParamSet, latents: Tensor, n: int) -> Tensor:
    """Linear head to vocabulary logits (softmax applied by BeliefState)."""
    from .nn import mlp_apply
    return mlp_apply(params, projection_spec(n), latents)


def project(params: ParamSet, latents: Tensor, n: int) -> Tensor:
    """Distribution over the vocabulary per cell; rows sum to 1."""
    return ad.softmax(project_logits(params, latents, n), axis=-1)


class BeliefState:
    """Per-cell categorical beliefs stored as unconstrained logits."""

    def __init__(self, logits: Tensor, n: int):
        expected = (n * n, vocab_size(n))
        if logits.shape[-2:] != expected:
            raise ValueError(f"belief logits shape {logits.shape} does not end in {expected}")
        self.logits = logits
        self.n = n
        self.probs = ad.softmax(logits, axis=-1)

    @property
    def batch_size(self) -> int:
        return self.probs.shape[0]

    def argmax_grids(self) -> np.ndarray:
        """(B, n, n) grids of digits 1..n, with 0 where blank wins."""
        idx = self.probs.data.argmax(axis=-1)
        grids = np.where(idx < self.n, idx + 1, 0)
        return grids.reshape(-1, self.n, self.n)

    def entropy(self) -> Tensor:
        p = self.probs
        return -ad.tsum(p * ad.log(ad.clamp(p, lo=1e-30)), axis=-1)


def initial_belief(params: ParamSet, images: np.ndarray, n: int) -> BeliefState:
    """Perception output as the reasoner's starting state, logits retained."""
    latents = encode_cells(params, images, n)
    return BeliefState(project_logits(params, latents, n), n)


def diff_predicate(params: ParamSet, z1: Tensor, z2: Tensor) -> Tensor:
    """Learned degree to which two latents denote different symbols.

    Operates on symmetric features (elementwise |z1-z2| and z1*z2), so
    the output is exactly symmetric in its arguments.
    """
    from .nn import mlp_apply
    gap = ad.relu(z1 - z2) + ad.relu(z2 - z1)
    feats = ad.concat([gap, z1 * z2], axis=-1)
    out = mlp_apply(params, diff_spec(), feats)
    return ad.reshape(out, out.shape[:-1])
