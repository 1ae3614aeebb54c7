"""Cross-view tracking head: multi-scale masked pooling, FiLM view modulation,
and the intra/inter-view consistency objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from ..core import ConfigError, DegenerateInputError
from .attention import l2_normalize


@dataclass(frozen=True)
class MLP:
    """Two-layer perceptron with a ReLU hidden layer."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.w1 + self.b1, 0.0) @ self.w2 + self.b2

    @classmethod
    def random(cls, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator) -> "MLP":
        return cls(
            rng.standard_normal((d_in, d_hidden)) / np.sqrt(d_in),
            0.1 * rng.standard_normal(d_hidden),
            rng.standard_normal((d_hidden, d_out)) / np.sqrt(d_hidden),
            0.1 * rng.standard_normal(d_out),
        )


@dataclass(frozen=True)
class CgctInputs:
    features: tuple[np.ndarray, ...]  # per scale, (d_l, H_l, W_l)
    fuse: MLP
    film: MLP
    delta: float = 0.5
    lambda_inter: float = 1.0

    def __post_init__(self):
        if not self.features:
            raise ConfigError("CGCT needs at least one feature scale")
        if self.delta < 0 or self.lambda_inter < 0:
            raise ConfigError("delta and lambda_inter must be nonnegative")
        d_cat = sum(f.shape[0] for f in self.features)
        if self.fuse.w1.shape[0] != d_cat:
            raise ConfigError(f"fuse MLP expects {self.fuse.w1.shape[0]} inputs, scales give {d_cat}")
        if self.film.w2.shape[1] != 2 * self.fuse.w2.shape[1]:
            raise ConfigError("FiLM MLP must emit [gamma, beta] of the embedding width")

    @property
    def d(self) -> int:
        return self.fuse.w2.shape[1]

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        widths: Sequence[int] = (6, 10),
        sizes: Sequence[int] = (8, 4),
        d: int = 8,
        d_view: int = 8,
        delta: float = 0.5,
    ) -> "CgctInputs":
        feats = tuple(rng.standard_normal((c, s, s)) for c, s in zip(widths, sizes))
        return cls(
            features=feats,
            fuse=MLP.random(sum(widths), 2 * d, d, rng),
            film=MLP.random(d_view, 2 * d, 2 * d, rng),
            delta=delta,
        )


def resample_mask(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Block-average when the grid divides evenly, nearest-cell sampling otherwise."""
    h, w = mask.shape
    th, tw = shape
    if (h, w) == (th, tw):
        return mask.astype(float)
    if h % th == 0 and w % tw == 0:
        return mask.astype(float).reshape(th, h // th, tw, w // tw).mean(axis=(1, 3))
    rows = np.minimum(((np.arange(th) + 0.5) * h / th).astype(int), h - 1)
    cols = np.minimum(((np.arange(tw) + 0.5) * w / tw).astype(int), w - 1)
    return mask.astype(float)[np.ix_(rows, cols)]


def masked_pool(feature: np.ndarray, mask: np.ndarray) -> np.ndarray:
    weight = mask.sum()
    if weight <= 0:
        raise DegenerateInputError("masked pooling over an empty mask")
    return np.einsum("dhw,hw->d", feature, mask) / weight


def fused_feature(inp: CgctInputs, mask: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
    masks = list(mask) if isinstance(mask, (list, tuple)) else [resample_mask(mask, f.shape[1:]) for f in inp.features]
    pooled = [masked_pool(f, m) for f, m in zip(inp.features, masks)]
    return l2_normalize(inp.fuse(np.concatenate(pooled)))


def film_modulate(f: np.ndarray, e_view: np.ndarray, film: MLP, delta: float) -> np.ndarray:
    gb = film(e_view)
    gamma, beta = gb[: f.shape[0]], gb[f.shape[0]:]
    return l2_normalize((1 + delta * np.tanh(gamma)) * f + delta * beta)


def cgct_embed(inp: CgctInputs, mask, e_view: np.ndarray) -> np.ndarray:
    """View-modulated identity embedding for one candidate mask."""
    return film_modulate(fused_feature(inp, mask), e_view, inp.film, inp.delta)


Embeddings = Mapping[tuple[Hashable, Hashable], np.ndarray]


def _prototypes(embeddings: Embeddings):
    by_id: dict[Hashable, list[tuple[Hashable, np.ndarray]]] = {}
    for (g, view), z in embeddings.items():
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[0] == 0:
            raise ConfigError(f"embeddings for ({g}, {view}) must be a nonempty (n, d) array")
        by_id.setdefault(g, []).append((view, z))
    return by_id


def cgct_loss(embeddings: Embeddings, lambda_inter: float = 1.0) -> float:
    """Sum over identities of within-view spread around the view prototype plus
    ``lambda_inter`` times the spread of view prototypes around the identity prototype.

    ``embeddings[(identity, view)]`` is an ``(n, d)`` array of instance embeddings;
    the identity prototype is the mean over all of the identity's instances.
    """
    total = 0.0
    for g, items in _prototypes(embeddings).items():
        z_all = np.concatenate([z for _, z in items])
        z_g = z_all.mean(axis=0)
        for _, z in items:
            z_gi = z.mean(axis=0)
            total += float(np.sum((z - z_gi) ** 2)) + lambda_inter * float(np.sum((z_gi - z_g) ** 2))
    return total


def cgct_grad(embeddings: Embeddings, lambda_inter: float = 1.0) -> dict:
    grads = {}
    for g, items in _prototypes(embeddings).items():
        n_total = sum(z.shape[0] for _, z in items)
        z_g = np.concatenate([z for _, z in items]).mean(axis=0)
        means = {view: z.mean(axis=0) for view, z in items}
        # d/dz_g of sum_i ||m_i - z_g||^2, pushed back through z_g = mean of all instances
        back = -2 * lambda_inter * sum(means[v] - z_g for v, _ in items) / n_total
        for view, z in items:
            n_i = z.shape[0]
            grads[(g, view)] = 2 * (z - means[view]) + 2 * lambda_inter * (means[view] - z_g) / n_i + back
    return grads
