"""Bias-aware recalibration: compare memory-free and memory-guided predictions and fuse them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ConfigError, DegenerateInputError
from .attention import MHAParams, l2_normalize, multi_head_attention, softmax


@dataclass(frozen=True)
class BarInputs:
    """Feature maps are ``(d, H, W)``; soft masks are ``(K, H, W)`` with values in [0, 1].

    ``u`` is the memory-free branch, ``b`` the memory-guided one.
    """

    feat_u: np.ndarray
    feat_b: np.ndarray
    masks_u: np.ndarray
    masks_b: np.ndarray
    ref_token: np.ndarray
    bia_token: np.ndarray
    sa: MHAParams
    head_w: np.ndarray
    head_b: float = 0.0

    def __post_init__(self):
        d = self.feat_u.shape[0]
        if self.feat_b.shape != self.feat_u.shape:
            raise ConfigError("pre- and post-memory features differ in shape")
        if self.masks_u.shape != self.masks_b.shape or self.masks_u.shape[1:] != self.feat_u.shape[1:]:
            raise ConfigError("masks are not aligned with the feature maps")
        if self.masks_u.shape[0] < 1:
            raise ConfigError("BAR needs at least one candidate")
        for m in (self.masks_u, self.masks_b):
            if m.min() < 0 or m.max() > 1:
                raise ConfigError("soft mask values must lie in [0, 1]")
        if self.ref_token.shape != (d,) or self.bia_token.shape != (d,) or self.head_w.shape != (d,):
            raise ConfigError("token and head widths must match the feature width")

    @classmethod
    def random(cls, rng: np.random.Generator, d: int = 8, h: int = 6, w: int = 6, k: int = 2) -> "BarInputs":
        return cls(
            feat_u=rng.standard_normal((d, h, w)),
            feat_b=rng.standard_normal((d, h, w)),
            masks_u=rng.uniform(0.01, 1.0, (k, h, w)),
            masks_b=rng.uniform(0.01, 1.0, (k, h, w)),
            ref_token=rng.standard_normal(d),
            bia_token=rng.standard_normal(d),
            sa=MHAParams.random(d, 1, rng),
            head_w=rng.standard_normal(d) / np.sqrt(d),
            head_b=float(rng.standard_normal()),
        )


@dataclass(frozen=True)
class BarOutput:
    p_bias: float
    masks: np.ndarray
    alpha_u: np.ndarray
    alpha_b: np.ndarray
    tau_u: np.ndarray
    tau_b: np.ndarray
    objects_u: np.ndarray
    objects_b: np.ndarray


def object_tokens(feat: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Unit-norm mask-weighted feature means, one row per candidate."""
    weight = masks.reshape(masks.shape[0], -1).sum(axis=1)
    if np.any(weight <= 0):
        raise DegenerateInputError("candidate mask with zero total weight")
    pooled = np.einsum("khw,dhw->kd", masks, feat) / weight[:, None]
    return l2_normalize(pooled, axis=1)


def referring_summary(objects: np.ndarray, ref_token: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    alpha = softmax(objects @ ref_token)
    return alpha, l2_normalize(alpha @ objects)


def bar_fuse(inp: BarInputs, referring: np.ndarray | None = None) -> BarOutput:
    ref = inp.ref_token if referring is None else referring
    o_u = object_tokens(inp.feat_u, inp.masks_u)
    o_b = object_tokens(inp.feat_b, inp.masks_b)
    a_u, tau_u = referring_summary(o_u, ref)
    a_b, tau_b = referring_summary(o_b, ref)
    seq = np.stack([inp.bia_token, ref, tau_u, tau_b])
    attended = multi_head_attention(seq, seq, seq, inp.sa)
    p_bias = float(1.0 / (1.0 + np.exp(-(attended[0] @ inp.head_w + inp.head_b))))
    fused = (1 - p_bias) * inp.masks_b + p_bias * inp.masks_u
    return BarOutput(p_bias, fused, a_u, a_b, tau_u, tau_b, o_u, o_b)


def bar_bias_label(mask_u: np.ndarray, mask_b: np.ndarray) -> int:
    """1 when the two binary masks share no cell (the branches segment different objects)."""
    if mask_u.shape != mask_b.shape:
        raise ConfigError("bias label needs masks on the same grid")
    return int(not np.any(np.logical_and(mask_u, mask_b)))
