"""Dynamic view token, EMA smoothing and view-conditioned cross attention.

Token matrices are row-major: ``(n_tokens, dim)``; projections multiply on the right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ConfigError, DegenerateInputError


def l2_normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    n = np.linalg.norm(x, axis=axis, keepdims=True)
    if np.any(n == 0):
        raise DegenerateInputError("normalising a zero vector")
    return x / n


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass(frozen=True)
class ViewTokenState:
    """Per-view token state carried across frames by the caller."""

    g: np.ndarray
    w_view: np.ndarray
    lambda_dyn: float = 1.0
    alpha: float = 0.9
    e_prev: np.ndarray | None = None

    def __post_init__(self):
        d = self.g.shape[0]
        if self.w_view.shape != (d, d):
            raise ConfigError(f"w_view must be ({d}, {d}), got {self.w_view.shape}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha={self.alpha} outside [0, 1]")
        if self.lambda_dyn < 0:
            raise ConfigError(f"lambda_dyn={self.lambda_dyn} is negative")
        if self.e_prev is not None and self.e_prev.shape != (d,):
            raise ConfigError("e_prev has the wrong dimension")

    def step(self, feature_map: np.ndarray) -> tuple[np.ndarray, "ViewTokenState"]:
        """Token for the next frame and the state to carry forward."""
        e_hat = dynamic_view_token(self, feature_map)
        e = ema_smooth(self.e_prev, e_hat, self.alpha)
        return e, ViewTokenState(self.g, self.w_view, self.lambda_dyn, self.alpha, e)


def dynamic_view_token(state: ViewTokenState, feature_map: np.ndarray) -> np.ndarray:
    """``Norm(g + lambda_dyn * Norm(W_view @ avgpool(F)))`` for ``F`` of shape ``(d, H, W)``."""
    pooled = feature_map.reshape(feature_map.shape[0], -1).mean(axis=1)
    if state.lambda_dyn == 0:
        return l2_normalize(state.g)
    return l2_normalize(state.g + state.lambda_dyn * l2_normalize(state.w_view @ pooled))


def ema_smooth(e_prev: np.ndarray | None, e_hat: np.ndarray, alpha: float) -> np.ndarray:
    if e_prev is None:
        return e_hat
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha={alpha} outside [0, 1]")
    return l2_normalize(alpha * e_prev + (1 - alpha) * e_hat)


@dataclass(frozen=True)
class MHAParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    heads: int

    def __post_init__(self):
        d = self.wq.shape[1]
        if d % self.heads:
            raise ConfigError(f"width {d} not divisible by {self.heads} heads")

    @classmethod
    def random(cls, dim: int, heads: int, rng: np.random.Generator, scale: float | None = None) -> "MHAParams":
        s = scale if scale is not None else 1 / np.sqrt(dim)
        return cls(*(rng.standard_normal((dim, dim)) * s for _ in range(4)), heads=heads)


def multi_head_attention(
    queries: np.ndarray, keys: np.ndarray, values: np.ndarray, p: MHAParams, return_weights: bool = False
):
    """Scaled dot-product attention per head, heads concatenated then output-projected.

    Weights, if returned, have shape ``(heads, n_queries, n_keys)``.
    """
    q, k, v = queries @ p.wq, keys @ p.wk, values @ p.wv
    n, m, width = q.shape[0], k.shape[0], q.shape[1]
    dh = width // p.heads
    qh = q.reshape(n, p.heads, dh).transpose(1, 0, 2)
    kh = k.reshape(m, p.heads, dh).transpose(1, 0, 2)
    vh = v.reshape(m, p.heads, dh).transpose(1, 0, 2)
    weights = softmax(qh @ kh.transpose(0, 2, 1) / np.sqrt(dh), axis=-1)
    out = (weights @ vh).transpose(1, 0, 2).reshape(n, width) @ p.wo
    return (out, weights) if return_weights else out


@dataclass(frozen=True)
class AttentionWeights:
    """Adapter weights: bottleneck projections, per-branch attention, view-bias maps."""

    visual: MHAParams
    text: MHAParams
    v_down: np.ndarray  # (d, d_s)
    t_down: np.ndarray  # (d, d_s)
    v_up: np.ndarray  # (d_s, d)
    t_up: np.ndarray  # (d_s, d)
    w_u: np.ndarray  # (d_view, d_s)
    w_r: np.ndarray  # (d_view, d_s)

    def __post_init__(self):
        d, d_s = self.v_down.shape
        if d_s >= d:
            raise ConfigError(f"bottleneck width {d_s} must be below {d}")
        if self.v_up.shape != (d_s, d) or self.t_up.shape != (d_s, d) or self.t_down.shape != (d, d_s):
            raise ConfigError("bottleneck projections have inconsistent shapes")
        if self.w_u.shape[1] != d_s or self.w_r.shape[1] != d_s:
            raise ConfigError("view-bias maps must project to the bottleneck width")

    @property
    def d(self) -> int:
        return self.v_down.shape[0]

    @property
    def d_s(self) -> int:
        return self.v_down.shape[1]

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, d_s: int | None = None, heads: int = 2) -> "AttentionWeights":
        d_s = d_s or d // 2

        def mat(r, c):
            return rng.standard_normal((r, c)) / np.sqrt(r)

        return cls(
            visual=MHAParams.random(d_s, heads, rng),
            text=MHAParams.random(d_s, heads, rng),
            v_down=mat(d, d_s),
            t_down=mat(d, d_s),
            v_up=mat(d_s, d),
            t_up=mat(d_s, d),
            w_u=mat(d, d_s),
            w_r=mat(d, d_s),
        )


def vcca(
    u: np.ndarray, r: np.ndarray, e: np.ndarray, w: AttentionWeights, branch: str = "visual", return_weights=False
):
    """``U * MHA(U + e W_u, R + e W_r, R)``: view bias on queries and keys, values untouched."""
    p = w.visual if branch == "visual" else w.text
    out, weights = multi_head_attention(u + e @ w.w_u, r + e @ w.w_r, r, p, return_weights=True)
    gated = u * out
    return (gated, weights) if return_weights else gated


def visual_update(x_t: np.ndarray, t_text: np.ndarray, e_frame: np.ndarray, w: AttentionWeights) -> np.ndarray:
    return x_t + vcca(x_t @ w.v_down, t_text @ w.t_down, e_frame, w, "visual") @ w.v_up


def text_update(t_text: np.ndarray, x_clip: np.ndarray, e_frames: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Text tokens attend to the clip mean of bottleneck visual tokens under the clip-mean view token.

    ``x_clip`` is ``(T, n, d)``, ``e_frames`` is ``(T, d_view)``.
    """
    x_clip = np.asarray(x_clip)
    e_frames = np.asarray(e_frames)
    if x_clip.ndim != 3 or x_clip.shape[0] < 1 or e_frames.shape[0] != x_clip.shape[0]:
        raise ConfigError("x_clip must be (T, n, d) with one view token per frame")
    x_bar = (x_clip @ w.v_down).mean(axis=0)
    e_clip = e_frames.mean(axis=0)
    return t_text + vcca(t_text @ w.t_down, x_bar, e_clip, w, "text") @ w.t_up
