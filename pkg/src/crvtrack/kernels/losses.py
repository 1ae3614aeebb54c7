"""Training objectives with closed-form gradients.

Every ``*_loss`` has a ``*_grad`` twin returning the gradient with respect to
the prediction argument(s); :mod:`crvtrack.kernels.gradcheck` checks them.
Probability inputs must lie strictly inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ConfigError, EmptyInputError, UsageError

CLIP_EPS = 1e-7


class DomainError(UsageError):
    pass


def _check_prob(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.size and (np.any(p <= 0) or np.any(p >= 1) or not np.all(np.isfinite(p))):
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    return p


def clip_prob(p, eps: float = CLIP_EPS) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=float), eps, 1 - eps)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1 + np.exp(-np.abs(x))))


# --- binary cross-entropy on probabilities -----------------------------------


def bar_loss(p_hats, labels) -> float:
    """Mean binary cross-entropy of per-frame bias probabilities."""
    p = _check_prob(p_hats)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape or p.size == 0:
        raise UsageError("p_hats and labels must be nonempty and equally shaped")
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def bar_loss_grad(p_hats, labels) -> np.ndarray:
    p = _check_prob(p_hats)
    y = np.asarray(labels, dtype=float)
    return (-(y / p) + (1 - y) / (1 - p)) / p.size


# --- focal + dice ---------------------------------------------------------------


def focal_loss(pred, target, gamma: float = 2.0, alpha: float = 0.25) -> float:
    """Mean focal loss on probabilities; soft targets interpolate the two branches."""
    p = _check_prob(pred)
    y = np.asarray(target, dtype=float)
    pos = -alpha * (1 - p) ** gamma * np.log(p)
    neg = -(1 - alpha) * p**gamma * np.log1p(-p)
    return float(np.mean(y * pos + (1 - y) * neg))


def focal_grad(pred, target, gamma: float = 2.0, alpha: float = 0.25) -> np.ndarray:
    p = _check_prob(pred)
    y = np.asarray(target, dtype=float)
    dpos = -alpha * (-gamma * (1 - p) ** (gamma - 1) * np.log(p) + (1 - p) ** gamma / p)
    dneg = -(1 - alpha) * (gamma * p ** (gamma - 1) * np.log1p(-p) - p**gamma / (1 - p))
    return (y * dpos + (1 - y) * dneg) / p.size


def dice_loss(pred, target, smooth: float = 1.0) -> float:
    p = _check_prob(pred)
    y = np.asarray(target, dtype=float)
    return float(1 - (2 * np.sum(p * y) + smooth) / (np.sum(p) + np.sum(y) + smooth))


def dice_grad(pred, target, smooth: float = 1.0) -> np.ndarray:
    p = _check_prob(pred)
    y = np.asarray(target, dtype=float)
    num = 2 * np.sum(p * y) + smooth
    den = np.sum(p) + np.sum(y) + smooth
    return -(2 * y * den - num) / den**2


def vc_cma_loss(pred_mask, target_mask, gamma: float = 2.0, alpha: float = 0.25, smooth: float = 1.0) -> float:
    if np.shape(pred_mask) != np.shape(target_mask):
        raise UsageError("prediction and target masks differ in shape")
    return focal_loss(pred_mask, target_mask, gamma, alpha) + dice_loss(pred_mask, target_mask, smooth)


def vc_cma_grad(pred_mask, target_mask, gamma: float = 2.0, alpha: float = 0.25, smooth: float = 1.0) -> np.ndarray:
    return focal_grad(pred_mask, target_mask, gamma, alpha) + dice_grad(pred_mask, target_mask, smooth)


# --- proposal branch ------------------------------------------------------------


def smooth_l1(pred, target, beta: float = 1.0) -> float:
    r = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    a = np.abs(r)
    return float(np.mean(np.where(a < beta, 0.5 * r**2 / beta, a - 0.5 * beta)))


def smooth_l1_grad(pred, target, beta: float = 1.0) -> np.ndarray:
    r = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return np.where(np.abs(r) < beta, r / beta, np.sign(r)) / r.size


@dataclass(frozen=True)
class ProposalWeights:
    ctr: float = 1.0
    ctrness: float = 1.0
    wh: float = 1.0
    off: float = 1.0
    gamma: float = 2.0
    alpha: float = 0.25


PROPOSAL_KEYS = ("heatmap", "centerness", "size", "offset")


def _check_proposal_shapes(preds: dict, targets: dict) -> None:
    for k in PROPOSAL_KEYS:
        if k not in preds or k not in targets:
            raise UsageError(f"proposal losses need '{k}' in both predictions and targets")
        if np.shape(preds[k]) != np.shape(targets[k]):
            raise UsageError(f"shape mismatch for '{k}': {np.shape(preds[k])} vs {np.shape(targets[k])}")


def proposal_losses(preds: dict, targets: dict, w: ProposalWeights = ProposalWeights()) -> float:
    """Weighted focal (heatmap, centerness) plus smooth-L1 (size, offset)."""
    _check_proposal_shapes(preds, targets)
    return (
        w.ctr * focal_loss(preds["heatmap"], targets["heatmap"], w.gamma, w.alpha)
        + w.ctrness * focal_loss(preds["centerness"], targets["centerness"], w.gamma, w.alpha)
        + w.wh * smooth_l1(preds["size"], targets["size"])
        + w.off * smooth_l1(preds["offset"], targets["offset"])
    )


def proposal_grad(preds: dict, targets: dict, w: ProposalWeights = ProposalWeights()) -> dict:
    _check_proposal_shapes(preds, targets)
    return {
        "heatmap": w.ctr * focal_grad(preds["heatmap"], targets["heatmap"], w.gamma, w.alpha),
        "centerness": w.ctrness * focal_grad(preds["centerness"], targets["centerness"], w.gamma, w.alpha),
        "size": w.wh * smooth_l1_grad(preds["size"], targets["size"]),
        "offset": w.off * smooth_l1_grad(preds["offset"], targets["offset"]),
    }


# --- matching branch ------------------------------------------------------------


def soft_iou_target(iou, tau_pos: float, tau_neg: float):
    if tau_neg >= tau_pos:
        raise ConfigError(f"tau_neg={tau_neg} must be below tau_pos={tau_pos}")
    return np.clip((np.asarray(iou, dtype=float) - tau_neg) / (tau_pos - tau_neg), 0.0, 1.0)


def _bce_logits(s: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(s, 0) - s * y + np.log1p(np.exp(-np.abs(s)))


def gbce_loss(scores, soft_targets) -> float:
    """BCE-with-logits averaged within the positive (target > 0) and negative
    (target == 0) groups separately, then summed."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(soft_targets, dtype=float)
    if s.size == 0 or s.shape != y.shape:
        raise EmptyInputError("gbce needs nonempty, equally shaped scores and targets")
    per = _bce_logits(s, y)
    pos = y > 0
    total = 0.0
    for group in (pos, ~pos):
        if group.any():
            total += float(per[group].mean())
    return total


def gbce_grad(scores, soft_targets) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(soft_targets, dtype=float)
    pos = y > 0
    counts = np.where(pos, max(int(pos.sum()), 1), max(int((~pos).sum()), 1))
    return (_sigmoid(s) - y) / counts


def rank_hinge_loss(pos_scores, neg_scores, margin: float) -> float:
    sp = np.asarray(pos_scores, dtype=float)
    sn = np.asarray(neg_scores, dtype=float)
    if sp.size == 0 or sn.size == 0:
        raise EmptyInputError("ranking loss needs positive and negative scores")
    return float(np.maximum(0.0, margin - (sp[:, None] - sn[None, :])).mean())


def rank_hinge_grad(pos_scores, neg_scores, margin: float) -> tuple[np.ndarray, np.ndarray]:
    sp = np.asarray(pos_scores, dtype=float)
    sn = np.asarray(neg_scores, dtype=float)
    active = (margin - (sp[:, None] - sn[None, :])) > 0
    n = sp.size * sn.size
    return -active.sum(axis=1) / n, active.sum(axis=0) / n
