"""CVR-IDF1 and CVR-MA.

Identities are matched once per sequence: a single one-to-one assignment
between predicted and ground-truth identities over every (view, frame) slot.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (
    ConfigError,
    CrossViewTrajectory,
    Detection,
    ReferringGroup,
    UsageError,
    box_iou,
    mask_iou,
)

BRUTE_FORCE_LIMIT = 6


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    use_masks: bool = False

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError(f"eval.iou_threshold={self.iou_threshold} outside (0, 1]")


@dataclass(frozen=True)
class IdentityRow:
    gt_id: int
    pred_id: int | None
    idtp: int
    gt_detections: int
    pred_detections: int


@dataclass
class EvalReport:
    cvr_idf1: float
    cvr_ma: float
    idtp: int
    idfp: int
    idfn: int
    per_identity: list[IdentityRow] = field(default_factory=list)
    assignment: dict[int, int] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "cvr_idf1": self.cvr_idf1,
            "cvr_ma": self.cvr_ma,
            "idtp": self.idtp,
            "idfp": self.idfp,
            "idfn": self.idfn,
        }


def detection_iou(a: Detection, b: Detection, cfg: EvalConfig = EvalConfig()) -> float:
    if a.view != b.view or a.frame != b.frame:
        raise UsageError(f"IoU across slots ({a.view},{a.frame}) vs ({b.view},{b.frame})")
    return mask_iou(a.mask, b.mask) if cfg.use_masks else box_iou(a.box, b.box)


def _slots(traj: CrossViewTrajectory) -> dict[tuple[int, int], Detection]:
    return {(v, d.frame): d for v, t in traj.members.items() for d in t.detections}


def _check_indexing(pred: Sequence[CrossViewTrajectory], gt: Sequence[CrossViewTrajectory]) -> None:
    for name, trajs in (("pred", pred), ("gt", gt)):
        ids = [t.global_id for t in trajs]
        if len(set(ids)) != len(ids):
            raise UsageError(f"{name} repeats a global id")
    if not gt:
        return
    gt_views = {v for t in gt for v in t.members}
    bad = {v for t in pred for v in t.members} - gt_views
    if bad and max(bad) > max(gt_views):
        raise UsageError(f"pred uses views {sorted(bad)} beyond the ground truth's range")


def match_matrix(
    pred: Sequence[CrossViewTrajectory], gt: Sequence[CrossViewTrajectory], cfg: EvalConfig = EvalConfig()
) -> np.ndarray:
    """``m[g, p]`` = number of slots where gt ``g`` and pred ``p`` match (IoU >= threshold)."""
    pslots = [_slots(p) for p in pred]
    m = np.zeros((len(gt), len(pred)), dtype=np.int64)
    for gi, g in enumerate(gt):
        gs = _slots(g)
        for pi, ps in enumerate(pslots):
            common = gs.keys() & ps.keys()
            m[gi, pi] = sum(detection_iou(gs[k], ps[k], cfg) >= cfg.iou_threshold for k in common)
    return m


def _best_total(m: np.ndarray) -> int:
    if m.size == 0:
        return 0
    r, c = linear_sum_assignment(m, maximize=True)
    return int(m[r, c].sum())


def optimal_assignment(m: np.ndarray) -> dict[int, int]:
    """Maximum-weight matching of rows to columns, lexicographically smallest among optima.

    Row by row, the smallest column that keeps the optimum reachable is fixed.
    Zero-weight pairs are left out.
    """
    target = _best_total(m)
    rows_left = list(range(m.shape[0]))
    cols_left = list(range(m.shape[1]))
    fixed: dict[int, int] = {}
    gained = 0
    for r in range(m.shape[0]):
        rows_left.remove(r)
        for c in cols_left:
            if m[r, c] == 0:
                continue
            rest = [cc for cc in cols_left if cc != c]
            if gained + m[r, c] + _best_total(m[np.ix_(rows_left, rest)]) == target:
                fixed[r] = c
                gained += int(m[r, c])
                cols_left = rest
                break
    return fixed


def _idf1(idtp: int, n_gt: int, n_pred: int) -> float:
    if n_gt == 0 and n_pred == 0:
        return 1.0
    return 2 * idtp / (n_gt + n_pred)


def cvr_ma(
    pred: Sequence[CrossViewTrajectory],
    gt: Sequence[CrossViewTrajectory],
    cfg: EvalConfig,
    assignment: dict[int, int],
) -> float:
    """Fraction of multi-view (gt identity, frame) occurrences fully covered by
    the assigned prediction in every view where the identity is visible.

    ``assignment`` maps gt global id to pred global id.
    """
    pred_by_id = {p.global_id: _slots(p) for p in pred}
    total = correct = 0
    for g in gt:
        gs = _slots(g)
        views_at: dict[int, list[int]] = {}
        for v, f in gs:
            views_at.setdefault(f, []).append(v)
        ps = pred_by_id.get(assignment.get(g.global_id), {})
        for f, views in views_at.items():
            if len(views) < 2:
                continue
            total += 1
            ok = all(
                (v, f) in ps and detection_iou(gs[(v, f)], ps[(v, f)], cfg) >= cfg.iou_threshold for v in views
            )
            correct += ok
    return 1.0 if total == 0 else correct / total


def cvr_idf1(
    pred: Sequence[CrossViewTrajectory], gt: Sequence[CrossViewTrajectory], cfg: EvalConfig = EvalConfig()
) -> EvalReport:
    _check_indexing(pred, gt)
    m = match_matrix(pred, gt, cfg)
    fixed = optimal_assignment(m)
    idtp = int(sum(m[r, c] for r, c in fixed.items()))
    n_gt = sum(t.n_detections() for t in gt)
    n_pred = sum(t.n_detections() for t in pred)
    assignment = {gt[r].global_id: pred[c].global_id for r, c in fixed.items()}
    rows = []
    for gi, g in enumerate(gt):
        pi = fixed.get(gi)
        rows.append(
            IdentityRow(
                g.global_id,
                None if pi is None else pred[pi].global_id,
                0 if pi is None else int(m[gi, pi]),
                g.n_detections(),
                0 if pi is None else pred[pi].n_detections(),
            )
        )
    return EvalReport(
        cvr_idf1=_idf1(idtp, n_gt, n_pred),
        cvr_ma=cvr_ma(pred, gt, cfg, assignment),
        idtp=idtp,
        idfp=n_pred - idtp,
        idfn=n_gt - idtp,
        per_identity=rows,
        assignment=assignment,
    )


def brute_force_idf1(
    pred: Sequence[CrossViewTrajectory], gt: Sequence[CrossViewTrajectory], cfg: EvalConfig = EvalConfig()
) -> float:
    """Exhaustive maximum IDF1 over every injective partial gt -> pred map."""
    if len(pred) > BRUTE_FORCE_LIMIT or len(gt) > BRUTE_FORCE_LIMIT:
        raise UsageError(f"brute force limited to {BRUTE_FORCE_LIMIT} identities per side")
    n_gt = sum(t.n_detections() for t in gt)
    n_pred = sum(t.n_detections() for t in pred)
    if n_gt == 0 and n_pred == 0:
        return 1.0
    pslots = [_slots(p) for p in pred]
    gslots = [_slots(g) for g in gt]

    def overlap(gi: int, pi: int) -> int:
        n = 0
        for k, d in gslots[gi].items():
            other = pslots[pi].get(k)
            if other is not None and detection_iou(d, other, cfg) >= cfg.iou_threshold:
                n += 1
        return n

    table = {(gi, pi): overlap(gi, pi) for gi in range(len(gt)) for pi in range(len(pred))}
    best = 0
    choices = [None, *range(len(pred))]
    for combo in itertools.product(choices, repeat=len(gt)):
        used = [c for c in combo if c is not None]
        if len(used) != len(set(used)):
            continue
        best = max(best, sum(table[(gi, c)] for gi, c in enumerate(combo) if c is not None))
    return 2 * best / (n_gt + n_pred)


@dataclass
class ReferringEval:
    cvr_idf1: float
    cvr_ma: float
    per_group: list[tuple[int, int, EvalReport]]


def match_groups(
    pred_groups: Sequence[ReferringGroup], gt_groups: Sequence[ReferringGroup], tau: float
) -> dict[int, list[int]]:
    """gt group index -> indices of predicted groups whose expression is closest to it (cosine >= tau)."""
    out: dict[int, list[int]] = {i: [] for i in range(len(gt_groups))}
    if not gt_groups:
        return out
    gt_emb = np.stack([g.expression_embedding / np.linalg.norm(g.expression_embedding) for g in gt_groups])
    for pi, pg in enumerate(pred_groups):
        e = pg.expression_embedding / np.linalg.norm(pg.expression_embedding)
        sims = gt_emb @ e
        best = int(np.argmax(sims))
        if sims[best] >= tau:
            out[best].append(pi)
    return out


def evaluate_grouped(
    pred: Sequence[CrossViewTrajectory],
    gt: Sequence[CrossViewTrajectory],
    pred_groups: Mapping[int, Sequence[int]],
    gt_groups: Mapping[int, Sequence[int]],
    cfg: EvalConfig = EvalConfig(),
) -> ReferringEval:
    """Score each gt group against the predicted group with the same key.

    A gt group with no predicted counterpart is scored against nothing. The
    summary values are means weighted by each gt group's detection count.
    """
    pred_by_id = {t.global_id: t for t in pred}
    gt_by_id = {t.global_id: t for t in gt}
    for name, groups, pool in (("predicted", pred_groups, pred_by_id), ("gt", gt_groups, gt_by_id)):
        for key, ids in groups.items():
            missing = [i for i in ids if i not in pool]
            if missing:
                raise UsageError(f"{name} group {key} names unknown global ids {missing}")
    per_group = []
    for gi in sorted(gt_groups):
        g_trajs = [gt_by_id[i] for i in gt_groups[gi]]
        p_trajs = [pred_by_id[i] for i in pred_groups.get(gi, ())]
        w = sum(t.n_detections() for t in g_trajs)
        per_group.append((gi, w, cvr_idf1(p_trajs, g_trajs, cfg)))
    w = np.array([pg[1] for pg in per_group], dtype=float)
    if w.sum() == 0:
        return ReferringEval(1.0, 1.0, per_group)
    idf1 = np.array([pg[2].cvr_idf1 for pg in per_group])
    ma = np.array([pg[2].cvr_ma for pg in per_group])
    return ReferringEval(float(w @ idf1 / w.sum()), float(w @ ma / w.sum()), per_group)


def aligned_group_ids(
    pred_groups: Sequence[ReferringGroup], gt_groups: Sequence[ReferringGroup], tau_match: float
) -> dict[int, list[int]]:
    """Predicted global ids keyed by gt group index: the union of the predicted
    groups matched to it. Unmatched predicted groups get keys past the gt range."""
    matched = match_groups(pred_groups, gt_groups, tau_match)
    out = {gi: sorted(g for pi in pis for g in pred_groups[pi].global_ids) for gi, pis in matched.items()}
    used = {pi for pis in matched.values() for pi in pis}
    extra = len(gt_groups)
    for pi, pg in enumerate(pred_groups):
        if pi not in used:
            out[extra] = sorted(pg.global_ids)
            extra += 1
    return out


def evaluate_referring(
    pred_groups: Sequence[ReferringGroup],
    gt_groups: Sequence[ReferringGroup],
    cfg: EvalConfig = EvalConfig(),
    tau_match: float = 0.9,
) -> ReferringEval:
    """Evaluate each gt referring group against the union of the predicted
    groups matched to it; report the gt-detection-weighted means."""
    pred = [t for g in pred_groups for t in g.trajectories]
    gt = [t for g in gt_groups for t in g.trajectories]
    pred_ids = aligned_group_ids(pred_groups, gt_groups, tau_match)
    gt_ids = {gi: g.global_ids for gi, g in enumerate(gt_groups)}
    return evaluate_grouped(pred, gt, pred_ids, gt_ids, cfg)
