"""Cross-view pseudo-label generation.

Per-view candidate tracklets are bundled into cross-view trajectories by
anchor-wise affinity association, refined by prototype-guided bi-directional
re-prompting, de-duplicated, and finally grouped into referring groups by
description similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import (
    ConfigError,
    CrossViewTrajectory,
    DegenerateInputError,
    Detection,
    EmptyInputError,
    ReferringGroup,
    Tracklet,
    box_iou_rows,
    mean_embedding,
)


@dataclass(frozen=True)
class AssociationConfig:
    tau_affinity: float = 0.6
    max_rounds: int = 2
    tau_group: float = 0.9
    conflict_iou: float = 0.5
    conflict_frac: float = 0.5

    def __post_init__(self):
        for name in ("tau_affinity", "tau_group"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ConfigError(f"assoc.{name}={v} outside [-1, 1]")
        if self.max_rounds < 0:
            raise ConfigError(f"assoc.max_rounds={self.max_rounds} is negative")


@dataclass(frozen=True)
class LogEntry:
    round: int
    anchor: tuple[int, str]
    view: int
    candidate: str
    affinity: float


@dataclass
class AssociationResult:
    trajectories: list[CrossViewTrajectory]
    unmatched: list[tuple[int, str]]
    rounds_run: int
    assignment_log: list[LogEntry] = field(default_factory=list)


class RepromptOracle(Protocol):
    def reprompt(self, view: int, seed_mask: Detection, direction: str) -> Tracklet: ...


def tracklet_embedding(t: Tracklet) -> np.ndarray:
    """Mean of the frame-wise embeddings (not re-normalised)."""
    if not t.detections or any(d.embedding is None for d in t.detections):
        raise EmptyInputError(f"tracklet {t.key} has no embeddings to average")
    return t.embedding


def affinity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine affinity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def identity_prototype(members: Sequence[np.ndarray]) -> np.ndarray:
    return mean_embedding(members)


def _argmax(scored: Iterable[tuple[float, tuple, object]]):
    """Highest score; ties go to the smallest sort key."""
    best = None
    for score, key, item in scored:
        if best is None or score > best[0] or (score == best[0] and key < best[1]):
            best = (score, key, item)
    return best


def _associate(
    anchor: Tracklet,
    candidates: Mapping[int, Sequence[Tracklet]],
    cfg: AssociationConfig,
    global_id: int,
) -> tuple[CrossViewTrajectory, list[LogEntry]]:
    if anchor.view in candidates:
        raise ValueError(f"anchor view {anchor.view} also appears among candidate views")
    emb = tracklet_embedding(anchor)
    members = {anchor.view: anchor}
    log = []
    for view in sorted(candidates):
        best = _argmax((affinity(emb, tracklet_embedding(c)), c.key, c) for c in candidates[view])
        if best is None:
            continue
        score, _, cand = best
        log.append(LogEntry(0, anchor.key, view, cand.local_id, score))
        if score >= cfg.tau_affinity:
            members[view] = cand
    return CrossViewTrajectory(global_id, members), log


def associate_anchor(
    anchor: Tracklet,
    candidates: Mapping[int, Sequence[Tracklet]],
    cfg: AssociationConfig = AssociationConfig(),
    global_id: int = 0,
) -> CrossViewTrajectory:
    """Anchor plus, per other view, the top-affinity candidate if it clears ``tau_affinity``."""
    return _associate(anchor, candidates, cfg, global_id)[0]


def stitch(view: int, local_id: str, backward: Tracklet, forward: Tracklet) -> Tracklet:
    """Join two directional tracks; on a shared frame the forward detection wins."""
    by_frame = {d.frame: d for d in backward.detections}
    by_frame.update({d.frame: d for d in forward.detections})
    return Tracklet(view, local_id, tuple(by_frame.values()))


def _canonical(dets: Sequence[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (d.frame, d.box))


def _reprompt(
    traj: CrossViewTrajectory,
    per_view_candidate_masks: Mapping[int, Sequence[Detection]],
    oracle: RepromptOracle,
    cfg: AssociationConfig,
    round_no: int,
    anchor: tuple[int, str],
) -> tuple[CrossViewTrajectory, list[LogEntry]]:
    proto = traj.prototype
    if proto is None:
        raise EmptyInputError(f"trajectory {traj.global_id} has no prototype")
    members = dict(traj.members)
    log = []
    for view in sorted(per_view_candidate_masks):
        cands = _canonical(per_view_candidate_masks[view])
        best = _argmax((affinity(proto, d.embedding), (i,), (i, d)) for i, d in enumerate(cands))
        if best is None:
            continue
        score, _, (idx, seed) = best
        # a weak best match is most likely another object: leave the view alone
        if score < cfg.tau_affinity:
            continue
        local_id = f"rp{seed.frame}.{idx}"
        fwd = oracle.reprompt(view, seed, "forward")
        bwd = oracle.reprompt(view, seed, "backward")
        refined = stitch(view, local_id, bwd, fwd)
        current = members.get(view)
        if current is not None and current.same_detections(refined):
            continue
        log.append(LogEntry(round_no, anchor, view, local_id, score))
        members[view] = refined
    return CrossViewTrajectory(traj.global_id, members), log


def reprompt_round(
    traj: CrossViewTrajectory,
    per_view_candidate_masks: Mapping[int, Sequence[Detection]],
    oracle: RepromptOracle,
    cfg: AssociationConfig = AssociationConfig(),
) -> CrossViewTrajectory:
    """One refinement pass: per view, re-track from the candidate mask closest
    to the prototype, then recompute the prototype.

    A member whose refined tracklet carries the same detections is kept as is,
    so a converged trajectory is a fixed point.
    """
    anchor = next(iter(traj.members.values())).key
    return _reprompt(traj, per_view_candidate_masks, oracle, cfg, 1, anchor)[0]


def _conflicting(a: Tracklet, b: Tracklet, cfg: AssociationConfig) -> bool:
    if a.view != b.view:
        return False
    if a.local_id == b.local_id:
        return True
    shared = sorted(set(a.frames) & set(b.frames))
    if not shared:
        return False
    ia = np.searchsorted(a.frames, shared)
    ib = np.searchsorted(b.frames, shared)
    ious = box_iou_rows(a.boxes[ia], b.boxes[ib])
    return np.count_nonzero(ious >= cfg.conflict_iou) >= cfg.conflict_frac * len(shared)


def resolve_conflicts(
    trajs: Sequence[CrossViewTrajectory], cfg: AssociationConfig = AssociationConfig()
) -> list[CrossViewTrajectory]:
    """Enforce one owner per tracklet.

    Every (trajectory, view) slot is a claim scored by the member's affinity to
    its trajectory prototype. Claims are accepted greedily by descending score
    (ties: smaller global id, then view), skipping any claim that conflicts with
    an accepted one. All scores use the input prototypes, so the outcome does
    not depend on input order. Trajectories left without members are dropped.
    """
    claims = []
    for ti, traj in enumerate(trajs):
        for view, t in traj.members.items():
            score = affinity(t.embedding, traj.prototype) if traj.prototype is not None else 0.0
            claims.append((-score, traj.global_id, view, t.local_id, ti, t))
    claims.sort(key=lambda c: c[:4])
    accepted: dict[int, list[Tracklet]] = {}
    kept: dict[int, dict[int, Tracklet]] = {}
    for _, _, view, _, ti, t in claims:
        if any(_conflicting(t, other, cfg) for other in accepted.get(view, ())):
            continue
        accepted.setdefault(view, []).append(t)
        kept.setdefault(ti, {})[view] = t
    out = []
    for ti, traj in enumerate(trajs):
        members = kept.get(ti)
        if not members:
            continue
        out.append(traj if len(members) == len(traj.members) else CrossViewTrajectory(traj.global_id, members))
    return out


def _sorted_views(scene_tracklets: Mapping[int, Sequence[Tracklet]]) -> dict[int, list[Tracklet]]:
    return {v: sorted(ts, key=lambda t: t.local_id) for v, ts in sorted(scene_tracklets.items())}


def candidate_masks_at(
    scene_tracklets: Mapping[int, Sequence[Tracklet]], frame: int
) -> dict[int, list[Detection]]:
    out = {}
    for v, ts in scene_tracklets.items():
        out[v] = [t.by_frame[frame] for t in ts if frame in t.by_frame]
    return out


def generate_pseudo_labels(
    scene_tracklets: Mapping[int, Sequence[Tracklet]],
    oracle: RepromptOracle | None,
    cfg: AssociationConfig = AssociationConfig(),
) -> AssociationResult:
    """Associate every tracklet as an anchor (in (view, local_id) order), run
    ``cfg.max_rounds`` re-prompting rounds, then resolve ownership conflicts."""
    views = _sorted_views(scene_tracklets)
    if not any(views.values()):
        raise EmptyInputError("no tracklets in any view")
    if cfg.max_rounds > 0 and oracle is None:
        raise ConfigError("re-prompting requested without an oracle")

    anchors = [t for v in views for t in views[v]]
    trajs, anchor_keys, log = [], [], []
    for gid, anchor in enumerate(anchors):
        cands = {v: ts for v, ts in views.items() if v != anchor.view}
        traj, entries = _associate(anchor, cands, cfg, gid)
        trajs.append(traj)
        anchor_keys.append(anchor.key)
        log.extend(entries)

    for r in range(1, cfg.max_rounds + 1):
        refined = []
        for traj, key in zip(trajs, anchor_keys):
            lo, hi = traj.frame_span()
            masks = candidate_masks_at(views, (lo + hi) // 2)
            new, entries = _reprompt(traj, masks, oracle, cfg, r, key)
            refined.append(new)
            log.extend(entries)
        trajs = refined

    final = resolve_conflicts(trajs, cfg)
    final = [t.relabel(i) for i, t in enumerate(final)]
    owned = {t.key for traj in final for t in traj.members.values()}
    unmatched = [t.key for v in views for t in views[v] if t.key not in owned]
    return AssociationResult(final, unmatched, cfg.max_rounds, log)


def raw_trajectories(scene_tracklets: Mapping[int, Sequence[Tracklet]]) -> list[CrossViewTrajectory]:
    """Each single-view tracklet as its own identity (no cross-view association)."""
    views = _sorted_views(scene_tracklets)
    return [CrossViewTrajectory(i, {t.view: t}) for i, t in enumerate(t for v in views for t in views[v])]


def group_by_referring(
    trajs: Sequence[CrossViewTrajectory],
    describer: Callable[[CrossViewTrajectory], np.ndarray],
    cfg: AssociationConfig = AssociationConfig(),
) -> list[ReferringGroup]:
    """Single-linkage clustering of description embeddings at cosine ``tau_group``."""
    if not trajs:
        return []
    desc = np.stack([np.asarray(describer(t), dtype=float) for t in trajs])
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("zero description embedding")
    unit = desc / norms
    adj = (unit @ unit.T) >= cfg.tau_group
    _, labels = connected_components(csr_matrix(adj), directed=False)
    order: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        order.setdefault(int(lab), []).append(i)
    groups = []
    for idx in sorted(order.values(), key=lambda ix: ix[0]):
        groups.append(ReferringGroup(desc[idx].mean(axis=0), tuple(trajs[i] for i in idx)))
    return groups
