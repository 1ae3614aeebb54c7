"""Deterministic synthetic multi-view world.

Stands in for the three foundation-model roles of the pipeline: the
category-prompted single-view tracker (:func:`oracle_track`), mask-prompted
re-tracking (:func:`oracle_reprompt`), the ReID head (:func:`reid_embed`) and
the attribute describer (:func:`describe_trajectory`).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy.linalg import expm

from .core import (
    DEFAULT_GRID,
    ConfigError,
    CrossViewTrajectory,
    Detection,
    NoiseParams,
    NoTargetError,
    ObjectSpec,
    SceneSpec,
    SceneTruth,
    Tracklet,
    UsageError,
    box_iou,
    keyed_rng,
    mask_iou,
)

__all__ = [
    "ATTRIBUTE_VALUES",
    "NoiseParams",
    "SceneTruth",
    "SceneParams",
    "SimOracle",
    "describe_attributes",
    "describe_trajectory",
    "generate_scene",
    "make_scene_spec",
    "make_view_warps",
    "oracle_reprompt",
    "oracle_track",
    "reid_embed",
]

Direction = Literal["forward", "backward"]

# One one-hot block per attribute; blocks are concatenated in sorted-name order.
ATTRIBUTE_VALUES: dict[str, tuple[str, ...]] = {
    "clothing": ("coat", "dress", "hoodie", "jacket", "shirt", "suit", "sweater", "vest"),
    "color": ("black", "blue", "green", "grey", "red", "white", "yellow", "brown"),
}


@dataclass(frozen=True)
class SceneParams:
    """Knobs for :func:`make_scene_spec`; defaults give the benchmark world."""

    n_views: int = 3
    n_objects: int = 8
    n_distractors: int = 2
    n_frames: int = 60
    d_id: int = 16
    grid: int = DEFAULT_GRID
    group_size: int = 2
    warp_angle: float = 0.35
    max_base_cosine: float = 0.3
    frag_prob: float = 0.4
    switch_prob: float = 0.1
    drift_prob: float = 0.2
    embed_noise_sigma: float = 0.15

    def __post_init__(self):
        if self.n_views < 2:
            raise ConfigError("scene.n_views must be >= 2")
        if self.n_objects < 1 or self.n_distractors < 0:
            raise ConfigError("scene.n_objects must be >= 1 and scene.n_distractors >= 0")
        if self.group_size < 1:
            raise ConfigError("scene.group_size must be >= 1")
        if self.d_id < 2:
            raise ConfigError("scene.d_id must be >= 2")


def make_view_warps(n_views: int, dim: int, angle: float, seed: int) -> np.ndarray:
    """Per-view rotations ``expm(angle * K)`` with ``K`` skew-symmetric of unit spectral norm."""
    warps = []
    for v in range(n_views):
        rng = keyed_rng(seed, "view-warp", v)
        a = rng.standard_normal((dim, dim))
        k = a - a.T
        k /= np.linalg.norm(k, 2)
        warps.append(expm(angle * k))
    return np.stack(warps)


def _unit_vectors(n: int, dim: int, max_cos: float, seed: int) -> list[np.ndarray]:
    rng = keyed_rng(seed, "base-embeddings")
    out: list[np.ndarray] = []
    for _ in range(100_000):
        if len(out) == n:
            return out
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(abs(float(v @ u)) <= max_cos for u in out):
            out.append(v)
    raise ConfigError(f"cannot place {n} embeddings in dimension {dim} with |cos| <= {max_cos}")


def make_scene_spec(seed: int, params: SceneParams | None = None) -> SceneSpec:
    """Random benchmark world: ``n_objects`` referable targets in attribute
    groups of ``group_size`` plus ``n_distractors`` with unique attributes."""
    p = params or SceneParams()
    n_total = p.n_objects + p.n_distractors
    n_groups = -(-p.n_objects // p.group_size)
    rng = keyed_rng(seed, "attributes")
    colors = list(rng.permutation(ATTRIBUTE_VALUES["color"]))
    clothes = list(rng.permutation(ATTRIBUTE_VALUES["clothing"]))
    combos = [
        (str(colors[i % len(colors)]), str(clothes[(i + i // len(colors)) % len(clothes)]))
        for i in range(n_groups + p.n_distractors)
    ]
    embeddings = _unit_vectors(n_total, p.d_id, p.max_base_cosine, seed)

    objects = []
    for oid in range(n_total):
        distractor = oid >= p.n_objects
        combo = combos[n_groups + oid - p.n_objects] if distractor else combos[oid // p.group_size]
        orng = keyed_rng(seed, "object", oid)
        w, h = float(orng.uniform(0.06, 0.10)), float(orng.uniform(0.15, 0.25))
        knots = sorted({0, p.n_frames // 3, (2 * p.n_frames) // 3, max(p.n_frames - 1, 0)})
        motion = []
        vis = np.zeros((p.n_views, p.n_frames), dtype=bool)
        margin = max(0, int(0.15 * p.n_frames))
        for v in range(p.n_views):
            vrng = keyed_rng(seed, "motion", oid, v)
            motion.append(tuple((f, float(vrng.uniform(0.1, 0.9)), float(vrng.uniform(0.15, 0.85))) for f in knots))
            start = int(vrng.integers(0, margin + 1))
            stop = p.n_frames - int(vrng.integers(0, margin + 1))
            vis[v, start:max(stop, start + 1)] = True
        objects.append(
            ObjectSpec(
                id=oid,
                base_embedding=embeddings[oid],
                attributes={"color": combo[0], "clothing": combo[1]},
                motion=tuple(motion),
                visibility=vis,
                size=(w, h),
                distractor=distractor,
            )
        )
    noise = NoiseParams(
        frag_prob=p.frag_prob,
        switch_prob=p.switch_prob,
        drift_prob=p.drift_prob,
        embed_noise_sigma=p.embed_noise_sigma,
        view_warp=make_view_warps(p.n_views, p.d_id, p.warp_angle, seed),
    )
    return SceneSpec(p.n_views, p.n_frames, tuple(objects), noise, seed, p.grid)


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _clean_embedding(obj: ObjectSpec, warp: np.ndarray | None) -> np.ndarray:
    # base embeddings are unit already; renormalising would only add rounding
    return obj.base_embedding if warp is None else _normalize(warp @ obj.base_embedding)


def generate_scene(spec: SceneSpec) -> SceneTruth:
    """Render noise-free ground truth: one detection per visible (object, view, frame)."""
    trajs = []
    for obj in spec.objects:
        members = {}
        for v in range(spec.n_views):
            frames = np.flatnonzero(obj.visibility[v])
            if frames.size == 0:
                continue
            emb = _clean_embedding(obj, spec.noise.warp(v))
            dets = tuple(Detection(v, int(f), obj.box(v, int(f)), emb, spec.grid) for f in frames)
            members[v] = Tracklet(v, f"gt{obj.id}", dets)
        if members:
            trajs.append(CrossViewTrajectory(obj.id, members))
    return SceneTruth(spec, tuple(trajs))


@lru_cache(maxsize=1 << 16)
def _unit_noise(seed: int, view: int, frame: int, oid: int, dim: int) -> np.ndarray:
    z = keyed_rng(seed, "reid-noise", view, frame, oid).standard_normal(dim)
    z.setflags(write=False)
    return z


def _embed(scene: SceneTruth, noise: NoiseParams, view: int, frame: int, oid: int) -> np.ndarray:
    obj = scene.spec.object(oid)
    warp = noise.warp(view)
    if noise.embed_noise_sigma == 0:
        return _clean_embedding(obj, warp)
    v = obj.base_embedding if warp is None else warp @ obj.base_embedding
    v = v + noise.embed_noise_sigma * _unit_noise(scene.spec.seed, view, frame, oid, v.shape[0])
    return _normalize(v)


def _gt_detection(scene: SceneTruth, view: int, frame: int, oid: int) -> Detection | None:
    for gid, det in scene.gt_at(view, frame):
        if gid == oid:
            return det
    return None


def _observed(scene: SceneTruth, noise: NoiseParams, view: int, frame: int, oid: int) -> Detection:
    det = _gt_detection(scene, view, frame, oid)
    return det.with_embedding(_embed(scene, noise, view, frame, oid))


def _match_object(scene: SceneTruth, det: Detection, use_masks: bool = True) -> tuple[int, float] | None:
    """GT object with maximal IoU against ``det`` at its (view, frame).

    Rasterised masks of nearby objects can coincide, so mask ties fall back to
    box IoU; remaining ties go to the smaller id.
    """
    best, best_key = None, None
    for oid, gt in scene.gt_at(det.view, det.frame):
        b = box_iou(det.box, gt.box)
        key = (mask_iou(det.mask, gt.mask), b) if use_masks else (b,)
        if key[0] > 0 and (best_key is None or key > best_key):
            best, best_key = (oid, key[0]), key
    return best


def _nearest_other(scene: SceneTruth, view: int, frame: int, oid: int) -> int | None:
    here = _gt_detection(scene, view, frame, oid)
    best, best_d = None, np.inf
    for other, det in scene.gt_at(view, frame):
        if other == oid:
            continue
        d = (det.box[0] - here.box[0]) ** 2 + (det.box[1] - here.box[1]) ** 2
        if d < best_d:
            best, best_d = other, d
    return best


def _occlusion_onsets(scene: SceneTruth, view: int) -> list[tuple[int, int, int]]:
    """``(frame, a, b)`` where the boxes of objects a < b start to overlap."""
    events = []
    prev: set[tuple[int, int]] = set()
    for f in range(scene.spec.n_frames):
        here = scene.gt_at(view, f)
        cur = set()
        for i in range(len(here)):
            for j in range(i + 1, len(here)):
                (a, da), (b, db) = sorted([here[i], here[j]], key=lambda x: x[0])
                if box_iou(da.box, db.box) > 0:
                    cur.add((a, b))
        events.extend((f, a, b) for a, b in sorted(cur - prev) if f > 0)
        prev = cur
    return events


def oracle_track(scene: SceneTruth, view: int, noise: NoiseParams | None = None) -> list[Tracklet]:
    """Simulated category-prompted tracking in one view.

    Ground-truth tracks are corrupted in three stages, each decision drawn
    from its own key: fragmentation (one interior cut), identity switches at
    occlusion onsets (tails swapped), and drift onto the spatially nearest
    other object (tail replaced, the true tail is lost).
    """
    spec = scene.spec
    if not 0 <= view < spec.n_views:
        raise UsageError(f"view {view} outside [0, {spec.n_views})")
    noise = noise or spec.noise
    seed = spec.seed
    n_frames = spec.n_frames

    labels: dict[int, list[tuple[int, int]]] = {}
    visible: dict[int, np.ndarray] = {}
    for obj in spec.objects:
        vis = obj.visibility[view]
        if not vis.any():
            continue
        visible[obj.id] = vis
        lab = [(obj.id, 0)] * n_frames
        frames = np.flatnonzero(vis)
        if len(frames) >= 2 and keyed_rng(seed, "frag", view, obj.id).random() < noise.frag_prob:
            cut = int(frames[int(keyed_rng(seed, "frag-cut", view, obj.id).integers(1, len(frames)))])
            lab = lab[:cut] + [(obj.id, 1)] * (n_frames - cut)
        labels[obj.id] = lab

    if noise.switch_prob > 0:
        for f, a, b in _occlusion_onsets(scene, view):
            if keyed_rng(seed, "switch", view, f, a, b).random() < noise.switch_prob:
                la, lb = labels[a], labels[b]
                labels[a], labels[b] = la[:f] + lb[f:], lb[:f] + la[f:]

    # label -> list of (frame, object)
    pieces: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for oid, lab in labels.items():
        for f in np.flatnonzero(visible[oid]):
            pieces.setdefault(lab[f], []).append((int(f), oid))

    tracks = []
    for label in sorted(pieces):
        seq = sorted(pieces[label])
        if len(seq) >= 2 and noise.drift_prob > 0 and keyed_rng(seed, "drift", view, label).random() < noise.drift_prob:
            k = int(keyed_rng(seed, "drift-at", view, label).integers(1, len(seq)))
            f0, oid0 = seq[k]
            target = _nearest_other(scene, view, f0, oid0)
            if target is not None:
                tail = [(f, target) for f, _ in seq[k:] if visible.get(target, np.zeros(n_frames, bool))[f]]
                seq = seq[:k] + tail
        tracks.append(seq)

    tracks.sort(key=lambda s: (s[0][0], s[0][1], len(s)))
    return [
        Tracklet(view, f"t{i:03d}", tuple(_observed(scene, noise, view, f, oid) for f, oid in seq))
        for i, seq in enumerate(tracks)
    ]


def oracle_reprompt(
    scene: SceneTruth,
    view: int,
    seed_mask: Detection,
    direction: Direction,
    noise: NoiseParams | None = None,
) -> Tracklet:
    """Re-track from a mask prompt, in one temporal direction.

    The prompted object is the GT object of maximal mask IoU at the seed frame.
    Drift is possible but at half the category-prompted rate.
    """
    if seed_mask.view != view:
        raise UsageError(f"seed mask from view {seed_mask.view} used in view {view}")
    if direction not in ("forward", "backward"):
        raise UsageError(f"direction must be 'forward' or 'backward', got {direction!r}")
    spec = scene.spec
    noise = noise or spec.noise
    hit = _match_object(scene, seed_mask)
    if hit is None:
        raise NoTargetError(f"seed mask at view {view}, frame {seed_mask.frame} overlaps no object")
    oid = hit[0]
    f0 = seed_mask.frame
    vis = spec.object(oid).visibility[view]
    frames = [int(f) for f in np.flatnonzero(vis)]
    frames = [f for f in frames if f >= f0] if direction == "forward" else [f for f in reversed(frames) if f <= f0]
    seq = [(f, oid) for f in frames]
    drift = noise.drift_prob / 2
    if len(seq) >= 2 and drift > 0 and keyed_rng(spec.seed, "reprompt-drift", view, oid, f0, direction).random() < drift:
        k = int(keyed_rng(spec.seed, "reprompt-drift-at", view, oid, f0, direction).integers(1, len(seq)))
        target = _nearest_other(scene, view, seq[k][0], oid)
        if target is not None:
            tvis = spec.object(target).visibility[view]
            seq = seq[:k] + [(f, target) for f, _ in seq[k:] if tvis[f]]
    dets = tuple(_observed(scene, noise, view, f, o) for f, o in seq)
    return Tracklet(view, f"rp{oid}@{f0}{'+' if direction == 'forward' else '-'}", dets)


def reid_embed(detection: Detection, scene: SceneTruth, noise: NoiseParams | None = None) -> np.ndarray:
    """Simulated ReID feature: ``Normalize(warp_view @ base + eps)``, eps keyed per detection."""
    hit = _match_object(scene, detection)
    if hit is None:
        raise NoTargetError(f"detection at view {detection.view}, frame {detection.frame} overlaps no object")
    return _embed(scene, noise or scene.spec.noise, detection.view, detection.frame, hit[0])


def describe_attributes(attributes) -> np.ndarray:
    blocks = []
    for name in sorted(ATTRIBUTE_VALUES):
        block = np.zeros(len(ATTRIBUTE_VALUES[name]))
        value = attributes.get(name)
        if value is not None:
            block[ATTRIBUTE_VALUES[name].index(value)] = 1.0
        blocks.append(block)
    v = np.concatenate(blocks)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def majority_object(traj: CrossViewTrajectory, scene: SceneTruth) -> int:
    votes: Counter[int] = Counter()
    for t in traj.members.values():
        for d in t.detections:
            hit = _match_object(scene, d, use_masks=False)
            if hit is not None:
                votes[hit[0]] += 1
    if not votes:
        raise NoTargetError(f"trajectory {traj.global_id} overlaps no object")
    top = max(votes.values())
    return min(oid for oid, n in votes.items() if n == top)


def describe_trajectory(traj: CrossViewTrajectory, scene: SceneTruth) -> np.ndarray:
    """Attribute embedding of the object the trajectory mostly covers."""
    return describe_attributes(scene.spec.object(majority_object(traj, scene)).attributes)


class SimOracle:
    """Re-prompt and describer interfaces backed by one :class:`SceneTruth`."""

    def __init__(self, scene: SceneTruth, noise: NoiseParams | None = None):
        self.scene = scene
        self.noise = noise or scene.spec.noise

    def track(self, view: int) -> list[Tracklet]:
        return oracle_track(self.scene, view, self.noise)

    def reprompt(self, view: int, seed_mask: Detection, direction: Direction) -> Tracklet:
        return oracle_reprompt(self.scene, view, seed_mask, direction, self.noise)

    def describe(self, traj: CrossViewTrajectory) -> np.ndarray:
        return describe_trajectory(traj, self.scene)
