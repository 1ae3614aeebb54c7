"""Domain types, keyed randomness and the two on-disk formats (scene JSONL, trajectory CSV)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1
DEFAULT_GRID = 32
TRAJECTORY_HEADER = ("global_id", "view", "frame", "cx", "cy", "w", "h")


class CrvError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInputError(CrvError, ValueError):
    pass


class DegenerateInputError(CrvError, ValueError):
    pass


class NoTargetError(CrvError, LookupError):
    pass


class UsageError(CrvError, ValueError):
    pass


class ConfigError(CrvError, ValueError):
    pass


class ParseError(CrvError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class FormatError(ParseError):
    pass


# ---------------------------------------------------------------------------
# keyed randomness


def keyed_rng(seed: int, tag: str, *ids) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, tag, *ids)``.

    Every stochastic decision in the package draws from its own key, so the
    order in which modules or entities are processed never changes outcomes.
    """
    material = json.dumps([int(seed), tag, *[_key_part(i) for i in ids]], separators=(",", ":"))
    digest = hashlib.blake2b(material.encode(), digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _key_part(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (int, str)):
        return x
    if isinstance(x, tuple):
        return [_key_part(v) for v in x]
    return str(x)


# ---------------------------------------------------------------------------
# geometry helpers


def clip_box(box: Sequence[float]) -> tuple[float, float, float, float]:
    """Clip a ``(cx, cy, w, h)`` box to the unit square."""
    cx, cy, w, h = (float(v) for v in box)
    if w >= 0 and h >= 0 and cx - w / 2 >= 0 and cx + w / 2 <= 1 and cy - h / 2 >= 0 and cy + h / 2 <= 1:
        return (cx, cy, w, h)
    x1, x2 = max(0.0, cx - w / 2), min(1.0, cx + w / 2)
    y1, y2 = max(0.0, cy - h / 2), min(1.0, cy + h / 2)
    x2, y2 = max(x1, x2), max(y1, y2)
    return ((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def render_mask(box: Sequence[float], grid: int) -> np.ndarray:
    """Rasterise a box onto a ``grid x grid`` boolean mask (cell-centre rule)."""
    cx, cy, w, h = box
    centers = (np.arange(grid) + 0.5) / grid
    cols = (centers >= cx - w / 2) & (centers <= cx + w / 2)
    rows = (centers >= cy - h / 2) & (centers <= cy + h / 2)
    mask = rows[:, None] & cols[None, :]
    if not mask.any():
        c = min(grid - 1, max(0, int(cx * grid)))
        r = min(grid - 1, max(0, int(cy * grid)))
        mask[r, c] = True
    mask.setflags(write=False)
    return mask


def box_iou(a: Sequence[float], b: Sequence[float]) -> float:
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same corners, so identical boxes give exactly 1
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return float(inter / union) if union > 0 else 0.0


def box_iou_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise box IoU between two ``(n, 4)`` arrays of ``(cx, cy, w, h)``."""
    alo, ahi = a[:, :2] - a[:, 2:] / 2, a[:, :2] + a[:, 2:] / 2
    blo, bhi = b[:, :2] - b[:, 2:] / 2, b[:, :2] + b[:, 2:] / 2
    side = np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0, None)
    inter = side[:, 0] * side[:, 1]
    union = np.prod(ahi - alo, axis=1) + np.prod(bhi - blo, axis=1) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    return inter / union if union else 0.0


def _frozen_array(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True, eq=False)
class Detection:
    """One object hypothesis in one view at one frame.

    ``mask`` defaults to the rasterised box; pass ``explicit_mask`` for a
    free-form segmentation.
    """

    view: int
    frame: int
    box: tuple[float, float, float, float]
    embedding: np.ndarray | None = None
    grid: int = DEFAULT_GRID
    explicit_mask: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "box", clip_box(self.box))
        if self.embedding is not None:
            object.__setattr__(self, "embedding", _frozen_array(self.embedding))
        if self.explicit_mask is not None:
            m = np.array(self.explicit_mask, dtype=bool)
            if m.shape != (self.grid, self.grid):
                raise ValueError(f"mask shape {m.shape} does not match grid {self.grid}")
            m.setflags(write=False)
            object.__setattr__(self, "explicit_mask", m)

    @cached_property
    def mask(self) -> np.ndarray:
        if self.explicit_mask is not None:
            return self.explicit_mask
        return render_mask(self.box, self.grid)

    def with_embedding(self, embedding) -> "Detection":
        return Detection(self.view, self.frame, self.box, embedding, self.grid, self.explicit_mask)

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        return (
            self.view == other.view
            and self.frame == other.frame
            and self.box == other.box
            and self.grid == other.grid
            and _opt_array_equal(self.embedding, other.embedding)
            and (
                (self.explicit_mask is None and other.explicit_mask is None)
                or np.array_equal(self.mask, other.mask)
            )
        )

    __hash__ = None


def _opt_array_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class Tracklet:
    view: int
    local_id: str
    detections: tuple[Detection, ...]

    def __post_init__(self):
        dets = tuple(sorted(self.detections, key=lambda d: d.frame))
        if not dets:
            raise EmptyInputError(f"tracklet {self.view}/{self.local_id} has no detections")
        frames = [d.frame for d in dets]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"tracklet {self.view}/{self.local_id} repeats a frame")
        if any(d.view != self.view for d in dets):
            raise ValueError(f"tracklet {self.view}/{self.local_id} mixes views")
        object.__setattr__(self, "detections", dets)

    @property
    def key(self) -> tuple[int, str]:
        return (self.view, self.local_id)

    @cached_property
    def frames(self) -> tuple[int, ...]:
        return tuple(d.frame for d in self.detections)

    @cached_property
    def by_frame(self) -> Mapping[int, Detection]:
        return MappingProxyType({d.frame: d for d in self.detections})

    @cached_property
    def boxes(self) -> np.ndarray:
        return np.array([d.box for d in self.detections], dtype=float).reshape(-1, 4)

    @cached_property
    def embedding(self) -> np.ndarray | None:
        """Mean frame-wise embedding, or ``None`` when any detection lacks one."""
        if any(d.embedding is None for d in self.detections):
            return None
        return _frozen_array(np.mean([d.embedding for d in self.detections], axis=0))

    def same_detections(self, other: "Tracklet") -> bool:
        return self.view == other.view and self.detections == other.detections

    def __eq__(self, other):
        if not isinstance(other, Tracklet):
            return NotImplemented
        return self.view == other.view and self.local_id == other.local_id and self.detections == other.detections

    __hash__ = None

    def __repr__(self):
        span = f"{self.frames[0]}..{self.frames[-1]}"
        return f"Tracklet(view={self.view}, local_id={self.local_id!r}, frames={span}, n={len(self.detections)})"


def mean_embedding(vectors: Iterable[np.ndarray]) -> np.ndarray:
    vs = list(vectors)
    if not vs:
        raise EmptyInputError("mean of an empty set of embeddings")
    return np.mean(np.stack(vs), axis=0)


@dataclass(frozen=True, eq=False)
class CrossViewTrajectory:
    """A global identity: at most one tracklet per view plus the member-mean prototype."""

    global_id: int
    members: Mapping[int, Tracklet]
    prototype: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if not self.members:
            raise EmptyInputError(f"trajectory {self.global_id} has no members")
        for view, t in self.members.items():
            if t.view != view:
                raise ValueError(f"member keyed by view {view} lives in view {t.view}")
        members = MappingProxyType(dict(sorted(self.members.items())))
        object.__setattr__(self, "members", members)
        embs = [t.embedding for t in members.values()]
        proto = None if any(e is None for e in embs) else _frozen_array(mean_embedding(embs))
        object.__setattr__(self, "prototype", proto)

    @property
    def views(self) -> tuple[int, ...]:
        return tuple(self.members)

    def with_member(self, tracklet: Tracklet) -> "CrossViewTrajectory":
        members = dict(self.members)
        members[tracklet.view] = tracklet
        return CrossViewTrajectory(self.global_id, members)

    def without_view(self, view: int) -> "CrossViewTrajectory | None":
        members = {v: t for v, t in self.members.items() if v != view}
        return CrossViewTrajectory(self.global_id, members) if members else None

    def relabel(self, global_id: int) -> "CrossViewTrajectory":
        return CrossViewTrajectory(global_id, dict(self.members))

    def frame_span(self) -> tuple[int, int]:
        frames = [f for t in self.members.values() for f in (t.frames[0], t.frames[-1])]
        return min(frames), max(frames)

    def n_detections(self) -> int:
        return sum(len(t.detections) for t in self.members.values())

    def __eq__(self, other):
        if not isinstance(other, CrossViewTrajectory):
            return NotImplemented
        return self.global_id == other.global_id and dict(self.members) == dict(other.members)

    __hash__ = None

    def __repr__(self):
        return f"CrossViewTrajectory(global_id={self.global_id}, views={list(self.members)})"


@dataclass(frozen=True, eq=False)
class ReferringGroup:
    expression_embedding: np.ndarray
    trajectories: tuple[CrossViewTrajectory, ...]

    def __post_init__(self):
        if not self.trajectories:
            raise EmptyInputError("referring group without trajectories")
        ids = [t.global_id for t in self.trajectories]
        if len(set(ids)) != len(ids):
            raise ValueError("referring group repeats a global id")
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "expression_embedding", _frozen_array(self.expression_embedding))

    @property
    def global_ids(self) -> list[int]:
        return [t.global_id for t in self.trajectories]


# ---------------------------------------------------------------------------
# trajectory CSV


def format_trajectories(trajs: Iterable[CrossViewTrajectory]) -> bytes:
    rows = []
    for traj in trajs:
        for view, t in traj.members.items():
            for d in t.detections:
                rows.append((traj.global_id, view, d.frame, *d.box))
    rows.sort(key=lambda r: r[:3])
    out = io.StringIO()
    out.write(",".join(TRAJECTORY_HEADER) + "\n")
    for gid, view, frame, cx, cy, w, h in rows:
        out.write(f"{gid},{view},{frame},{cx:.6f},{cy:.6f},{w:.6f},{h:.6f}\n")
    return out.getvalue().encode("utf-8")


def parse_trajectory_file(data: bytes | str, grid: int = DEFAULT_GRID) -> list[CrossViewTrajectory]:
    """Parse the ``global_id,view,frame,cx,cy,w,h`` CSV format.

    The header row is optional only for an entirely empty file.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    if not text.strip():
        return []
    reader = csv.reader(io.StringIO(text))
    rows: dict[int, dict[int, list[Detection]]] = {}
    seen: set[tuple[int, int, int]] = set()
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and tuple(c.strip() for c in row) == TRAJECTORY_HEADER:
            continue
        if len(row) != len(TRAJECTORY_HEADER):
            raise ParseError(f"expected {len(TRAJECTORY_HEADER)} fields, got {len(row)}", lineno)
        try:
            gid, view, frame = int(row[0]), int(row[1]), int(row[2])
            box = tuple(float(c) for c in row[3:])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if view < 0 or frame < 0 or not all(np.isfinite(box)):
            raise ParseError("negative index or non-finite coordinate", lineno)
        if (view, frame, gid) in seen:
            raise FormatError(f"duplicate (view={view}, frame={frame}, global_id={gid})", lineno)
        seen.add((view, frame, gid))
        rows.setdefault(gid, {}).setdefault(view, []).append(Detection(view, frame, box, grid=grid))
    trajs = []
    for gid in sorted(rows):
        members = {v: Tracklet(v, str(gid), tuple(dets)) for v, dets in rows[gid].items()}
        trajs.append(CrossViewTrajectory(gid, members))
    return trajs


def format_groups(groups: Sequence[ReferringGroup]) -> bytes:
    lines = [f"{i}: [{','.join(str(g) for g in grp.global_ids)}]" for i, grp in enumerate(groups)]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def parse_groups(data: bytes | str) -> dict[int, list[int]]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    groups = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            head, body = line.split(":", 1)
            body = body.strip()
            if not (body.startswith("[") and body.endswith("]")):
                raise ValueError("expected [id,...]")
            inner = body[1:-1].strip()
            groups[int(head)] = [int(x) for x in inner.split(",")] if inner else []
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return groups


# ---------------------------------------------------------------------------
# line-delimited structured text


def dumps_record(record: Mapping) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def dumps_records(records: Iterable[Mapping]) -> bytes:
    return "".join(dumps_record(r) + "\n" for r in records).encode("utf-8")


def loads_records(data: bytes | str) -> list[dict]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, lineno) from None
    return out


# ---------------------------------------------------------------------------
# scene description


@dataclass(frozen=True, eq=False)
class NoiseParams:
    """Corruption knobs for the simulated single-view tracker and ReID head.

    ``view_warp`` has shape ``(n_views, d_id, d_id)``; each slice is orthogonal.
    """

    frag_prob: float = 0.0
    switch_prob: float = 0.0
    drift_prob: float = 0.0
    embed_noise_sigma: float = 0.0
    view_warp: np.ndarray | None = None

    def __post_init__(self):
        for name in ("frag_prob", "switch_prob", "drift_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"noise.{name}={p} outside [0, 1]")
        if self.embed_noise_sigma < 0:
            raise ConfigError(f"noise.embed_noise_sigma={self.embed_noise_sigma} is negative")
        if self.view_warp is not None:
            w = _frozen_array(self.view_warp)
            if w.ndim != 3 or w.shape[1] != w.shape[2]:
                raise ConfigError(f"noise.view_warp must be (n_views, d, d), got {w.shape}")
            eye = np.eye(w.shape[1])
            for i, m in enumerate(w):
                if np.max(np.abs(m @ m.T - eye)) > 1e-6:
                    raise ConfigError(f"noise.view_warp[{i}] is not orthogonal")
            object.__setattr__(self, "view_warp", w)

    def warp(self, view: int) -> np.ndarray | None:
        return None if self.view_warp is None else self.view_warp[view]

    def replace(self, **changes) -> "NoiseParams":
        fields = dict(
            frag_prob=self.frag_prob,
            switch_prob=self.switch_prob,
            drift_prob=self.drift_prob,
            embed_noise_sigma=self.embed_noise_sigma,
            view_warp=self.view_warp,
        )
        fields.update(changes)
        return NoiseParams(**fields)

    def to_record(self) -> dict:
        return {
            "kind": "noise",
            "frag_prob": self.frag_prob,
            "switch_prob": self.switch_prob,
            "drift_prob": self.drift_prob,
            "embed_noise_sigma": self.embed_noise_sigma,
            "view_warp": None if self.view_warp is None else self.view_warp.tolist(),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "NoiseParams":
        return cls(
            frag_prob=rec["frag_prob"],
            switch_prob=rec["switch_prob"],
            drift_prob=rec["drift_prob"],
            embed_noise_sigma=rec["embed_noise_sigma"],
            view_warp=None if rec.get("view_warp") is None else np.array(rec["view_warp"], dtype=float),
        )

    def __eq__(self, other):
        if not isinstance(other, NoiseParams):
            return NotImplemented
        return self.to_record() == other.to_record()

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ObjectSpec:
    """Ground-truth object: identity, appearance, per-view motion and visibility.

    ``motion[v]`` is a tuple of ``(frame, cx, cy)`` waypoints (linear in between),
    ``visibility`` a boolean ``(n_views, n_frames)`` array.
    """

    id: int
    base_embedding: np.ndarray
    attributes: Mapping[str, str]
    motion: tuple[tuple[tuple[int, float, float], ...], ...]
    visibility: np.ndarray
    size: tuple[float, float] = (0.08, 0.2)
    distractor: bool = False

    def __post_init__(self):
        emb = _frozen_array(self.base_embedding)
        if abs(np.linalg.norm(emb) - 1.0) > 1e-9:
            raise ValueError(f"object {self.id}: base_embedding is not unit norm")
        object.__setattr__(self, "base_embedding", emb)
        object.__setattr__(self, "attributes", MappingProxyType(dict(sorted(self.attributes.items()))))
        motion = tuple(tuple((int(f), float(x), float(y)) for f, x, y in path) for path in self.motion)
        for path in motion:
            if not path or any(not (0 <= x <= 1 and 0 <= y <= 1) for _, x, y in path):
                raise ValueError(f"object {self.id}: motion outside the unit square")
        object.__setattr__(self, "motion", motion)
        vis = np.array(self.visibility, dtype=bool)
        vis.setflags(write=False)
        object.__setattr__(self, "visibility", vis)
        object.__setattr__(self, "size", (float(self.size[0]), float(self.size[1])))

    def position(self, view: int, frame: int) -> tuple[float, float]:
        path = self.motion[view]
        frames = [p[0] for p in path]
        x = float(np.interp(frame, frames, [p[1] for p in path]))
        y = float(np.interp(frame, frames, [p[2] for p in path]))
        return x, y

    def box(self, view: int, frame: int) -> tuple[float, float, float, float]:
        x, y = self.position(view, frame)
        return clip_box((x, y, *self.size))

    def to_record(self) -> dict:
        return {
            "kind": "object",
            "id": self.id,
            "base_embedding": self.base_embedding.tolist(),
            "attributes": dict(self.attributes),
            "motion": [[list(p) for p in path] for path in self.motion],
            "visibility": [_runs(row) for row in self.visibility],
            "n_frames": int(self.visibility.shape[1]),
            "size": list(self.size),
            "distractor": self.distractor,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "ObjectSpec":
        vis = np.zeros((len(rec["visibility"]), rec["n_frames"]), dtype=bool)
        for v, runs in enumerate(rec["visibility"]):
            for start, stop in runs:
                vis[v, start:stop] = True
        return cls(
            id=rec["id"],
            base_embedding=np.array(rec["base_embedding"], dtype=float),
            attributes=rec["attributes"],
            motion=tuple(tuple(tuple(p) for p in path) for path in rec["motion"]),
            visibility=vis,
            size=tuple(rec["size"]),
            distractor=rec["distractor"],
        )

    def __eq__(self, other):
        if not isinstance(other, ObjectSpec):
            return NotImplemented
        return self.to_record() == other.to_record()

    __hash__ = None


def _runs(row: np.ndarray) -> list[list[int]]:
    """Half-open ``[start, stop)`` runs of True values."""
    runs, start = [], None
    for i, v in enumerate(row):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append([start, i])
            start = None
    if start is not None:
        runs.append([start, len(row)])
    return runs


@dataclass(frozen=True, eq=False)
class SceneSpec:
    n_views: int
    n_frames: int
    objects: tuple[ObjectSpec, ...]
    noise: NoiseParams
    seed: int
    grid: int = DEFAULT_GRID

    def __post_init__(self):
        if self.n_views < 2:
            raise ConfigError(f"scene.n_views={self.n_views} must be >= 2")
        if self.n_frames < 1:
            raise ConfigError(f"scene.n_frames={self.n_frames} must be >= 1")
        if not self.objects:
            raise ConfigError("scene.objects is empty")
        objects = tuple(sorted(self.objects, key=lambda o: o.id))
        ids = [o.id for o in objects]
        if len(set(ids)) != len(ids):
            raise ConfigError("scene.objects repeats an id")
        for o in objects:
            if o.visibility.shape != (self.n_views, self.n_frames) or len(o.motion) != self.n_views:
                raise ConfigError(f"object {o.id} does not match the scene's views/frames")
        if self.noise.view_warp is not None and self.noise.view_warp.shape[0] != self.n_views:
            raise ConfigError("noise.view_warp has the wrong number of views")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"scene.seed={self.seed} is not a 64-bit unsigned integer")
        object.__setattr__(self, "objects", objects)

    @property
    def d_id(self) -> int:
        return int(self.objects[0].base_embedding.shape[0])

    def object(self, oid: int) -> ObjectSpec:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def __eq__(self, other):
        if not isinstance(other, SceneSpec):
            return NotImplemented
        return (
            (self.n_views, self.n_frames, self.seed, self.grid) == (other.n_views, other.n_frames, other.seed, other.grid)
            and self.noise == other.noise
            and self.objects == other.objects
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SceneTruth:
    spec: SceneSpec
    gt_trajectories: tuple[CrossViewTrajectory, ...]

    def __post_init__(self):
        object.__setattr__(self, "gt_trajectories", tuple(sorted(self.gt_trajectories, key=lambda t: t.global_id)))

    @cached_property
    def _index(self) -> dict[tuple[int, int], list[tuple[int, Detection]]]:
        index: dict[tuple[int, int], list[tuple[int, Detection]]] = {}
        for traj in self.gt_trajectories:
            for view, t in traj.members.items():
                for d in t.detections:
                    index.setdefault((view, d.frame), []).append((traj.global_id, d))
        return index

    def gt_at(self, view: int, frame: int) -> list[tuple[int, Detection]]:
        """``(object id, detection)`` pairs visible in ``view`` at ``frame``."""
        return self._index.get((view, frame), [])

    def trajectory(self, oid: int) -> CrossViewTrajectory:
        for t in self.gt_trajectories:
            if t.global_id == oid:
                return t
        raise KeyError(oid)

    def __eq__(self, other):
        if not isinstance(other, SceneTruth):
            return NotImplemented
        return self.spec == other.spec and self.gt_trajectories == other.gt_trajectories

    __hash__ = None


def serialize_scene(scene: SceneTruth) -> bytes:
    """Canonical JSON-lines encoding: header, noise, objects, then GT detections."""
    spec = scene.spec
    records: list[dict] = [
        {
            "kind": "scene",
            "schema_version": SCHEMA_VERSION,
            "n_views": spec.n_views,
            "n_frames": spec.n_frames,
            "seed": spec.seed,
            "grid": spec.grid,
        },
        spec.noise.to_record(),
    ]
    records.extend(o.to_record() for o in spec.objects)
    for traj in scene.gt_trajectories:
        for view, t in traj.members.items():
            for d in t.detections:
                records.append(
                    {
                        "kind": "detection",
                        "global_id": traj.global_id,
                        "local_id": t.local_id,
                        "view": view,
                        "frame": d.frame,
                        "box": list(d.box),
                        "embedding": None if d.embedding is None else d.embedding.tolist(),
                    }
                )
    return dumps_records(records)


def parse_scene(data: bytes | str) -> SceneTruth:
    records = loads_records(data)
    if not records or records[0].get("kind") != "scene":
        raise FormatError("scene file must start with a 'scene' record", 1)
    head = records[0]
    if head.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {head.get('schema_version')}", 1)
    noise, objects = None, []
    dets: dict[int, dict[int, tuple[str, list[Detection]]]] = {}
    for lineno, rec in enumerate(records[1:], start=2):
        kind = rec.get("kind")
        if kind == "noise":
            noise = NoiseParams.from_record(rec)
        elif kind == "object":
            objects.append(ObjectSpec.from_record(rec))
        elif kind == "detection":
            emb = None if rec["embedding"] is None else np.array(rec["embedding"], dtype=float)
            d = Detection(rec["view"], rec["frame"], tuple(rec["box"]), emb, head["grid"])
            slot = dets.setdefault(rec["global_id"], {}).setdefault(rec["view"], (rec["local_id"], []))
            slot[1].append(d)
        else:
            raise FormatError(f"unknown record kind {kind!r}", lineno)
    if noise is None:
        raise FormatError("scene file has no 'noise' record")
    spec = SceneSpec(head["n_views"], head["n_frames"], tuple(objects), noise, head["seed"], head["grid"])
    trajs = [
        CrossViewTrajectory(gid, {v: Tracklet(v, lid, tuple(ds)) for v, (lid, ds) in views.items()})
        for gid, views in sorted(dets.items())
    ]
    return SceneTruth(spec, tuple(trajs))
