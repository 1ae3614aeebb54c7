import numpy as np
import pytest
from hypothesis import settings

from crvtrack.core import NoiseParams, ObjectSpec, SceneSpec
from crvtrack.synthworld import SceneParams, generate_scene

settings.register_profile("default", deadline=None, derandomize=True)
settings.load_profile("default")

# small world used by property tests: fast but still has fragments, switches and drift
SMALL = SceneParams(n_frames=20, n_objects=4, n_distractors=1)
SMALL_CLEAN = SceneParams(
    n_frames=20, n_objects=4, n_distractors=1, frag_prob=0, switch_prob=0, drift_prob=0, embed_noise_sigma=0
)


def unit(*xs):
    v = np.asarray(xs, dtype=float)
    return v / np.linalg.norm(v)


def basis(i, d=4):
    v = np.zeros(d)
    v[i] = 1.0
    return v


def walker(oid, emb, n_views, n_frames, x0, x1, y=0.5, attrs=None, vis=None, size=(0.1, 0.2), distractor=False):
    """Object moving linearly from x0 to x1 in every view."""
    last = max(n_frames - 1, 0)
    path = ((0, x0, y), (last, x1, y)) if last > 0 else ((0, x0, y),)
    return ObjectSpec(
        id=oid,
        base_embedding=emb,
        attributes=attrs or {"color": "red", "clothing": "coat"},
        motion=tuple(path for _ in range(n_views)),
        visibility=np.ones((n_views, n_frames), bool) if vis is None else vis,
        size=size,
        distractor=distractor,
    )


def build_scene(objects, n_views=2, n_frames=10, noise=None, seed=0):
    return generate_scene(SceneSpec(n_views, n_frames, tuple(objects), noise or NoiseParams(), seed))


@pytest.fixture
def two_walkers():
    objs = [
        walker(0, basis(0), 2, 10, 0.2, 0.3, y=0.3),
        walker(1, basis(1), 2, 10, 0.7, 0.8, y=0.7, attrs={"color": "blue", "clothing": "suit"}),
    ]
    return build_scene(objs)


# ---------------------------------------------------------------------------
# random metric instances: predictions stitched from gt pieces plus clutter

BOX_POOL = ((0.2, 0.2, 0.2, 0.2), (0.5, 0.5, 0.3, 0.3), (0.8, 0.3, 0.2, 0.4), (0.3, 0.7, 0.25, 0.25))


def traj_from_slots(gid, slots):
    """``slots``: {(view, frame): box} -> CrossViewTrajectory."""
    from crvtrack.core import CrossViewTrajectory, Detection, Tracklet

    per_view = {}
    for (v, f), box in slots.items():
        per_view.setdefault(v, []).append(Detection(v, f, box))
    return CrossViewTrajectory(gid, {v: Tracklet(v, str(gid), tuple(d)) for v, d in per_view.items()})


def random_metric_instance(seed, max_ids=6, n_views=2, n_frames=4):
    rng = np.random.default_rng(seed)
    gt_slots = []
    for _ in range(int(rng.integers(0, max_ids + 1))):
        s = {
            (v, f): BOX_POOL[int(rng.integers(len(BOX_POOL)))]
            for v in range(n_views)
            for f in range(n_frames)
            if rng.random() < 0.7
        }
        if s:
            gt_slots.append(s)
    pred_slots = []
    for _ in range(int(rng.integers(0, max_ids + 1))):
        s = {}
        for v in range(n_views):
            for f in range(n_frames):
                if rng.random() < 0.4:
                    continue
                owners = [g for g in gt_slots if (v, f) in g]
                if owners and rng.random() < 0.7:
                    s[(v, f)] = owners[int(rng.integers(len(owners)))][(v, f)]
                else:
                    s[(v, f)] = BOX_POOL[int(rng.integers(len(BOX_POOL)))]
        if s:
            pred_slots.append(s)
    gt = [traj_from_slots(i, s) for i, s in enumerate(gt_slots)]
    pred = [traj_from_slots(100 + i, s) for i, s in enumerate(pred_slots)]
    return pred, gt


# ---------------------------------------------------------------------------
# acceptance verdict lines, echoed in the terminal summary

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def emit(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  [{criterion}] {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
