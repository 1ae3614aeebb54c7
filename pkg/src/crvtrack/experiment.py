"""Benchmark orchestration: scenes, ablation arms, evaluation, output tree."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import ARMS, RunConfig
from .core import (
    SCHEMA_VERSION,
    CrossViewTrajectory,
    SceneTruth,
    dumps_records,
    format_trajectories,
    parse_scene,
)
from .metrics import ReferringEval, aligned_group_ids, evaluate_referring
from .pseudolabel import generate_pseudo_labels, group_by_referring, raw_trajectories
from .synthworld import SimOracle, generate_scene, make_scene_spec

MIN_MARGIN = 0.05


@dataclass(frozen=True)
class ArmResult:
    seed: int
    arm: str
    trajectories: tuple[CrossViewTrajectory, ...]
    group_ids: dict[int, list[int]]
    evaluation: ReferringEval

    def to_record(self) -> dict:
        groups = [
            {"group": gi, "weight": w, **rep.to_record()} for gi, w, rep in self.evaluation.per_group
        ]
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "result",
            "seed": self.seed,
            "arm": self.arm,
            "cvr_idf1": self.evaluation.cvr_idf1,
            "cvr_ma": self.evaluation.cvr_ma,
            "n_trajectories": len(self.trajectories),
            "groups": groups,
        }


@dataclass(frozen=True)
class SeedResult:
    seed: int
    gt: tuple[CrossViewTrajectory, ...]
    gt_group_ids: dict[int, list[int]]
    arms: dict[str, ArmResult]


@dataclass
class BenchmarkReport:
    arms: tuple[str, ...]
    seeds: list[int]
    table: dict[str, dict[int, ReferringEval]] = field(default_factory=dict)

    def mean(self, arm: str, metric: str = "cvr_idf1") -> float:
        vals = [getattr(self.table[arm][s], metric) for s in self.seeds]
        return math.fsum(vals) / len(vals)

    @property
    def means(self) -> dict[str, dict[str, float]]:
        return {a: {"cvr_idf1": self.mean(a), "cvr_ma": self.mean(a, "cvr_ma")} for a in self.arms}

    def margins(self) -> list[float]:
        m = [self.mean(a) for a in self.arms]
        return [b - a for a, b in zip(m, m[1:])]

    @property
    def ordering(self) -> bool:
        """Strictly increasing mean CVR-IDF1 along the arms present, in ablation order."""
        return all(d > 0 for d in self.margins())

    def trend_holds(self, min_margin: float = MIN_MARGIN) -> bool:
        return self.ordering and all(d >= min_margin for d in self.margins())

    def verdict_record(self, min_margin: float = MIN_MARGIN) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "verdict",
            "arms": list(self.arms),
            "ordering": self.ordering,
            "margins": self.margins(),
            "min_margin": min_margin,
            "trend_holds": self.trend_holds(min_margin),
        }

    def mean_records(self) -> list[dict]:
        return [
            {"schema_version": SCHEMA_VERSION, "kind": "arm_mean", "arm": a, "n_seeds": len(self.seeds), **self.means[a]}
            for a in self.arms
        ]

    def table_csv(self) -> bytes:
        lines = ["seed,arm,cvr_idf1,cvr_ma"]
        for s in self.seeds:
            for a in self.arms:
                r = self.table[a][s]
                lines.append(f"{s},{a},{r.cvr_idf1:.12f},{r.cvr_ma:.12f}")
        return ("\n".join(lines) + "\n").encode("utf-8")


def load_scene(cfg: RunConfig, seed: int) -> SceneTruth:
    if cfg.scene_file is not None:
        return parse_scene(Path(cfg.scene_file).read_bytes())
    return generate_scene(make_scene_spec(seed, cfg.scene))


def run_seed(cfg: RunConfig, seed: int) -> SeedResult:
    scene = load_scene(cfg, seed)
    oracle = SimOracle(scene)
    tracks = {v: oracle.track(v) for v in range(scene.spec.n_views)}
    targets = [t for t in scene.gt_trajectories if not scene.spec.object(t.global_id).distractor]
    gt_groups = group_by_referring(targets, oracle.describe, cfg.assoc)
    gt_ids = {gi: g.global_ids for gi, g in enumerate(gt_groups)}

    results = {}
    for arm in cfg.arms:
        if arm == "raw":
            trajs = raw_trajectories(tracks)
        else:
            acfg = cfg.assoc if arm == "assoc+birp" else dataclasses.replace(cfg.assoc, max_rounds=0)
            trajs = generate_pseudo_labels(tracks, oracle, acfg).trajectories
        groups = group_by_referring(trajs, oracle.describe, cfg.assoc)
        ev = evaluate_referring(groups, gt_groups, cfg.eval, cfg.assoc.tau_group)
        ids = aligned_group_ids(groups, gt_groups, cfg.assoc.tau_group)
        results[arm] = ArmResult(seed, arm, tuple(trajs), ids, ev)
    return SeedResult(seed, tuple(targets), gt_ids, results)


@dataclass(frozen=True)
class SeedOutput:
    """Picklable per-seed product: rendered files plus evaluations."""

    seed: int
    files: dict[str, bytes]
    records: dict[str, dict]
    evaluations: dict[str, ReferringEval]


def format_group_ids(groups: dict[int, list[int]]) -> bytes:
    lines = [f"{k}: [{','.join(str(i) for i in groups[k])}]" for k in sorted(groups)]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def seed_output(cfg: RunConfig, seed: int) -> SeedOutput:
    r = run_seed(cfg, seed)
    base = f"seed_{seed:04d}"
    files = {
        f"{base}/gt.csv": format_trajectories(r.gt),
        f"{base}/gt_groups.txt": format_group_ids(r.gt_group_ids),
    }
    for arm, res in r.arms.items():
        files[f"{base}/{arm}/pseudo_labels.csv"] = format_trajectories(res.trajectories)
        files[f"{base}/{arm}/groups.txt"] = format_group_ids(res.group_ids)
    return SeedOutput(
        seed,
        files,
        {a: res.to_record() for a, res in r.arms.items()},
        {a: res.evaluation for a, res in r.arms.items()},
    )


def _seed_output_star(args):
    return seed_output(*args)


def run_seeds(cfg: RunConfig, jobs: int = 1) -> list[SeedOutput]:
    seeds = [cfg.seed] if cfg.scene_file is not None else cfg.seeds()
    if jobs <= 1 or len(seeds) == 1:
        return [seed_output(cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_seed_output_star, [(cfg, s) for s in seeds]))


def build_report(cfg: RunConfig, outputs: list[SeedOutput]) -> BenchmarkReport:
    report = BenchmarkReport(cfg.arms, [o.seed for o in outputs])
    for arm in cfg.arms:
        report.table[arm] = {o.seed: o.evaluations[arm] for o in outputs}
    return report


def output_files(cfg: RunConfig, outputs: list[SeedOutput], report: BenchmarkReport) -> dict[str, bytes]:
    """Relative path -> content for the whole output tree."""
    files: dict[str, bytes] = {}
    for o in outputs:
        files.update(o.files)
    records = [{"schema_version": SCHEMA_VERSION, **cfg.to_record()}]
    records += [o.records[a] for o in outputs for a in cfg.arms]
    records += report.mean_records()
    records.append(report.verdict_record())
    files["report.jsonl"] = dumps_records(records)
    files["bench_table.csv"] = report.table_csv()
    return files


def write_tree(root: Path, files: dict[str, bytes]) -> None:
    # single collector: every file is written once, after all seeds finish
    for rel in sorted(files):
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(files[rel])


def run_pipeline(cfg: RunConfig, out_dir: Path | None = None, jobs: int = 1) -> BenchmarkReport:
    """Run every seed and arm; write the output tree when ``out_dir`` is given."""
    outputs = run_seeds(cfg, jobs)
    report = build_report(cfg, outputs)
    if out_dir is not None:
        write_tree(Path(out_dir), output_files(cfg, outputs, report))
    return report


__all__ = [
    "ARMS",
    "ArmResult",
    "BenchmarkReport",
    "SeedOutput",
    "SeedResult",
    "build_report",
    "output_files",
    "run_pipeline",
    "run_seed",
    "run_seeds",
    "seed_output",
    "write_tree",
]
