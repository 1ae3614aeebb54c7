"""Command line entry point: ``crvtrack <subcommand>``.

Exit codes: 0 success, 1 check or ordering failure, 2 config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checks import run_kernel_checks
from .config import load_config, resolve_output_dir, with_overrides
from .core import (
    SCHEMA_VERSION,
    ConfigError,
    CrvError,
    ParseError,
    dumps_records,
    parse_groups,
    parse_trajectory_file,
    serialize_scene,
)
from .experiment import MIN_MARGIN, run_pipeline
from .metrics import EvalConfig, cvr_idf1, evaluate_grouped
from .synthworld import generate_scene, make_scene_spec

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _add_run_flags(p: argparse.ArgumentParser, arms: bool = True) -> None:
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--seed", type=int, help="scene seed (first seed for bench)")
    p.add_argument("--out", help="output directory (overrides $CRVTRACK_OUTPUT_ROOT)")
    if arms:
        p.add_argument("--arms", help="comma-separated subset of raw,assoc,assoc+birp")
        p.add_argument("--tau-affinity", type=float)
        p.add_argument("--max-rounds", type=int)
        p.add_argument("--tau-group", type=float)
        p.add_argument("--scene", dest="scene_file", help="serialized scene to use instead of generating one")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crvtrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="write a synthetic scene as JSONL")
    _add_run_flags(p, arms=False)

    p = sub.add_parser("pipeline", help="run the ablation arms on one seed")
    _add_run_flags(p)

    p = sub.add_parser("bench", help="run the ablation arms over the seed range and judge the trend")
    _add_run_flags(p)
    p.add_argument("--n-seeds", type=int)

    p = sub.add_parser("eval", help="score a trajectory CSV against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--pred-groups")
    p.add_argument("--gt-groups")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--use-masks", action="store_true")
    p.add_argument("--breakdown", help="write a per-identity CSV here")

    p = sub.add_parser("kernel-check", help="gradient and invariant checks for the kernels")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report path (default: stdout)")
    return parser


def _run_config(args, n_seeds: int | None):
    cfg = load_config(args.config)
    arms = None
    if getattr(args, "arms", None):
        arms = tuple(a.strip() for a in args.arms.split(",") if a.strip())
    try:
        return with_overrides(
            cfg,
            seed=args.seed,
            arms=arms,
            n_seeds=n_seeds,
            scene_file=getattr(args, "scene_file", None),
            tau_affinity=getattr(args, "tau_affinity", None),
            max_rounds=getattr(args, "max_rounds", None),
            tau_group=getattr(args, "tau_group", None),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"flags: {exc}") from None


def cmd_gen_scene(args) -> int:
    cfg = _run_config(args, None)
    scene = generate_scene(make_scene_spec(cfg.seed, cfg.scene))
    data = serialize_scene(scene)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"scene_{cfg.seed:04d}.jsonl").write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return EXIT_OK


def _summarize(report) -> None:
    for arm, m in report.means.items():
        print(f"{arm:>11}  CVR-IDF1 {m['cvr_idf1']:.4f}  CVR-MA {m['cvr_ma']:.4f}", file=sys.stderr)


def cmd_pipeline(args) -> int:
    cfg = _run_config(args, 1)
    report = run_pipeline(cfg, resolve_output_dir(cfg, args.out), jobs=args.jobs)
    _summarize(report)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _run_config(args, args.n_seeds)
    report = run_pipeline(cfg, resolve_output_dir(cfg, args.out), jobs=args.jobs)
    _summarize(report)
    verdict = report.verdict_record()
    print(
        f"ordering {'holds' if verdict['ordering'] else 'fails'}; margins "
        + ", ".join(f"{d:+.4f}" for d in verdict["margins"])
        + f" (need >= {MIN_MARGIN})",
        file=sys.stderr,
    )
    return EXIT_OK if report.trend_holds() else EXIT_FAIL


def _read(path: str) -> bytes:
    return Path(path).read_bytes()


def cmd_eval(args) -> int:
    cfg = EvalConfig(args.iou_threshold, args.use_masks)
    pred = parse_trajectory_file(_read(args.pred))
    gt = parse_trajectory_file(_read(args.gt))
    records = []
    if args.gt_groups:
        gt_groups = parse_groups(_read(args.gt_groups))
        pred_groups = parse_groups(_read(args.pred_groups)) if args.pred_groups else {}
        ev = evaluate_grouped(pred, gt, pred_groups, gt_groups, cfg)
        for gi, w, rep in ev.per_group:
            records.append({"schema_version": SCHEMA_VERSION, "kind": "group", "group": gi, "weight": w, **rep.to_record()})
        records.append({"schema_version": SCHEMA_VERSION, "kind": "summary", "cvr_idf1": ev.cvr_idf1, "cvr_ma": ev.cvr_ma})
        rows = [(gi, row) for gi, _, rep in ev.per_group for row in rep.per_identity]
    else:
        if args.pred_groups:
            raise ConfigError("--pred-groups needs --gt-groups")
        rep = cvr_idf1(pred, gt, cfg)
        records.append({"schema_version": SCHEMA_VERSION, "kind": "summary", **rep.to_record()})
        rows = [("", row) for row in rep.per_identity]
    sys.stdout.buffer.write(dumps_records(records))
    if args.breakdown:
        lines = ["group,gt_id,pred_id,idtp,gt_detections,pred_detections"]
        for gi, r in rows:
            pid = "" if r.pred_id is None else r.pred_id
            lines.append(f"{gi},{r.gt_id},{pid},{r.idtp},{r.gt_detections},{r.pred_detections}")
        Path(args.breakdown).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_kernel_check(args) -> int:
    results = run_kernel_checks(epsilon=args.epsilon, seed=args.seed)
    header = {"schema_version": SCHEMA_VERSION, "kind": "kernel_check", "epsilon": args.epsilon, "seed": args.seed}
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "summary",
        "passed": all(r.passed for r in results),
        "failed": [r.check for r in results if not r.passed],
    }
    data = dumps_records([header, *(r.to_record() for r in results), summary])
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.check:<28} max_error={r.max_error:.3e}", file=sys.stderr)
    return EXIT_OK if summary["passed"] else EXIT_FAIL


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "pipeline": cmd_pipeline,
    "bench": cmd_bench,
    "eval": cmd_eval,
    "kernel-check": cmd_kernel_check,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CrvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
