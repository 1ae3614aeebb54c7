"""Kernel verification suite: gradient checks and numerical invariants over seeded draws."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .core import SCHEMA_VERSION, CrvError, keyed_rng
from .kernels import (
    AttentionWeights,
    BarInputs,
    CgctInputs,
    ViewTokenState,
    bar_fuse,
    bar_loss,
    bar_loss_grad,
    cgct_embed,
    cgct_grad,
    cgct_loss,
    dynamic_view_token,
    ema_smooth,
    finite_diff_grad_check,
    gbce_grad,
    gbce_loss,
    object_tokens,
    proposal_grad,
    proposal_losses,
    rank_hinge_grad,
    rank_hinge_loss,
    soft_iou_target,
    vc_cma_grad,
    vc_cma_loss,
    vcca,
)

GRAD_TOL = 1e-4
SOFTMAX_TOL = 1e-12
NORM_TOL = 1e-9
KINK_GAP = 1e-3


@dataclass(frozen=True)
class CheckResult:
    check: str
    kind: str
    draws: int
    max_error: float
    tolerance: float
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and self.max_error <= self.tolerance

    def to_record(self) -> dict:
        rec = {
            "schema_version": SCHEMA_VERSION,
            "check": self.check,
            "kind": self.kind,
            "draws": self.draws,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }
        if self.error is not None:
            rec["error"] = self.error
        return rec


# ---------------------------------------------------------------------------
# gradient problems: (loss of a flat vector, its gradient, x0, skip mask)

GradProblem = tuple[Callable[[np.ndarray], float], Callable[[np.ndarray], np.ndarray], np.ndarray, np.ndarray]


def cgct_problem(rng: np.random.Generator, n_ids: int = 3, n_views: int = 2, d: int = 4) -> GradProblem:
    keys, shapes = [], []
    for g in range(n_ids):
        for v in range(n_views):
            keys.append((g, v))
            shapes.append((int(rng.integers(1, 4)), d))
    sizes = [a * b for a, b in shapes]
    lam = float(rng.uniform(0.5, 2.0))

    def unpack(x):
        out, i = {}, 0
        for k, s, n in zip(keys, shapes, sizes):
            out[k] = x[i : i + n].reshape(s)
            i += n
        return out

    def fn(x):
        return cgct_loss(unpack(x), lam)

    def grad(x):
        g = cgct_grad(unpack(x), lam)
        return np.concatenate([g[k].ravel() for k in keys])

    x0 = rng.standard_normal(sum(sizes))
    return fn, grad, x0, np.zeros(x0.size, bool)


def vc_cma_problem(rng: np.random.Generator, grid: int = 6) -> GradProblem:
    target = (rng.random((grid, grid)) < 0.4).astype(float)
    x0 = rng.uniform(0.15, 0.85, grid * grid)

    def fn(x):
        return vc_cma_loss(x.reshape(grid, grid), target)

    def grad(x):
        return vc_cma_grad(x.reshape(grid, grid), target).ravel()

    return fn, grad, x0, np.zeros(x0.size, bool)


def bar_loss_problem(rng: np.random.Generator, frames: int = 8) -> GradProblem:
    labels = (rng.random(frames) < 0.5).astype(float)
    x0 = rng.uniform(0.15, 0.85, frames)
    return (lambda x: bar_loss(x, labels)), (lambda x: bar_loss_grad(x, labels)), x0, np.zeros(frames, bool)


def gbce_problem(rng: np.random.Generator, n: int = 12) -> GradProblem:
    targets = np.where(rng.random(n) < 0.4, rng.uniform(0.05, 1.0, n), 0.0)
    x0 = 2 * rng.standard_normal(n)
    return (lambda x: gbce_loss(x, targets)), (lambda x: gbce_grad(x, targets)), x0, np.zeros(n, bool)


def rank_hinge_problem(rng: np.random.Generator, n_pos: int = 5, n_neg: int = 7) -> GradProblem:
    margin = float(rng.uniform(0.1, 1.0))
    x0 = rng.standard_normal(n_pos + n_neg)

    def split(x):
        return x[:n_pos], x[n_pos:]

    def fn(x):
        return rank_hinge_loss(*split(x), margin)

    def grad(x):
        gp, gn = rank_hinge_grad(*split(x), margin)
        return np.concatenate([gp, gn])

    sp, sn = split(x0)
    near = np.abs(margin - (sp[:, None] - sn[None, :])) < KINK_GAP
    skip = np.concatenate([near.any(axis=1), near.any(axis=0)])
    return fn, grad, x0, skip


def proposal_problem(rng: np.random.Generator, size: int = 4) -> GradProblem:
    shapes = {"heatmap": (size, size), "centerness": (size, size), "size": (size, 2), "offset": (size, 2)}
    targets = {
        "heatmap": rng.uniform(0, 1, shapes["heatmap"]) ** 3,
        "centerness": rng.uniform(0, 1, shapes["centerness"]),
        "size": rng.uniform(0, 3, shapes["size"]),
        "offset": rng.uniform(-1, 1, shapes["offset"]),
    }
    keys = list(shapes)
    sizes = [int(np.prod(shapes[k])) for k in keys]

    def unpack(x):
        out, i = {}, 0
        for k, n in zip(keys, sizes):
            out[k] = x[i : i + n].reshape(shapes[k])
            i += n
        return out

    def fn(x):
        return proposal_losses(unpack(x), targets)

    def grad(x):
        g = proposal_grad(unpack(x), targets)
        return np.concatenate([g[k].ravel() for k in keys])

    x0 = np.concatenate(
        [
            rng.uniform(0.15, 0.85, sizes[0]),
            rng.uniform(0.15, 0.85, sizes[1]),
            rng.uniform(0, 3, sizes[2]),
            rng.uniform(-1, 1, sizes[3]),
        ]
    )
    t = np.concatenate([targets[k].ravel() for k in keys])
    resid = np.abs(x0 - t)
    skip = np.zeros(x0.size, bool)
    regress = slice(sizes[0] + sizes[1], None)
    skip[regress] = np.abs(resid[regress] - 1.0) < KINK_GAP
    return fn, grad, x0, skip


GRADIENT_PROBLEMS: dict[str, Callable[[np.random.Generator], GradProblem]] = {
    "grad.cgct_loss": cgct_problem,
    "grad.vc_cma_loss": vc_cma_problem,
    "grad.bar_loss": bar_loss_problem,
    "grad.gbce_loss": gbce_problem,
    "grad.rank_hinge_loss": rank_hinge_problem,
    "grad.proposal_losses": proposal_problem,
}


def gradient_check(name: str, seed: int, draws: int = 20, epsilon: float = 1e-5) -> CheckResult:
    worst = 0.0
    try:
        for i in range(draws):
            fn, grad, x0, skip = GRADIENT_PROBLEMS[name](keyed_rng(seed, name, i))
            worst = max(worst, finite_diff_grad_check(fn, grad, x0, epsilon, skip))
    except (CrvError, ArithmeticError, ValueError) as exc:
        return CheckResult(name, "gradient", draws, worst, GRAD_TOL, f"{type(exc).__name__}: {exc}")
    return CheckResult(name, "gradient", draws, worst, GRAD_TOL)


# ---------------------------------------------------------------------------
# invariants: each yields one error value per draw


def _softmax_rows(rng) -> Iterator[float]:
    d = 16
    w = AttentionWeights.random(d, rng, d_s=8, heads=2)
    u = rng.standard_normal((int(rng.integers(1, 6)), 8))
    r = rng.standard_normal((int(rng.integers(1, 6)), 8))
    _, weights = vcca(u, r, rng.standard_normal(d), w, return_weights=True)
    yield float(np.max(np.abs(weights.sum(axis=-1) - 1.0)))


def _unit_norms(rng) -> Iterator[float]:
    d = 8
    state = ViewTokenState(rng.standard_normal(d), rng.standard_normal((d, d)), float(rng.uniform(0, 2)), float(rng.uniform()))
    e_hat = dynamic_view_token(state, rng.standard_normal((d, 4, 4)))
    yield abs(np.linalg.norm(e_hat) - 1)
    e_prev = rng.standard_normal(d)
    e_prev /= np.linalg.norm(e_prev)
    yield abs(np.linalg.norm(ema_smooth(e_prev, e_hat, float(rng.uniform()))) - 1)
    inp = BarInputs.random(rng)
    yield float(np.max(np.abs(np.linalg.norm(object_tokens(inp.feat_u, inp.masks_u), axis=1) - 1)))
    out = bar_fuse(inp)
    yield abs(np.linalg.norm(out.tau_u) - 1)
    cg = CgctInputs.random(rng)
    mask = rng.uniform(0.05, 1.0, (8, 8))
    yield abs(np.linalg.norm(cgct_embed(cg, mask, rng.standard_normal(8))) - 1)


def _bar_envelope(rng) -> Iterator[float]:
    inp = BarInputs.random(rng, k=int(rng.integers(1, 4)))
    out = bar_fuse(inp)
    lo = np.minimum(inp.masks_u, inp.masks_b)
    hi = np.maximum(inp.masks_u, inp.masks_b)
    yield float(max(np.max(lo - out.masks), np.max(out.masks - hi), 0.0))
    yield abs(float(out.alpha_u.sum()) - 1)


def _ema_identities(rng) -> Iterator[float]:
    d = 8
    e = rng.standard_normal(d)
    e /= np.linalg.norm(e)
    other = rng.standard_normal(d)
    other /= np.linalg.norm(other)
    a = float(rng.uniform())
    yield float(np.max(np.abs(ema_smooth(e, e, a) - e)))
    yield float(np.max(np.abs(ema_smooth(e, other, 1.0) - e)))
    yield float(np.max(np.abs(ema_smooth(e, other, 0.0) - other)))


def _cgct_consensus(rng) -> Iterator[float]:
    emb = {}
    for g in range(int(rng.integers(1, 4))):
        z = rng.standard_normal(6)
        for v in range(int(rng.integers(1, 4))):
            emb[(g, v)] = np.tile(z, (int(rng.integers(1, 5)), 1))
    yield cgct_loss(emb, float(rng.uniform(0, 3)))


def _soft_iou_points(rng) -> Iterator[float]:
    lo = float(rng.uniform(0, 0.5))
    hi = float(rng.uniform(lo + 0.05, 1.0))
    yield abs(float(soft_iou_target(hi, hi, lo)) - 1.0)
    yield abs(float(soft_iou_target(lo, hi, lo)) - 0.0)
    yield abs(float(soft_iou_target((lo + hi) / 2, hi, lo)) - 0.5)


INVARIANTS: dict[str, tuple[Callable, float]] = {
    "inv.softmax_rows": (_softmax_rows, SOFTMAX_TOL),
    "inv.unit_norm": (_unit_norms, NORM_TOL),
    "inv.bar_envelope": (_bar_envelope, 1e-12),
    "inv.ema_identities": (_ema_identities, 1e-12),
    "inv.cgct_consensus_zero": (_cgct_consensus, 1e-20),
    "inv.soft_iou_points": (_soft_iou_points, 1e-12),
}


def invariant_check(name: str, seed: int, draws: int = 100) -> CheckResult:
    fn, tol = INVARIANTS[name]
    worst = 0.0
    try:
        for i in range(draws):
            for err in fn(keyed_rng(seed, name, i)):
                worst = max(worst, float(err))
    except (CrvError, ArithmeticError, ValueError) as exc:
        return CheckResult(name, "invariant", draws, worst, tol, f"{type(exc).__name__}: {exc}")
    return CheckResult(name, "invariant", draws, worst, tol)


def run_kernel_checks(
    epsilon: float = 1e-5, seed: int = 0, grad_draws: int = 20, invariant_draws: int = 100
) -> list[CheckResult]:
    results = [gradient_check(name, seed, grad_draws, epsilon) for name in GRADIENT_PROBLEMS]
    results += [invariant_check(name, seed, invariant_draws) for name in INVARIANTS]
    return results
