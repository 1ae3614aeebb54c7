import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crvtrack.checks import GRAD_TOL, run_kernel_checks
from crvtrack.core import ConfigError, DegenerateInputError, EmptyInputError, UsageError
from crvtrack.kernels import (
    MLP,
    AttentionWeights,
    BarInputs,
    CgctInputs,
    MHAParams,
    NumericError,
    ViewTokenState,
    bar_bias_label,
    bar_fuse,
    bar_loss,
    cgct_embed,
    cgct_loss,
    clip_prob,
    dice_loss,
    dynamic_view_token,
    ema_smooth,
    finite_diff_grad_check,
    focal_loss,
    gbce_loss,
    masked_pool,
    proposal_losses,
    rank_hinge_loss,
    smooth_l1,
    soft_iou_target,
    text_update,
    vc_cma_grad,
    vc_cma_loss,
    vcca,
    visual_update,
)
from crvtrack.kernels.cgct import cgct_grad
from crvtrack.kernels.losses import DomainError


# ---------------------------------------------------------------------------
# naive oracles: explicit loops over python floats


def naive_matvec(m, x):
    return [sum(m[i][j] * x[j] for j in range(len(x))) for i in range(len(m))]


def naive_norm(x):
    n = math.sqrt(sum(v * v for v in x))
    return [v / n for v in x]


def naive_matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def naive_mha(q_in, k_in, v_in, p: MHAParams):
    q, k, v = naive_matmul(q_in, p.wq), naive_matmul(k_in, p.wk), naive_matmul(v_in, p.wv)
    width = len(q[0])
    dh = width // p.heads
    concat = [[0.0] * width for _ in q]
    rows = []
    for h in range(p.heads):
        sl = range(h * dh, (h + 1) * dh)
        head_rows = []
        for i in range(len(q)):
            scores = [sum(q[i][c] * k[j][c] for c in sl) / math.sqrt(dh) for j in range(len(k))]
            top = max(scores)
            ex = [math.exp(s - top) for s in scores]
            w = [e / sum(ex) for e in ex]
            head_rows.append(w)
            for c in sl:
                concat[i][c] = sum(w[j] * v[j][c] for j in range(len(k)))
        rows.append(head_rows)
    return np.array(naive_matmul(concat, p.wo.tolist())), np.array(rows)


def naive_vcca(u, r, e, w, branch="visual"):
    p = w.visual if branch == "visual" else w.text
    bu = naive_matvec(w.w_u.T.tolist(), e.tolist())
    br = naive_matvec(w.w_r.T.tolist(), e.tolist())
    q = [[u[i][c] + bu[c] for c in range(len(bu))] for i in range(len(u))]
    k = [[r[j][c] + br[c] for c in range(len(br))] for j in range(len(r))]
    out, _ = naive_mha(q, k, r.tolist(), p)
    return u * out


def rand(rng, *shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------


class TestViewToken:
    def test_dynamic_off(self):
        rng = np.random.default_rng(0)
        g = rand(rng, 6)
        st_ = ViewTokenState(g, rand(rng, 6, 6), lambda_dyn=0.0)
        assert np.allclose(dynamic_view_token(st_, rand(rng, 6, 3, 3)), g / np.linalg.norm(g), atol=1e-15)

    def test_pooled_only(self):
        rng = np.random.default_rng(1)
        f = rand(rng, 5, 4, 4)
        st_ = ViewTokenState(np.zeros(5), np.eye(5), lambda_dyn=1.0)
        pooled = f.mean(axis=(1, 2))
        assert np.allclose(dynamic_view_token(st_, f), pooled / np.linalg.norm(pooled), atol=1e-15)

    def test_seed5_matches_stepwise(self):
        rng = np.random.default_rng(5)
        d = 6
        g, w, f, lam = rand(rng, d), rand(rng, d, d), rand(rng, d, 3, 5), 0.7
        pooled = [sum(f[c].ravel()) / f[c].size for c in range(d)]
        inner = naive_norm(naive_matvec(w.tolist(), pooled))
        want = naive_norm([g[i] + lam * inner[i] for i in range(d)])
        got = dynamic_view_token(ViewTokenState(g, w, lam), f)
        assert np.allclose(got, want, atol=1e-12)

    def test_degenerate(self):
        st_ = ViewTokenState(np.zeros(3), np.eye(3), lambda_dyn=1.0)
        with pytest.raises(DegenerateInputError):
            dynamic_view_token(st_, np.zeros((3, 2, 2)))

    def test_step_carries_state(self):
        rng = np.random.default_rng(2)
        st_ = ViewTokenState(rand(rng, 4), rand(rng, 4, 4), 1.0, 0.5)
        e1, st2 = st_.step(rand(rng, 4, 2, 2))
        assert np.array_equal(st2.e_prev, e1)
        e_hat = dynamic_view_token(st2, f2 := rand(rng, 4, 2, 2))
        e2, _ = st2.step(f2)
        assert np.allclose(e2, ema_smooth(e1, e_hat, 0.5))


class TestEma:
    def test_examples(self):
        a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert np.array_equal(ema_smooth(a, b, 1.0), a)
        assert np.array_equal(ema_smooth(a, b, 0.0), b)
        assert np.allclose(ema_smooth(a, b, 0.5), [0.70710678, 0.70710678], atol=1e-8)
        assert ema_smooth(None, b, 0.3) is b

    def test_cancellation(self):
        with pytest.raises(DegenerateInputError):
            ema_smooth(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 0.5)

    @given(st.floats(0, 1), st.integers(0, 1000))
    def test_idempotent(self, alpha, seed):
        e = np.random.default_rng(seed).standard_normal(5)
        e /= np.linalg.norm(e)
        assert np.allclose(ema_smooth(e, e, alpha), e, atol=1e-12)


class TestVcca:
    def test_single_reference_token(self):
        rng = np.random.default_rng(3)
        w = AttentionWeights.random(16, rng, d_s=8, heads=2)
        u, r, e = rand(rng, 3, 8), rand(rng, 1, 8), rand(rng, 16)
        out, weights = vcca(u, r, e, w, return_weights=True)
        assert np.all(weights == 1.0)
        assert np.allclose(out, u * ((r @ w.visual.wv) @ w.visual.wo), atol=1e-12)

    def test_zero_queries(self):
        rng = np.random.default_rng(4)
        w = AttentionWeights.random(16, rng, d_s=8)
        assert np.all(vcca(np.zeros((2, 8)), rand(rng, 3, 8), rand(rng, 16), w) == 0)

    def test_seed9_against_naive(self):
        rng = np.random.default_rng(9)
        w = AttentionWeights.random(16, rng, d_s=8, heads=2)
        u, r, e = rand(rng, 4, 8), rand(rng, 5, 8), rand(rng, 16)
        out, weights = vcca(u, r, e, w, return_weights=True)
        assert np.max(np.abs(weights.sum(axis=-1) - 1)) <= 1e-12
        assert np.allclose(out, naive_vcca(u, r, e, w), atol=1e-12)

    def test_mha_weights_match_naive(self):
        rng = np.random.default_rng(10)
        p = MHAParams.random(6, 3, rng)
        q, k = rand(rng, 2, 6), rand(rng, 4, 6)
        out, weights = __import__("crvtrack.kernels", fromlist=["x"]).multi_head_attention(q, k, k, p, return_weights=True)
        n_out, n_weights = naive_mha(q.tolist(), k.tolist(), k.tolist(), p)
        assert np.allclose(out, n_out, atol=1e-12) and np.allclose(weights, n_weights, atol=1e-14)

    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            MHAParams.random(6, 4, np.random.default_rng(0))

    def test_bottleneck_must_shrink(self):
        with pytest.raises(ConfigError):
            AttentionWeights.random(8, np.random.default_rng(0), d_s=8)


def zero_up(w: AttentionWeights, which: str) -> AttentionWeights:
    import dataclasses

    return dataclasses.replace(w, **{which: np.zeros_like(getattr(w, which))})


class TestUpdates:
    def test_visual_residual(self):
        rng = np.random.default_rng(11)
        w = zero_up(AttentionWeights.random(16, rng), "v_up")
        x = rand(rng, 3, 16)
        assert np.array_equal(visual_update(x, rand(rng, 2, 16), rand(rng, 16), w), x)

    def test_visual_single_zero_text_token(self):
        rng = np.random.default_rng(12)
        w = AttentionWeights.random(16, rng)
        x, e = rand(rng, 3, 16), rand(rng, 16)
        t = np.zeros((1, 16))
        xs = x @ w.v_down
        want = x + (xs * ((t @ w.t_down) @ w.visual.wv @ w.visual.wo)) @ w.v_up
        assert np.allclose(visual_update(x, t, e, w), want, atol=1e-12)

    def test_visual_seed13_composed(self):
        rng = np.random.default_rng(13)
        w = AttentionWeights.random(16, rng)
        x, t, e = rand(rng, 3, 16), rand(rng, 4, 16), rand(rng, 16)
        inner = naive_vcca(x @ w.v_down, t @ w.t_down, e, w, "visual")
        assert np.allclose(visual_update(x, t, e, w), x + inner @ w.v_up, atol=1e-12)

    def test_text_single_frame(self):
        rng = np.random.default_rng(14)
        w = AttentionWeights.random(16, rng)
        t, x, e = rand(rng, 2, 16), rand(rng, 1, 3, 16), rand(rng, 1, 16)
        want = t + vcca(t @ w.t_down, x[0] @ w.v_down, e[0], w, "text") @ w.t_up
        assert np.allclose(text_update(t, x, e, w), want, atol=1e-12)

    def test_text_residual(self):
        rng = np.random.default_rng(15)
        w = zero_up(AttentionWeights.random(16, rng), "t_up")
        t = rand(rng, 2, 16)
        assert np.array_equal(text_update(t, rand(rng, 3, 4, 16), rand(rng, 3, 16), w), t)

    def test_text_clip_mean(self):
        rng = np.random.default_rng(16)
        w = AttentionWeights.random(16, rng)
        t, x, e = rand(rng, 2, 16), rand(rng, 3, 4, 16), rand(rng, 3, 16)
        x_bar = sum(x[i] @ w.v_down for i in range(3)) / 3
        e_bar = (e[0] + e[1] + e[2]) / 3
        want = t + naive_vcca(t @ w.t_down, x_bar, e_bar, w, "text") @ w.t_up
        assert np.allclose(text_update(t, x, e, w), want, atol=1e-12)


class TestBar:
    def test_single_candidate(self):
        out = bar_fuse(BarInputs.random(np.random.default_rng(0), k=1))
        assert np.all(out.alpha_u == 1.0) and np.all(out.alpha_b == 1.0)

    def test_identical_branches(self):
        inp = BarInputs.random(np.random.default_rng(1))
        import dataclasses

        same = dataclasses.replace(inp, feat_b=inp.feat_u, masks_b=inp.masks_u)
        out = bar_fuse(same)
        assert np.allclose(out.masks, inp.masks_u, atol=1e-15)

    def test_seed17_envelope_and_naive(self):
        inp = BarInputs.random(np.random.default_rng(17), k=2)
        out = bar_fuse(inp)
        assert out.alpha_u.sum() == pytest.approx(1.0, abs=1e-12)
        assert out.alpha_b.sum() == pytest.approx(1.0, abs=1e-12)
        lo, hi = np.minimum(inp.masks_u, inp.masks_b), np.maximum(inp.masks_u, inp.masks_b)
        assert np.all(out.masks >= lo - 1e-15) and np.all(out.masks <= hi + 1e-15)

        def tokens(feat, masks):
            rows = []
            for m in masks:
                pooled = [float((feat[c] * m).sum() / m.sum()) for c in range(feat.shape[0])]
                rows.append(naive_norm(pooled))
            return rows

        def summary(objs):
            logits = [sum(o[i] * inp.ref_token[i] for i in range(len(o))) for o in objs]
            ex = [math.exp(v - max(logits)) for v in logits]
            a = [v / sum(ex) for v in ex]
            return naive_norm([sum(a[k] * objs[k][i] for k in range(len(objs))) for i in range(len(objs[0]))])

        tau_u = summary(tokens(inp.feat_u, inp.masks_u))
        tau_b = summary(tokens(inp.feat_b, inp.masks_b))
        seq = [inp.bia_token.tolist(), inp.ref_token.tolist(), tau_u, tau_b]
        att, _ = naive_mha(seq, seq, seq, inp.sa)
        p = 1 / (1 + math.exp(-(sum(att[0][i] * inp.head_w[i] for i in range(len(att[0]))) + inp.head_b)))
        assert out.p_bias == pytest.approx(p, abs=1e-12)
        assert np.allclose(out.masks, (1 - p) * inp.masks_b + p * inp.masks_u, atol=1e-12)

    def test_zero_mask(self):
        inp = BarInputs.random(np.random.default_rng(2))
        import dataclasses

        bad = dataclasses.replace(inp, masks_u=np.zeros_like(inp.masks_u))
        with pytest.raises(DegenerateInputError):
            bar_fuse(bad)

    def test_bias_label(self):
        a = np.zeros((32, 32), bool)
        b = np.zeros((32, 32), bool)
        a[:4, :4] = True
        b[10:, 10:] = True
        assert bar_bias_label(a, b) == 1
        assert bar_bias_label(a, a) == 0
        b[3, 3] = True
        assert bar_bias_label(a, b) == 0


def naive_bce(p, y):
    return sum(-(yi * math.log(pi) + (1 - yi) * math.log(1 - pi)) for pi, yi in zip(p, y)) / len(p)


class TestLosses:
    def test_bar_loss(self):
        y = np.array([1.0, 0, 1, 1, 0])
        assert bar_loss(clip_prob(y), y) <= 1e-6
        assert bar_loss(np.full(5, 0.5), y) == pytest.approx(math.log(2), abs=1e-12)
        rng = np.random.default_rng(21)
        p, y = rng.uniform(0.01, 0.99, 30), (rng.random(30) < 0.5).astype(float)
        assert bar_loss(p, y) == pytest.approx(naive_bce(p, y), abs=1e-12)
        with pytest.raises(DomainError):
            bar_loss(np.array([0.0, 0.5]), np.array([0.0, 1.0]))

    def test_vc_cma_examples(self):
        target = (np.random.default_rng(0).random((6, 6)) < 0.5).astype(float)
        pred = clip_prob(target)
        assert dice_loss(pred, target) <= 1e-6 and focal_loss(pred, target) <= 1e-6
        assert dice_loss(np.full((2, 2), 0.5), np.ones((2, 2))) == pytest.approx(2 / 7, abs=1e-12)

    def test_vc_cma_seed31_naive(self):
        rng = np.random.default_rng(31)
        p, y = rng.uniform(0.01, 0.99, (5, 5)), (rng.random((5, 5)) < 0.4).astype(float)
        fp, fy = p.ravel().tolist(), y.ravel().tolist()
        focal = 0.0
        for pi, yi in zip(fp, fy):
            focal += yi * -0.25 * (1 - pi) ** 2 * math.log(pi) + (1 - yi) * -0.75 * pi**2 * math.log(1 - pi)
        focal /= len(fp)
        dice = 1 - (2 * sum(a * b for a, b in zip(fp, fy)) + 1) / (sum(fp) + sum(fy) + 1)
        assert vc_cma_loss(p, y) == pytest.approx(focal + dice, abs=1e-12)
        with pytest.raises(UsageError):
            vc_cma_loss(p, y[:4])

    def test_soft_iou(self):
        assert soft_iou_target(0.7, 0.7, 0.3) == 1.0
        assert soft_iou_target(0.3, 0.7, 0.3) == 0.0
        assert soft_iou_target(0.5, 0.7, 0.3) == pytest.approx(0.5, abs=1e-12)
        with pytest.raises(ConfigError):
            soft_iou_target(0.5, 0.3, 0.3)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_soft_iou_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert soft_iou_target(lo, 0.6, 0.2) <= soft_iou_target(hi, 0.6, 0.2)

    def test_proposal_examples(self):
        assert smooth_l1(np.array([0.5]), np.array([0.0])) == pytest.approx(0.125)
        assert smooth_l1(np.array([2.0]), np.array([0.0])) == pytest.approx(1.5)
        rng = np.random.default_rng(0)
        t = {
            "heatmap": (rng.random((4, 4)) < 0.3).astype(float),
            "centerness": (rng.random((4, 4)) < 0.5).astype(float),
            "size": rng.uniform(0, 2, (4, 2)),
            "offset": rng.uniform(-1, 1, (4, 2)),
        }
        preds = {k: clip_prob(v) if k in ("heatmap", "centerness") else v.copy() for k, v in t.items()}
        assert proposal_losses(preds, t) <= 1e-6
        with pytest.raises(UsageError):
            proposal_losses({**preds, "size": preds["size"][:2]}, t)

    def test_proposal_seed37_naive(self):
        rng = np.random.default_rng(37)
        t = {"heatmap": rng.random((3, 3)) ** 2, "centerness": rng.random((3, 3)), "size": rng.uniform(0, 3, (3, 2)), "offset": rng.uniform(-1, 1, (3, 2))}
        p = {"heatmap": rng.uniform(0.05, 0.95, (3, 3)), "centerness": rng.uniform(0.05, 0.95, (3, 3)), "size": rng.uniform(0, 3, (3, 2)), "offset": rng.uniform(-1, 1, (3, 2))}

        def focal(pp, yy):
            vals = [yi * -0.25 * (1 - pi) ** 2 * math.log(pi) + (1 - yi) * -0.75 * pi**2 * math.log(1 - pi) for pi, yi in zip(pp.ravel(), yy.ravel())]
            return sum(vals) / len(vals)

        def sl1(pp, yy):
            vals = []
            for a, b in zip(pp.ravel(), yy.ravel()):
                r = abs(a - b)
                vals.append(0.5 * r * r if r < 1 else r - 0.5)
            return sum(vals) / len(vals)

        want = focal(p["heatmap"], t["heatmap"]) + focal(p["centerness"], t["centerness"]) + sl1(p["size"], t["size"]) + sl1(p["offset"], t["offset"])
        assert proposal_losses(p, t) == pytest.approx(want, abs=1e-12)

    def test_gbce(self):
        assert gbce_loss(np.full(5, -20.0), np.zeros(5)) == pytest.approx(0.0, abs=1e-8)
        assert gbce_loss(np.zeros(2), np.array([1.0, 0.0])) == pytest.approx(1.386294, abs=1e-6)
        rng = np.random.default_rng(41)
        s = rng.standard_normal(100)
        y = np.zeros(100)
        y[17] = 1.0
        pos = -math.log(1 / (1 + math.exp(-s[17])))
        neg = [math.log(1 + math.exp(v)) for i, v in enumerate(s) if i != 17]
        assert gbce_loss(s, y) == pytest.approx(pos + sum(neg) / 99, abs=1e-12)
        with pytest.raises(EmptyInputError):
            gbce_loss(np.array([]), np.array([]))

    def test_rank_hinge(self):
        assert rank_hinge_loss(np.array([2.0, 3.0]), np.array([0.0, 1.0]), 0.5) == 0.0
        assert rank_hinge_loss(np.array([1.0]), np.array([1.0]), 0.2) == pytest.approx(0.2)
        rng = np.random.default_rng(43)
        sp, sn = rng.standard_normal(4), rng.standard_normal(6)
        want = sum(max(0.0, 0.3 - (a - b)) for a in sp for b in sn) / 24
        assert rank_hinge_loss(sp, sn, 0.3) == pytest.approx(want, abs=1e-12)
        with pytest.raises(EmptyInputError):
            rank_hinge_loss(np.array([]), sn, 0.3)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.floats(0, 1))
    def test_rank_hinge_monotone(self, pos, neg, bump):
        sp, sn = np.array(pos), np.array(neg)
        base = rank_hinge_loss(sp, sn, 0.5)
        up = sp.copy()
        up[0] += bump
        assert rank_hinge_loss(up, sn, 0.5) <= base + 1e-12
        upn = sn.copy()
        upn[0] += bump
        assert rank_hinge_loss(sp, upn, 0.5) >= base - 1e-12


def naive_cgct(emb, lam):
    total = 0.0
    for g in {k[0] for k in emb}:
        views = [k for k in emb if k[0] == g]
        allz = [z for k in views for z in emb[k]]
        zg = [sum(z[c] for z in allz) / len(allz) for c in range(len(allz[0]))]
        for k in views:
            zs = emb[k]
            zi = [sum(z[c] for z in zs) / len(zs) for c in range(len(zs[0]))]
            for z in zs:
                total += sum((z[c] - zi[c]) ** 2 for c in range(len(z)))
            total += lam * sum((zi[c] - zg[c]) ** 2 for c in range(len(zi)))
    return total


def cgct_config(rng, n_ids=3, n_views=2, d=4):
    return {(g, v): rng.standard_normal((int(rng.integers(1, 4)), d)) for g in range(n_ids) for v in range(n_views)}


class TestCgct:
    def test_delta_zero(self):
        rng = np.random.default_rng(0)
        inp = CgctInputs.random(rng, delta=0.0)
        mask = rng.uniform(0.1, 1, (8, 8))
        from crvtrack.kernels import fused_feature

        assert np.allclose(cgct_embed(inp, mask, rand(rng, 8)), fused_feature(inp, mask), atol=1e-15)

    def test_uniform_mask_constant_map(self):
        feat = np.broadcast_to(np.array([1.5, -2.0, 0.25])[:, None, None], (3, 4, 4))
        assert np.allclose(masked_pool(feat, np.ones((4, 4))), [1.5, -2.0, 0.25], atol=1e-15)
        with pytest.raises(DegenerateInputError):
            masked_pool(feat, np.zeros((4, 4)))

    def test_seed23_stepwise(self):
        rng = np.random.default_rng(23)
        inp = CgctInputs.random(rng)
        mask, e = rng.uniform(0.1, 1, (8, 8)), rand(rng, 8)
        pooled = []
        for f in inp.features:
            s = f.shape[1]
            k = 8 // s
            m = [[float(mask[i * k : (i + 1) * k, j * k : (j + 1) * k].mean()) for j in range(s)] for i in range(s)]
            wsum = sum(map(sum, m))
            for c in range(f.shape[0]):
                pooled.append(sum(f[c][i][j] * m[i][j] for i in range(s) for j in range(s)) / wsum)

        def mlp(net: MLP, x):
            hid = [max(0.0, v + b) for v, b in zip(naive_matvec(net.w1.T.tolist(), x), net.b1)]
            return [v + b for v, b in zip(naive_matvec(net.w2.T.tolist(), hid), net.b2)]

        f = naive_norm(mlp(inp.fuse, pooled))
        gb = mlp(inp.film, e.tolist())
        d = len(f)
        z = naive_norm([(1 + inp.delta * math.tanh(gb[i])) * f[i] + inp.delta * gb[d + i] for i in range(d)])
        assert np.allclose(cgct_embed(inp, mask, e), z, atol=1e-12)

    def test_loss_examples(self):
        z = np.array([0.3, -0.1, 0.8])
        consensus = {(0, 0): np.tile(z, (3, 1)), (0, 1): np.tile(z, (2, 1))}
        assert cgct_loss(consensus, 1.0) <= 1e-20
        assert cgct_loss({(0, 0): np.array([[1.0, 0.0], [0.0, 1.0]])}, 1.0) == pytest.approx(1.0)
        emb = cgct_config(np.random.default_rng(29))
        assert cgct_loss(emb, 0.7) == pytest.approx(naive_cgct(emb, 0.7), abs=1e-12)

    @settings(max_examples=30)
    @given(st.integers(0, 10_000), st.floats(0, 3))
    def test_loss_properties(self, seed, lam):
        rng = np.random.default_rng(seed)
        emb = cgct_config(rng)
        base = cgct_loss(emb, lam)
        assert base >= 0
        shuffled = {k: rng.permutation(v, axis=0) for k, v in emb.items()}
        relabeled = {(g + 10, v): z for (g, v), z in reversed(list(shuffled.items()))}
        assert cgct_loss(relabeled, lam) == pytest.approx(base, rel=1e-12, abs=1e-12)


class TestGradCheck:
    def test_quadratic(self):
        x = np.random.default_rng(0).standard_normal(7)
        assert finite_diff_grad_check(lambda v: float(v @ v), lambda v: 2 * v, x, 1e-5) <= 1e-9

    def test_cgct_seed29(self):
        rng = np.random.default_rng(29)
        emb = cgct_config(rng)
        keys = sorted(emb)
        shapes = [emb[k].shape for k in keys]

        def unpack(x):
            out, i = {}, 0
            for k, s in zip(keys, shapes):
                out[k] = x[i : i + s[0] * s[1]].reshape(s)
                i += s[0] * s[1]
            return out

        x0 = np.concatenate([emb[k].ravel() for k in keys])
        err = finite_diff_grad_check(
            lambda x: cgct_loss(unpack(x), 1.0),
            lambda x: np.concatenate([cgct_grad(unpack(x), 1.0)[k].ravel() for k in keys]),
            x0,
        )
        assert err <= 1e-4

    def test_focal_dice_seed31_interior(self):
        rng = np.random.default_rng(31)
        y = (rng.random((5, 5)) < 0.4).astype(float)
        x0 = rng.uniform(0.1, 0.9, 25)
        err = finite_diff_grad_check(
            lambda x: vc_cma_loss(x.reshape(5, 5), y), lambda x: vc_cma_grad(x.reshape(5, 5), y).ravel(), x0
        )
        assert err <= 1e-4

    def test_wrong_gradient_is_caught(self):
        x = np.ones(3)
        assert finite_diff_grad_check(lambda v: float(v @ v), lambda v: v, x) > 0.1

    def test_non_finite(self):
        with pytest.raises(NumericError):
            finite_diff_grad_check(lambda v: float("nan"), lambda v: np.zeros_like(v), np.ones(2))


class TestCheckSuite:
    def test_default_run_passes(self):
        results = run_kernel_checks(seed=0, grad_draws=5, invariant_draws=20)
        assert all(r.passed for r in results), [r.to_record() for r in results if not r.passed]
        assert max(r.max_error for r in results if r.kind == "gradient") <= GRAD_TOL

    def test_coarse_epsilon_flags_without_crashing(self):
        results = run_kernel_checks(epsilon=1e-1, seed=0, grad_draws=5, invariant_draws=5)
        assert any(not r.passed for r in results if r.kind == "gradient")
        assert all(r.error is None for r in results)

    def test_deterministic(self):
        a = [r.to_record() for r in run_kernel_checks(seed=3, grad_draws=3, invariant_draws=5)]
        b = [r.to_record() for r in run_kernel_checks(seed=3, grad_draws=3, invariant_draws=5)]
        assert a == b
