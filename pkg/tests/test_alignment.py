import numpy as np
import pytest

from conftest import gradcheck
from maskalign import alignment as al
from maskalign import tensor as T
from maskalign import vit
from maskalign.errors import ConfigError, ShapeError
from maskalign.masking import MaskPlan, random_mask


def plan_for(n, ratio, seed=0):
    return random_mask(n, ratio, np.random.default_rng(seed))


def identity_head(cfg, depth, dim):
    """Head whose adaptors are exact identity maps."""
    head = al.init_alignment_head(cfg, depth, dim, dim, depth,
                                  np.random.default_rng(0))
    for i in range(depth):
        head.params[f"adaptors.{i}.w"].data[:] = np.eye(dim, dtype=np.float32)
        head.params[f"adaptors.{i}.b"].data[:] = 0.0
    return head


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ConfigError):
        al.AlignmentConfig(mode="both")
    with pytest.raises(ConfigError):
        al.AlignmentConfig(adaptor_kind="conv")
    with pytest.raises(ConfigError):
        al.AlignmentConfig(normalize="rms")
    with pytest.raises(ConfigError):
        al.AlignmentConfig(top_k=0)


def test_init_shapes_and_one_hot():
    cfg = al.AlignmentConfig(mode="dynamic", top_k=3)
    head = al.init_alignment_head(cfg, 6, 16, 24, 6, np.random.default_rng(0))
    assert sum(k.startswith("adaptors.") and k.endswith(".w")
               for k in head.params) == 6
    assert head.params["adaptors.0.w"].data.shape == (16, 24)
    w = head.params["W"].data
    assert w.shape == (6, 3)
    want = np.zeros((6, 3), np.float32)
    want[3, 0] = want[4, 1] = want[5, 2] = 1.0
    np.testing.assert_array_equal(w, want)


def test_init_rejects_excess_top_k():
    with pytest.raises(ConfigError):
        al.init_alignment_head(al.AlignmentConfig(top_k=7), 6, 16, 16, 6,
                               np.random.default_rng(0))
    with pytest.raises(ConfigError):
        al.init_alignment_head(al.AlignmentConfig(top_k=5), 6, 16, 16, 4,
                               np.random.default_rng(0))


def test_layerwise_head_has_no_mixing_matrix():
    cfg = al.AlignmentConfig(mode="layerwise", top_k=2)
    head = al.init_alignment_head(cfg, 4, 8, 8, 4, np.random.default_rng(0))
    assert "W" not in head.params


def test_mlp_adaptor_params():
    cfg = al.AlignmentConfig(adaptor_kind="mlp", top_k=1)
    head = al.init_alignment_head(cfg, 2, 8, 12, 2, np.random.default_rng(0))
    assert head.params["adaptors.0.fc1.w"].data.shape == (8, 8)
    assert head.params["adaptors.1.fc2.w"].data.shape == (8, 12)


# ---------------------------------------------------------------- mixing

def test_one_hot_column_selects_block(rng):
    cfg = al.AlignmentConfig(mode="dynamic", top_k=1)
    head = identity_head(cfg, 2, 4)
    head.params["W"].data[:] = np.array([[0.0], [1.0]], np.float32)
    x1 = T.Tensor(rng.standard_normal((3, 4)).astype(np.float32))
    x2 = T.Tensor(rng.standard_normal((3, 4)).astype(np.float32))
    preds = al.adapt_and_mix([x1, x2], head)
    assert len(preds) == 1
    np.testing.assert_array_equal(preds[0].data, x2.data)


def test_convex_mixing_on_equal_inputs(rng):
    cfg = al.AlignmentConfig(mode="dynamic", top_k=1)
    head = identity_head(cfg, 2, 4)
    head.params["W"].data[:] = np.array([[0.5], [0.5]], np.float32)
    x = T.Tensor(rng.standard_normal((3, 4)).astype(np.float32))
    preds = al.adapt_and_mix([x, x], head)
    np.testing.assert_allclose(preds[0].data, x.data, rtol=1e-6)


def test_one_hot_dynamic_equals_layerwise(rng):
    s, k, dim = 5, 3, 8
    dyn_cfg = al.AlignmentConfig(mode="dynamic", top_k=k)
    lw_cfg = al.AlignmentConfig(mode="layerwise", top_k=k)
    seed_rng = np.random.default_rng(42)
    dyn = al.init_alignment_head(dyn_cfg, s, dim, dim, s, seed_rng)
    lw = al.AlignmentHead(config=lw_cfg, student_depth=s,
                          params={n: p for n, p in dyn.params.items() if n != "W"})
    blocks = [T.Tensor(rng.standard_normal((2, 6, dim)).astype(np.float32))
              for _ in range(s)]
    got = al.adapt_and_mix(blocks, dyn)
    want = al.adapt_and_mix(blocks, lw)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g.data, w.data, atol=1e-6)


def test_doubling_w_with_zero_adaptors_changes_nothing(rng):
    cfg = al.AlignmentConfig(mode="dynamic", top_k=2)
    head = al.init_alignment_head(cfg, 3, 4, 4, 3, np.random.default_rng(0))
    for i in range(3):
        head.params[f"adaptors.{i}.w"].data[:] = 0.0
        head.params[f"adaptors.{i}.b"].data[:] = 0.0
    blocks = [T.Tensor(rng.standard_normal((5, 4)).astype(np.float32))
              for _ in range(3)]
    before = [p.data.copy() for p in al.adapt_and_mix(blocks, head)]
    head.params["W"].data[:] *= 2.0
    after = [p.data for p in al.adapt_and_mix(blocks, head)]
    for b, a in zip(before, after):
        np.testing.assert_array_equal(b, np.zeros_like(b))
        np.testing.assert_array_equal(a, b)


def test_adapt_and_mix_depth_mismatch(rng):
    cfg = al.AlignmentConfig(top_k=1)
    head = al.init_alignment_head(cfg, 3, 4, 4, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        al.adapt_and_mix([T.Tensor(np.zeros((2, 4), np.float32))] * 2, head)


# ---------------------------------------------------------------- targets

def test_target_layernorm_hand_value():
    cfg = al.AlignmentConfig(top_k=1, normalize="layernorm")
    level = np.zeros((4, 3), np.float32)
    level[1] = [1.0, 2.0, 3.0]  # row 1 = patch 0
    plan = MaskPlan(3, 2 / 3, np.array([0]), np.array([1, 2]))
    out = al.normalize_targets([level], plan, cfg, eps=1e-12)
    np.testing.assert_allclose(out.levels[0][0], [-1.22474487, 0.0, 1.22474487],
                               atol=1e-6)


def test_target_constant_token_is_zero():
    cfg = al.AlignmentConfig(top_k=1)
    level = np.full((4, 3), 5.0, np.float32)
    plan = MaskPlan(3, 0.0, np.array([0, 1, 2]), np.array([], dtype=np.intp))
    out = al.normalize_targets([level], plan, cfg)
    np.testing.assert_allclose(out.levels[0], np.zeros((3, 3)), atol=1e-9)


def test_target_none_is_bit_exact_gather(rng):
    cfg = al.AlignmentConfig(top_k=1, normalize="none")
    level = rng.standard_normal((9, 6)).astype(np.float32)
    plan = plan_for(8, 0.5)
    out = al.normalize_targets([level], plan, cfg)
    np.testing.assert_array_equal(out.levels[0], level[plan.visible_idx + 1])


def test_target_stats_layernorm(rng):
    # per-token standardization: |mean| < 1e-6, |var - 1| < 1e-4
    cfg = al.AlignmentConfig(top_k=2, normalize="layernorm")
    levels = [rng.standard_normal((5, 17, 32)).astype(np.float32) * 3.0 + 1.0
              for _ in range(4)]
    plans = [plan_for(16, 0.5, seed=i) for i in range(5)]
    out = al.normalize_targets(levels, plans, cfg)
    assert len(out.levels) == 2
    for lvl in out.levels:
        means = lvl.mean(axis=-1)
        varis = lvl.var(axis=-1)
        assert np.abs(means).max() < 1e-6
        assert np.abs(varis - 1.0).max() < 1e-4


def test_target_stats_batchnorm(rng):
    cfg = al.AlignmentConfig(top_k=1, normalize="batchnorm")
    levels = [rng.standard_normal((4, 9, 16)).astype(np.float32) * 2.0 - 3.0]
    plans = [plan_for(8, 0.5, seed=i) for i in range(4)]
    out = al.normalize_targets(levels, plans, cfg)
    flat = out.levels[0].reshape(-1, 16)
    assert np.abs(flat.mean(axis=0)).max() < 1e-6
    assert np.abs(flat.var(axis=0) - 1.0).max() < 1e-4


def test_targets_select_last_k_levels(rng):
    cfg = al.AlignmentConfig(top_k=2, normalize="none")
    levels = [np.full((3, 4), float(i), np.float32) for i in range(5)]
    plan = MaskPlan(2, 0.5, np.array([0]), np.array([1]))
    out = al.normalize_targets(levels, plan, cfg)
    assert out.levels[0][0, 0] == 3.0 and out.levels[1][0, 0] == 4.0


def test_targets_gather_cls_when_asked(rng):
    cfg = al.AlignmentConfig(top_k=1, normalize="none", include_cls=True)
    level = rng.standard_normal((5, 4)).astype(np.float32)
    plan = MaskPlan(4, 0.5, np.array([1, 3]), np.array([0, 2]))
    out = al.normalize_targets([level], plan, cfg)
    np.testing.assert_array_equal(out.levels[0], level[[0, 2, 4]])


def test_targets_are_plain_arrays(rng):
    cfg = al.AlignmentConfig(top_k=1)
    out = al.normalize_targets([rng.standard_normal((4, 3)).astype(np.float32)],
                               MaskPlan(3, 0.0, np.arange(3), np.array([], int)),
                               cfg)
    assert isinstance(out.levels[0], np.ndarray)


# ---------------------------------------------------------------- loss

def test_loss_zero_on_exact_match(rng):
    t = rng.standard_normal((3, 4)).astype(np.float32)
    loss = al.alignment_loss([T.Tensor(t.copy())], al.TargetSet([t]))
    assert float(loss.data) == 0.0


def test_loss_known_values():
    z = np.zeros((1, 1), np.float32)
    for d, want in [(0.5, 0.125), (1.0, 0.5), (2.0, 1.5)]:
        loss = al.alignment_loss([T.Tensor(z + d)], al.TargetSet([z]))
        assert float(loss.data) == pytest.approx(want)


def test_loss_branch_continuity():
    # quadratic and linear branches meet at |d| = 1 with equal value and slope
    z = np.zeros((1, 1), np.float32)
    for eps in (1e-4, 1e-5):
        below = float(al.alignment_loss([T.Tensor(z + 1.0 - eps)],
                                        al.TargetSet([z])).data)
        above = float(al.alignment_loss([T.Tensor(z + 1.0 + eps)],
                                        al.TargetSet([z])).data)
        assert abs(above - below) < 3.0 * eps  # slope ~1 across the kink
    assert float(al.alignment_loss([T.Tensor(z + 1.0)],
                                   al.TargetSet([z])).data) == 0.5


def test_loss_averages_over_levels(rng):
    z = np.zeros((2, 3), np.float32)
    pred_a = T.Tensor(z + 2.0)  # per-element 1.5
    pred_b = T.Tensor(z.copy())  # 0
    loss = al.alignment_loss([pred_a, pred_b], al.TargetSet([z, z]))
    assert float(loss.data) == pytest.approx(0.75)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        al.alignment_loss([T.Tensor(np.zeros((2, 3), np.float32))],
                          al.TargetSet([np.zeros((3, 2), np.float32)]))
    with pytest.raises(ShapeError):
        al.alignment_loss([T.Tensor(np.zeros((2, 3), np.float32))],
                          al.TargetSet([np.zeros((2, 3), np.float32)] * 2))


# ---------------------------------------------------------------- end to end

def build_outputs(cfg, params, pat, vis, train=False):
    toks = vit.embed(params, cfg, pat, vis)
    return vit.encoder_forward(params, cfg, toks, train=train,
                               rng=np.random.default_rng(0))


def test_maskalign_step_loss_positive_and_finite(tiny_cfg, rng):
    student = vit.init_vit_params(tiny_cfg, np.random.default_rng(1))
    teacher = vit.init_vit_params(tiny_cfg, np.random.default_rng(2))
    pat = rng.standard_normal((2, 16, tiny_cfg.patch_dim)).astype(np.float32)
    plans = [plan_for(16, 0.5, seed=i) for i in range(2)]
    vis = np.stack([p.visible_idx for p in plans])
    s_out = build_outputs(tiny_cfg, student, pat, vis)
    t_out = build_outputs(tiny_cfg, teacher, pat, np.stack([np.arange(16)] * 2))
    acfg = al.AlignmentConfig(mode="dynamic", top_k=2)
    head = al.init_alignment_head(acfg, tiny_cfg.depth, tiny_cfg.embed_dim,
                                  tiny_cfg.embed_dim, tiny_cfg.depth,
                                  np.random.default_rng(3))
    loss = al.maskalign_step(s_out, t_out, plans, head, acfg)
    val = float(loss.data)
    assert np.isfinite(val) and val > 0.0


def test_maskalign_step_no_grad_into_teacher(tiny_cfg, rng):
    student = vit.init_vit_params(tiny_cfg, np.random.default_rng(1))
    teacher = vit.init_vit_params(tiny_cfg, np.random.default_rng(2))
    for p in teacher.values():
        p.requires_grad = False
    pat = rng.standard_normal((16, tiny_cfg.patch_dim)).astype(np.float32)
    plan = plan_for(16, 0.5)
    t_out = build_outputs(tiny_cfg, teacher, pat, np.arange(16))
    acfg = al.AlignmentConfig(mode="dynamic", top_k=2)
    head = al.init_alignment_head(acfg, tiny_cfg.depth, tiny_cfg.embed_dim,
                                  tiny_cfg.embed_dim, tiny_cfg.depth,
                                  np.random.default_rng(3))
    with T.Tape() as tape:
        s_out = build_outputs(tiny_cfg, student, pat[plan.visible_idx],
                              np.arange(plan.n_visible))  # student sees only visible
        # hand the step full-size plans against the full teacher sequence
        loss = al.maskalign_step(s_out, t_out,
                                 MaskPlan(16, 0.0, np.arange(plan.n_visible),
                                          np.array([], int)),
                                 head, acfg)
        tape.backward(loss)
    assert all(p.grad is None for p in teacher.values())
    assert head.params["W"].grad is not None
    assert student["patch_proj.w"].grad is not None


def test_distillation_limit_matches_independent_code(tiny_cfg, rng):
    # r=0, K=1, layerwise, no normalization: plain last-level feature matching
    student = vit.init_vit_params(tiny_cfg, np.random.default_rng(1))
    teacher = vit.init_vit_params(tiny_cfg, np.random.default_rng(2))
    pat = rng.standard_normal((16, tiny_cfg.patch_dim)).astype(np.float32)
    all_idx = np.arange(16)
    s_out = build_outputs(tiny_cfg, student, pat, all_idx)
    t_out = build_outputs(tiny_cfg, teacher, pat, all_idx)
    acfg = al.AlignmentConfig(mode="layerwise", top_k=1, normalize="none",
                              include_cls=True)
    head = al.init_alignment_head(acfg, tiny_cfg.depth, tiny_cfg.embed_dim,
                                  tiny_cfg.embed_dim, tiny_cfg.depth,
                                  np.random.default_rng(3))
    plan = MaskPlan(16, 0.0, all_idx, np.array([], int))
    loss = float(al.maskalign_step(s_out, t_out, plan, head, acfg).data)

    # independent: adapt the last student block, smooth-L1 against teacher's
    sx = s_out.per_block[-1].data
    w = head.params[f"adaptors.{tiny_cfg.depth - 1}.w"].data
    b = head.params[f"adaptors.{tiny_cfg.depth - 1}.b"].data
    pred = sx @ w + b
    d = pred - t_out.per_block[-1].data
    a = np.abs(d)
    want = float(np.where(a <= 1.0, 0.5 * d * d, a - 0.5).mean())
    assert loss == pytest.approx(want, abs=1e-6)


def test_head_gradcheck_composite(tiny_cfg):
    # student blocks + adaptors + W against the 64-bit FD oracle
    rng = np.random.default_rng(0)
    acfg = al.AlignmentConfig(mode="dynamic", top_k=2)
    depth, dim = 3, 6
    blocks = [0.5 * rng.standard_normal((4, dim)) for _ in range(depth)]
    head = al.init_alignment_head(acfg, depth, dim, dim, depth, rng)
    names = sorted(head.params)
    targets = rng.standard_normal((4, dim)).astype(np.float32)

    def build(*leaves):
        h = al.AlignmentHead(config=acfg, student_depth=depth,
                             params=dict(zip(names, leaves[:depth * 2 + 1])))
        blk = [T.mul(t, t) for t in leaves[depth * 2 + 1:]]  # nonlinear path in
        preds = al.adapt_and_mix(blk, h)
        loss = None
        for p in preds:
            term = T.smooth_l1_mean(p, targets)
            loss = term if loss is None else T.add(loss, term)
        return loss

    arrays = ([head.params[n].data.astype(np.float64) for n in names]
              + [b for b in blocks])
    worst = gradcheck(build, arrays, tol=1e-3, eps=1e-5)
    assert worst < 1e-3
