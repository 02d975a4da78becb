import numpy as np
import pytest

from dermfuse import tensor as T
from dermfuse.errors import ConfigError, SelectorError, ShapeError
from dermfuse.layers import Context, Mode
from dermfuse.models import (EFFICIENTNET_PRESETS, MBConv, ScalingConfig, StageSpec, Bottleneck,
                             bn_statistics_count, build_efficientnet, build_fnn, build_fusion,
                             build_image_model, build_resnet50, count_params, make_divisible, set_trainable)
from dermfuse.models.efficientnet import B0_BLOCKS
from dermfuse.rng import SeededRng
from dermfuse.tensor import Tensor
from dermfuse.train import cross_entropy_loss

from conftest import GRAD_TOL, grad_errors


def resnet50_closed_form(classes):
    """Independent per-layer count: sum of O*C*k*k over convs, 4*ch per BN, dense W+b."""
    convs, bn = [(64, 3, 7)], [64]
    c_in = 64
    for width, repeats in [(64, 3), (128, 4), (256, 6), (512, 3)]:
        for r in range(repeats):
            convs += [(width, c_in, 1), (width, width, 3), (4 * width, width, 1)]
            bn += [width, width, 4 * width]
            if r == 0:
                convs.append((4 * width, c_in, 1))
                bn.append(4 * width)
            c_in = 4 * width
    conv = sum(o * c * k * k for o, c, k in convs)
    bn_total = 4 * sum(bn)
    return conv + bn_total + 2048 * classes + classes, 2 * sum(bn)


# -- stage specs and scaling -------------------------------------------------------------

def test_stage_spec_invariants():
    StageSpec("mbconv", 3, 1, 16, 1, expand_ratio=1)
    with pytest.raises(ConfigError):
        StageSpec("mbconv", 3, 1, 16, 1)
    with pytest.raises(ConfigError):
        StageSpec("stem_conv", 3, 3, 16)
    with pytest.raises(ConfigError):
        StageSpec("resnet_bottleneck", 3, 1, 16, expand_ratio=6)
    with pytest.raises(ConfigError):
        ScalingConfig(0.0, 1.0, 224)


def test_b0_preset():
    assert EFFICIENTNET_PRESETS["efficientnet-b0"] == ScalingConfig(1.0, 1.0, 224, 0.2)
    for name, cfg in EFFICIENTNET_PRESETS.items():
        if name not in ("efficientnet-b0", "efficientnet-desk"):
            assert cfg.width_mult >= 1 and cfg.depth_mult >= 1


@pytest.mark.parametrize("value,expected", [(32, 32), (16 * 1.1, 16), (40 * 1.4, 56), (24 * 0.25, 8),
                                            (1280 * 0.25, 320), (36, 40)])
def test_make_divisible(value, expected):
    got = make_divisible(value)
    assert got == expected and got % 8 == 0 and got >= 0.9 * value


# -- EfficientNet ------------------------------------------------------------------------

def test_efficientnet_b0_parameter_pin():
    counts = count_params(build_efficientnet(EFFICIENTNET_PRESETS["efficientnet-b0"], classes=1000))
    assert counts == (5_330_564, 5_288_548, 42_016)


def test_b0_non_trainables_are_bn_statistics():
    m = build_efficientnet(classes=1000)
    assert bn_statistics_count(m) == count_params(m).non_trainable == 42_016


def test_b0_stage_table():
    m = build_efficientnet(classes=1000)
    assert len(m.stages) == 9
    assert [s.block_kind for s in m.stages] == ["stem_conv"] + ["mbconv"] * 7 + ["head_conv"]
    assert [(s.expand_ratio, s.kernel, s.stride, s.out_channels, s.repeats) for s in m.stages[1:8]] == B0_BLOCKS
    assert m.stages[-1].out_channels == 1280 and m.feature_width == 1280


def test_expand_ratio_one_has_no_expansion_conv():
    m = build_efficientnet(classes=1000)
    stage2 = m.body[1]
    for block in stage2:
        assert block.expand is None
        assert not any(n.startswith("expand.") for n, _ in block.named_parameters())
    assert all(b.expand is not None for b in m.body[2])


def test_expansion_ratio_three_widens_16_to_48():
    block = MBConv(16, 16, 3, 3, 1)
    assert block.expand.conv.weight.shape == (48, 16, 1, 1)
    assert block.expand.out_shape((1, 16, 8, 8)) == (1, 48, 8, 8)


def test_mbconv_skip_rule():
    m = build_efficientnet(classes=None)
    for stage in m.body[1:-1]:
        for block in stage:
            stride = block.depthwise.conv.stride
            assert block.has_skip == (stride == 1 and block.c_in == block.c_out)
    assert not MBConv(16, 24, 6, 3, 1).has_skip
    assert not MBConv(24, 24, 6, 3, 2).has_skip
    assert MBConv(24, 24, 6, 3, 1).has_skip


def test_se_width_follows_block_input():
    block = MBConv(40, 80, 6, 3, 2)
    assert block.se.squeeze_channels == 10 and block.se.channels == 240


def test_efficientnet_invalid_inputs():
    with pytest.raises(ConfigError):
        build_efficientnet(classes=1)
    with pytest.raises(ConfigError):
        build_efficientnet(scaling=(1, 1, 224))


def test_scaled_variant_shapes():
    m = build_efficientnet(EFFICIENTNET_PRESETS["efficientnet-b6"], classes=2)
    assert m.stages[0].out_channels == make_divisible(32 * 1.8)
    assert [s.repeats for s in m.stages[1:8]] == [int(np.ceil(n * 2.6)) for *_, n in B0_BLOCKS]


# -- ResNet-50 -------------------------------------------------------------------------------

def test_resnet50_closed_form_count():
    for classes in (1000, 2):
        total, stats = resnet50_closed_form(classes)
        counts = count_params(build_resnet50(classes))
        assert counts.total == total and counts.non_trainable == stats
    assert resnet50_closed_form(1000) == (25_610_152, 53_120)


def test_resnet_head_arithmetic():
    a, b = count_params(build_resnet50(1000)), count_params(build_resnet50(2))
    assert a.total - b.total == 2048 * 998 + 998


def test_resnet_spatial_trace_at_224():
    m = build_resnet50(1000)
    spatial = [s[2] for s in m.stage_shapes[:-1]]
    assert spatial == [112, 56, 56, 28, 14, 7]
    assert m.stage_shapes[-1] == (1, 1000)


def test_resnet_filter_rules():
    m = build_resnet50(1000)
    shapes = m.stage_shapes[2:6]
    for prev, cur in zip(shapes, shapes[1:]):
        assert cur[2] * 2 == prev[2] and cur[1] == 2 * prev[1]


def test_resnet_invalid_classes():
    with pytest.raises(ConfigError):
        build_resnet50(1)


def test_bottleneck_zero_gamma_is_identity():
    block = Bottleneck(16, 4, 1, rng=SeededRng(0))
    block.expand.bn.gamma.data[...] = 0.0
    block.expand.bn.beta.data[...] = 0.0
    x = Tensor(np.abs(SeededRng(1).normal(0, 1, (2, 16, 5, 5))))
    for ctx in (Context(Mode.EVAL), Context(Mode.TRAIN, SeededRng(2))):
        assert np.array_equal(block(x, ctx).data, x.data)


def test_forward_shape_resnet_224():
    m = build_resnet50(3)
    out = m(Tensor(SeededRng(3).normal(0, 1, (1, 3, 224, 224))))
    assert out.shape == (1, 3) and abs(out.data.sum() - 1) < 1e-9


def _runtime_stage_shapes(model, x):
    shapes = []
    for stage in model.body:
        x = stage(x)
        shapes.append(x.shape)
    return shapes


@pytest.mark.parametrize("arch", ["resnet50", "efficientnet-b0"])
@pytest.mark.parametrize("res", [32, 64, 224])
def test_symbolic_shapes_match_runtime(arch, res):
    m = build_image_model(arch, 2)
    x = Tensor(SeededRng(4).normal(0, 1, (1, 3, res, res)))
    assert _runtime_stage_shapes(m, x) == m.trace_shapes((3, res, res))[:-1]


def test_input_channel_mismatch():
    m = build_efficientnet(EFFICIENTNET_PRESETS["efficientnet-desk"], classes=2)
    with pytest.raises(ShapeError):
        m(Tensor(np.zeros((1, 1, 32, 32))))


# -- full-architecture gradient checks at 16x16 --------------------------------------------------

def _full_grad_check(model, batch=2, probes=6, step=1e-5):
    x = Tensor(SeededRng(5).normal(0, 1, (batch, 3, 16, 16)), requires_grad=True)
    y = np.arange(batch) % 2

    def f():
        return cross_entropy_loss(model(x, Context(Mode.TRAIN, SeededRng(6))), y)

    named = dict(model.named_parameters())
    picks = [names for names in named if names.endswith("weight")]
    chosen = [picks[0], picks[len(picks) // 2], picks[-1]]
    return grad_errors(f, [x] + [named[n] for n in chosen], probes=probes, step=step)


def test_resnet50_full_gradient_16px():
    # At 16px the last stages are 1x1, so batch statistics need a wider batch to
    # be well conditioned, and each stem weight touches every position so the
    # ReLU / max-pool kinks sit close together: probe with a very small step.
    errs = _full_grad_check(build_resnet50(2, seed=7), batch=16, step=1e-8)
    assert max(errs) < GRAD_TOL, errs


def test_efficientnet_b0_full_gradient_16px():
    errs = _full_grad_check(build_efficientnet(classes=2, seed=8), batch=8, probes=10, step=1e-7)
    assert max(errs) < GRAD_TOL, errs


# -- FNN and fusion ----------------------------------------------------------------------------------

def test_fnn_count_and_shape():
    m = build_fnn(10, [64, 32], 0.3)
    # dense 10*64+64, BN 4*64, dense 64*32+32, BN 4*32
    assert count_params(m).total == 704 + 256 + 2080 + 128 == 3168
    assert m(Tensor(np.zeros((5, 10)))).shape == (5, 32)
    with pytest.raises(ConfigError):
        build_fnn(10, [])


def test_fnn_eval_is_deterministic():
    m = build_fnn(10, [8], 0.0)
    x = Tensor(SeededRng(9).normal(0, 1, (4, 10)))
    assert m(x).data.tobytes() == m(x).data.tobytes()


def _desk_fusion(use_tab=True, seed=0):
    img = build_efficientnet(ScalingConfig(0.25, 0.25, 32, 0.2), classes=None, seed=seed)
    tab = build_fnn(12, [16, 8], seed=seed + 1) if use_tab else None
    return build_fusion(img, tab, 16, seed=seed + 2)


def test_fusion_head_width():
    img = build_efficientnet(classes=None)
    m = build_fusion(img, build_fnn(12, [64, 32]))
    assert m.head_input_width == 1312
    assert m.head[0].weight.shape == (1312, 128)


def test_fusion_rejects_headed_branch():
    with pytest.raises(ShapeError):
        build_fusion(build_efficientnet(classes=2), None)


def test_fusion_output_rows_and_determinism():
    m = _desk_fusion()
    x = Tensor(SeededRng(10).normal(0, 1, (3, 3, 32, 32)))
    f = Tensor(SeededRng(11).normal(0, 1, (3, 12)))
    a = m(x, f)
    assert a.shape == (3, 2) and np.all(np.abs(a.data.sum(axis=1) - 1) < 1e-9)
    assert a.data.tobytes() == m(x, f).data.tobytes()
    with pytest.raises(ShapeError):
        m(x, Tensor(np.zeros((3, 5))))


def test_zero_tabular_branch_makes_prediction_image_only():
    m = _desk_fusion()
    for p in m.tabular_branch.parameters():
        p.data[...] = 0.0
    x = Tensor(SeededRng(12).normal(0, 1, (2, 3, 32, 32)))
    a = m(x, Tensor(SeededRng(13).normal(0, 1, (2, 12)))).data
    b = m(x, Tensor(SeededRng(14).normal(0, 5, (2, 12)))).data
    assert np.array_equal(a, b)


def test_eval_batch_permutation_equivariance():
    m = _desk_fusion()
    x = SeededRng(15).normal(0, 1, (4, 3, 32, 32))
    f = SeededRng(16).normal(0, 1, (4, 12))
    perm = np.array([2, 0, 3, 1])
    a = m(Tensor(x), Tensor(f)).data
    b = m(Tensor(x[perm]), Tensor(f[perm])).data
    assert np.allclose(a[perm], b, rtol=0, atol=1e-12)


def test_fusion_gradient():
    m = _desk_fusion(seed=3)
    # batch of 8: two-sample batch statistics are degenerate (always +-1)
    x = Tensor(SeededRng(17).normal(0, 1, (8, 3, 32, 32)))
    f = Tensor(SeededRng(18).normal(0, 1, (8, 12)), requires_grad=True)
    y = np.arange(8) % 2
    loss = lambda: cross_entropy_loss(m(x, f, Context(Mode.TRAIN, SeededRng(19))), y)
    tensors = [f, m.head[0].weight, m.tabular_branch.body[0][0].weight, m.image_branch.body[0].conv.weight]
    assert max(grad_errors(loss, tensors, probes=12)) < GRAD_TOL


# -- counting and freezing ---------------------------------------------------------------------------

def test_freeze_conservation_and_involution():
    m = _desk_fusion()
    base = count_params(m, respect_freeze=True)
    branch_trainable = sum(p.size for p in m.image_branch.parameters())
    set_trainable(m, "image_branch", False)
    frozen = count_params(m, respect_freeze=True)
    assert frozen.trainable == base.trainable - branch_trainable
    assert frozen.total == base.total
    set_trainable(m, "image_branch", True)
    assert count_params(m, respect_freeze=True) == base


def test_set_trainable_all():
    m = _desk_fusion()
    set_trainable(m, "all", True)
    c = count_params(m, respect_freeze=True)
    assert c.trainable == c.total - bn_statistics_count(m)


def test_selector_errors():
    with pytest.raises(SelectorError):
        set_trainable(_desk_fusion(use_tab=False), "tabular_branch", False)
    with pytest.raises(SelectorError):
        set_trainable(build_fnn(3, [4]), "image_branch", False)


def test_freeze_also_freezes_bn_stats_by_default():
    m = _desk_fusion()
    set_trainable(m, "image_branch", False)
    bn = m.image_branch.body[0].bn
    assert bn.stats_frozen
    set_trainable(m, "image_branch", False, freeze_bn_stats=False)
    assert not bn.stats_frozen


def test_frozen_branch_bit_identical_after_steps():
    from dermfuse.train import Adam
    m = _desk_fusion()
    set_trainable(m, "image_branch", False)
    before = {k: v.copy() for k, v in m.image_branch.state_arrays().items()}
    opt = Adam(m.parameters(), 1e-2)
    x = Tensor(SeededRng(20).normal(0, 1, (4, 3, 32, 32)))
    f = Tensor(SeededRng(21).normal(0, 1, (4, 12)))
    for step in range(5):
        opt.zero_grad()
        T.backward(cross_entropy_loss(m(x, f, Context(Mode.TRAIN, SeededRng(step))), [0, 1, 0, 1]))
        opt.step()
    after = m.image_branch.state_arrays()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)


def test_fingerprint_depends_on_architecture():
    a = build_efficientnet(classes=2).fingerprint()
    assert a == build_efficientnet(classes=2, seed=5).fingerprint()
    assert a != build_efficientnet(classes=3).fingerprint()
    assert len(a) == 32


def test_summary_table_lists_stages():
    text = build_efficientnet(classes=1000).summary()
    assert "mbconv" in text and "1,281,000" in text
    assert len(text.splitlines()) == 2 + 9 + 1
