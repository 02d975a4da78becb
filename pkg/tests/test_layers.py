import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dermfuse import layers as L
from dermfuse import tensor as T
from dermfuse.errors import InvalidProbabilityError, ShapeError
from dermfuse.layers import Context, Mode
from dermfuse.models import count_params
from dermfuse.rng import SeededRng
from dermfuse.tensor import Tensor

from conftest import GRAD_TOL, grad_errors, weighted_sum


def train_ctx(seed=0):
    return Context(Mode.TRAIN, SeededRng(seed))


# -- activations -------------------------------------------------------------------

def test_relu_examples():
    assert L.relu(Tensor([-2.0, 0.0, 3.0])).data.tolist() == [0, 0, 3]
    assert np.all(L.relu(Tensor(-np.arange(1.0, 5.0))).data == 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_relu_idempotent(vals):
    x = Tensor(vals)
    assert np.array_equal(L.relu(L.relu(x)).data, L.relu(x).data)


def test_relu_subgradient_at_zero():
    x = Tensor([0.0, 1.0], requires_grad=True)
    T.backward(L.relu(x).sum())
    assert x.grad.tolist() == [0.0, 1.0]


def test_softmax_examples():
    assert np.allclose(L.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-15)
    assert np.allclose(L.softmax(Tensor([1.0, 1.0, 1.0])).data, [1 / 3] * 3, atol=1e-15)
    e = np.exp([1.0, 2.0])
    assert np.allclose(L.softmax(Tensor([1.0, 2.0])).data, e / e.sum(), atol=1e-12)
    assert np.allclose(L.softmax(Tensor([1.0, 2.0])).data, [0.26894, 0.73106], atol=1e-5)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), rows=st.integers(1, 6), k=st.integers(1, 8))
def test_softmax_rows_sum_to_one(seed, rows, k):
    y = L.softmax(Tensor(SeededRng(seed).uniform(-50, 50, (rows, k)))).data
    assert np.all(y >= 0) and np.all(np.abs(y.sum(axis=1) - 1) < 1e-9)


def test_softmax_stable_for_large_inputs():
    y = L.softmax(Tensor([1000.0, 0.0, -1000.0])).data
    assert np.all(np.isfinite(y)) and y[0] == 1.0


def test_swish_examples():
    assert L.swish(Tensor([0.0])).data[0] == 0.0
    assert abs(L.swish(Tensor([20.0])).data[0] - 20.0) < 1e-6
    assert abs(L.swish(Tensor([1.0])).data[0] - 1.0 / (1.0 + np.exp(-1.0))) < 1e-12
    assert abs(L.swish(Tensor([1.0])).data[0] - 0.73106) < 1e-5


def test_activation_grads():
    x = Tensor(SeededRng(0).normal(0, 2, (3, 5)), requires_grad=True)
    for fn in (L.swish, L.sigmoid, L.softmax):
        assert grad_errors(lambda: weighted_sum(fn(x)), [x])[0] < GRAD_TOL


# -- dense ---------------------------------------------------------------------------

def test_dense_zero_weights_gives_bias():
    d = L.Dense(3, 2)
    d.weight.data[...] = 0
    d.bias.data[...] = [4.0, -1.0]
    out = d(Tensor(SeededRng(1).normal(0, 1, (5, 3))))
    assert np.all(out.data == [4.0, -1.0])


def test_dense_identity():
    d = L.Dense(3, 3)
    d.weight.data[...] = np.eye(3)
    d.bias.data[...] = 0
    x = SeededRng(2).normal(0, 1, (4, 3))
    assert np.array_equal(d(Tensor(x)).data, x)


def test_dense_param_count_and_shape_error():
    d = L.Dense(3, 4)
    assert count_params(d) == (16, 16, 0)
    with pytest.raises(ShapeError):
        d(Tensor(np.zeros((2, 5))))


def test_dense_grad():
    d = L.Dense(4, 3, rng=SeededRng(3))
    x = Tensor(SeededRng(4).normal(0, 1, (5, 4)), requires_grad=True)
    assert max(grad_errors(lambda: weighted_sum(d(x)), [x, d.weight, d.bias])) < GRAD_TOL


# -- batchnorm ----------------------------------------------------------------------------

def test_batchnorm_constant_input_is_zero():
    bn = L.BatchNorm(2)
    out = L.batchnorm(Tensor(np.full((4, 2), 3.0)), bn, Mode.TRAIN)
    assert np.all(out.data == 0)


def test_batchnorm_beta_shift():
    bn = L.BatchNorm(1)
    bn.beta.data[...] = 5.0
    out = L.batchnorm(Tensor(np.full((3, 1, 2, 2), 7.0)), bn, Mode.TRAIN)
    assert np.all(out.data == 5.0)


def test_batchnorm_two_values():
    bn = L.BatchNorm(1)
    out = L.batchnorm(Tensor([[1.0], [3.0]]), bn, Mode.TRAIN, epsilon=1e-5).data.ravel()
    scale = 1 / np.sqrt(1 + 1e-5)
    assert np.allclose(out, [-scale, scale], atol=1e-12)
    assert np.allclose(out, [-1.0, 1.0], atol=1e-5)


def test_batchnorm_running_stats_update():
    bn = L.BatchNorm(1)
    L.batchnorm(Tensor([[1.0], [3.0]]), bn, Mode.TRAIN, momentum=0.9)
    assert np.isclose(bn.running_mean[0], 0.1 * 2.0)
    # unbiased batch variance of [1, 3] is 2
    assert np.isclose(bn.running_var[0], 0.9 * 1.0 + 0.1 * 2.0)


def test_batchnorm_eval_uses_running_stats():
    bn = L.BatchNorm(2)
    bn.running_mean[...] = [1.0, -1.0]
    bn.running_var[...] = [4.0, 9.0]
    x = SeededRng(5).normal(0, 1, (3, 2))
    out = L.batchnorm(Tensor(x), bn, Mode.EVAL).data
    assert np.allclose(out, (x - [1.0, -1.0]) / np.sqrt(np.array([4.0, 9.0]) + 1e-5), atol=1e-14)
    before = bn.running_mean.copy()
    L.batchnorm(Tensor(x), bn, Mode.EVAL)
    assert np.array_equal(bn.running_mean, before)


def test_batchnorm_channel_mismatch():
    with pytest.raises(ShapeError):
        L.batchnorm(Tensor(np.zeros((2, 3))), L.BatchNorm(2), Mode.TRAIN)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 8))
def test_batchnorm_train_output_standardised(seed, n):
    x = SeededRng(seed).normal(3, 2, (n, 3, 2, 2))
    bn = L.BatchNorm(3, epsilon=1e-5)
    out = L.batchnorm(Tensor(x), bn, Mode.TRAIN).data
    var_in = x.var(axis=(0, 2, 3))
    assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-6)
    assert np.allclose(out.var(axis=(0, 2, 3)), var_in / (var_in + 1e-5), atol=1e-6)


@pytest.mark.parametrize("shape", [(4, 3), (3, 2, 3, 3)])
@pytest.mark.parametrize("mode", [Mode.TRAIN, Mode.EVAL])
def test_batchnorm_grad(shape, mode):
    bn = L.BatchNorm(shape[1])
    r = SeededRng(6)
    bn.gamma.data[...] = r.uniform(0.5, 1.5, shape[1])
    bn.beta.data[...] = r.normal(0, 1, shape[1])
    bn.running_var[...] = 2.0
    x = Tensor(r.normal(1, 2, shape), requires_grad=True)
    errs = grad_errors(lambda: weighted_sum(L.batchnorm(x, bn, mode)), [x, bn.gamma, bn.beta])
    assert max(errs) < GRAD_TOL


def test_running_stats_never_get_gradients():
    bn = L.BatchNorm(2)
    x = Tensor(SeededRng(7).normal(0, 1, (4, 2)), requires_grad=True)
    T.backward(L.batchnorm(x, bn, Mode.TRAIN).sum())
    names = [n for n, _ in bn.named_parameters()]
    assert names == ["gamma", "beta"]
    assert sorted(n for n, _ in bn.named_buffers()) == ["running_mean", "running_var"]


# -- dropout and drop-connect -----------------------------------------------------------------

def test_dropout_identity_cases():
    x = Tensor(SeededRng(8).normal(0, 1, (10, 10)))
    assert L.dropout(x, 0.0, Mode.TRAIN, SeededRng(0)) is x
    assert L.dropout(x, 0.7, Mode.EVAL) is x


def test_dropout_invalid_p():
    with pytest.raises(InvalidProbabilityError):
        L.dropout(Tensor([1.0]), 1.0, Mode.TRAIN, SeededRng(0))
    with pytest.raises(InvalidProbabilityError):
        L.Dropout(1.5)


def test_dropout_statistics():
    x = Tensor(np.ones(10_000))
    out = L.dropout(x, 0.5, Mode.TRAIN, SeededRng(9)).data
    kept = np.mean(out != 0)
    assert abs(kept - 0.5) < 0.02
    assert abs(out.mean() - 1.0) < 0.03
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_preserves_expectation_over_trials():
    x = SeededRng(10).uniform(0.5, 1.5, 10_000)
    means = [L.dropout(Tensor(x), 0.5, Mode.TRAIN, SeededRng(s)).data.mean() for s in range(1000)]
    assert abs(np.mean(means) - x.mean()) / x.mean() < 0.01


def test_drop_connect_cases():
    x = Tensor(np.ones((10_000, 2, 1, 1)))
    assert L.drop_connect(x, 1.0, Mode.TRAIN, SeededRng(0)) is x
    assert L.drop_connect(x, 0.5, Mode.EVAL) is x
    with pytest.raises(InvalidProbabilityError):
        L.drop_connect(x, 0.0, Mode.TRAIN, SeededRng(0))
    out = L.drop_connect(x, 0.8, Mode.TRAIN, SeededRng(11)).data
    survived = out[:, 0, 0, 0] != 0
    assert abs(survived.mean() - 0.8) < 0.02
    # the mask is per sample: both channels of a sample agree
    assert np.array_equal(out[:, 0], out[:, 1])
    assert np.allclose(out[survived], 1 / 0.8)


def test_fixed_mask_dropout_grad():
    x = Tensor(SeededRng(12).normal(0, 1, (4, 6)), requires_grad=True)
    f = lambda: weighted_sum(L.drop_connect(L.dropout(x, 0.4, Mode.TRAIN, SeededRng(3)), 0.7,
                                            Mode.TRAIN, SeededRng(4)))
    assert grad_errors(f, [x])[0] < GRAD_TOL


# -- pooling ----------------------------------------------------------------------------------

def test_pool_examples():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert L.pool(x, "max", 2, 2).data.item() == 4.0
    assert L.pool(x, "avg", 2, 2).data.item() == 2.5
    g = L.pool(Tensor(np.full((2, 3, 4, 5), 1.5)), "global_avg")
    assert g.shape == (2, 3, 1, 1) and np.all(g.data == 1.5)


def test_pool_fit_error():
    with pytest.raises(ShapeError):
        L.pool(Tensor(np.zeros((1, 1, 2, 2))), "max", 3, 1)


def test_global_avg_pool_module_grad():
    x = Tensor(SeededRng(13).normal(0, 1, (2, 3, 4, 4)), requires_grad=True)
    assert grad_errors(lambda: weighted_sum(L.GlobalAvgPool()(x)), [x])[0] < GRAD_TOL


# -- squeeze-and-excitation -----------------------------------------------------------------------

def _se(channels=4, squeeze=2, seed=14):
    return L.SqueezeExcite(channels, squeeze, rng=SeededRng(seed))


def test_se_gate_open_and_closed():
    x = Tensor(SeededRng(15).normal(0, 1, (2, 4, 3, 3)))
    se = _se()
    se.expand.weight.data[...] = 0
    se.expand.bias.data[...] = 50.0
    assert np.allclose(L.se_block(x, se).data, x.data, atol=1e-15)
    se.expand.bias.data[...] = -800.0
    assert np.all(L.se_block(x, se).data == 0)


def test_se_matches_scalar_reimplementation():
    r = SeededRng(16)
    x = r.normal(0, 1, (2, 4, 3, 3))
    se = _se()
    out = L.se_block(Tensor(x), se).data
    for n in range(2):
        s = [x[n, c].mean() for c in range(4)]
        z = [sum(s[c] * se.reduce.weight.data[c, j] for c in range(4)) + se.reduce.bias.data[j] for j in range(2)]
        z = [v / (1 + np.exp(-v)) for v in z]
        for c in range(4):
            e = sum(z[j] * se.expand.weight.data[j, c] for j in range(2)) + se.expand.bias.data[c]
            g = 1 / (1 + np.exp(-e))
            assert 0 < g < 1
            assert np.allclose(out[n, c], g * x[n, c], atol=1e-13)


def test_se_shape_error_and_grad():
    se = _se()
    with pytest.raises(ShapeError):
        L.se_block(Tensor(np.zeros((1, 3, 2, 2))), se)
    x = Tensor(SeededRng(17).normal(0, 1, (2, 4, 3, 3)), requires_grad=True)
    tensors = [x, se.reduce.weight, se.reduce.bias, se.expand.weight, se.expand.bias]
    assert max(grad_errors(lambda: weighted_sum(L.se_block(x, se)), tensors)) < GRAD_TOL


# -- conv modules ----------------------------------------------------------------------------

@pytest.mark.parametrize("groups", [1, 4])
def test_conv_bn_act_grad(groups):
    m = L.ConvBNAct(4, 4, 3, stride=2, groups=groups, act="swish", rng=SeededRng(18))
    x = Tensor(SeededRng(19).normal(0, 1, (2, 4, 5, 5)), requires_grad=True)
    tensors = [x, m.conv.weight, m.bn.gamma, m.bn.beta]
    f = lambda: weighted_sum(m(x, train_ctx()))
    assert max(grad_errors(f, tensors)) < GRAD_TOL


def test_conv_bias_grad():
    m = L.Conv2d(2, 3, 3, bias=True, rng=SeededRng(20))
    x = Tensor(SeededRng(21).normal(0, 1, (1, 2, 4, 4)))
    assert grad_errors(lambda: weighted_sum(m(x)), [m.bias])[0] < GRAD_TOL


def test_eval_forward_is_pure():
    m = L.Sequential(L.ConvBNAct(3, 4, 3, rng=SeededRng(22)), L.GlobalAvgPool(), L.Dropout(0.5), L.Dense(4, 2))
    x = Tensor(SeededRng(23).normal(0, 1, (2, 3, 6, 6)))
    a, b = m(x), m(x)
    assert a.data.tobytes() == b.data.tobytes()
