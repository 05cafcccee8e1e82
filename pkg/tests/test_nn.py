import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seizure_forge import nn
from seizure_forge.nn import (
    BatchNorm2d,
    Conv2d,
    Linear,
    ParamStore,
    Tensor,
    adam_step,
    avg_pool2d,
    batch_norm2d,
    concat_channels,
    conv2d,
    conv2d_direct,
    dropout,
    finite_diff_gradcheck,
    global_avg_pool2d,
    linear,
    load_checkpoint,
    log_softmax,
    no_grad,
    relu,
    save_checkpoint,
    softmax_cross_entropy,
)

TOL = 1e-4


def r64(rng, *shape):
    return rng.normal(size=shape)


# --------------------------------------------------------------------------- engine

def test_shared_node_gradient_accumulates():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_broadcast_add_reduces_gradient():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a + b).sum().backward()
    assert np.array_equal(b.grad, np.full(4, 3.0))


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_deep_chain_is_not_recursive():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.backward()
    assert x.grad == 1.0


# --------------------------------------------------------------------------- gradients

def test_grad_conv2d(rng):
    for stride, pad, k in [(1, 0, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1), (2, 3, 7)]:
        err = finite_diff_gradcheck(lambda x, w: conv2d(x, w, stride, pad), [r64(rng, 2, 3, 9, 9), r64(rng, 4, 3, k, k)])
        assert err < TOL, (stride, pad, k, err)


def test_grad_batch_norm_train_and_eval(rng):
    rm, rv = np.zeros(3), np.ones(3)
    err = finite_diff_gradcheck(
        lambda x, g, b: batch_norm2d(x, g, b, rm.copy(), rv.copy(), True),
        [r64(rng, 4, 3, 3, 3), rng.uniform(0.5, 1.5, 3), r64(rng, 3)],
    )
    assert err < TOL
    rm2, rv2 = rng.normal(size=3), rng.uniform(0.5, 2, 3)
    err = finite_diff_gradcheck(lambda x, g, b: batch_norm2d(x, g, b, rm2, rv2, False),
                                [r64(rng, 2, 3, 3, 3), r64(rng, 3), r64(rng, 3)])
    assert err < TOL


def test_grad_relu_away_from_zero(rng):
    x = r64(rng, 3, 5)
    x[np.abs(x) < 0.05] = 0.5
    assert finite_diff_gradcheck(relu, [x]) < TOL


@pytest.mark.parametrize("k,stride,pad", [(2, 2, 0), (3, 1, 1), (3, 2, 1)])
def test_grad_avg_pool(rng, k, stride, pad):
    assert finite_diff_gradcheck(lambda x: avg_pool2d(x, k, stride, pad), [r64(rng, 2, 2, 6, 6)]) < TOL


def test_grad_linear_global_pool_concat_log_softmax(rng):
    assert finite_diff_gradcheck(linear, [r64(rng, 4, 5), r64(rng, 3, 5), r64(rng, 3)]) < TOL
    assert finite_diff_gradcheck(global_avg_pool2d, [r64(rng, 2, 3, 4, 4)]) < TOL
    assert finite_diff_gradcheck(lambda a, b: concat_channels([a, b]), [r64(rng, 2, 2, 3, 3), r64(rng, 2, 1, 3, 3)]) < TOL
    assert finite_diff_gradcheck(lambda z: log_softmax(z, 1), [r64(rng, 4, 7)]) < TOL


def test_grad_softmax_cross_entropy(rng):
    y = rng.integers(0, 7, 6)
    assert finite_diff_gradcheck(lambda z: softmax_cross_entropy(z, y), [r64(rng, 6, 7)]) < TOL


def test_grad_dropout_fixed_mask(rng):
    seed = 5
    err = finite_diff_gradcheck(lambda x: dropout(x, 0.3, True, np.random.default_rng(seed)), [r64(rng, 4, 6)])
    assert err < TOL


# --------------------------------------------------------------------------- forward oracles

@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (2, 1, 3), (1, 0, 1), (2, 3, 7), (3, 2, 5)])
def test_conv_matches_direct_loops(rng, stride, pad, k):
    x, w = r64(rng, 2, 3, 11, 10), r64(rng, 5, 3, k, k)
    assert np.abs(conv2d(x, w, stride, pad).data - conv2d_direct(x, w, stride, pad)).max() < 1e-10


def test_conv_output_size_floor():
    assert conv2d(np.zeros((1, 1, 7, 7)), np.zeros((1, 1, 3, 3)), stride=2).shape == (1, 1, 3, 3)
    assert conv2d(np.zeros((1, 1, 8, 8)), np.zeros((1, 1, 3, 3)), stride=2, padding=1).shape == (1, 1, 4, 4)
    with pytest.raises(ValueError):
        conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


def test_batch_norm_normalizes_and_updates_buffers(rng):
    x = rng.normal(3.0, 2.0, size=(8, 2, 4, 4))
    rm, rv = np.zeros(2), np.ones(2)
    out = batch_norm2d(x, np.ones(2), np.zeros(2), rm, rv, True).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-3)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))


def test_dropout_modes(rng):
    x = np.ones((200, 50))
    assert dropout(x, 0.5, False).data is x
    out = dropout(x, 0.5, True, rng).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1) < 0.05
    with pytest.raises(ValueError):
        dropout(x, 1.0, True, rng)


def test_avg_pool_counts_padding():
    out = avg_pool2d(np.ones((1, 1, 2, 2)), 3, 1, 1).data
    assert np.allclose(out, 4 / 9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_cross_entropy_shift_invariant(seed, c):
    rng = np.random.default_rng(seed)
    z, y = rng.normal(size=(5, 7)), rng.integers(0, 7, 5)
    a = softmax_cross_entropy(z, y).data
    b = softmax_cross_entropy(z + c, y).data
    assert abs(a - b) < 1e-9


def test_cross_entropy_uniform_logits():
    assert softmax_cross_entropy(np.zeros((4, 7)), [0, 1, 2, 3]).data == pytest.approx(np.log(7))
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 7)), [0, 7])


# --------------------------------------------------------------------------- optimizer

def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    store = ParamStore({"p": p})
    adam_step(store, {"p": np.array([0.5, -4.0, 1e-3])}, lr=0.01)
    # bias-corrected first step is lr * g / (|g| + eps)
    assert np.allclose(p.data, [0.99, -1.99, 2.99], atol=1e-7)


def test_adam_coupled_decay():
    p = Tensor(np.array([2.0]), requires_grad=True)
    store = ParamStore({"p": p})
    adam_step(store, {"p": np.array([0.0])}, lr=0.1, decay=0.5)
    assert p.data[0] == pytest.approx(1.9)


def test_adam_reference_sequence(rng):
    # scalar re-derivation of the update rule
    theta = rng.normal(size=4)
    p = Tensor(theta.copy(), requires_grad=True)
    store = ParamStore({"p": p})
    m = v = np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        adam_step(store, {"p": g}, lr=0.05, decay=1e-3)
        g = g + 1e-3 * theta
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.data, theta, atol=1e-12)


def test_adam_converges_on_quadratic():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    store = ParamStore({"p": p})
    for _ in range(2000):
        store.zero_grad()
        ((p - Tensor(np.array([1.0, 2.0]))) * (p - Tensor(np.array([1.0, 2.0])))).sum().backward()
        adam_step(store, store.grads(), lr=0.05)
    assert np.allclose(p.data, [1.0, 2.0], atol=1e-3)


def test_adam_shape_mismatch():
    store = ParamStore({"p": Tensor(np.zeros(3), requires_grad=True)})
    with pytest.raises(ValueError):
        adam_step(store, {"p": np.zeros(2)}, 0.1)


# --------------------------------------------------------------------------- modules and checkpoints

def test_module_state_round_trip(tmp_path, rng):
    net = nn.Sequential(Conv2d(3, 4, 3, padding=1), BatchNorm2d(4), nn.ReLU(), nn.AvgPool2d(2))
    for _, p in net.named_parameters():
        p.data[...] = rng.normal(size=p.shape)
    net(rng.normal(size=(2, 3, 6, 6)).astype(np.float32))
    state = net.state_dict()
    assert "layers.1.running_var" in state
    save_checkpoint(tmp_path / "a.snck", state)
    loaded = load_checkpoint(tmp_path / "a.snck")
    assert set(loaded) == set(state)
    for k in state:
        assert np.array_equal(loaded[k], state[k].astype(np.float32))
    other = nn.Sequential(Conv2d(3, 4, 3, padding=1), BatchNorm2d(4), nn.ReLU(), nn.AvgPool2d(2))
    other.load_state_dict(loaded)
    x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
    net.eval(), other.eval()
    assert np.array_equal(net(x).data, other(x).data)
    save_checkpoint(tmp_path / "b.snck", other.state_dict())
    assert (tmp_path / "a.snck").read_bytes() == (tmp_path / "b.snck").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"XXXX")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "bad")
    save_checkpoint(tmp_path / "ok", {"a": np.ones(2)})
    (tmp_path / "long").write_bytes((tmp_path / "ok").read_bytes() + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(tmp_path / "long")


def test_load_state_dict_mismatch():
    lin = Linear(3, 2)
    with pytest.raises(KeyError):
        lin.load_state_dict({"weight": np.zeros((2, 3))})
