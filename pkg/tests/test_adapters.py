import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amrg import adapters as A
from amrg.adapters import LoraLinear, SweepGrid


def random_layer(d, k, r, seed=0, alpha=16.0, scaling="alpha", p=0.05):
    rng = np.random.default_rng(seed)
    return LoraLinear(rng.normal(size=(d, k)), rng.normal(size=(d, r)), rng.normal(size=(r, k)),
                      alpha, p, scaling)


def test_fresh_init_is_identity():
    W = np.random.default_rng(0).normal(size=(5, 7))
    layer = A.lora_init(W, 3, 16.0, seed=1)
    x = np.random.default_rng(2).normal(size=(4, 7))
    assert np.array_equal(A.lora_forward(layer, x), x @ W.T)
    assert np.array_equal(A.lora_merge(layer), W)
    assert layer.A.std() == pytest.approx(A.INIT_STD, rel=0.5)


def test_init_determinism_and_rank_bounds():
    W = np.ones((4, 6))
    assert np.array_equal(A.lora_init(W, 2, 8, seed=3).A, A.lora_init(W, 2, 8, seed=3).A)
    assert not np.array_equal(A.lora_init(W, 2, 8, seed=3).A, A.lora_init(W, 2, 8, seed=4).A)
    with pytest.raises(ValueError):
        A.lora_init(W, 5, 8, seed=0)
    with pytest.raises(ValueError):
        A.lora_init(W, 0, 8, seed=0)


def test_forward_zero_alpha_and_dense_oracle():
    layer = random_layer(4, 6, 2, alpha=0.0)
    x = np.random.default_rng(1).normal(size=6)
    assert np.array_equal(A.lora_forward(layer, x), layer.W @ x)
    layer = random_layer(4, 6, 2, alpha=16.0)
    want = (layer.W + 16.0 * layer.A @ layer.B) @ x
    got = A.lora_forward(layer, x)
    assert np.linalg.norm(got - want) <= 1e-12 * np.linalg.norm(want)
    with pytest.raises(ValueError):
        A.lora_forward(layer, np.ones(5))


def test_rank_scaling_option():
    layer = random_layer(4, 6, 2, alpha=8.0, scaling="rank")
    assert layer.scale == 4.0
    np.testing.assert_allclose(A.lora_merge(layer), layer.W + 4.0 * layer.A @ layer.B)


@pytest.mark.parametrize("shape", [(8, 8), (16, 4), (4, 16)])
@pytest.mark.parametrize("r", [1, 2, 4])
def test_merge_equivalence(shape, r):
    layer = random_layer(*shape, r, seed=r)
    x = np.random.default_rng(9).normal(size=(5, shape[1]))
    via_adapter = A.lora_forward(layer, x)
    via_merge = x @ A.lora_merge(layer).T
    assert np.linalg.norm(via_adapter - via_merge) <= 1e-12 * np.linalg.norm(via_merge)


def test_merge_linear_in_alpha():
    layer = random_layer(4, 6, 2, alpha=3.0)
    double = LoraLinear(layer.W, layer.A, layer.B, 6.0)
    np.testing.assert_allclose(A.lora_merge(double) - layer.W,
                               2 * (A.lora_merge(layer) - layer.W), rtol=1e-13)


def test_dropout_touches_adapter_path_only():
    layer = random_layer(4, 6, 2, p=0.5)
    x = np.random.default_rng(0).normal(size=(50, 6))
    y = A.lora_forward(layer, x, training=True, seed=1)
    assert not np.allclose(y, A.lora_forward(layer, x))
    zero_b = LoraLinear(layer.W, layer.A, np.zeros_like(layer.B), layer.alpha, 0.5)
    assert np.array_equal(A.lora_forward(zero_b, x, training=True, seed=1), x @ layer.W.T)
    assert np.array_equal(y, A.lora_forward(layer, x, training=True, seed=1))


def finite_diff(f, M, eps=1e-5):
    g = np.zeros_like(M)
    for idx in np.ndindex(M.shape):
        old = M[idx]
        M[idx] = old + eps
        hi = f()
        M[idx] = old - eps
        lo = f()
        M[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("seed", range(20))
def test_grads_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d, k, r = rng.integers(2, 7, size=3)
    r = min(r, d, k)
    layer = random_layer(d, k, r, seed=seed, alpha=float(rng.uniform(0.5, 4)))
    x = rng.normal(size=k) if seed % 2 else rng.normal(size=(3, k))
    c = rng.normal(size=(x.shape[0], d) if x.ndim == 2 else d)

    def loss():
        return float(np.sum(c * np.tanh(A.lora_forward(layer, x))))

    y = A.lora_forward(layer, x)
    upstream = c * (1 - np.tanh(y) ** 2)
    dA, dB, dx = A.lora_backward(layer, x, upstream)
    assert rel_err(dA, finite_diff(loss, layer.A)) <= 1e-4
    assert rel_err(dB, finite_diff(loss, layer.B)) <= 1e-4
    x = np.array(x)
    assert rel_err(dx, finite_diff(loss, x)) <= 1e-4


def test_grads_closed_form_and_zeros():
    layer = random_layer(4, 6, 2)
    x, u = np.arange(6.0), np.ones(4)
    dA, dB = A.lora_grads(layer, x, u)
    np.testing.assert_allclose(dA, layer.scale * np.outer(u, layer.B @ x))
    np.testing.assert_allclose(dB, layer.scale * np.outer(layer.A.T @ u, x))
    dA, dB = A.lora_grads(layer, x, np.zeros(4))
    assert not dA.any() and not dB.any()
    _, dB = A.lora_grads(layer, np.zeros(6), u)
    assert not dB.any()
    with pytest.raises(ValueError):
        A.lora_grads(layer, x, np.ones(3))


def test_backward_with_dropout_mask_matches_fd():
    layer = random_layer(3, 5, 2, p=0.3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 5))
    mask = A.dropout_mask(x.shape, 0.3, rng)
    c = rng.normal(size=(2, 3))

    def loss():
        return float(np.sum(c * A.lora_forward(layer, x, training=True, mask=mask)))

    dA, dB, _ = A.lora_backward(layer, x, c, mask=mask)
    assert rel_err(dA, finite_diff(loss, layer.A)) <= 1e-6
    assert rel_err(dB, finite_diff(loss, layer.B)) <= 1e-6


def test_sweep_plan():
    plan = A.sweep_plan()
    assert len(plan) == 6 and plan[0] == (16, 8) and plan[-1] == (64, 16)
    assert plan == [(16, 8), (32, 8), (64, 8), (16, 16), (32, 16), (64, 16)]
    assert A.sweep_plan(SweepGrid((4,), (2,))) == [(4, 2)]
    with pytest.raises(ValueError):
        SweepGrid((), (8,))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_serialization_roundtrip(d, k, data):
    r = data.draw(st.integers(1, min(d, k)))
    scaling = data.draw(st.sampled_from(["alpha", "rank"]))
    layer = random_layer(d, k, r, seed=d * 10 + k, alpha=1.5, scaling=scaling, p=0.1)
    for back in (A.from_bytes(A.to_bytes(layer)), A.from_json(A.to_json(layer))):
        assert np.array_equal(back.W, layer.W) and np.array_equal(back.A, layer.A)
        assert np.array_equal(back.B, layer.B)
        assert (back.alpha, back.dropout_p, back.scaling) == (1.5, 0.1, scaling)


def test_save_load_files(tmp_path):
    layer = random_layer(3, 4, 2)
    for name in ("layer.lora", "layer.json"):
        A.save(layer, tmp_path / name)
        assert np.array_equal(A.lora_merge(A.load(tmp_path / name)), A.lora_merge(layer))
    blob = A.to_bytes(layer)
    with pytest.raises(ValueError):
        A.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        A.from_bytes(blob + b"\0")


def test_layer_validation():
    with pytest.raises(ValueError):
        LoraLinear(np.ones((3, 4)), np.ones((3, 2)), np.ones((2, 5)), 1.0)
    with pytest.raises(ValueError):
        LoraLinear(np.ones((3, 4)), np.ones((3, 2)), np.ones((2, 4)), 1.0, dropout_p=1.0)
    with pytest.raises(ValueError):
        LoraLinear(np.ones((3, 4)), np.ones((3, 2)), np.ones((2, 4)), 1.0, scaling="sqrt")
