import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dense_correlation
from motionfilters.errors import DimensionError
from motionfilters.flow import FlowField, flow_translation
from motionfilters.retina import (FilterBank, activate, activation_derivative, features,
                                  interior_mask, material_derivative, preactivations,
                                  spatial_gradient, spatial_gradient_adjoint, unflatten)
from motionfilters.video import gen_translating, translating_pattern


def test_bank_layout_round_trip(rng):
    bank = FilterBank.random(3, 5, 0.2, rng)
    w = bank.flatten()
    assert w.size == 3 * (25 + 1) == bank.size
    np.testing.assert_array_equal(w[:25], bank.kernels[0].ravel())
    np.testing.assert_array_equal(w[-3:], bank.biases)
    kernels, biases = unflatten(w, 3, 5)
    np.testing.assert_array_equal(np.concatenate([kernels.ravel(), biases]), w)
    np.testing.assert_array_equal(FilterBank.from_vector(w, 3, 5).flatten(), w)


def test_bank_validation():
    with pytest.raises(ValueError):
        FilterBank(np.zeros((1, 2, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        FilterBank(np.zeros((2, 3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        FilterBank(np.zeros((1, 3, 3)), np.zeros(1), "relu")
    with pytest.raises(ValueError):
        FilterBank(np.full((1, 3, 3), np.nan), np.zeros(1))


def test_delta_kernel_is_identity(rng):
    u = rng.uniform(size=(9, 11))
    kernel = np.zeros((1, 5, 5))
    kernel[0, 2, 2] = 1.0
    a = preactivations(u, FilterBank(kernel, np.zeros(1)))
    np.testing.assert_array_equal(a[0], u)


def test_zero_kernel_gives_bias(rng):
    u = rng.uniform(size=(6, 6))
    a = preactivations(u, FilterBank(np.zeros((2, 3, 3)), np.array([0.5, -1.25])))
    assert np.all(a[0] == 0.5) and np.all(a[1] == -1.25)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_preactivations_match_dense_loop(rng, k):
    u = rng.uniform(size=(10, 12))
    bank = FilterBank.random(2, k, 1.0, rng)
    a = preactivations(u, bank)
    for i in range(2):
        expected = dense_correlation(u, bank.kernels[i], bank.biases[i])
        assert np.max(np.abs(a[i] - expected)) <= 1e-12


def test_kernel_larger_than_frame():
    with pytest.raises(DimensionError):
        preactivations(np.zeros((4, 8)), FilterBank.zeros(1, 5))


@pytest.mark.parametrize("shift", [(1, 0), (0, 2), (3, -2)])
def test_translation_equivariance(rng, shift):
    H, W, k = 24, 24, 5
    f = translating_pattern(H, W, "gaussian-bumps", seed=5)
    y, x = np.mgrid[0:H, 0:W].astype(float)
    sx, sy = shift
    u = f(x, y)
    u_shift = f(x - sx, y - sy)
    bank = FilterBank.random(2, k, 0.5, rng)
    a = preactivations(u, bank)
    a_shift = preactivations(u_shift, bank)
    r = k // 2
    m = r + max(abs(sx), abs(sy))
    lhs = a_shift[:, m:H - m, m:W - m]
    rhs = a[:, m - sy:H - m - sy, m - sx:W - m - sx]
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_activation_values():
    a = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(activate(a, "identity"), a)
    np.testing.assert_array_equal(activation_derivative(a, "identity"), 1.0)
    assert activate(np.array(0.0), "tanh") == 0.0
    assert activation_derivative(np.array(0.0), "tanh") == 1.0
    np.testing.assert_allclose(activate(a, "softplus"), np.log1p(np.exp(a)), rtol=1e-15)
    with pytest.raises(ValueError):
        activate(a, "relu")


@pytest.mark.parametrize("kind", ["tanh", "softplus", "identity"])
def test_activation_derivative_vs_finite_difference(kind):
    a = np.random.default_rng(0).uniform(-3, 3, 100)
    h = 1e-5
    fd = (activate(a + h, kind) - activate(a - h, kind)) / (2 * h)
    d = activation_derivative(a, kind)
    rel = np.abs(d - fd) / np.abs(d)
    assert rel.max() <= 1e-8


def test_spatial_gradient_simple_cases():
    gx, gy = spatial_gradient(np.full((5, 6), 2.0))
    assert not gx.any() and not gy.any()
    y, x = np.mgrid[0:6, 0:7].astype(float)
    gx, gy = spatial_gradient(x)
    assert np.all(gx[:, 1:-1] == 1.0) and np.all(gy == 0.0)


@pytest.mark.parametrize("L", [5.0, 8.0, 16.0, 31.0])
def test_spatial_gradient_sinusoid_attenuation(L):
    h = 1.0
    k = 2 * np.pi / L
    x = np.arange(40.0)
    q = np.tile(np.sin(k * x + 0.2), (3, 1))
    gx, _ = spatial_gradient(q)
    expected = k * np.cos(k * x + 0.2) * np.sin(k * h) / (k * h)
    inner = slice(1, -1)
    err = np.abs(gx[:, inner] - expected[inner])
    assert np.max(err / np.max(np.abs(expected))) <= 1e-9


def test_spatial_gradient_adjoint_is_transpose(rng):
    # <G q, g> == <q, G^T g> for random q, g (border rows included).
    q = rng.normal(size=(2, 7, 9))
    gxb, gyb = rng.normal(size=(2, 7, 9)), rng.normal(size=(2, 7, 9))
    gx, gy = spatial_gradient(q)
    lhs = np.sum(gx * gxb) + np.sum(gy * gyb)
    rhs = np.sum(q * spatial_gradient_adjoint(gxb, gyb))
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_material_derivative_trivial_cases(rng):
    q = rng.uniform(size=(8, 8))
    assert not material_derivative(q, q, FlowField.zeros(8, 8)).any()
    c = np.full((8, 8), 0.3)
    flow = FlowField(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
    assert not material_derivative(c, c, flow).any()
    with pytest.raises(DimensionError):
        material_derivative(q, q, FlowField.zeros(8, 9))


def test_material_derivative_time_step():
    q0 = np.zeros((5, 5))
    q1 = np.ones((5, 5))
    np.testing.assert_array_equal(material_derivative(q0, q1, FlowField.zeros(5, 5), 2.0), 0.5)


@pytest.mark.parametrize("seed", range(4))
def test_material_derivative_translating_features(seed):
    clip = gen_translating(32, 32, 2, (1.0, 0.0), "sinusoid", seed=seed, wavelength=16)
    bank = FilterBank.random(3, 5, 0.1, seed)
    q0 = features(clip.frames[0], bank).q
    q1 = features(clip.frames[1], bank).q
    mask = interior_mask(32, 32, 3)
    D = material_derivative(q0, q1, flow_translation(32, 32, (1, 0)))[:, mask]
    D0 = material_derivative(q0, q1, FlowField.zeros(32, 32))[:, mask]
    assert np.mean(D ** 2) <= 0.01 * np.mean(D0 ** 2)


def test_interior_mask():
    assert interior_mask(5, 7, 0).all()
    assert not interior_mask(5, 7, 3).any()
    assert not interior_mask(6, 9, 3).any()
    for m in (1, 2):
        assert interior_mask(6, 9, m).sum() == (6 - 2 * m) * (9 - 2 * m)


@settings(max_examples=30, deadline=None)
@given(H=st.integers(3, 20), W=st.integers(3, 20), m=st.integers(0, 12))
def test_interior_mask_count(H, W, m):
    expected = max(H - 2 * m, 0) * max(W - 2 * m, 0)
    assert interior_mask(H, W, m).sum() == expected
