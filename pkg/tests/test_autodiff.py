"""Finite-difference and duality oracles for every differentiation primitive."""

import numpy as np
import pytest

from conftest import central_diff, relerr
from meno import autodiff as ad
from meno.autodiff.tensor import Tensor, take_slice


RNG = np.random.default_rng(1234)


def _scalarize(out, r):
    """Contract an op output against a fixed random array -> scalar Tensor."""
    return (out * Tensor(r)).sum()


# Each case: name, builder(tensors)->Tensor, list of input shapes (None = aux const)
def _primitive_cases():
    return [
        ("add", lambda a, b: a + b, [(3, 4), (3, 4)]),
        ("add_broadcast", lambda a, b: a + b, [(3, 4), (4,)]),
        ("sub", lambda a, b: a - b, [(3, 4), (3, 4)]),
        ("mul", lambda a, b: a * b, [(3, 4), (3, 4)]),
        ("mul_broadcast", lambda a, b: a * b, [(2, 3, 4), (3, 1)]),
        ("scalar_mul", lambda a: a * 2.5, [(3, 4)]),
        ("matmul", ad.matmul, [(3, 5), (5, 2)]),
        ("gelu", ad.gelu, [(4, 4)]),
        ("sin", ad.sin, [(3, 3)]),
        ("cos", ad.cos, [(3, 3)]),
        ("exp", ad.exp, [(3, 3)]),
        ("reciprocal", lambda a: ad.reciprocal(a + 3.0), [(3, 3)]),
        ("sum_all", lambda a: a.sum(), [(3, 4)]),
        ("sum_axis", lambda a: a.sum(axis=1), [(3, 4)]),
        ("mean_axes", lambda a: a.mean(axis=(0, 2)), [(2, 3, 4)]),
        ("reshape", lambda a: a.reshape(12), [(3, 4)]),
        ("transpose", lambda a: a.transpose((1, 0, 2)), [(2, 3, 4)]),
        ("broadcast", lambda a: ad.broadcast_to(a, (5, 3, 4)), [(3, 4)]),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 2)]),
        ("slice", lambda a: take_slice(a, (slice(1, 3), slice(None))), [(4, 5)]),
        ("conv2d", ad.conv2d, [(2, 3, 6, 6), (4, 3, 3, 3)]),
        ("conv2d_bias", ad.conv2d, [(2, 3, 6, 6), (4, 3, 3, 3), (4,)]),
        ("spectral", lambda a, wr, wi: ad.spectral_mul(a, wr, wi, 2, 2),
         [(2, 3, 8, 8), (3, 2, 4, 4), (3, 2, 4, 4)]),
    ]


@pytest.mark.parametrize("name,build,shapes", _primitive_cases(), ids=lambda c: c if isinstance(c, str) else "")
def test_primitive_reverse_matches_finite_differences(name, build, shapes):
    arrays = [RNG.standard_normal(s) for s in shapes]
    out0 = build(*[Tensor(a) for a in arrays])
    r = RNG.standard_normal(out0.shape)

    params = [ad.param(a, dtype=np.float64) for a in arrays]
    loss = _scalarize(build(*params), r)
    grads = ad.grad(loss, params)

    for i, a in enumerate(arrays):
        def f(x, i=i):
            vals = [arrays[j] if j != i else x for j in range(len(arrays))]
            return float(_scalarize(build(*[Tensor(v) for v in vals]), r).data)
        fd = central_diff(f, a)
        assert relerr(grads[i], fd) < 1e-4, f"{name} input {i}"


@pytest.mark.parametrize("name,build,shapes", _primitive_cases(), ids=lambda c: c if isinstance(c, str) else "")
def test_primitive_tangent_matches_finite_differences(name, build, shapes):
    arrays = [RNG.standard_normal(s) for s in shapes]
    tangents = [RNG.standard_normal(s) for s in shapes]
    (_, tan) = ad.jvp(lambda *xs: build(*xs), arrays, tangents)

    h = 1e-6
    plus = build(*[Tensor(a + h * t) for a, t in zip(arrays, tangents)]).data
    minus = build(*[Tensor(a - h * t) for a, t in zip(arrays, tangents)]).data
    fd = (plus - minus) / (2 * h)
    assert relerr(tan, fd, floor=1e-5) < 1e-4, name


@pytest.mark.parametrize("name,build,shapes", _primitive_cases(), ids=lambda c: c if isinstance(c, str) else "")
def test_primitive_vjp_jvp_duality(name, build, shapes):
    # g^T (J v) == (J^T g)^T v for random g, v
    arrays = [RNG.standard_normal(s) for s in shapes]
    tangents = [RNG.standard_normal(s) for s in shapes]
    out, tan = ad.jvp(lambda *xs: build(*xs), arrays, tangents)
    g = RNG.standard_normal(np.shape(out))

    params = [ad.param(a, dtype=np.float64) for a in arrays]
    loss = _scalarize(build(*params), g)
    vjps = ad.grad(loss, params)

    lhs = float(np.sum(g * tan))
    rhs = float(sum(np.sum(vj * t) for vj, t in zip(vjps, tangents)))
    denom = max(abs(lhs), abs(rhs), 1e-12)
    assert abs(lhs - rhs) / denom < 1e-10, name


def _mlp_loss(tensors, x):
    w1, b1, w2, b2, w3, b3 = tensors
    h = ad.gelu(ad.matmul(Tensor(x), w1) + b1)
    h = ad.gelu(ad.matmul(h, w2) + b2)
    out = ad.matmul(h, w3) + b3
    return (out * out).sum()


def test_grad_three_layer_mlp_every_coordinate():
    x = RNG.standard_normal((4, 3))
    shapes = [(3, 8), (8,), (8, 8), (8,), (8, 2), (2,)]
    arrays = [RNG.standard_normal(s) * 0.5 for s in shapes]
    params = [ad.param(a, dtype=np.float64) for a in arrays]
    grads = ad.grad(_mlp_loss(params, x), params)

    for i, a in enumerate(arrays):
        def f(v, i=i):
            vals = [Tensor(arrays[j]) if j != i else Tensor(v) for j in range(len(arrays))]
            return float(_mlp_loss(vals, x).data)
        fd = central_diff(f, a)
        assert relerr(grads[i], fd) < 1e-4


def test_grad_requires_scalar_loss():
    p = ad.param(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.grad(p + p, [p])


def test_grad_off_path_param_gets_zeros():
    p = ad.param(np.ones(3), dtype=np.float64)
    q = ad.param(np.ones(4), dtype=np.float64)
    loss = (p * p).sum()
    gp, gq = ad.grad(loss, [p, q])
    assert np.array_equal(gp, 2 * np.ones(3))
    assert np.array_equal(gq, np.zeros(4))


def test_grad_sum_of_squares():
    p = ad.param(RNG.standard_normal(5), dtype=np.float64)
    (g,) = ad.grad((p * p).sum(), [p])
    assert np.allclose(g, 2 * p.data, rtol=0, atol=0)


def test_jvp_square_at_three():
    out, tan = ad.jvp(lambda x: x * x, [np.array(3.0)], [np.array(1.0)])
    assert out == 9.0
    assert tan == 6.0


def test_jvp_linear_map_exact():
    A = RNG.standard_normal((4, 3))
    for _ in range(3):
        t = RNG.standard_normal((3, 2))
        x = RNG.standard_normal((3, 2))
        _, tan = ad.jvp(lambda z: ad.matmul(Tensor(A), z), [x], [t])
        assert np.allclose(tan, A @ t, atol=1e-14)


def test_jvp_conv_net_matches_finite_differences():
    w1 = RNG.standard_normal((4, 1, 3, 3)) * 0.5
    w2 = RNG.standard_normal((1, 4, 3, 3)) * 0.5

    def net(z):
        return ad.conv2d(ad.gelu(ad.conv2d(z, Tensor(w1))), Tensor(w2))

    x = RNG.standard_normal((1, 1, 8, 8))
    v = RNG.standard_normal((1, 1, 8, 8))
    _, tan = ad.jvp(net, [x], [v])
    h = 1e-5
    fd = (net(Tensor(x + h * v)).data - net(Tensor(x - h * v)).data) / (2 * h)
    assert relerr(tan, fd) < 1e-4


def test_jvp_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.jvp(lambda x: x, [np.ones(3)], [np.ones(4)])


class TestStopGradient:
    def test_values_pass_through(self):
        x = Tensor(RNG.standard_normal((3, 3)))
        assert np.array_equal(ad.stop_gradient(x).data, x.data)

    def test_one_factor_gradient(self):
        x = ad.param(RNG.standard_normal(5), dtype=np.float64)
        loss = (ad.stop_gradient(x) * x).sum()
        (g,) = ad.grad(loss, [x])
        assert np.array_equal(g, x.data)

    def test_pure_sg_loss_zero_gradient(self):
        x = ad.param(RNG.standard_normal(5), dtype=np.float64)
        loss = (ad.stop_gradient(x) * ad.stop_gradient(x)).sum()
        (g,) = ad.grad(loss, [x])
        assert np.array_equal(g, np.zeros(5))

    def test_sg_blocks_tangent(self):
        _, tan = ad.jvp(lambda x: ad.stop_gradient(x) * x,
                        [np.full(3, 2.0)], [np.ones(3)])
        # d(c * x) = c dx, not 2x dx
        assert np.allclose(tan, np.full(3, 2.0), atol=0)

    def test_sg_equals_constant_substitution_bitwise(self):
        x = ad.param(RNG.standard_normal((4, 4)), dtype=np.float64)
        w = ad.param(RNG.standard_normal((4, 4)), dtype=np.float64)

        def loss_with(block):
            h = ad.matmul(x, w)
            return ((h - block) * (h - block)).sum()

        l1 = loss_with(ad.stop_gradient(ad.matmul(x, w)))
        l2 = loss_with(Tensor(np.matmul(x.data, w.data)))
        assert float(l1.data) == float(l2.data)
        g1 = ad.grad(l1, [x, w])
        g2 = ad.grad(l2, [x, w])
        for a, b in zip(g1, g2):
            assert np.array_equal(a, b)


class TestAdam:
    def test_single_step_descends(self):
        p = ad.param(np.array([1.0]))
        st = ad.AdamState.for_params([p], lr=0.1)
        (g,) = ad.grad((p * p).sum(), [p])
        ad.adam_step(st, [p], [g])
        assert p.data[0] < 1.0

    def test_zero_gradient_only_weight_decay(self):
        p = ad.param(np.full(3, 2.0))
        st = ad.AdamState.for_params([p], lr=0.1, weight_decay=0.01)
        for _ in range(5):
            ad.adam_step(st, [p], [np.zeros(3, dtype=np.float32)])
        assert np.all(p.data < 2.0)
        assert np.all(p.data > 1.9)

        q = ad.param(np.full(3, 2.0))
        st2 = ad.AdamState.for_params([q], lr=0.1, weight_decay=0.0)
        for _ in range(5):
            ad.adam_step(st2, [q], [np.zeros(3, dtype=np.float32)])
        assert np.array_equal(q.data, np.full(3, 2.0, dtype=np.float32))

    def test_quadratic_bowl_convergence(self):
        target = np.array([0.3, -1.2, 2.0])
        p = ad.param(np.zeros(3), dtype=np.float64)
        st = ad.AdamState.for_params([p], lr=0.01)
        for step in range(5000):
            diff = p - Tensor(target)
            (g,) = ad.grad((diff * diff).sum(), [p])
            ad.adam_step(st, [p], [g])
            if np.abs(p.data - target).max() < 1e-6:
                break
        assert np.abs(p.data - target).max() < 1e-6

    def test_shape_mismatch_raises(self):
        p = ad.param(np.zeros(3))
        st = ad.AdamState.for_params([p])
        with pytest.raises(ValueError):
            ad.adam_step(st, [p], [np.zeros(4, dtype=np.float32)])


def test_checkpoint_round_trip(tmp_path):
    named = {
        "layer0.w": RNG.standard_normal((3, 4)).astype(np.float32),
        "layer0.b": RNG.standard_normal(4).astype(np.float32),
        "out.w": RNG.standard_normal((4, 1)).astype(np.float32),
    }
    meta = {"lr": 1e-4, "step": 17, "note": "roundtrip"}
    path = tmp_path / "ck.meno"
    ad.save_checkpoint(path, named, meta)
    loaded, meta2 = ad.load_checkpoint(path)
    assert meta2 == meta
    assert list(loaded) == list(named)
    for k in named:
        assert np.array_equal(loaded[k], named[k])


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.meno"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ad.CheckpointFormatError):
        ad.load_checkpoint(path)
