import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent_base.errors import DimensionMismatch, NotPositiveDefinite
from latent_base.invertible_net import (InverseCache, InvertibleNet, InvertibleNonlinearity,
                                        PseudoLinearLayer, linear_forward, linear_log_volume,
                                        linear_pseudo_inverse, net_forward, net_inverse,
                                        net_log_volume, nonlinearity_eval, nonlinearity_invert,
                                        nonlinearity_log_abs_deriv)
from latent_base.numerics import make_rng

from conftest import central_diff, rel_err

TANH = InvertibleNonlinearity("tanh", 0.01)
SIGM = InvertibleNonlinearity("sigmoid", 0.01)


def bisect(f, lo, hi, tol=1e-13):
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fd_logdet(net, h, delta=1e-6):
    d = h.size
    jac = np.empty((net.output_dim, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = delta
        jac[:, j] = (net.forward(h + e) - net.forward(h - e)) / (2 * delta)
    return np.linalg.slogdet(jac)[1]


def random_square_net(rng, k=2, weight_scale=1.0, bias_scale=0.3):
    layers = [PseudoLinearLayer(weight_scale * rng.standard_normal((k, k)), bias_scale * rng.standard_normal(k))
              for _ in range(2)]
    return InvertibleNet(layers, [TANH, SIGM])


class TestNonlinearity:
    def test_zero_points(self):
        assert nonlinearity_eval(TANH, 0.0) == 0.0
        assert nonlinearity_eval(SIGM, 0.0) == 0.5
        assert nonlinearity_invert(TANH, 0.0) == 0.0
        assert nonlinearity_log_abs_deriv(TANH, 0.0) == 0.0

    def test_tanh_knot_against_bisection(self):
        knot = bisect(lambda t: 1.0 - np.tanh(t) ** 2 - 0.01, 0.0, 10.0)
        assert TANH.knot == pytest.approx(knot, abs=1e-11)
        assert TANH.knot == pytest.approx(2.9932, abs=1e-4)
        assert TANH.offset_b == pytest.approx(np.tanh(knot) - 0.01 * knot, abs=1e-11)
        assert TANH.offset_b == pytest.approx(0.9651, abs=1e-4)

    def test_sigmoid_knot_against_bisection(self):
        sig = lambda t: 1.0 / (1.0 + np.exp(-t))
        knot = bisect(lambda t: sig(t) * (1 - sig(t)) - 0.01, 0.0, 20.0)
        assert SIGM.knot == pytest.approx(knot, abs=1e-10)
        assert SIGM.offset_b == pytest.approx(sig(knot) - 0.01 * knot, abs=1e-10)

    @pytest.mark.parametrize("nl", [TANH, SIGM], ids=["tanh", "sigmoid"])
    def test_tail_values(self, nl):
        t = np.array([-25.0, -8.0, 8.0, 25.0])
        low = 2 * nl.center - nl.offset_b
        expected = np.where(t > 0, 0.01 * t + nl.offset_b, 0.01 * t + low)
        np.testing.assert_allclose(nl(t), expected, rtol=1e-14)

    def test_tanh_tail_inverse_closed_form(self):
        y = np.array([1.2, 3.0])
        np.testing.assert_allclose(nonlinearity_invert(TANH, y), (y - TANH.offset_b) / 0.01, rtol=1e-12)

    @pytest.mark.parametrize("nl", [TANH, SIGM], ids=["tanh", "sigmoid"])
    def test_round_trip(self, nl):
        t = make_rng(3, "nl").uniform(-10, 10, 1000)
        np.testing.assert_allclose(nl.inverse(nl(t)), t, atol=1e-10)
        y = nl(t)
        np.testing.assert_allclose(nl(nl.inverse(y)), y, atol=1e-12)

    @pytest.mark.parametrize("nl", [TANH, SIGM], ids=["tanh", "sigmoid"])
    def test_c1_at_knots(self, nl):
        d = 1e-6
        for k in (-nl.knot, nl.knot):
            assert abs(nl(k - d) - nl(k + d)) <= 2 * d * (1.0 if nl is TANH else 0.25)
            assert abs(nl.derivative(k - d) - nl.derivative(k + d)) <= 1e-3

    def test_tail_log_derivative(self):
        assert nonlinearity_log_abs_deriv(TANH, 50.0) == pytest.approx(np.log(0.01))
        assert nonlinearity_log_abs_deriv(TANH, 50.0) == pytest.approx(-4.6052, abs=1e-4)
        assert nonlinearity_log_abs_deriv(SIGM, -50.0) == pytest.approx(np.log(0.01))

    @pytest.mark.parametrize("nl", [TANH, SIGM], ids=["tanh", "sigmoid"])
    def test_log_derivative_matches_finite_difference(self, nl):
        t = make_rng(4, "fd").uniform(-8, 8, 100)
        t = t[np.abs(np.abs(t) - nl.knot) > 1e-3]
        d = 1e-6
        fd = (nl(t + d) - nl(t - d)) / (2 * d)
        np.testing.assert_allclose(nl.log_abs_deriv(t), np.log(fd), atol=1e-6)

    @pytest.mark.parametrize("nl", [TANH, SIGM], ids=["tanh", "sigmoid"])
    def test_log_deriv_grad(self, nl):
        t = make_rng(5, "fd").uniform(-8, 8, 50)
        t = t[np.abs(np.abs(t) - nl.knot) > 1e-3]
        d = 1e-6
        fd = (nl.log_abs_deriv(t + d) - nl.log_abs_deriv(t - d)) / (2 * d)
        np.testing.assert_allclose(nl.log_deriv_grad(t), fd, atol=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(a=st.floats(-1e3, 1e3), b=st.floats(-1e3, 1e3))
    def test_strictly_increasing(self, a, b):
        for nl in (TANH, SIGM):
            assert nl.derivative(a) >= 0.01 - 1e-15
            if a < b:
                assert nl(a) <= nl(b)

    @pytest.mark.parametrize("kind,c", [("tanh", 0.0), ("tanh", 1.0), ("sigmoid", 0.25), ("relu", 0.01)])
    def test_invalid(self, kind, c):
        with pytest.raises(ValueError):
            InvertibleNonlinearity(kind, c)


class TestPseudoLinearLayer:
    def test_identity(self):
        layer = PseudoLinearLayer(np.eye(3), np.zeros(3))
        h = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(linear_forward(layer, h), h)
        np.testing.assert_allclose(linear_pseudo_inverse(layer, h), h, atol=1e-12)

    def test_hand_computed_forward(self):
        layer = PseudoLinearLayer(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.zeros(3))
        np.testing.assert_array_equal(linear_forward(layer, np.array([2.0, 3.0])), [2.0, 3.0, 5.0])

    def test_forward_matches_naive_loops(self, rng):
        w, b, h = rng.standard_normal((5, 3)), rng.standard_normal(5), rng.standard_normal(3)
        naive = [sum(w[i, j] * h[j] for j in range(3)) + b[i] for i in range(5)]
        np.testing.assert_allclose(linear_forward(PseudoLinearLayer(w, b), h), naive, rtol=1e-13)

    def test_orthonormal_columns(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        layer = PseudoLinearLayer(q, np.zeros(5))
        x = q @ np.array([0.3, -1.2])
        np.testing.assert_allclose(linear_pseudo_inverse(layer, x), q.T @ x, atol=1e-10)
        assert linear_log_volume(layer) == pytest.approx(0.0, abs=1e-9)

    def test_round_trip(self, rng):
        layer = PseudoLinearLayer(rng.standard_normal((7, 3)), rng.standard_normal(7))
        h = rng.standard_normal((100, 3))
        np.testing.assert_allclose(layer.pseudo_inverse(layer.forward(h)), h, atol=1e-9)

    def test_least_squares_off_range(self, rng):
        w, b = rng.standard_normal((6, 2)), rng.standard_normal(6)
        x = rng.standard_normal(6)
        expected = np.linalg.lstsq(w, x - b, rcond=None)[0]
        np.testing.assert_allclose(PseudoLinearLayer(w, b).pseudo_inverse(x), expected, atol=1e-9)

    def test_log_volume_values(self):
        assert linear_log_volume(PseudoLinearLayer(2 * np.eye(2), np.zeros(2))) == pytest.approx(np.log(4.0))
        w = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        assert linear_log_volume(PseudoLinearLayer(w, np.zeros(3))) == pytest.approx(0.0, abs=1e-9)

    def test_rank_deficient(self):
        layer = PseudoLinearLayer(np.array([[1.0, 1.0], [2.0, 2.0]]), np.zeros(2))
        with pytest.raises(NotPositiveDefinite):
            linear_pseudo_inverse(layer, np.ones(2))

    def test_shape_checks(self):
        with pytest.raises(DimensionMismatch):
            PseudoLinearLayer(np.ones((2, 3)), np.zeros(2))
        with pytest.raises(DimensionMismatch):
            PseudoLinearLayer(np.eye(2), np.zeros(3))
        with pytest.raises(DimensionMismatch):
            PseudoLinearLayer(np.eye(2), np.zeros(2)).forward(np.ones(3))


class TestInvertibleNet:
    def test_zero_net_forward_and_rejected_inverse(self):
        net = InvertibleNet([PseudoLinearLayer(np.zeros((4, 2)), np.zeros(4)),
                             PseudoLinearLayer(np.zeros((5, 4)), np.zeros(5))], [TANH, SIGM])
        np.testing.assert_array_equal(net_forward(net, np.array([1.0, -1.0])), np.full(5, 0.5))
        with pytest.raises(NotPositiveDefinite):
            net_inverse(net, np.full(5, 0.5))

    def test_forward_matches_layerwise_composition(self, rng):
        net = InvertibleNet.perceptron(3, 8, 12, rng)
        h = rng.standard_normal(3)
        l1, l2 = net.layers
        expected = SIGM(l2.weight @ TANH(l1.weight @ h + l1.bias) + l2.bias)
        np.testing.assert_allclose(net_forward(net, h), expected, rtol=1e-13)

    def test_perceptron_default_dims(self):
        net = InvertibleNet.perceptron(2, rng=make_rng(0))
        assert (net.input_dim, net.layers[0].out_dim, net.output_dim) == (2, 600, 784)
        assert [a.kind for a in net.activations] == ["tanh", "sigmoid"]
        assert not net.is_square

    def test_round_trip_both_regimes(self):
        rng = make_rng(7, "roundtrip")
        net = InvertibleNet.perceptron(2, 6, 9, rng)
        # large-norm codes push pre-activations into the linear tails
        h = rng.standard_normal((1000, 2)) * rng.choice([0.5, 20.0], size=(1000, 1))
        _, pre = net.forward(h, return_pre=True)
        assert np.mean(np.abs(pre[0]) > TANH.knot) > 0.1
        assert np.mean(np.abs(pre[0]) < TANH.knot) > 0.1
        np.testing.assert_allclose(net_inverse(net, net_forward(net, h)), h, atol=1e-8)

    def test_square_inverse_is_forward_of_inverse_parameters(self, rng):
        w, b = rng.standard_normal((3, 3)) + 3 * np.eye(3), rng.standard_normal(3)
        net = InvertibleNet([PseudoLinearLayer(w, b)], [None])
        wi = np.linalg.inv(w)
        inv_net = InvertibleNet([PseudoLinearLayer(wi, -wi @ b)], [None])
        x = rng.standard_normal((5, 3))
        np.testing.assert_allclose(net_inverse(net, x), net_forward(inv_net, x), atol=1e-10)

    def test_log_volume_matches_finite_difference_jacobian(self):
        for seed in range(10):
            rng = make_rng(seed, "volume")
            net = random_square_net(rng)
            for h in rng.standard_normal((5, 2)) * 2.0:
                assert net_log_volume(net, h) == pytest.approx(fd_logdet(net, h), abs=1e-4)

    def test_log_volume_closed_form_in_tails(self):
        net = InvertibleNet([PseudoLinearLayer(np.diag([2.0, 3.0]), np.zeros(2)),
                             PseudoLinearLayer(np.diag([4.0, 5.0]), np.zeros(2))], [TANH, SIGM])
        h = np.array([10.0, -10.0])
        expected = np.log(6.0) + np.log(20.0) + 4 * np.log(0.01)
        # the Gram jitter perturbs log det by about 1e-10
        assert net_log_volume(net, h) == pytest.approx(expected, rel=1e-9)

    def test_log_volume_batched(self, rng):
        net = random_square_net(rng)
        h = rng.standard_normal((4, 2))
        np.testing.assert_allclose(net.log_volume(h), [net.log_volume(v) for v in h])

    def test_dimension_errors(self, rng):
        net = InvertibleNet.perceptron(2, 4, 6, rng)
        with pytest.raises(DimensionMismatch):
            net.forward(np.ones(3))
        with pytest.raises(DimensionMismatch):
            net.inverse(np.ones(5))
        with pytest.raises(DimensionMismatch):
            InvertibleNet([PseudoLinearLayer(np.eye(2), np.zeros(2)),
                           PseudoLinearLayer(np.ones((4, 3)), np.zeros(4))], [None, None])

    def test_forward_backward_matches_finite_difference(self, rng):
        net = InvertibleNet.perceptron(2, 4, 5, rng)
        h = rng.standard_normal((3, 2))
        gout = rng.standard_normal((3, 5))
        grads, gh = net.forward_backward(h, gout)
        for name, p in net.params.items():
            fd = central_diff(lambda: np.sum(gout * net.forward(h)), p)
            assert rel_err(grads[name], fd) < 1e-6, name
        fd_h = central_diff(lambda: np.sum(gout * net.forward(h)), h)
        assert rel_err(gh, fd_h) < 1e-6

    @pytest.mark.parametrize("volume_weight", [0.0, 1.0])
    def test_inverse_backward_matches_finite_difference(self, rng, volume_weight):
        # the volume gradient is exact for square nets, where every x is in range
        net = InvertibleNet.perceptron(2, 3, 4, rng) if volume_weight == 0 else random_square_net(rng)
        x = net.forward(rng.standard_normal((4, 2)))
        gl = rng.standard_normal((4, 2))

        def objective():
            h = net.inverse(x)
            return np.sum(gl * h) - volume_weight * np.sum(net.log_volume(h))

        cache = InverseCache()
        net.inverse(x, cache)
        grads = net.inverse_backward(cache, gl, volume_weight)
        for name, p in net.params.items():
            assert rel_err(grads[name], central_diff(objective, p)) < 1e-5, name
