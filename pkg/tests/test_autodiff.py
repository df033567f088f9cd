import math

import numpy as np
import pytest

from selforder import autodiff as ad
from selforder.errors import ContractError, DimensionError, ParameterError

from conftest import check_grad


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(2, 2))
        np.testing.assert_array_equal(ad.matmul(np.eye(2), m).value, m)

    def test_hand_product(self):
        out = ad.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        np.testing.assert_array_equal(out.value, [[3.0], [7.0]])

    def test_grad_of_sum_is_ones_times_bt(self, rng):
        a = ad.Node(rng.normal(size=(3, 4)), requires_grad=True)
        b = rng.normal(size=(4, 2))
        ad.backward(ad.sum_all(ad.matmul(a, b)))
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.T, atol=1e-12)
        b_const = b.copy()
        err = check_grad(lambda x: ad.sum_all(ad.matmul(x, b_const)), a.value)
        assert err < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestSigmoidTemp:
    @pytest.mark.parametrize("tau", [0.1, 0.5, 2.0])
    def test_zero_is_half(self, tau):
        assert ad.sigmoid_temp([[0.0]], tau).value[0, 0] == 0.5

    def test_closed_form(self):
        tau = 0.7
        out = ad.sigmoid_temp([[tau * math.log(3.0)]], tau).value[0, 0]
        assert out == pytest.approx(0.75, abs=1e-15)

    @pytest.mark.parametrize("tau", [0.25, 1.0])
    def test_derivative_at_zero(self, tau):
        x = ad.Node([[0.0]], requires_grad=True)
        ad.backward(ad.sigmoid_temp(x, tau))
        assert x.grad[0, 0] == pytest.approx(1 / (4 * tau), rel=1e-12)
        assert check_grad(lambda v: ad.sigmoid_temp(v, tau), np.zeros((1, 1))) < 1e-4

    def test_bad_tau(self):
        with pytest.raises(ParameterError):
            ad.sigmoid_temp([[1.0]], 0.0)

    def test_no_overflow(self):
        out = ad.sigmoid_temp([[-1e4, 1e4]], 0.01).value
        assert np.all(np.isfinite(out))


class TestMaxpool:
    def test_values(self):
        np.testing.assert_array_equal(ad.maxpool_cols([[1.0, 0.0], [0.0, 1.0]]).value, [[1.0, 1.0]])

    def test_single_row(self):
        np.testing.assert_array_equal(ad.maxpool_cols([[3.0, -1.0, 2.0]]).value, [[3.0, -1.0, 2.0]])

    def test_grad_is_indicator(self, rng):
        f = ad.Node(rng.normal(size=(6, 5)), requires_grad=True)
        ad.backward(ad.sum_all(ad.maxpool_cols(f)))
        assert np.all(f.grad.sum(axis=0) == 1)
        assert set(np.unique(f.grad)) <= {0.0, 1.0}
        assert check_grad(lambda x: ad.sum_all(ad.maxpool_cols(x)), f.value) < 1e-4

    def test_tie_goes_to_lowest_row(self):
        f = ad.Node([[1.0], [1.0]], requires_grad=True)
        ad.backward(ad.sum_all(ad.maxpool_cols(f)))
        np.testing.assert_array_equal(f.grad, [[1.0], [0.0]])

    def test_empty(self):
        with pytest.raises(DimensionError):
            ad.maxpool_cols(np.zeros((0, 3)))

    def test_prefix_maxpool_matches_slices(self, rng):
        f = rng.normal(size=(9, 4))
        sizes = [2, 4, 9]
        out = ad.prefix_maxpool(f, sizes).value
        for k, s in enumerate(sizes):
            np.testing.assert_array_equal(out[k], f[:s].max(axis=0))

    def test_prefix_maxpool_grad(self, rng):
        f = rng.normal(size=(8, 3))
        w = rng.normal(size=(3, 3))
        assert check_grad(lambda x: ad.sum_all(ad.mul(ad.prefix_maxpool(x, [2, 4, 8]), w)), f) < 1e-4


class TestBackward:
    def test_linear(self, rng):
        w = ad.Node(rng.normal(size=(3, 4)), requires_grad=True)
        ad.backward(ad.sum_all(w))
        np.testing.assert_array_equal(w.grad, np.ones((3, 4)))

    def test_quadratic(self, rng):
        w = ad.Node(rng.normal(size=(3, 4)), requires_grad=True)
        ad.backward(ad.sum_all(ad.mul(w, w)))
        np.testing.assert_allclose(w.grad, 2 * w.value, atol=1e-15)

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError):
            ad.backward(ad.Node(np.ones((2, 1)), requires_grad=True))

    def test_unreached_grad_is_zero(self, rng):
        used = ad.Node(rng.normal(size=(2, 2)), requires_grad=True)
        unused = ad.Node(rng.normal(size=(2, 2)), requires_grad=True)
        ad.backward(ad.sum_all(used))
        np.testing.assert_array_equal(unused.grad, np.zeros((2, 2)))

    def test_composite_mlp(self, rng):
        x = rng.normal(size=(5, 3))
        w2 = rng.normal(size=(4, 2))
        b1 = rng.normal(size=(1, 4))

        def build(w1):
            h = ad.relu(ad.add(ad.matmul(x, w1), b1))
            z = ad.l2_normalize_rows(ad.matmul(h, w2))
            return ad.mean_all(ad.exp(ad.scale(z, 0.5)))

        w1 = rng.normal(size=(3, 4))
        assert check_grad(build, w1) < 1e-4

    def test_linearity_of_accumulation(self, rng):
        x0 = rng.normal(size=(3, 3))

        def l1(x):
            return ad.sum_all(ad.square(x))

        def l2(x):
            return ad.mean_all(ad.sigmoid_temp(ad.matmul(x, x), 0.5))

        grads = []
        for build in (l1, l2, lambda x: ad.add(l1(x), l2(x))):
            node = ad.Node(x0, requires_grad=True)
            ad.backward(build(node))
            grads.append(node.grad)
        np.testing.assert_allclose(grads[0] + grads[1], grads[2], atol=1e-12)

    def test_backward_twice_does_not_accumulate(self, rng):
        w = ad.Node(rng.normal(size=(2, 2)), requires_grad=True)
        loss = ad.sum_all(ad.square(w))
        ad.backward(loss)
        first = w.grad.copy()
        ad.backward(loss)
        np.testing.assert_array_equal(w.grad, first)

    def test_forward_is_deterministic(self, rng):
        x = rng.normal(size=(16, 3))
        w = rng.normal(size=(3, 8))

        def run():
            return ad.l2_normalize_rows(ad.maxpool_cols(ad.relu(ad.matmul(x, w)))).value

        assert run().tobytes() == run().tobytes()


# every primitive against central differences at a random point away from kinks
PRIMITIVES = {
    "add": lambda x, c: ad.sum_all(ad.mul(ad.add(x, c), c)),
    "add_broadcast": lambda x, c: ad.sum_all(ad.mul(ad.add(x, c[:1]), c)),
    "sub": lambda x, c: ad.sum_all(ad.mul(ad.sub(c, x), c)),
    "mul": lambda x, c: ad.sum_all(ad.mul(x, x)),
    "div": lambda x, c: ad.sum_all(ad.div(c, ad.add(ad.square(x), 1.0))),
    "div_broadcast": lambda x, c: ad.sum_all(ad.div(x, ad.add(ad.square(ad.slice_rows(x, 0, 1)), 1.0))),
    "scale": lambda x, c: ad.sum_all(ad.mul(ad.scale(x, -2.5), c)),
    "square": lambda x, c: ad.sum_all(ad.mul(ad.square(x), c)),
    "relu": lambda x, c: ad.sum_all(ad.mul(ad.relu(x), c)),
    "exp": lambda x, c: ad.sum_all(ad.mul(ad.exp(x), c)),
    "log": lambda x, c: ad.sum_all(ad.mul(ad.log(ad.add(ad.square(x), 0.5)), c)),
    "sigmoid": lambda x, c: ad.sum_all(ad.mul(ad.sigmoid_temp(x, 0.3), c)),
    "transpose": lambda x, c: ad.sum_all(ad.mul(ad.transpose(ad.transpose(x)), c)),
    "sum_rows": lambda x, c: ad.sum_all(ad.square(ad.sum_rows(ad.mul(x, c)))),
    "sum_cols": lambda x, c: ad.sum_all(ad.square(ad.sum_cols(ad.mul(x, c)))),
    "mean": lambda x, c: ad.square(ad.mean_all(ad.mul(x, c))),
    "maxpool": lambda x, c: ad.sum_all(ad.mul(ad.maxpool_cols(x), c[:1])),
    "logsumexp": lambda x, c: ad.sum_all(ad.mul(ad.logsumexp_rows(x), c[:, :1])),
    "l2norm": lambda x, c: ad.sum_all(ad.mul(ad.l2_normalize_rows(x), c)),
    "soft_gather": lambda x, c: ad.sum_all(ad.square(ad.soft_gather(x, c))),
    "slice_concat": lambda x, c: ad.sum_all(
        ad.mul(ad.concat_rows([ad.slice_rows(x, 2, 4), ad.slice_rows(x, 0, 2)]), c)
    ),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_finite_difference(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    x = rng.normal(size=(4, 4))
    x[np.abs(x) < 0.05] += 0.2  # stay off relu kinks
    c = rng.normal(size=(4, 4))
    assert check_grad(lambda v: PRIMITIVES[name](v, c), x) < 1e-4


def test_leaf_must_be_finite():
    with pytest.raises(ParameterError):
        ad.Node([[np.nan]])


def test_broadcast_mismatch():
    with pytest.raises(DimensionError):
        ad.add(np.ones((2, 3)), np.ones((3, 2)))
