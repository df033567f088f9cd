import numpy as np
import pytest

from selforder import autodiff as ad
from selforder import backbone
from selforder.backbone import BackboneParams, OrderingModel
from selforder.errors import DimensionError, InputError


@pytest.fixture
def params():
    return BackboneParams.init((3, 16, 32), np.random.default_rng(0))


class TestEncode:
    def test_shape(self):
        p = BackboneParams.init((3, 8, 8), np.random.default_rng(1))
        assert backbone.encode(np.random.default_rng(2).normal(size=(4, 3)), p).shape == (4, 8)

    def test_permutation_equivariant(self, params, rng):
        x = rng.normal(size=(20, 3))
        perm = rng.permutation(20)
        f = backbone.encode(x, params).value
        np.testing.assert_array_equal(backbone.encode(x[perm], params).value, f[perm])

    def test_zero_weights_give_bias(self, params, rng):
        for w in params.encoder.weights:
            w.value[:] = 0.0
        params.encoder.biases[-1].value[:] = np.arange(32)
        f = backbone.encode(rng.normal(size=(5, 3)), params).value
        np.testing.assert_array_equal(f, np.tile(np.arange(32.0), (5, 1)))

    def test_empty_cloud(self, params):
        with pytest.raises(InputError):
            backbone.encode(np.zeros((0, 3)), params)

    def test_wrong_width(self, params):
        with pytest.raises(DimensionError):
            backbone.encode(np.zeros((4, 2)), params)

    @pytest.mark.parametrize("n", [1, 7, 300])
    def test_any_size(self, params, n, rng):
        assert backbone.encode(rng.normal(size=(n, 3)), params).shape == (n, 32)


class TestGlobalFeature:
    def test_values(self):
        np.testing.assert_array_equal(backbone.global_feature([[1.0, 0.0], [0.0, 1.0]]).value, [[1.0, 1.0]])

    def test_one_row(self):
        np.testing.assert_array_equal(backbone.global_feature([[2.0, -3.0]]).value, [[2.0, -3.0]])

    def test_shuffle_invariant(self, rng):
        f = rng.normal(size=(10, 6))
        np.testing.assert_array_equal(
            backbone.global_feature(f[rng.permutation(10)]).value, backbone.global_feature(f).value
        )


class TestEmbed:
    def test_unit_norm(self, params, rng):
        for n in (1, 5, 64):
            e = backbone.embed(rng.normal(size=(n, 3)), params).value
            assert e.shape == (1, backbone.HEAD_DIM)
            assert abs(np.linalg.norm(e) - 1.0) < 1e-12

    def test_unnormalised_is_raw_head(self, params, rng):
        x = rng.normal(size=(9, 3))
        raw = backbone.embed(x, params, normalize=False).value
        np.testing.assert_array_equal(raw, params.head(backbone.global_feature(backbone.encode(x, params))).value)
        np.testing.assert_allclose(raw / np.linalg.norm(raw), backbone.embed(x, params).value, atol=1e-15)

    def test_permutation_invariant(self, params, rng):
        x = rng.normal(size=(30, 3))
        np.testing.assert_array_equal(
            backbone.embed(x[rng.permutation(30)], params).value, backbone.embed(x, params).value
        )

    def test_duplicates(self, params, rng):
        x = rng.normal(size=(12, 3))
        np.testing.assert_array_equal(backbone.embed(np.vstack([x, x]), params).value, backbone.embed(x, params).value)

    def test_gradient_reaches_points(self, params, rng):
        x = ad.Node(rng.normal(size=(6, 3)), requires_grad=True)
        ad.backward(ad.sum_all(backbone.embed(x, params)))
        assert np.any(x.grad != 0)


class TestParams:
    def test_init_is_glorot(self):
        p = BackboneParams.init((3, 64, 128), np.random.default_rng(0))
        w = p.encoder.weights[1].value
        assert np.abs(w).max() <= np.sqrt(6 / (64 + 128))
        assert all(np.all(b.value == 0) for b in p.encoder.biases)

    def test_first_width_must_be_three(self):
        with pytest.raises(DimensionError):
            BackboneParams.init((4, 8), np.random.default_rng(0))

    def test_head_width(self, params):
        assert params.head.widths == [32, backbone.HEAD_DIM, backbone.HEAD_DIM]

    def test_shared_model(self):
        m = OrderingModel.init((3, 8, 16), share_weights=True, seed=0)
        assert m.scorer is m.loss
        assert all(name.startswith("shared.") for name in m.named_parameters())

    def test_separate_model(self):
        m = OrderingModel.init((3, 8, 16), share_weights=False, seed=0)
        names = m.named_parameters()
        assert m.scorer is not m.loss
        assert any(n.startswith("scorer.") for n in names) and any(n.startswith("loss.") for n in names)
        assert not np.array_equal(m.scorer.encoder.weights[0].value, m.loss.encoder.weights[0].value)

    def test_seed_determinism(self):
        a = OrderingModel.init((3, 8, 16), seed=3).named_parameters()
        b = OrderingModel.init((3, 8, 16), seed=3).named_parameters()
        assert all(np.array_equal(a[k].value, b[k].value) for k in a)
