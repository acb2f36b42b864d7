import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from mixgan.data import FeatureDataset
from mixgan.mixup import MixupConfig, make_mixed_batch, mix_arrays, mix_pair, sample_lambda, sample_lambdas

finite = st.floats(-1e6, 1e6, allow_nan=False)


def tiny_dataset(n=12, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureDataset.from_arrays(rng.standard_normal((n, d)), rng.integers(0, 4, n))


class TestMixPair:
    def test_lambda_one_returns_first(self):
        x, y = mix_pair([1.5, -2.0], [1, 0], [7.0, 8.0], [0, 1], 1.0)
        assert x.tolist() == [1.5, -2.0] and y.tolist() == [1, 0]

    def test_lambda_zero_returns_second(self):
        x, y = mix_pair([1.5, -2.0], [1, 0], [7.0, 8.0], [0, 1], 0.0)
        assert x.tolist() == [7.0, 8.0] and y.tolist() == [0, 1]

    def test_quarter(self):
        x, y = mix_pair([4.0, 0.0], [1.0, 0.0], [0.0, 4.0], [0.0, 1.0], 0.25)
        assert x.tolist() == [1.0, 3.0]
        assert y.tolist() == [0.25, 0.75]

    def test_endpoint_keeps_negative_zero(self):
        x, _ = mix_pair([-0.0], [1.0], [5.0], [0.0], 1.0)
        assert np.signbit(x[0])

    @pytest.mark.parametrize("lam", [-0.1, 1.1])
    def test_rejects_lambda_out_of_range(self, lam):
        with pytest.raises(ValueError):
            mix_pair([0.0], [1.0], [1.0], [0.0], lam)

    def test_rejects_dim_mismatch(self):
        with pytest.raises(ValueError):
            mix_pair([0.0, 1.0], [1.0], [1.0], [0.0], 0.5)
        with pytest.raises(ValueError):
            mix_pair([0.0], [1.0, 0.0], [1.0], [0.0], 0.5)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite),
       st.floats(0.0, 1.0), st.integers(0, 3), st.integers(0, 3))
def test_convexity_and_label_mass(xi, xj, lam, ci, cj):
    yi, yj = np.eye(4)[ci], np.eye(4)[cj]
    x, y = mix_pair(xi, yi, xj, yj, lam)
    lo, hi = np.minimum(xi, xj), np.maximum(xi, xj)
    slack = 1e-9 * np.maximum(1.0, np.abs(hi))
    assert np.all(x >= lo - slack) and np.all(x <= hi + slack)
    assert abs(y.sum() - 1.0) < 1e-9


class TestSampleLambda:
    def test_real_fraction_one(self):
        rng = np.random.default_rng(0)
        cfg = MixupConfig(alpha=0.4, real_fraction=1.0)
        draws = {sample_lambda(cfg, rng) for _ in range(500)}
        assert draws == {0.0, 1.0}

    def test_uniform_when_alpha_one(self):
        lam = sample_lambdas(MixupConfig(alpha=1.0, real_fraction=0.0), np.random.default_rng(1), 100_000)
        assert stats.kstest(lam, "uniform").statistic < 0.01

    @pytest.mark.parametrize("alpha", [0.2, 1.0, 2.0])
    def test_symmetric_mean(self, alpha):
        lam = sample_lambdas(MixupConfig(alpha=alpha, real_fraction=0.0), np.random.default_rng(2), 100_000)
        assert abs(lam.mean() - 0.5) < 0.01

    def test_endpoints_equal_odds(self):
        lam = sample_lambdas(MixupConfig(real_fraction=1.0), np.random.default_rng(3), 20_000)
        assert abs(lam.mean() - 0.5) < 0.02

    def test_bad_config(self):
        with pytest.raises(ValueError):
            MixupConfig(alpha=0.0)
        with pytest.raises(ValueError):
            MixupConfig(real_fraction=1.5)


class TestMixedBatch:
    def test_all_real_rows_are_dataset_rows(self):
        data = tiny_dataset()
        batch = make_mixed_batch(data, 40, MixupConfig(real_fraction=1.0), np.random.default_rng(0))
        assert batch.is_real.all()
        for row in batch.x_tilde:
            assert any(np.array_equal(row, r) for r in data.features)

    def test_recomputation_from_sources(self):
        data = tiny_dataset()
        b = make_mixed_batch(data, 200, MixupConfig(alpha=0.7, real_fraction=0.3), np.random.default_rng(4))
        i, j = b.source_indices.T
        lam = b.lam[:, None]
        expected = lam * data.features[i] + (1 - lam) * data.features[j]
        assert np.max(np.abs(b.x_tilde - expected)) < 1e-12
        assert np.max(np.abs(b.y_tilde - (lam * data.one_hot[i] + (1 - lam) * data.one_hot[j]))) < 1e-12

    def test_shape_and_range(self):
        b = make_mixed_batch(tiny_dataset(), 17, MixupConfig(), np.random.default_rng(5))
        assert len(b) == 17 and b.x_tilde.shape == (17, 3)
        assert np.all((b.lam >= 0) & (b.lam <= 1))

    def test_is_real_iff_endpoint(self):
        b = make_mixed_batch(tiny_dataset(), 500, MixupConfig(alpha=0.3), np.random.default_rng(6))
        assert np.array_equal(b.is_real, (b.lam == 0.0) | (b.lam == 1.0))
        assert 0 < b.is_real.sum() < 500

    def test_real_rows_bit_exact(self):
        data = tiny_dataset()
        b = make_mixed_batch(data, 300, MixupConfig(), np.random.default_rng(7))
        for row, (i, j), lam in zip(b.x_tilde[b.is_real], b.source_indices[b.is_real], b.lam[b.is_real]):
            src = data.features[i] if lam == 1.0 else data.features[j]
            assert row.tobytes() == src.tobytes()

    def test_soft_labels_sum_to_one(self):
        b = make_mixed_batch(tiny_dataset(), 100, MixupConfig(), np.random.default_rng(8))
        assert np.max(np.abs(b.y_tilde.sum(axis=1) - 1.0)) < 1e-9

    def test_first_partner_fixed(self):
        data = tiny_dataset()
        first = np.array([3, 1, 4, 1, 5])
        b = mix_arrays(data.features, data.one_hot, 99, MixupConfig(), np.random.default_rng(0), first=first)
        assert len(b) == 5 and b.source_indices[:, 0].tolist() == first.tolist()

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            mix_arrays(np.zeros((0, 3)), np.zeros((0, 4)), 4, MixupConfig(), np.random.default_rng(0))

    def test_seeded(self):
        a = make_mixed_batch(tiny_dataset(), 30, MixupConfig(), np.random.default_rng(9))
        b = make_mixed_batch(tiny_dataset(), 30, MixupConfig(), np.random.default_rng(9))
        assert np.array_equal(a.x_tilde, b.x_tilde) and np.array_equal(a.lam, b.lam)
