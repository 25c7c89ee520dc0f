"""Synthetic datasets and batch streaming."""

import numpy as np
import pytest

from stn.data import BatchStream, Split, make_classification, make_regression, make_tiny_images


class TestRegression:
    def test_spectrum(self):
        spectrum = np.array([4.0, 2.0, 1.0, 0.5, 0.25])
        ds = make_regression(5, 40, spectrum, seed=1)
        np.testing.assert_allclose(np.linalg.svd(ds.train.x, compute_uv=False), spectrum, atol=1e-8)

    def test_noiseless_square_recovery(self):
        ds = make_regression(4, 4, [3.0, 2.0, 1.0, 0.5], noise_std=0.0, seed=2)
        w = np.linalg.solve(ds.train.x, ds.train.y)
        np.testing.assert_allclose(w, ds.meta["w_true"], atol=1e-10)

    def test_deterministic(self):
        a = make_regression(3, 10, [1.0, 1.0, 1.0], noise_std=0.3, seed=3)
        b = make_regression(3, 10, [1.0, 1.0, 1.0], noise_std=0.3, seed=3)
        np.testing.assert_array_equal(a.train.x, b.train.x)
        np.testing.assert_array_equal(a.valid.y, b.valid.y)

    def test_invalid(self):
        with pytest.raises(ValueError):
            make_regression(3, 2, [1.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            make_regression(2, 5, [1.0, 0.0])


class TestClassification:
    def test_flip_count(self):
        clean = make_classification(6, 200, label_noise=0.0, seed=4)
        noisy = make_classification(6, 200, label_noise=0.1, seed=4)
        assert np.sum(clean.train.y != noisy.train.y) == round(0.1 * 200)

    def test_balanced_before_noise(self):
        ds = make_classification(3, 90, n_classes=3, seed=5)
        np.testing.assert_array_equal(np.bincount(ds.train.y), [30, 30, 30])

    def test_linearly_separable_when_clean(self):
        ds = make_classification(10, 300, label_noise=0.0, separation=12.0, seed=6)
        X = np.hstack([ds.train.x, np.ones((300, 1))])
        w = np.linalg.lstsq(X, 2.0 * ds.train.y - 1.0, rcond=None)[0]
        assert np.mean((X @ w > 0) == ds.train.y) >= 0.99

    def test_invalid(self):
        with pytest.raises(ValueError):
            make_classification(3, 10, label_noise=0.5)
        with pytest.raises(ValueError):
            make_classification(3, 10, n_classes=1)


class TestTinyImages:
    def test_range_shape_balance(self):
        ds = make_tiny_images(side=8, N=40, seed=7)
        assert ds.train.x.shape == (40, 1, 8, 8)
        assert ds.train.x.min() >= 0.0 and ds.train.x.max() <= 1.0
        np.testing.assert_array_equal(np.bincount(ds.train.y), [20, 20])

    def test_side_limit(self):
        with pytest.raises(ValueError):
            make_tiny_images(side=17)


class TestBatchStream:
    def test_covers_every_row_each_pass(self):
        split = Split(np.arange(10.0)[:, None], np.arange(10))
        stream = BatchStream(split, 4, np.random.default_rng(0))
        assert stream.batches_per_epoch == 3
        seen = np.concatenate([stream.next().y for _ in range(3)])
        np.testing.assert_array_equal(np.sort(seen), np.arange(10))

    def test_data_free(self):
        stream = BatchStream(None, 4, np.random.default_rng(0), steps_per_epoch=7)
        assert stream.batches_per_epoch == 7 and stream.next() is None

    def test_empty(self):
        with pytest.raises(ValueError):
            BatchStream(Split(np.zeros((0, 2)), np.zeros(0)), 4, np.random.default_rng(0))
