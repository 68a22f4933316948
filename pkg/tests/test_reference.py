import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsaliency.data import SeriesImage
from tsaliency.reference import (
    ReferenceError,
    ReferenceSpec,
    gaussian_blur_1d,
    gaussian_kernel,
    make_reference,
    reference_batch,
)


def image_from(values):
    values = np.asarray(values, dtype=np.float64)
    return SeriesImage(values, start_index=0, window=values.shape[0], horizon=1)


def brute_blur(col, sigma):
    """Independent blur: explicit index folding for symmetric reflection."""
    kernel = gaussian_kernel(sigma)
    radius = (len(kernel) - 1) // 2
    w = len(col)
    out = np.zeros(w)
    for i in range(w):
        for j, kv in enumerate(kernel):
            idx = i + j - radius
            while idx < 0 or idx >= w:
                idx = -idx - 1 if idx < 0 else 2 * w - idx - 1
            out[i] += kv * col[idx]
    return out


class TestSpecValidation:
    def test_bad_mode(self):
        with pytest.raises(ReferenceError):
            ReferenceSpec(mode="fuzz")

    def test_noise_needs_positive_sigma(self):
        with pytest.raises(ReferenceError):
            ReferenceSpec(mode="noise", sigma1=0.0)

    def test_blur_needs_positive_sigma(self):
        with pytest.raises(ReferenceError):
            ReferenceSpec(mode="blur", sigma2=-1.0)


class TestMakeReference:
    def test_noise_vanishing_sigma_is_identity(self):
        img = image_from(np.random.default_rng(0).normal(size=(8, 3)))
        ref = make_reference(img, ReferenceSpec(mode="noise", sigma1=1e-12, seed=1))
        np.testing.assert_allclose(ref.values, img.values, atol=1e-10)

    def test_blur_of_constant_column_unchanged(self):
        img = image_from(np.full((9, 2), 3.25))
        ref = make_reference(img, ReferenceSpec(mode="blur", sigma2=2.0))
        np.testing.assert_allclose(ref.values, img.values, atol=1e-12)

    def test_blur_impulse_reads_off_kernel(self):
        # radius ceil(3*2)=6 fits inside a length-31 column with no folding
        col = np.zeros(31)
        col[15] = 1.0
        img = image_from(col[:, None])
        ref = make_reference(img, ReferenceSpec(mode="blur", sigma2=2.0))
        kernel = np.exp(-np.arange(-6, 7) ** 2 / (2 * 2.0 ** 2))
        kernel /= kernel.sum()
        assert abs(kernel.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(ref.values[9:22, 0], kernel, atol=1e-12)

    def test_blur_near_edges_matches_fold_oracle(self):
        col = np.zeros(11)
        col[5] = 1.0
        img = image_from(col[:, None])
        ref = make_reference(img, ReferenceSpec(mode="blur", sigma2=2.0))
        np.testing.assert_allclose(ref.values[:, 0], brute_blur(col, 2.0), atol=1e-12)

    def test_constant_mode_uses_feature_means(self):
        img = image_from(np.arange(12.0).reshape(6, 2))
        ref = make_reference(img, ReferenceSpec(mode="constant"),
                             feature_means=np.array([10.0, -1.0]))
        np.testing.assert_allclose(ref.values[:, 0], 10.0)
        np.testing.assert_allclose(ref.values[:, 1], -1.0)

    def test_constant_mode_without_means_is_error(self):
        img = image_from(np.ones((4, 2)))
        with pytest.raises(ReferenceError, match="means"):
            make_reference(img, ReferenceSpec(mode="constant"))

    def test_identity_mode(self):
        img = image_from(np.random.default_rng(3).normal(size=(5, 2)))
        ref = make_reference(img, ReferenceSpec(mode="identity"))
        np.testing.assert_array_equal(ref.values, img.values)

    def test_deterministic_given_seed(self):
        img = image_from(np.random.default_rng(4).normal(size=(6, 2)))
        spec = ReferenceSpec(mode="noise", sigma1=0.5, seed=9)
        a = make_reference(img, spec)
        b = make_reference(img, spec)
        np.testing.assert_array_equal(a.values, b.values)
        c = make_reference(img, ReferenceSpec(mode="noise", sigma1=0.5, seed=10))
        assert not np.array_equal(a.values, c.values)

    def test_noise_keyed_by_sample_index(self):
        values = np.random.default_rng(5).normal(size=(6, 2))
        spec = ReferenceSpec(mode="noise", sigma1=0.5, seed=0)
        img0 = SeriesImage(values, start_index=0, window=6, horizon=1)
        img1 = SeriesImage(values, start_index=1, window=6, horizon=1)
        a = make_reference(img0, spec)
        b = make_reference(img1, spec)
        assert not np.array_equal(a.values, b.values)


class TestGaussianBlur1d:
    def test_single_point_column(self):
        np.testing.assert_array_equal(gaussian_blur_1d(np.array([4.0]), 2.0), [4.0])

    def test_linear_ramp_interior_unchanged(self):
        ramp = np.arange(40.0)
        out = gaussian_blur_1d(ramp, 2.0)
        radius = 6
        np.testing.assert_allclose(out[radius:-radius], ramp[radius:-radius],
                                   atol=1e-9)

    def test_impulse_response_symmetric(self):
        col = np.zeros(25)
        col[12] = 1.0
        out = gaussian_blur_1d(col, 1.5)
        np.testing.assert_allclose(out, out[::-1], atol=1e-15)

    def test_mean_preserved_on_symmetric_inputs(self):
        for col in (np.array([1.0, 2.0, 3.0, 2.0, 1.0]),
                    np.array([0.0, 1.0, 4.0, 9.0, 4.0, 1.0, 0.0])):
            out = gaussian_blur_1d(col, 2.0)
            assert abs(out.mean() - col.mean()) < 1e-9

    def test_invalid_sigma(self):
        with pytest.raises(ReferenceError):
            gaussian_blur_1d(np.ones(5), 0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 40), st.floats(0.3, 4.0), st.integers(0, 10**6))
    def test_blur_preserves_value_range(self, w, sigma, seed):
        col = np.random.default_rng(seed).normal(size=w)
        out = gaussian_blur_1d(col, sigma)
        assert out.min() >= col.min() - 1e-12
        assert out.max() <= col.max() + 1e-12

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 30), st.floats(0.3, 3.0), st.integers(0, 10**6))
    def test_matches_fold_oracle(self, w, sigma, seed):
        col = np.random.default_rng(seed).normal(size=w)
        np.testing.assert_allclose(gaussian_blur_1d(col, sigma),
                                   brute_blur(col, sigma), atol=1e-12)


def test_batch_matches_per_sample():
    rng = np.random.default_rng(6)
    images = rng.normal(size=(4, 7, 2))
    starts = np.array([3, 9, 11, 20])
    spec = ReferenceSpec(mode="noise", sigma1=0.4, seed=2)
    batch = reference_batch(images, starts, spec, salt=5)
    for i in range(4):
        single = make_reference(
            SeriesImage(images[i], int(starts[i]), 7, 1), spec, salt=5)
        np.testing.assert_array_equal(batch[i], single.values)
