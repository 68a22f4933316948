import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsaliency import autodiff as ad
from tsaliency.data import SeriesImage
from tsaliency.mask import (
    Mask,
    apply_mask,
    apply_mask_node,
    export_mask_csv,
    size_penalty,
    smoothness_penalty,
)


def image_from(values):
    values = np.asarray(values, dtype=np.float64)
    return SeriesImage(values, 0, values.shape[0], 1)


class TestApplyMask:
    def test_mask_zero_keeps_original(self):
        rng = np.random.default_rng(0)
        img = image_from(rng.normal(size=(5, 3)))
        ref = image_from(rng.normal(size=(5, 3)))
        mask = Mask(5, 3, init_logit=-40.0)
        out = apply_mask(img, ref, mask)
        assert np.abs(out.values - img.values).max() < 1e-12

    def test_mask_one_takes_reference(self):
        rng = np.random.default_rng(1)
        img = image_from(rng.normal(size=(5, 3)))
        ref = image_from(rng.normal(size=(5, 3)))
        mask = Mask(5, 3, init_logit=40.0)
        out = apply_mask(img, ref, mask)
        assert np.abs(out.values - ref.values).max() < 1e-12

    def test_hand_blend(self):
        img = image_from([[2.0]])
        ref = image_from([[0.0]])
        mask = Mask(1, 1)
        mask.logits.value[...] = np.log(0.25 / 0.75)   # sigmoid -> 0.25
        out = apply_mask(img, ref, mask)
        assert out.values[0, 0] == pytest.approx(1.5, abs=1e-12)

    def test_shape_mismatch(self):
        img = image_from(np.zeros((4, 2)))
        ref = image_from(np.zeros((3, 2)))
        with pytest.raises(ad.ShapeError):
            apply_mask(img, ref, Mask(4, 2))

    def test_cells_stay_on_segment(self):
        rng = np.random.default_rng(2)
        img = image_from(rng.normal(size=(6, 2)))
        ref = image_from(rng.normal(size=(6, 2)))
        mask = Mask(6, 2)
        mask.logits.value[...] = rng.normal(size=(6, 2)) * 3
        out = apply_mask(img, ref, mask).values
        lo = np.minimum(img.values, ref.values)
        hi = np.maximum(img.values, ref.values)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_gradient_wrt_logits_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        img = ad.constant(rng.normal(size=(4, 3)))
        ref = ad.constant(rng.normal(size=(4, 3)))
        logits = ad.parameter(rng.uniform(-3, 3, size=(4, 3)))

        def f(ps):
            perturbed = apply_mask_node(img, ref, ad.sigmoid(ps[0]))
            return ad.tensor_sum(perturbed * perturbed)

        assert ad.grad_check(f, [logits], h=1e-5) < 1e-4

    def test_gradient_flows_to_image_and_reference(self):
        rng = np.random.default_rng(4)
        img = ad.parameter(rng.normal(size=(3, 2)))
        ref = ad.parameter(rng.normal(size=(3, 2)))
        mask = Mask(3, 2)

        def f(ps):
            perturbed = apply_mask_node(ps[0], ps[1], mask.values_node())
            return ad.tensor_sum(perturbed * perturbed)

        assert ad.grad_check(f, [img, ref], h=1e-5) < 1e-4


class TestSizePenalty:
    def test_zero_mask_any_norm(self):
        mask = Mask(2, 2, init_logit=-40.0)
        for p0 in (1, 2, 3):
            assert float(size_penalty(mask, p0).value) < 1e-12

    def test_half_mask_two_norm(self):
        mask = Mask(2, 2)   # logits 0 -> values exactly 0.5
        assert float(size_penalty(mask, 2).value) == pytest.approx(1.0, abs=1e-12)

    def test_full_mask_complement_is_zero(self):
        mask = Mask(3, 2, init_logit=40.0)
        assert float(size_penalty(mask, 2, complement=True).value) < 1e-12

    def test_three_norm_hand_value(self):
        mask = Mask(2, 2)
        expected = (4 * 0.5 ** 3) ** (1.0 / 3.0)
        assert float(size_penalty(mask, 3).value) == pytest.approx(expected, abs=1e-12)

    def test_invalid_p0(self):
        with pytest.raises(ValueError):
            size_penalty(Mask(2, 2), 4)


class TestSmoothnessPenalty:
    def test_constant_mask_is_smooth(self):
        mask = Mask(4, 3, init_logit=0.7)
        assert float(smoothness_penalty(mask, True).value) == pytest.approx(0.0, abs=1e-12)
        assert float(smoothness_penalty(mask, False).value) == pytest.approx(0.0, abs=1e-12)

    def test_hand_checkerboard(self):
        values = ad.constant([[0.0, 1.0], [0.0, 1.0]])
        assert float(smoothness_penalty(values, True).value) == pytest.approx(2.0, abs=1e-12)
        assert float(smoothness_penalty(values, False).value) == pytest.approx(0.0, abs=1e-12)

    def test_single_cell_mask(self):
        assert float(smoothness_penalty(Mask(1, 1), True).value) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10**6))
    def test_time_reversal_invariance(self, w, d, seed):
        logits = np.random.default_rng(seed).normal(size=(w, d))
        fwd = Mask.from_logits(logits)
        rev = Mask.from_logits(logits[::-1])
        for pen in (lambda m: size_penalty(m, 2),
                    lambda m: size_penalty(m, 2, complement=True),
                    lambda m: smoothness_penalty(m, True),
                    lambda m: smoothness_penalty(m, False)):
            assert float(pen(fwd).value) == pytest.approx(float(pen(rev).value),
                                                          abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 10**6))
    def test_time_only_variant_is_feature_permutation_invariant(self, w, d, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(w, d))
        perm = rng.permutation(d)
        a = smoothness_penalty(Mask.from_logits(logits), False)
        b = smoothness_penalty(Mask.from_logits(logits[:, perm]), False)
        assert float(a.value) == pytest.approx(float(b.value), abs=1e-12)

    def test_full_variant_is_not_feature_permutation_invariant(self):
        logits = np.array([[0.0, 2.0, -2.0], [0.5, 2.5, -1.5]])
        perm = [1, 0, 2]
        a = smoothness_penalty(Mask.from_logits(logits), True)
        b = smoothness_penalty(Mask.from_logits(logits[:, perm]), True)
        assert abs(float(a.value) - float(b.value)) > 1e-6


def test_mask_values_strictly_inside_unit_interval():
    mask = Mask.from_logits(np.array([[-50.0, 0.0], [50.0, 3.0]]))
    values = mask.values()
    assert values.min() > 0.0 or values.min() == pytest.approx(0.0, abs=1e-15)
    # sigmoid parameterization is monotone in the logits
    order = np.argsort(mask.logits.value.ravel())
    assert np.all(np.diff(values.ravel()[order]) >= 0)


def test_export_mask_csv_six_decimals(tmp_path):
    mask = Mask.from_logits(np.array([[0.0, 1.0]]))
    path = tmp_path / "mask.csv"
    export_mask_csv(mask.values(), path)
    text = path.read_text().strip()
    assert text == "0.500000,0.731059"
