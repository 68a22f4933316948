import numpy as np
import pytest

from tsaliency import autodiff as ad
from tsaliency.data import SeriesImage
from tsaliency.models import (
    ARModel,
    AttentionForecaster,
    Forecaster,
    GRUForecaster,
    MLPForecaster,
    ModelConfig,
    ModelError,
    TemporalCNNForecaster,
    ar_forecast,
    build_forecaster,
    combine,
    load_checkpoint,
    neural_forecast,
    save_checkpoint,
    sinusoidal_positions,
)


def image_from(values, horizon=1):
    values = np.asarray(values, dtype=np.float64)
    return SeriesImage(values, 0, values.shape[0], horizon)


class TestARModel:
    def test_order_zero_identity(self):
        ar = ARModel(2, order=0)
        ar.weights.value[...] = 1.0
        ar.bias.value[...] = 0.0
        img = image_from([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(ar_forecast(ar, img), [3.0, 4.0])

    def test_hand_example_order_one(self):
        # newest value 3, previous 2, w0 = w1 = 0.5, bias 1 -> 3.5
        ar = ARModel(1, order=1)
        ar.weights.value[...] = [[0.5, 0.5]]
        ar.bias.value[...] = [1.0]
        img = image_from([[0.0], [9.0], [2.0], [3.0]])
        assert ar_forecast(ar, img)[0] == pytest.approx(0.5 * 3 + 0.5 * 2 + 1)

    def test_ar50_runs_on_long_windows(self):
        ar = ARModel(2, order=50)
        img = image_from(np.random.default_rng(0).normal(size=(300, 2)))
        assert ar_forecast(ar, img).shape == (2,)

    def test_window_shorter_than_order_errors(self):
        ar = ARModel(1, order=5)
        img = image_from(np.zeros((4, 1)))
        with pytest.raises(ModelError, match="order"):
            ar_forecast(ar, img)

    def test_linearity_with_zero_bias(self):
        rng = np.random.default_rng(7)
        ar = ARModel(3, order=4, rng=rng)
        ar.bias.value[...] = 0.0
        x1 = rng.normal(size=(8, 3))
        x2 = rng.normal(size=(8, 3))
        a, b = 1.7, -0.4
        lhs = ar_forecast(ar, image_from(a * x1 + b * x2))
        rhs = a * ar_forecast(ar, image_from(x1)) + b * ar_forecast(ar, image_from(x2))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_only_own_history_matters(self):
        # per-feature AR: feature 0 output ignores feature 1 values
        rng = np.random.default_rng(8)
        ar = ARModel(2, order=3, rng=rng)
        x = rng.normal(size=(6, 2))
        y1 = ar_forecast(ar, image_from(x))
        x2 = x.copy()
        x2[:, 1] += 5.0
        y2 = ar_forecast(ar, image_from(x2))
        assert y1[0] == pytest.approx(y2[0], abs=1e-12)
        assert y1[1] != pytest.approx(y2[1], abs=1e-6)


class TestNeuralVariants:
    def test_mlp_all_zero_weights_returns_bias(self):
        mlp = MLPForecaster(4, 2, hidden=8)
        for name in ("w1", "w2", "b1"):
            mlp.params[name].value[...] = 0.0
        mlp.params["b2"].value[...] = [0.3, -0.7]
        out = neural_forecast(mlp, image_from(np.random.default_rng(0).normal(size=(4, 2))))
        np.testing.assert_allclose(out, [0.3, -0.7])

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_gru_hidden_state_converges_on_constant_input(self, seed):
        rng = np.random.default_rng(seed)
        gru = GRUForecaster(12, 3, hidden=8, rng=rng)
        row = rng.normal(size=(1, 1, 3))
        x = ad.constant(np.tile(row, (1, 12, 1)))
        states = [s.value for s in gru.hidden_states(x)]
        diffs = [float(np.linalg.norm(states[t] - states[t - 1]))
                 for t in range(1, len(states))]
        assert all(diffs[t] < diffs[t - 1] for t in range(3, len(diffs)))

    def test_attention_with_zeroed_projections_is_mean_pooling(self):
        rng = np.random.default_rng(5)
        w, d, m = 6, 2, 8
        attn = AttentionForecaster(w, d, dim=m, ff=12, rng=rng)
        attn.params["wq"].value[...] = 0.0
        attn.params["wk"].value[...] = 0.0
        x = rng.normal(size=(w, d))

        weights = attn.attention_weights(ad.constant(x[None])).value[0]
        np.testing.assert_allclose(weights, 1.0 / w, atol=1e-12)

        # independent numpy replay with attention replaced by mean pooling
        p = {k: v.value for k, v in attn.params.items()}

        def layer_norm(y, gain, bias, eps=1e-6):
            mu = y.mean(axis=1, keepdims=True)
            var = ((y - mu) ** 2).mean(axis=1, keepdims=True)
            return (y - mu) / np.sqrt(var + eps) * gain + bias

        e = x @ p["in_w"] + p["in_b"] + sinusoidal_positions(w, m)
        v = layer_norm(e, p["ln1_g"], p["ln1_b"]) @ p["wv"]
        pooled_v = np.tile(v.mean(axis=0), (w, 1))
        e = e + pooled_v @ p["wo"]
        n2 = layer_norm(e, p["ln2_g"], p["ln2_b"])
        e = e + np.maximum(n2 @ p["ff_w1"] + p["ff_b1"], 0.0) @ p["ff_w2"] + p["ff_b2"]
        expected = e.mean(axis=0) @ p["head_w"] + p["head_b"]

        got = neural_forecast(attn, image_from(x))
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_cnn_receptive_field_is_causal(self):
        rng = np.random.default_rng(6)
        cnn = TemporalCNNForecaster(8, 2, channels=4, kernel=3, layers=2, rng=rng)
        x = rng.normal(size=(8, 2))
        base = neural_forecast(cnn, image_from(x))

        # two layers of kernel 3 reach 5 rows back; row 0 is out of range
        early = x.copy()
        early[0] += 10.0
        np.testing.assert_allclose(neural_forecast(cnn, image_from(early)), base,
                                   atol=1e-12)
        late = x.copy()
        late[-1] += 1.0
        assert np.abs(neural_forecast(cnn, image_from(late)) - base).max() > 1e-6

    def test_cnn_intermediate_maps_do_not_leak_backward(self):
        rng = np.random.default_rng(9)
        kernel = ad.constant(rng.normal(size=(3, 2, 3)))
        x1 = rng.normal(size=(1, 8, 2))
        x2 = x1.copy()
        x2[0, 5] += 1.0
        m1 = ad.conv1d_causal(ad.constant(x1), kernel).value
        m2 = ad.conv1d_causal(ad.constant(x2), kernel).value
        np.testing.assert_array_equal(m1[0, :5], m2[0, :5])
        assert np.abs(m1[0, 5:] - m2[0, 5:]).max() > 1e-9


class TestCombine:
    def test_zero_neural(self):
        np.testing.assert_allclose(combine([1.0, 2.0], [0.0, 0.0]), [1.0, 2.0])

    def test_zero_ar(self):
        np.testing.assert_allclose(combine([0.0, 0.0], [0.5, -2.0]), [0.5, -2.0])

    def test_hand_sum(self):
        np.testing.assert_allclose(combine([1.0, 2.0], [0.5, -2.0]), [1.5, 0.0])

    def test_dim_mismatch(self):
        with pytest.raises(ModelError):
            combine([1.0], [1.0, 2.0])


class TestForecaster:
    def test_output_is_sum_of_components(self):
        rng = np.random.default_rng(10)
        cfg = ModelConfig(variant="mlp", ar_order=2, mlp_hidden=8)
        fc = build_forecaster(cfg, window=5, n_features=2, seed=3)
        img = image_from(rng.normal(size=(5, 2)))
        total = fc.predict(img.values)
        np.testing.assert_allclose(
            total,
            combine(ar_forecast(fc.ar, img), neural_forecast(fc.neural, img)),
            atol=1e-12)

    def test_requires_a_component(self):
        with pytest.raises(ModelError):
            Forecaster(None, None)

    def test_param_names_are_prefixed(self):
        fc = build_forecaster(ModelConfig(variant="gru", gru_hidden=4),
                              window=4, n_features=2, seed=0)
        names = set(fc.params())
        assert "ar.weights" in names and "ar.bias" in names
        assert "neural.gru.wz" in names and "neural.gru.head_w" in names

    def test_deterministic_build(self):
        cfg = ModelConfig(variant="attention", attn_dim=8, attn_ff=8)
        a = build_forecaster(cfg, 4, 2, seed=11).param_values()
        b = build_forecaster(cfg, 4, 2, seed=11).param_values()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    @pytest.mark.parametrize("variant", ["mlp", "cnn", "gru", "attention", "none"])
    def test_every_variant_forwards(self, variant):
        cfg = ModelConfig(variant=variant, ar_order=2, mlp_hidden=8,
                          cnn_channels=4, gru_hidden=4, attn_dim=8, attn_ff=8)
        fc = build_forecaster(cfg, window=6, n_features=3, seed=1)
        out = fc.predict(np.random.default_rng(0).normal(size=(4, 6, 3)))
        assert out.shape == (4, 3)
        assert np.all(np.isfinite(out))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = ModelConfig(variant="cnn", ar_order=3, cnn_channels=4)
        fc = build_forecaster(cfg, window=6, n_features=2, seed=5)
        path = tmp_path / "model.ssal"
        save_checkpoint(path, fc, window=6, extra={"note": "test"})
        loaded, doc = load_checkpoint(path)
        assert doc["magic"] == "SSAL1"
        before = fc.param_values()
        after = loaded.param_values()
        assert set(before) == set(after)
        for k in before:
            assert np.array_equal(before[k], after[k])

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bogus.json"
        path.write_text('{"magic": "nope"}')
        with pytest.raises(ModelError, match="SSAL1"):
            load_checkpoint(path)

    def test_loaded_model_predicts_identically(self, tmp_path):
        cfg = ModelConfig(variant="gru", ar_order=2, gru_hidden=4)
        fc = build_forecaster(cfg, window=5, n_features=2, seed=9)
        x = np.random.default_rng(1).normal(size=(3, 5, 2))
        path = tmp_path / "model.ssal"
        save_checkpoint(path, fc, window=5)
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(fc.predict(x), loaded.predict(x))
