"""Diffusion math, the denoiser's gradients, training, and sampling."""

import math

import numpy as np
import pytest

import oracles
from conftest import binary_schema, random_binary_table
from fairtab.dataset import (
    ColumnSpec,
    TableSchema,
    build_layout,
    encode,
    fit_quantile_transform,
)
from fairtab.diffusion import (
    DenoiserMLP,
    DiffusionConfig,
    NoiseSchedule,
    corrupt_batch,
    diffusion_loss,
    gaussian_forward,
    gaussian_reverse_step,
    linear_schedule,
    load_model,
    multinomial_forward,
    multinomial_posterior,
    sample,
    train,
    training_step,
)
from fairtab.errors import ModelFormatError, TrainingError


class TestSchedule:
    def test_linear_schedule_reaches_noise(self):
        for timesteps in (10, 100):
            s = linear_schedule(timesteps)
            assert len(s.betas) == timesteps
            assert s.betas.min() > 0.0 and s.betas.max() < 1.0
            assert np.all(np.diff(s.alpha_bars) < 0.0)
            assert s.alpha_bars[-1] < 0.01
            assert s.alpha_bars[-1] < s.alpha_bars[0]

    def test_bad_betas_rejected(self):
        with pytest.raises(TrainingError):
            NoiseSchedule(betas=np.array([0.5, 1.0]))
        with pytest.raises(TrainingError):
            NoiseSchedule(betas=np.array([0.0]))
        with pytest.raises(TrainingError):
            NoiseSchedule(betas=np.array([]))

    def test_alpha_bar_prev_is_one_at_first_step(self):
        s = linear_schedule(10)
        assert s.alpha_bar_prev(1) == 1.0
        assert s.alpha_bar_prev(2) == s.alpha_bars[0]


class TestForwardKernels:
    def test_gaussian_identity_endpoint(self):
        s = NoiseSchedule(betas=np.array([1e-9]))
        x0 = np.array([3.0, -2.0])
        out = gaussian_forward(s, x0, 1, np.array([5.0, 5.0]))
        assert np.allclose(out, x0, atol=1e-3)

    def test_gaussian_direct_substitution(self):
        s = NoiseSchedule(betas=np.array([0.75]))
        out = gaussian_forward(s, np.array([1.0, 0.0]), 1, np.array([0.0, 1.0]))
        assert np.allclose(out, [0.5, math.sqrt(0.75)], atol=1e-12)

    def test_multinomial_uniform_endpoint(self):
        s = NoiseSchedule(betas=np.full(30, 0.9))
        out = multinomial_forward(s, np.array([1.0, 0.0, 0.0, 0.0]), 30)
        assert np.allclose(out, 0.25, atol=1e-9)

    def test_multinomial_direct_substitution(self):
        s = NoiseSchedule(betas=np.array([0.5]))
        out = multinomial_forward(s, np.array([1.0, 0.0]), 1)
        assert np.allclose(out, [0.75, 0.25], atol=1e-12)

    def test_small_k_rejected(self):
        s = linear_schedule(5)
        with pytest.raises(TrainingError):
            multinomial_forward(s, np.array([1.0]), 1)

    def test_t_out_of_range(self):
        s = linear_schedule(5)
        with pytest.raises(TrainingError):
            gaussian_forward(s, np.zeros(2), 6, np.zeros(2))
        with pytest.raises(TrainingError):
            gaussian_forward(s, np.zeros(2), 0, np.zeros(2))

    def test_closed_form_matches_chain_composition(self, rng):
        # desk-scale version of the Monte Carlo agreement check
        draws = 20000
        for timesteps in (10, 100):
            s = linear_schedule(timesteps)
            for t in (timesteps // 2, timesteps):
                ab = float(s.alpha_bars[t - 1])
                x0 = 2.0
                mc = oracles.gaussian_chain_sample(s.betas[:t], x0, draws, rng)
                want_mean = math.sqrt(ab) * x0
                want_var = 1.0 - ab
                assert abs(mc.mean() - want_mean) < 0.02 * max(1.0, abs(want_mean))
                assert abs(mc.var() - want_var) < 0.03 * want_var

                k = 3
                x0_onehot = np.zeros(k)
                x0_onehot[1] = 1.0
                closed = multinomial_forward(s, x0_onehot, t)
                chain = oracles.categorical_chain_sample(s.betas[:t], 1, k, draws, rng)
                freq = np.bincount(chain, minlength=k) / draws
                assert 0.5 * np.abs(closed - freq).sum() < 0.02


class TestReverseKernels:
    def test_first_step_with_true_noise_recovers_x0(self, rng):
        s = linear_schedule(10)
        x0 = rng.normal(size=(5, 2))
        eps = rng.standard_normal((5, 2))
        x1 = gaussian_forward(s, x0, 1, eps)
        back = gaussian_reverse_step(s, x1, 1, eps)
        assert np.allclose(back, x0, atol=1e-9)

    def test_posterior_rows_are_distributions(self, rng):
        s = linear_schedule(20)
        xt = np.zeros((6, 4))
        xt[np.arange(6), rng.integers(0, 4, 6)] = 1.0
        logits = rng.normal(size=(6, 4))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        for t in (1, 10, 20):
            theta = multinomial_posterior(s, xt, t, probs)
            assert np.allclose(theta.sum(axis=1), 1.0, atol=1e-12)
            assert theta.min() >= 0.0

    def test_posterior_at_t1_concentrates_on_predicted_x0(self):
        s = linear_schedule(20)
        xt = np.array([[0.0, 1.0, 0.0]])
        x0 = np.array([[1.0, 0.0, 0.0]])
        theta = multinomial_posterior(s, xt, 1, x0)
        assert np.allclose(theta, x0, atol=1e-12)


class TestDenoiser:
    def test_output_shape_and_determinism(self, rng):
        net_a = DenoiserMLP(width=7, timesteps=9, hidden=(16, 8), embed_dim=4, seed=3)
        net_b = DenoiserMLP(width=7, timesteps=9, hidden=(16, 8), embed_dim=4, seed=3)
        x = rng.normal(size=(5, 7))
        tidx = rng.integers(0, 9, size=5)
        out_a, _ = net_a.forward(x, tidx)
        out_b, _ = net_b.forward(x, tidx)
        assert out_a.shape == (5, 7)
        assert np.array_equal(out_a, out_b)

    def test_gradients_match_finite_differences(self, rng):
        schema = binary_schema()
        layout = build_layout(schema)
        net = DenoiserMLP(width=layout.width, timesteps=5, hidden=(12, 10), embed_dim=6, seed=1)
        x_t = rng.normal(size=(3, layout.width))
        tidx = np.array([0, 2, 4])
        eps = rng.normal(size=(3, layout.numerical_slice.stop))
        cat_targets = rng.integers(0, 2, size=(3, 2))

        _, analytic = diffusion_loss(net, layout, x_t, tidx, eps, cat_targets)

        def loss_only():
            loss, _ = diffusion_loss(net, layout, x_t, tidx, eps, cat_targets, with_grads=False)
            return loss.total

        numeric = oracles.finite_difference_gradients(loss_only, net.params, h=1e-5)
        for key in net.params:
            err = oracles.relative_group_error(analytic[key], numeric[key])
            assert err < 1e-4, f"parameter group {key}: relative error {err:.2e}"

    def test_zero_denoiser_binary_loss_is_ln2(self, rng):
        schema = TableSchema(
            columns=(
                ColumnSpec(name="g", kind="categorical", categories=("u", "v")),
                ColumnSpec(name="y", kind="categorical", categories=("n", "p")),
            ),
            label_column="y",
            favorable_value="p",
            protected_column="g",
            privileged_value="u",
        )
        layout = build_layout(schema)
        net = DenoiserMLP(width=layout.width, timesteps=4, hidden=(8,), embed_dim=3, seed=0)
        for key in net.params:
            net.params[key][:] = 0.0
        x_t = rng.normal(size=(6, layout.width))
        tidx = rng.integers(0, 4, size=6)
        eps = np.zeros((6, 0))
        cat_targets = rng.integers(0, 2, size=(6, 2))
        loss, _ = diffusion_loss(net, layout, x_t, tidx, eps, cat_targets, with_grads=False)
        assert abs(loss.categorical - math.log(2)) < 1e-12
        assert loss.numerical == 0.0
        assert abs(loss.total - math.log(2)) < 1e-12


class TestCorruption:
    def test_corrupted_batch_shape_and_targets(self, rng):
        table = random_binary_table(rng, 40)
        qt = fit_quantile_transform(table)
        mat = encode(table, qt)
        x_t, tidx, eps, cat_targets = corrupt_batch(linear_schedule(10), mat.layout, mat.data, rng)
        assert x_t.shape == mat.data.shape
        assert tidx.min() >= 0 and tidx.max() <= 9
        assert eps.shape == (40, 1)
        for j, block in enumerate(mat.layout.categorical_blocks()):
            group = x_t[:, block.offset : block.offset + block.width]
            assert np.all(group.sum(axis=1) == 1.0)
            want = np.argmax(mat.data[:, block.offset : block.offset + block.width], axis=1)
            assert np.array_equal(cat_targets[:, j], want)


def tiny_config(**overrides):
    base = dict(
        timesteps=10,
        hidden=(32,),
        embed_dim=8,
        epochs=50,
        batch_size=32,
        learning_rate=1e-3,
        momentum=0.9,
    )
    base.update(overrides)
    return DiffusionConfig(**base)


def small_training_setup(rng, n=120):
    table = random_binary_table(rng, n)
    qt = fit_quantile_transform(table)
    return encode(table, qt), qt


class TestTraining:
    def test_loss_trend_decreases(self, rng):
        encoded, qt = small_training_setup(rng, 100)
        model = train(encoded, qt, tiny_config(), seed=5)
        log = np.asarray(model.loss_log)
        assert len(log) == 50
        assert log[-5:].mean() < log[:5].mean()

    def test_deterministic_for_fixed_seed(self, rng):
        encoded, qt = small_training_setup(rng)
        cfg = tiny_config(epochs=3)
        m1 = train(encoded, qt, cfg, seed=9)
        m2 = train(encoded, qt, cfg, seed=9)
        m3 = train(encoded, qt, cfg, seed=10)
        for key in m1.denoiser.params:
            assert np.array_equal(m1.denoiser.params[key], m2.denoiser.params[key])
        assert any(
            not np.array_equal(m1.denoiser.params[k], m3.denoiser.params[k])
            for k in m1.denoiser.params
        )

    def test_too_few_rows_rejected(self, rng):
        table = random_binary_table(rng, 50)
        qt = fit_quantile_transform(table)
        with pytest.raises(TrainingError, match="100 rows"):
            train(encode(table, qt), qt, tiny_config(), seed=0)

    def test_divergent_learning_rate_aborts(self, rng):
        encoded, qt = small_training_setup(rng)
        with pytest.raises(TrainingError):
            train(encoded, qt, tiny_config(learning_rate=1e6, epochs=20), seed=0)

    def test_training_step_returns_pre_update_loss(self, rng):
        encoded, qt = small_training_setup(rng)
        model = train(encoded, qt, tiny_config(epochs=1), seed=2)
        loss = training_step(model, encoded, seed=3)
        assert loss.total > 0.0
        assert math.isfinite(loss.total)


class TestSampling:
    def test_empty_sample(self, rng):
        encoded, qt = small_training_setup(rng)
        model = train(encoded, qt, tiny_config(epochs=2), seed=1)
        empty = sample(model, 0, seed=4)
        assert empty.n_rows == 0

    def test_sampled_rows_are_valid_and_deterministic(self, rng):
        encoded, qt = small_training_setup(rng)
        model = train(encoded, qt, tiny_config(epochs=2), seed=1)
        a = sample(model, 25, seed=6)
        b = sample(model, 25, seed=6)
        c = sample(model, 25, seed=7)
        assert a.n_rows == 25
        assert np.all(a.weights == 1.0)
        assert np.array_equal(a.categorical, b.categorical)
        assert np.allclose(a.numerical, b.numerical, atol=0)
        assert not np.array_equal(a.numerical, c.numerical)

    def test_numericals_stay_inside_fitted_range(self, rng):
        encoded, qt = small_training_setup(rng)
        model = train(encoded, qt, tiny_config(epochs=2), seed=1)
        out = sample(model, 40, seed=2)
        ct = qt.columns[0]
        assert out.numerical[:, 0].min() >= ct.values.min()
        assert out.numerical[:, 0].max() <= ct.values.max()


class TestModelSerialization:
    def build(self, rng):
        encoded, qt = small_training_setup(rng)
        return train(encoded, qt, tiny_config(epochs=2), seed=8)

    def test_round_trip_bit_identical(self, rng, tmp_path):
        from fairtab.diffusion import save_model

        model = self.build(rng)
        path = tmp_path / "model.npz"
        save_model(model, path)
        back = load_model(path)
        for key in model.denoiser.params:
            assert np.array_equal(back.denoiser.params[key], model.denoiser.params[key])
        assert np.array_equal(back.schedule.betas, model.schedule.betas)
        assert back.layout == model.layout
        assert back.loss_log == model.loss_log
        s1 = sample(model, 10, seed=3)
        s2 = sample(back, 10, seed=3)
        assert np.array_equal(s1.categorical, s2.categorical)
        assert np.array_equal(s1.numerical, s2.numerical)

    def test_truncated_file_rejected(self, rng, tmp_path):
        from fairtab.diffusion import save_model

        model = self.build(rng)
        path = tmp_path / "model.npz"
        save_model(model, path)
        clipped = tmp_path / "clipped.npz"
        clipped.write_bytes(path.read_bytes()[:100])
        with pytest.raises(ModelFormatError):
            load_model(clipped)

    def test_future_version_rejected(self, rng, tmp_path, monkeypatch):
        from fairtab import serialize
        from fairtab.diffusion import save_model

        model = self.build(rng)
        path = tmp_path / "model.npz"
        monkeypatch.setattr(serialize, "FORMAT_VERSION", 99)
        save_model(model, path)
        monkeypatch.undo()
        with pytest.raises(ModelFormatError, match="version"):
            load_model(path)


class TestToyFidelity:
    def test_trained_toy_marginals(self, trained_toy, toy_samples):
        out = toy_samples
        assert out.n_rows == 5000
        train_table = trained_toy.table

        train_freq = np.bincount(train_table.categorical[:, 0], minlength=2) / train_table.n_rows
        sample_freq = np.bincount(out.categorical[:, 0], minlength=2) / out.n_rows
        tv = 0.5 * np.abs(train_freq - sample_freq).sum()
        assert tv < 0.05

        want_mean = train_table.numerical[:, 0].mean()
        want_std = train_table.numerical[:, 0].std()
        got_mean = out.numerical[:, 0].mean()
        got_std = out.numerical[:, 0].std()
        assert abs(got_mean - want_mean) < 0.10 * abs(want_mean)
        assert abs(got_std - want_std) < 0.10 * want_std
