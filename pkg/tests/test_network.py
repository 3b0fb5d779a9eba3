import numpy as np
import pytest

from dlsphere.core import (AdamState, ConfigError, Constellation, Dataset, DimensionError,
                           MlpParams, NormStats, RadiusModel, TrainConfig, adam_step, clipped_relu,
                           dataset_loss, draw_trial, forward, gen_training_set, gradient,
                           initial_params, input_size, mse_minibatch_loss, q_closest_distances,
                           snr_to_sigma, split_dataset, stack_input, train, train_with_history)


@pytest.fixture(scope='module')
def small_dataset() -> Dataset:
    return gen_training_set(2, 2, Constellation.qam(4), 10.0, 400, 3, np.random.default_rng(21))


class TestActivation:

    def test_clipped_relu(self):
        np.testing.assert_array_equal(clipped_relu(np.array([-2.0, 0.0, 0.25, 1.0, 3.0])),
                                      [0.0, 0.0, 0.25, 1.0, 1.0])
        assert clipped_relu(0.5) == 0.5


class TestParams:

    def test_initialize(self, rng):
        params = MlpParams.initialize([6, 10, 3], rng)
        assert [W.shape for W in params.weights] == [(10, 6), (3, 10)]
        assert np.all(np.abs(params.weights[0]) <= np.sqrt(6 / 16))
        assert all(np.all(b == 0) for b in params.biases)
        assert params.depth == 2

    def test_shape_validation(self):
        with pytest.raises(DimensionError):
            MlpParams([2, 3], [np.zeros((2, 3))], [np.zeros(3)])
        with pytest.raises(DimensionError):
            MlpParams([2, 3, 1], [np.zeros((3, 2))], [np.zeros(3)])

    def test_copy_is_independent(self, rng):
        params = MlpParams.initialize([3, 4, 2], rng)
        clone = params.copy()
        clone.weights[0][0, 0] += 1.0
        assert params.weights[0][0, 0] != clone.weights[0][0, 0]


class TestForward:

    def test_shapes(self, rng):
        params = MlpParams.initialize([4, 5, 2], rng)
        stats = NormStats.identity(4)
        assert forward(params, rng.standard_normal(4), stats).shape == (2,)
        assert forward(params, rng.standard_normal((7, 4)), stats).shape == (7, 2)

    def test_output_is_scaled_by_radius_scale(self, rng):
        params = MlpParams.initialize([4, 5, 2], rng)
        x = rng.standard_normal(4)
        np.testing.assert_allclose(forward(params, x, NormStats.identity(4, 3.0)),
                                   3.0 * forward(params, x, NormStats.identity(4, 1.0)))

    def test_wrong_input_size(self, rng):
        params = MlpParams.initialize([4, 5, 2], rng)
        with pytest.raises(DimensionError):
            forward(params, np.zeros(3), NormStats.identity(4))

    def test_norm_stats_fit(self):
        X = np.array([[1.0, 5.0], [3.0, 5.0]])
        stats = NormStats.fit(X, np.array([[1.0, 2.0], [0.5, 4.0]]))
        np.testing.assert_array_equal(stats.mean, [2.0, 5.0])
        np.testing.assert_array_equal(stats.scale, [1.0, 1.0])
        assert stats.radius_scale == 4.0


class TestGradient:

    @staticmethod
    def _away_from_kinks(params, X, stats, margin=1e-3):
        a = stats.standardize(X)
        for W, b in zip(params.weights[:-1], params.biases[:-1]):
            u = a @ W.T + b
            if np.min(np.minimum(np.abs(u), np.abs(u - 1))) < margin:
                return False
            a = clipped_relu(u)
        return True

    def test_matches_central_differences(self):
        checked = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            params = MlpParams.initialize([5, 6, 4, 3], rng)
            params = params.with_arrays([a + 0.1 * rng.standard_normal(a.shape)
                                         for a in params.arrays()])
            X, R = rng.standard_normal((8, 5)), rng.uniform(0.5, 2.0, (8, 3))
            stats = NormStats(np.zeros(5), np.ones(5), 2.0)
            if not self._away_from_kinks(params, X, stats):
                continue
            analytic = np.concatenate([g.ravel() for g in gradient(params, (X, R), stats).arrays()])
            numeric = []
            h = 1e-6
            arrays = params.arrays()
            for i, a in enumerate(arrays):
                for idx in np.ndindex(a.shape):
                    plus = [b.copy() for b in arrays]
                    minus = [b.copy() for b in arrays]
                    plus[i][idx] += h
                    minus[i][idx] -= h
                    numeric.append((mse_minibatch_loss(params.with_arrays(plus), (X, R), stats)
                                    - mse_minibatch_loss(params.with_arrays(minus), (X, R), stats))
                                   / (2 * h))
            numeric = np.array(numeric)
            error = np.linalg.norm(analytic - numeric) / (np.linalg.norm(analytic)
                                                          + np.linalg.norm(numeric))
            assert error < 1e-5
            checked += 1
            if checked == 5:
                break
        assert checked > 0

    def test_batch_as_pairs(self, rng):
        params = MlpParams.initialize([3, 4, 2], rng)
        X, R = rng.standard_normal((5, 3)), rng.uniform(1, 2, (5, 2))
        stats = NormStats.identity(3)
        assert mse_minibatch_loss(params, list(zip(X, R)), stats) == pytest.approx(
            mse_minibatch_loss(params, (X, R), stats))

    def test_loss_is_scaled_by_radius_scale(self, rng):
        params = MlpParams.zeros([3, 2])
        X, R = rng.standard_normal((4, 3)), np.full((4, 2), 2.0)
        assert mse_minibatch_loss(params, (X, R), NormStats.identity(3, 2.0)) == pytest.approx(2.0)


class TestAdam:

    def test_first_step(self):
        params = MlpParams.zeros([2, 1])
        grads = MlpParams([2, 1], [np.array([[0.5, -2.0]])], [np.array([1e-3])])
        state = AdamState.start(params, eta=0.01)
        new, state = adam_step(params, state, grads)
        assert state.t == 1
        for theta, g in zip(new.arrays(), grads.arrays()):
            np.testing.assert_allclose(theta, -0.01 * g / (np.abs(g) + 1e-8))

    def test_minimises_a_quadratic(self, rng):
        params = MlpParams.initialize([3, 1], rng)
        X = rng.standard_normal((64, 3))
        R = (X @ np.array([0.2, -0.1, 0.05]) + 0.5)[:, None]
        stats = NormStats.identity(3)
        state = AdamState.start(params, eta=0.01)
        before = mse_minibatch_loss(params, (X, R), stats)
        for _ in range(500):
            params, state = adam_step(params, state, gradient(params, (X, R), stats))
        assert mse_minibatch_loss(params, (X, R), stats) < 0.01 * before


class TestDataset:

    def test_rows_are_labelled_observations(self, small_dataset):
        rng = np.random.default_rng(21)
        constellation = Constellation.qam(4)
        sigma_w2 = snr_to_sigma(10.0, 2, constellation.avg_power)
        for row in range(3):
            obs = draw_trial(rng, 2, 2, constellation, sigma_w2)
            np.testing.assert_array_equal(small_dataset.X[row], stack_input(obs))
            np.testing.assert_array_equal(small_dataset.R[row], q_closest_distances(obs, 3).radii)

    def test_shapes_and_order(self, small_dataset):
        assert small_dataset.X.shape == (400, input_size(2, 2))
        assert small_dataset.q == 3 and len(small_dataset) == 400
        assert np.all(np.diff(small_dataset.R, axis=1) > 0)

    def test_noise_widens_the_radii(self):
        constellation = Constellation.qam(4)
        low = gen_training_set(2, 2, constellation, 0.0, 200, 1, np.random.default_rng(2))
        high = gen_training_set(2, 2, constellation, 20.0, 200, 1, np.random.default_rng(2))
        assert low.R[:, 0].mean() > high.R[:, 0].mean()

    def test_rejects_unordered_radii(self):
        X = np.zeros((1, input_size(1, 1)))
        with pytest.raises(ValueError):
            Dataset(X, [[2.0, 1.0]], 10.0, NormStats.identity(4), 1, 1, 4)

    def test_rejects_wrong_input_size(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((1, 5)), [[1.0]], 10.0, NormStats.identity(5), 1, 1, 4)

    def test_record_round_trip(self, small_dataset):
        again = Dataset.from_record(small_dataset.to_record())
        np.testing.assert_array_equal(again.X, small_dataset.X)
        np.testing.assert_array_equal(again.R, small_dataset.R)
        assert again.norm_stats.radius_scale == small_dataset.norm_stats.radius_scale

    def test_record_names_bad_field(self, small_dataset):
        record = small_dataset.to_record()
        record['r'] = 'nope'
        with pytest.raises(ConfigError, match="'r'"):
            Dataset.from_record(record)

    def test_split(self, small_dataset, rng):
        training, heldout = split_dataset(small_dataset, 0.1, rng)
        assert len(training) == 360 and len(heldout) == 40
        rows = {tuple(x) for x in training.X} & {tuple(x) for x in heldout.X}
        assert not rows

    def test_split_fits_norm_stats_on_training_rows(self, small_dataset, rng):
        training, heldout = split_dataset(small_dataset, 0.1, rng)
        np.testing.assert_allclose(training.norm_stats.mean, training.X.mean(axis=0))
        np.testing.assert_allclose(training.norm_stats.scale, training.X.std(axis=0))
        assert training.norm_stats.radius_scale == training.R.max()
        assert heldout.norm_stats is training.norm_stats
        assert not np.allclose(training.norm_stats.mean, small_dataset.norm_stats.mean)

    def test_split_needs_training_rows(self, small_dataset, rng):
        with pytest.raises(ValueError):
            split_dataset(small_dataset, 1.0, rng)


class TestTraining:

    def test_history_and_determinism(self, small_dataset):
        config = TrainConfig(batch_size=20, epochs=3, hidden_layers=(16,), seed=5)
        params, history = train_with_history(small_dataset, config)
        assert len(history) == 3 * (400 // 20)
        assert np.all(np.isfinite(history))
        again = train(small_dataset, config)
        for a, b in zip(params.arrays(), again.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_last_partial_batch_is_dropped(self, small_dataset):
        config = TrainConfig(batch_size=30, epochs=2, hidden_layers=(8,))
        _, history = train_with_history(small_dataset, config)
        assert len(history) == 2 * (400 // 30)

    def test_heldout_loss_improves(self):
        dataset = gen_training_set(2, 2, Constellation.qam(4), 8.0, 2000, 3,
                                   np.random.default_rng(3))
        training, heldout = split_dataset(dataset, 0.1, np.random.default_rng(4))
        config = TrainConfig(epochs=10)
        params = train(training, config)
        assert dataset_loss(params, heldout) <= 0.5 * dataset_loss(initial_params(training, config),
                                                                   heldout)

    @pytest.mark.slow
    def test_heldout_loss_at_scale(self):
        dataset = gen_training_set(2, 2, Constellation.qam(4), 8.0, 20_000, 3,
                                   np.random.default_rng(3))
        training, heldout = split_dataset(dataset, 0.1, np.random.default_rng(4))
        config = TrainConfig(eta=0.001, beta1=0.9, beta2=0.999, eps=1e-8, batch_size=20)
        params = train(training, config)
        assert dataset_loss(params, heldout) <= 0.5 * dataset_loss(initial_params(training, config),
                                                                   heldout)


class TestRadiusModel:

    def test_save_and_load(self, small_dataset, tmp_path, rng):
        params = train(small_dataset, TrainConfig(epochs=1, hidden_layers=(8,)))
        model = RadiusModel.from_dataset(params, small_dataset)
        path = tmp_path / 'model.json'
        model.save(path)
        again = RadiusModel.load(path)
        inputs = rng.standard_normal((100, input_size(2, 2)))
        np.testing.assert_array_equal(again.predict(inputs), model.predict(inputs))
        assert (again.n, again.m, again.constellation_order, again.q) == (2, 2, 4, 3)
        assert again.layer_dims == [12, 8, 3]

    def test_record_consistency_checks(self, small_dataset):
        params = MlpParams.initialize([12, 4, 3], np.random.default_rng(0))
        record = RadiusModel.from_dataset(params, small_dataset).to_record()
        with pytest.raises(ConfigError, match="'q'"):
            RadiusModel.from_record({**record, 'q': 4})
        missing = dict(record)
        del missing['weights']
        with pytest.raises(ConfigError, match="'weights'"):
            RadiusModel.from_record(missing)
