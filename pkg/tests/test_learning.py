"""Tasks, datasets, and the federated learning substrate."""

import numpy as np
import pytest

from airbreathe import fl
from airbreathe.datasets import (DeviceShard, gaussian_mixture, load_dataset,
                                 load_idx, load_idx_dataset, partition,
                                 quadratic_targets, save_dataset)
from airbreathe.errors import ConfigurationError
from airbreathe.tasks import (CnnMnist, LogisticL2, MlpSmall, Quadratic, TaskSpec,
                              make_task, mlp_dim)
from airbreathe.verification import check_gradient_finite_differences


class TestTasks:
    def test_regularizer_only_gradient(self):
        """With an empty data term the gradient is l2·w (checked at X=0)."""
        task = LogisticL2(dim=4, l2=0.3)
        w = np.array([1.0, -2.0, 0.5, 0.0])
        X = np.zeros((5, 4))
        y = np.full(5, 0.5)  # cancels the data term exactly at z=0
        np.testing.assert_allclose(task.gradient(w, X, y), 0.3 * w)

    def test_logistic_gradient_at_origin(self):
        """Single sample at w=0: gradient is (1/2 - y)·x plus nothing."""
        task = LogisticL2(dim=3, l2=1e-9)
        x = np.array([[2.0, -1.0, 0.5]])
        for y in (0.0, 1.0):
            np.testing.assert_allclose(
                task.gradient(np.zeros(3), x, np.array([y])),
                (0.5 - y) * x[0], atol=1e-8)

    def test_finite_difference_oracle_all_tasks(self):
        result = check_gradient_finite_differences(seed=0, points=100)
        assert result.passed, result.detail

    def test_strong_convexity_of_logistic_l2(self):
        """F(w2) - F(w1) >= grad(w1)·(w2-w1) + (l2/2)||w2-w1||²."""
        rng = np.random.default_rng(0)
        task = LogisticL2(dim=8, l2=0.2)
        X = rng.standard_normal((40, 8))
        y = (rng.random(40) < 0.5).astype(float)
        for _ in range(200):
            w1 = rng.standard_normal(8)
            w2 = rng.standard_normal(8)
            lhs = task.loss(w2, X, y) - task.loss(w1, X, y)
            rhs = task.gradient(w1, X, y) @ (w2 - w1) \
                + 0.5 * task.l2 * np.sum((w2 - w1) ** 2)
            assert lhs >= rhs - 1e-10

    def test_quadratic_gradient_and_optimum(self):
        task = Quadratic(dim=4, curvature=2.0)
        T = np.array([[1.0, 0, 0, 0], [3.0, 0, 0, 0]])
        w = np.zeros(4)
        np.testing.assert_allclose(task.gradient(w, T),
                                   2.0 * (w - np.array([2.0, 0, 0, 0])))
        # at the optimum only the target spread remains: 0.5·c·mean||t - t̄||² = 1
        assert task.loss(np.array([2.0, 0, 0, 0]), T) == pytest.approx(1.0)

    def test_mlp_dim_formula(self):
        assert mlp_dim(6, 5) == 6 * 5 + 5 + 5 + 1
        assert MlpSmall(6, 5).dim == mlp_dim(6, 5)

    def test_mlp_biases_not_prunable(self):
        task = MlpSmall(in_features=4, hidden=3)
        assert task.prunable.sum() == 4 * 3 + 3  # W1 and w2 only

    def test_make_task_dispatch_and_validation(self):
        assert isinstance(make_task(TaskSpec(kind="logistic_l2", dim=8, l2=0.1)),
                          LogisticL2)
        assert isinstance(
            make_task(TaskSpec(kind="mlp_small", dim=mlp_dim(6, 5), hidden=5,
                               in_features=6)), MlpSmall)
        with pytest.raises(ConfigurationError):
            make_task(TaskSpec(kind="mlp_small", dim=999, hidden=5, in_features=6))
        with pytest.raises(ConfigurationError):
            TaskSpec(kind="nope", dim=4)
        with pytest.raises(ConfigurationError):
            TaskSpec(kind="logistic_l2", dim=4, l2=0.0)


class TestCnnPreset:
    def test_parameter_count_and_prunable_fraction(self):
        task = CnnMnist()
        assert task.dim == 21840
        assert int((~task.prunable).sum()) == 10 + 20 + 50 + 10

    def test_gradient_matches_finite_differences(self):
        """Spot-check backprop through conv/pool/fc on tiny batches."""
        rng = np.random.default_rng(1)
        task = CnnMnist(l2=0.01)
        X = rng.standard_normal((2, 784)) * 0.5
        y = np.array([3.0, 7.0])
        w = task.init_weights(rng) * 0.5
        g = task.gradient(w, X, y)
        h = 1e-6
        for _ in range(12):
            v = rng.standard_normal(task.dim)
            v /= np.linalg.norm(v)
            fd = (task.loss(w + h * v, X, y) - task.loss(w - h * v, X, y)) / (2 * h)
            assert fd == pytest.approx(float(g @ v), rel=2e-4, abs=1e-9)

    def test_evaluate_reports_accuracy(self):
        rng = np.random.default_rng(2)
        task = CnnMnist()
        X = rng.standard_normal((4, 784))
        y = np.array([0.0, 1.0, 2.0, 3.0])
        loss, acc = task.evaluate(task.init_weights(rng), X, y)
        assert loss > 0 and 0.0 <= acc <= 1.0


class TestDatasets:
    def test_mixture_is_balanced_and_separated(self):
        rng = np.random.default_rng(3)
        X, y = gaussian_mixture(4000, 16, 3.0, rng)
        assert set(np.unique(y)) == {0.0, 1.0}
        assert abs(y.mean() - 0.5) < 0.05
        gap = X[y > 0.5].mean(axis=0) - X[y < 0.5].mean(axis=0)
        assert np.linalg.norm(gap) == pytest.approx(6.0, rel=0.1)

    def test_label_noise_flips_fraction(self):
        rng = np.random.default_rng(4)
        _, clean = gaussian_mixture(20_000, 4, 2.0,
                                    np.random.default_rng(4), label_noise=0.0)
        _, noisy = gaussian_mixture(20_000, 4, 2.0,
                                    np.random.default_rng(4), label_noise=0.25)
        assert np.mean(clean != noisy) == pytest.approx(0.25, abs=0.02)

    def test_quadratic_targets_center(self):
        rng = np.random.default_rng(5)
        T, z = quadratic_targets(5000, 8, 1.0, 0.5, rng)
        assert T.shape == (5000, 8) and np.all(z == 0)
        assert np.allclose(T.std(axis=0), 0.5, atol=0.05)

    def test_csv_and_npz_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((20, 3))
        y = (rng.random(20) < 0.5).astype(float)
        for name in ("data.csv", "data.npz"):
            path = tmp_path / name
            save_dataset(path, X, y)
            X2, y2 = load_dataset(path)
            np.testing.assert_allclose(X2, X, atol=1e-12)
            np.testing.assert_allclose(y2, y)

    def test_idx_round_trip(self, tmp_path):
        """Loader parses the big-endian IDX container written by hand."""
        import struct
        rng = np.random.default_rng(7)
        images = rng.integers(0, 256, size=(5, 4, 4), dtype=np.uint8)
        labels = np.array([1, 0, 3, 2, 9], dtype=np.uint8)
        img_path = tmp_path / "images.idx"
        img_path.write_bytes(struct.pack(">4B3i", 0, 0, 0x08, 3, 5, 4, 4)
                             + images.tobytes())
        lab_path = tmp_path / "labels.idx"
        lab_path.write_bytes(struct.pack(">4Bi", 0, 0, 0x08, 1, 5)
                             + labels.tobytes())
        np.testing.assert_array_equal(load_idx(img_path), images)
        X, y = load_idx_dataset(img_path, lab_path)
        assert X.shape == (5, 16) and X.max() <= 1.0
        np.testing.assert_array_equal(y, labels.astype(float))

    def test_idx_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(b"\x01\x02\x03\x04")
        with pytest.raises(ConfigurationError):
            load_idx(path)


class TestPartition:
    def test_iid_split_is_disjoint_and_balanced(self):
        rng = np.random.default_rng(8)
        X, y = gaussian_mixture(1000, 4, 2.0, rng)
        shards = partition(X, y, 10, "iid", rng)
        assert len(shards) == 10
        sizes = [len(s) for s in shards]
        assert sum(sizes) == 1000 and max(sizes) - min(sizes) <= 1
        fractions = [s.labels.mean() for s in shards]
        assert max(fractions) - min(fractions) < 0.25

    def test_two_samples_two_devices(self):
        X = np.eye(2)
        y = np.array([0.0, 1.0])
        shards = partition(X, y, 2, "iid", np.random.default_rng(9))
        assert [len(s) for s in shards] == [1, 1]

    def test_single_device_gets_everything(self):
        rng = np.random.default_rng(10)
        X, y = gaussian_mixture(50, 3, 1.0, rng)
        shards = partition(X, y, 1, "iid", rng)
        assert len(shards) == 1 and len(shards[0]) == 50

    def test_shards_scheme_label_homogeneity(self):
        """Each device holds samples of at most per_device labels."""
        rng = np.random.default_rng(11)
        X, y = gaussian_mixture(1200, 4, 2.0, rng)
        shards = partition(X, y, 10, ("shards", 2), rng)
        for shard in shards:
            assert len(np.unique(shard.labels)) == 2
        all_idx = np.concatenate([s.features[:, 0] for s in shards])
        assert len(all_idx) <= 1200  # disjoint draws, possibly dropping a tail

    def test_shards_requires_enough_classes(self):
        X = np.zeros((40, 2))
        y = np.zeros(40)
        with pytest.raises(ConfigurationError):
            partition(X, y, 4, ("shards", 2), np.random.default_rng(12))

    def test_too_few_samples(self):
        with pytest.raises(ConfigurationError):
            partition(np.zeros((2, 1)), np.zeros(2), 3, "iid",
                      np.random.default_rng(13))


class TestFlOps:
    def _shard(self, rng, n=64, dim=6):
        X, y = gaussian_mixture(n, dim, 2.0, rng)
        return DeviceShard(features=X, labels=y, device_id=0)

    def test_minibatch_unbiasedness(self):
        """Averaged mini-batch gradients match the full-shard gradient."""
        rng = np.random.default_rng(14)
        task = LogisticL2(dim=6, l2=0.05)
        shard = self._shard(rng)
        state = fl.ModelState(w=rng.standard_normal(6) * 0.3, round=0,
                              prunable=task.prunable)
        full = fl.full_gradient(state, shard, task)
        draws = np.stack([
            fl.local_gradient(state, shard, task, 8, np.random.default_rng(1000 + i))
            for i in range(10_000)])
        err = draws.mean(axis=0) - full
        se = draws.std(axis=0) / np.sqrt(len(draws))
        assert np.all(np.abs(err) < 3.2 * se + 1e-12)

    def test_batch_size_validation(self):
        rng = np.random.default_rng(15)
        task = LogisticL2(dim=6, l2=0.05)
        shard = self._shard(rng, n=10)
        state = fl.init_state(task, rng)
        with pytest.raises(ConfigurationError):
            fl.local_gradient(state, shard, task, 11, rng)

    def test_ideal_aggregate(self):
        g = np.array([1.0, 2.0])
        np.testing.assert_array_equal(fl.ideal_aggregate([g]), g)
        np.testing.assert_array_equal(fl.ideal_aggregate([g, -g]), [0.0, 0.0])
        with pytest.raises(ConfigurationError):
            fl.ideal_aggregate([])
        with pytest.raises(ConfigurationError):
            fl.ideal_aggregate([np.zeros(2), np.zeros(3)])

    def test_aggregate_variance_shrinks_with_devices(self):
        rng = np.random.default_rng(16)
        k, dim, trials = 8, 4, 3000
        draws = rng.standard_normal((trials, k, dim)) * 2.0
        agg = draws.mean(axis=1)
        assert np.var(agg) == pytest.approx(4.0 / k, rel=0.1)

    def test_apply_update(self):
        state = fl.ModelState(w=np.array([1.0, -1.0]), round=3,
                              prunable=np.ones(2, bool))
        same = fl.apply_update(state, np.zeros(2), eta=0.5)
        np.testing.assert_array_equal(same.w, state.w)
        assert same.round == 4
        frozen = fl.apply_update(state, np.ones(2), eta=0.0)
        np.testing.assert_array_equal(frozen.w, state.w)

    def test_quadratic_one_exact_step(self):
        """eta=1 with the exact gradient of (1/2)||w||² lands on zero."""
        task = Quadratic(dim=3, curvature=1.0)
        T = np.zeros((4, 3))
        state = fl.ModelState(w=np.array([2.0, -1.0, 0.5]), round=0,
                              prunable=task.prunable)
        update = task.gradient(state.w, T)
        after = fl.apply_update(state, update, eta=1.0)
        np.testing.assert_allclose(after.w, 0.0, atol=1e-14)

    def test_evaluate_perfect_and_chance(self):
        task = LogisticL2(dim=2, l2=1e-6)
        X = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0], [-2.0, 0.0]])
        y = np.array([1.0, 0.0, 1.0, 0.0])
        state = fl.ModelState(w=np.array([5.0, 0.0]), round=0,
                              prunable=task.prunable)
        _, acc = fl.evaluate(state, X, y, task)
        assert acc == 1.0
        rng = np.random.default_rng(17)
        Xr = rng.standard_normal((4000, 2))
        yr = (rng.random(4000) < 0.5).astype(float)
        _, acc_r = fl.evaluate(fl.ModelState(w=np.array([1.0, 1.0]), round=0,
                                             prunable=task.prunable), Xr, yr, task)
        assert acc_r == pytest.approx(0.5, abs=0.05)

    def test_full_batch_descent_decreases_loss(self):
        """Ideal gradient descent on the convex task is monotone for small eta."""
        rng = np.random.default_rng(18)
        task = LogisticL2(dim=5, l2=0.1)
        X, y = gaussian_mixture(400, 5, 2.0, rng)
        w = rng.standard_normal(5)
        losses = [task.loss(w, X, y)]
        for _ in range(30):
            w = w - 0.5 * task.gradient(w, X, y)
            losses.append(task.loss(w, X, y))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
