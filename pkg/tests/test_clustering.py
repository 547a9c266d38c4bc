import numpy as np
import pytest

from maclr.clustering import (SINGLETON, ClusterState, ScheduleConfig,
                              dump_assignments, kmeans, positives_by_key,
                              positives_in_batch, schedule_K)


def nearest_centroid_oracle(points, centroids):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def two_blobs(seed, n_per=30, d=6, gap=10.0, spread=0.1):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, spread, size=(n_per, d))
    b = rng.normal(0.0, spread, size=(n_per, d))
    b[:, 0] += gap
    return np.vstack([a, b]).astype(np.float32)


class TestKmeans:
    def test_k1_centroid_is_mean(self):
        rng = np.random.default_rng(0)
        points = rng.standard_normal((20, 4))
        state = kmeans(points, K=1, seed=0)
        np.testing.assert_allclose(state.centroids[0], points.mean(axis=0),
                                   rtol=1e-5, atol=1e-6)
        assert np.all(state.assignment == 0)

    def test_two_separated_blobs_recovered(self):
        for seed in range(20):
            points = two_blobs(seed)
            state = kmeans(points, K=2, seed=seed)
            first_half = set(state.assignment[:30].tolist())
            second_half = set(state.assignment[30:].tolist())
            assert len(first_half) == 1 and len(second_half) == 1
            assert first_half != second_half

    def test_objective_monotone_and_fixpoint(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            points = rng.standard_normal((100, 8))
            state = kmeans(points, K=5, seed=trial)
            trace = state.objective_trace
            assert all(a >= b - 1e-9 for a, b in zip(trace, trace[1:]))
            oracle = nearest_centroid_oracle(points, state.centroids.astype(np.float64))
            np.testing.assert_array_equal(state.assignment, oracle)

    def test_k_equals_n_gives_singletons(self):
        rng = np.random.default_rng(2)
        points = rng.standard_normal((8, 3))
        state = kmeans(points, K=8, seed=0)
        assert sorted(state.assignment.tolist()) == list(range(8))
        assert state.objective == pytest.approx(0.0, abs=1e-12)

    def test_k_exceeds_rows_rejected(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 2)), K=4, seed=0)

    def test_duplicate_points_handled(self):
        points = np.tile(np.array([[1.0, 2.0]]), (6, 1))
        state = kmeans(points, K=3, seed=0)
        # all points identical: objective must be 0 whatever the grouping
        assert state.objective == pytest.approx(0.0, abs=1e-12)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(3)
        points = rng.standard_normal((50, 5))
        a = kmeans(points, K=4, seed=11)
        b = kmeans(points, K=4, seed=11)
        np.testing.assert_array_equal(a.assignment, b.assignment)
        np.testing.assert_array_equal(a.centroids, b.centroids)


class TestScheduleK:
    CFG = ScheduleConfig(K_0=2048, T_K=10_000, T_update=5_000, T_total=100_000)

    def test_paper_scale_values(self):
        n = 10 ** 9
        assert schedule_K(self.CFG, 25_000, n) == 8192
        assert schedule_K(self.CFG, 50_000, n) is SINGLETON

    def test_doubling_boundaries(self):
        n = 10 ** 9
        assert schedule_K(self.CFG, 1, n) == 2048
        assert schedule_K(self.CFG, 10_000, n) == 2048
        assert schedule_K(self.CFG, 10_001, n) == 4096
        assert schedule_K(self.CFG, 40_001, n) == 32_768
        assert schedule_K(self.CFG, 49_999, n) == 32_768

    def test_singleton_from_half_onward(self):
        cfg = ScheduleConfig(K_0=2, T_K=2, T_update=2, T_total=9)
        # ceil(9 / 2) = 5
        assert schedule_K(cfg, 4, 100) == 4
        for step in range(5, 10):
            assert schedule_K(cfg, step, 100) is SINGLETON

    def test_clamped_at_n_instances(self):
        cfg = ScheduleConfig(K_0=64, T_K=10, T_update=10, T_total=1000)
        for step in (1, 250, 499):
            assert schedule_K(cfg, step, 64) == 64

    def test_non_decreasing_before_switch(self):
        cfg = ScheduleConfig(K_0=4, T_K=7, T_update=7, T_total=100)
        values = [schedule_K(cfg, t, 10 ** 6) for t in range(1, 50)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_out_of_range_step(self):
        with pytest.raises(ValueError):
            schedule_K(self.CFG, 0, 10)
        with pytest.raises(ValueError):
            schedule_K(self.CFG, 100_001, 10)


class TestPositives:
    def test_singleton_mode(self):
        sets = positives_in_batch(SINGLETON, [10, 20, 30, 40])
        assert [s.tolist() for s in sets] == [[0], [1], [2], [3]]

    def test_cluster_co_membership(self):
        assignment = np.array([7, 7, 3, 7])
        state = ClusterState(K=8, assignment=assignment,
                             centroids=np.zeros((8, 2)), objective=0.0)
        sets = positives_in_batch(state, [0, 1, 2, 3])
        assert sets[0].tolist() == [0, 1, 3]
        assert sets[1].tolist() == [0, 1, 3]
        assert sets[2].tolist() == [2]
        assert sets[3].tolist() == [0, 1, 3]

    def test_all_same_cluster(self):
        state = ClusterState(K=1, assignment=np.zeros(10, dtype=np.int64),
                             centroids=np.zeros((1, 2)), objective=0.0)
        sets = positives_in_batch(state, list(range(5)))
        for s in sets:
            assert s.tolist() == [0, 1, 2, 3, 4]

    def test_reflexive_in_all_modes(self):
        rng = np.random.default_rng(4)
        assignment = rng.integers(0, 5, size=50)
        state = ClusterState(K=5, assignment=assignment,
                             centroids=np.zeros((5, 2)), objective=0.0)
        batch = rng.integers(0, 50, size=16).tolist()
        for i, s in enumerate(positives_in_batch(state, batch)):
            assert i in s.tolist()
        for i, s in enumerate(positives_in_batch(SINGLETON, batch)):
            assert s.tolist() == [i]

    def test_positives_by_key_groups_duplicates(self):
        sets = positives_by_key([9, 5, 9, 9, 5])
        assert sets[0].tolist() == [0, 2, 3]
        assert sets[1].tolist() == [1, 4]
        assert sets[2].tolist() == [0, 2, 3]


def test_dump_assignments(tmp_path):
    state = ClusterState(K=2, assignment=np.array([0, 1, 0]),
                         centroids=np.zeros((2, 2)), objective=0.0)
    path = tmp_path / "assignments.txt"
    dump_assignments(state, [10, 11, 12], path)
    assert path.read_text() == "10 0\n11 1\n12 0\n"
