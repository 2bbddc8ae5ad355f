import numpy as np
import pytest

from setonet.models import SensorSet
from setonet.sensors import (
    apply_dropoff,
    drop_count,
    dropoff_batch,
    linspace_indices,
    replace_dropped,
    resample_variable_layout,
    sample_fixed_layout,
    sensor_count_ablation,
    shared_dropoff_batch,
)


class TestLayouts:
    def test_linspace_indices_endpoints(self):
        idx = linspace_indices(501, 300)
        assert len(idx) == 300
        assert idx[0] == 0 and idx[-1] == 500
        assert np.all(np.diff(idx) > 0)

    def test_linspace_indices_too_many(self):
        with pytest.raises(ValueError, match="超过网格分辨率"):
            linspace_indices(501, 600)

    def test_fixed_layout_reproducible_and_sorted(self):
        a = sample_fixed_layout([-1.0], [1.0], 50, seed=3)
        b = sample_fixed_layout([-1.0], [1.0], 50, seed=3)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (50, 1)
        assert np.all(np.diff(a[:, 0]) >= 0)
        assert a.min() >= -1.0 and a.max() <= 1.0

    def test_fixed_layout_from_grid(self):
        grid = np.linspace(0, 1, 11)
        layout = sample_fixed_layout([0.0], [1.0], 6, seed=0, grid=grid)
        np.testing.assert_allclose(layout[:, 0], np.linspace(0, 1, 6))

    def test_fixed_layout_rejects_empty(self):
        with pytest.raises(ValueError, match="至少为 1"):
            sample_fixed_layout([0.0], [1.0], 0, seed=0)

    def test_variable_layout_2d_in_domain(self, rng):
        x = resample_variable_layout([0.0, -5.0], [1.0, 5.0], 40, rng)
        assert x.shape == (40, 2)
        assert np.all(x[:, 0] <= 1.0) and np.all(x[:, 1] >= -5.0)

    def test_variable_layout_is_centred(self, rng):
        x = resample_variable_layout([-1.0], [1.0], 100_000, rng)
        assert abs(x.mean()) < 0.01
        assert np.all(np.diff(x[:, 0]) >= 0)


class TestDropoff:
    def test_drop_count_floor(self):
        assert drop_count(100, 0.2) == 20
        assert drop_count(9, 0.2) == 1
        assert drop_count(4, 0.2) == 0

    def test_drop_count_rejects_bad_rate(self):
        with pytest.raises(ValueError, match="丢弃比例必须位于"):
            drop_count(10, 1.0)
        with pytest.raises(ValueError, match="丢弃比例必须位于"):
            drop_count(10, -0.1)

    def test_rate_zero_is_identity(self, rng):
        s = SensorSet(rng.uniform(size=(10, 1)), rng.normal(size=(10, 1)))
        out = apply_dropoff(s, 0.0, rng)
        np.testing.assert_array_equal(out.locations, s.locations)
        np.testing.assert_array_equal(out.values, s.values)

    def test_cardinality_preserved_and_pairs_copied(self, rng):
        locations = np.linspace(0, 1, 20)[:, None]
        values = np.arange(20, dtype=float)[:, None]
        out = apply_dropoff(SensorSet(locations, values), 0.25, rng)
        assert out.size == 20
        # every output is an original (location, value) pair
        for loc, val in zip(out.locations[:, 0], out.values[:, 0]):
            assert locations[int(val), 0] == loc
        # exactly 5 originals were replaced by neighbours
        assert len(np.unique(out.values)) == 15

    def test_nearest_kept_neighbour(self):
        locations = np.array([[0.0], [0.1], [0.5], [0.55]])
        source = replace_dropped(locations, np.array([1, 3]))
        np.testing.assert_array_equal(source, [0, 0, 2, 2])

    def test_tie_breaks_to_lowest_index(self):
        locations = np.array([[0.0], [1.0], [2.0]])
        source = replace_dropped(locations, np.array([1]))
        np.testing.assert_array_equal(source, [0, 0, 2])

    def test_dropoff_masks_drawn_per_sample(self, rng):
        locations = np.broadcast_to(np.linspace(0, 1, 50)[None, :, None], (2, 50, 1)).copy()
        values = np.broadcast_to(np.arange(50, dtype=float)[None, :, None], (2, 50, 1)).copy()
        out_loc, out_val = dropoff_batch(locations, values, 0.2, rng)
        assert out_loc.shape == (2, 50, 1)
        assert not np.array_equal(out_val[0], out_val[1])

    def test_variable_mask_shared_across_batch(self, rng):
        locations = np.broadcast_to(np.linspace(0, 1, 50)[None, :, None], (3, 50, 1)).copy()
        values = rng.normal(size=(3, 50, 1))
        out_loc, out_val = shared_dropoff_batch(locations, values, 0.2, rng)
        np.testing.assert_array_equal(out_loc[0], out_loc[1])
        np.testing.assert_array_equal(out_loc[0], out_loc[2])
        assert len(np.unique(out_loc[0, :, 0])) == 40
        # each sample keeps its own values under the shared index
        for b in range(3):
            assert set(out_val[b, :, 0]) <= set(values[b, :, 0])

    def test_drop_selection_is_uniform(self):
        rng = np.random.default_rng(11)
        M, rate, trials = 10, 0.2, 10_000
        locations = np.linspace(0, 1, M)[:, None]
        values = np.arange(M, dtype=float)[:, None]
        counts = np.zeros(M)
        for _ in range(trials):
            out = apply_dropoff(SensorSet(locations, values), rate, rng)
            # dropped sensors are the ones whose value no longer appears
            counts[np.setdiff1d(np.arange(M), out.values[:, 0].astype(int))] += 1
        sigma = np.sqrt(trials * rate * (1 - rate))
        assert np.all(np.abs(counts - trials * rate) <= 3 * sigma)


class TestSensorCountAblation:
    def test_rows_per_count(self, small_darcy_card):
        from setonet.benchmarks import generate_split
        from setonet.models import MetricsRecord

        dataset = generate_split(small_darcy_card, "test", 2, seed=0)
        seen = []

        def fake_evaluate(model, view, card, protocol, **kwargs):
            seen.append(view.n_sensors)
            assert protocol == "fixed"
            return MetricsRecord(step=0, test_mse=1.0 / view.n_sensors, rel_l2=0.5)

        rows = sensor_count_ablation(None, dataset, small_darcy_card, [10, 25, 50], evaluate_fn=fake_evaluate)
        assert seen == [10, 25, 50]
        assert [r["count"] for r in rows] == [10, 25, 50]
        assert rows[0]["mse"] == pytest.approx(0.1)
