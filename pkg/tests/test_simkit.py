import numpy as np
import pytest

from cgame import (
    ConfigError,
    DataError,
    SimConfig,
    TimedRoute,
    TravelTimeModel,
    accumulate_counts,
    accumulate_od,
    build_grid,
    build_route_dictionary,
    generate_dataset,
    load_dataset,
    sample_demand,
    save_dataset,
    simulate_item,
    timestamp_route,
)
from cgame.netgen import Trip
from cgame.simkit import TimedStep, split_counts


def naive_counts(timed_routes, n_l, n_t):
    """Oracle: plain per-trip, per-step accumulation."""
    out = np.zeros((n_l, n_t))
    for route in timed_routes:
        for link, timeslice in route.steps:
            out[link, timeslice] += route.trip_count
    return out


def naive_od(timed_routes, n_p):
    out = np.zeros((n_p, n_p))
    for route in timed_routes:
        out[route.origin, route.destination] += route.trip_count
    return out


def random_timed_routes(rng, n_routes, n_l, n_t, n_p):
    routes = []
    for _ in range(n_routes):
        origin, destination = rng.choice(n_p, size=2, replace=False)
        n_steps = int(rng.integers(0, 5))
        steps = tuple(
            TimedStep(int(rng.integers(0, n_l)), int(rng.integers(0, n_t)))
            for _ in range(n_steps)
        )
        routes.append(
            TimedRoute(int(origin), int(destination), steps, int(rng.integers(1, 6)))
        )
    return routes


class TestTravelTimeModel:
    def test_rejects_nonpositive_floor(self):
        with pytest.raises(ConfigError):
            TravelTimeModel(speed_floor_mps=0.0)

    def test_rejects_nonpositive_mean(self):
        with pytest.raises(ConfigError):
            TravelTimeModel(speed_mean_mps=-1.0)

    def test_speeds_are_clamped_and_floored(self, rng):
        model = TravelTimeModel(speed_mean_mps=2.0, speed_sd_mps=2.0, speed_floor_mps=1.0)
        speeds = model.sample_speeds(rng, 10_000)
        assert speeds.min() >= 1.0
        assert speeds.max() <= 2.0 + 3 * 2.0

    def test_zero_variance_is_constant(self, rng):
        model = TravelTimeModel(speed_mean_mps=10.0, speed_sd_mps=0.0)
        assert np.all(model.sample_speeds(rng, 5) == 10.0)


class TestTimestampRoute:
    def _setup(self, link_length=1200.0):
        net = build_grid(2, 2, link_length)
        return net, build_route_dictionary(net, cap=10)

    def test_both_entries_in_first_slice(self):
        # constant 120 s per link, depart at 0: both links enter slice 0
        net, d = self._setup(link_length=1200.0)
        model = TravelTimeModel(speed_mean_mps=10.0, speed_sd_mps=0.0)
        trip = Trip(0, 3, 0.0, 0)
        timed = timestamp_route(trip, net, d, model, 4, 300.0, np.random.default_rng(0))
        assert [s.timeslice for s in timed.steps] == [0, 0]
        assert len(timed.steps) == 2

    def test_slice_boundary_by_hand(self):
        # depart 290 s, second link entered at 410 s: slices floor(290/300)=0, floor(410/300)=1
        net, d = self._setup(link_length=1200.0)
        model = TravelTimeModel(speed_mean_mps=10.0, speed_sd_mps=0.0)
        trip = Trip(0, 3, 290.0, 0)
        timed = timestamp_route(trip, net, d, model, 4, 300.0, np.random.default_rng(0))
        assert [s.timeslice for s in timed.steps] == [0, 1]

    def test_zero_variance_model_is_deterministic(self):
        net, d = self._setup()
        model = TravelTimeModel(speed_sd_mps=0.0)
        trip = Trip(0, 3, 100.0, 0)
        a = timestamp_route(trip, net, d, model, 4, 300.0, np.random.default_rng(1))
        b = timestamp_route(trip, net, d, model, 4, 300.0, np.random.default_rng(2))
        assert a == b

    def test_steps_beyond_horizon_are_dropped(self):
        net, d = self._setup(link_length=1200.0)
        model = TravelTimeModel(speed_mean_mps=10.0, speed_sd_mps=0.0)
        # depart 250 s with horizon 300 s: first link enters, second (at 370 s) does not
        trip = Trip(0, 3, 250.0, 0)
        timed = timestamp_route(trip, net, d, model, 1, 300.0, np.random.default_rng(0))
        assert len(timed.steps) == 1

    def test_slices_never_decrease_along_route(self):
        net = build_grid(3, 3, 800.0)
        d = build_route_dictionary(net, cap=10)
        model = TravelTimeModel()
        rng = np.random.default_rng(5)
        for _ in range(50):
            trip = Trip(0, 8, float(rng.uniform(0, 900)), int(rng.integers(0, 6)))
            timed = timestamp_route(trip, net, d, model, 12, 100.0, rng)
            slices = [s.timeslice for s in timed.steps]
            assert slices == sorted(slices)
            assert all(0 <= s < 12 for s in slices)


class TestAccumulators:
    def test_counts_by_hand(self):
        r1 = TimedRoute(0, 1, (TimedStep(1, 1), TimedStep(2, 2)), trip_count=3)
        r2 = TimedRoute(0, 2, (TimedStep(1, 1),), trip_count=2)
        counts = accumulate_counts([r1, r2], n_l=4, n_t=4)
        assert counts[1, 1] == 5
        assert counts[2, 2] == 3
        assert counts.sum() == 8

    def test_empty_routes_give_zero_matrices(self):
        assert accumulate_counts([], 3, 2).sum() == 0
        assert accumulate_od([], 3).sum() == 0

    def test_single_step_single_count(self):
        counts = accumulate_counts([TimedRoute(0, 1, (TimedStep(0, 0),))], 2, 2)
        assert counts[0, 0] == 1
        assert counts.sum() == 1

    def test_od_by_hand(self):
        r1 = TimedRoute(1, 2, (), trip_count=3)
        r2 = TimedRoute(1, 3, (), trip_count=2)
        od = accumulate_od([r1, r2], n_p=4)
        assert od[1, 2] == 3
        assert od[1, 3] == 2
        assert od.sum() == 5

    def test_od_total_equals_trip_count_sum(self, rng):
        routes = random_timed_routes(rng, 200, n_l=6, n_t=4, n_p=5)
        od = accumulate_od(routes, 5)
        assert od.sum() == sum(r.trip_count for r in routes)

    def test_matches_naive_loop_on_random_instances(self, rng):
        for _ in range(25):
            n_l, n_t, n_p = 7, 5, 6
            routes = random_timed_routes(rng, int(rng.integers(0, 40)), n_l, n_t, n_p)
            np.testing.assert_array_equal(
                accumulate_counts(routes, n_l, n_t), naive_counts(routes, n_l, n_t)
            )
            np.testing.assert_array_equal(accumulate_od(routes, n_p), naive_od(routes, n_p))

    def test_out_of_range_indices_rejected(self):
        bad_step = TimedRoute(0, 1, (TimedStep(5, 0),))
        with pytest.raises(IndexError):
            accumulate_counts([bad_step], n_l=4, n_t=4)
        bad_slice = TimedRoute(0, 1, (TimedStep(0, 9),))
        with pytest.raises(IndexError):
            accumulate_counts([bad_slice], n_l=4, n_t=4)
        with pytest.raises(IndexError):
            accumulate_od([TimedRoute(0, 7, ())], n_p=4)


class TestSimulateItem:
    def _setup(self):
        net = build_grid(3, 3, 600.0)
        return net, build_route_dictionary(net, cap=10)

    def test_matches_per_route_accumulation(self):
        net, d = self._setup()
        table = sample_demand(d, 400, 1200.0, seed=9)
        model = TravelTimeModel()
        counts, od, routes = simulate_item(
            net, d, table, model, 4, 300.0, np.random.default_rng(3), return_routes=True
        )
        assert len(routes) == 400
        np.testing.assert_array_equal(counts, accumulate_counts(routes, net.n_links, 4))
        np.testing.assert_array_equal(od, accumulate_od(routes, net.n_spots))

    def test_route_paths_honor_the_dictionary(self):
        net, d = self._setup()
        table = sample_demand(d, 100, 1200.0, seed=4)
        model = TravelTimeModel(speed_sd_mps=0.0)
        _, _, routes = simulate_item(
            net, d, table, model, 4, 300.0, np.random.default_rng(0), return_routes=True
        )
        dict_links = {
            (o, dst): {r.links for r in d.routes(o, dst)} for (o, dst) in d.entries
        }
        for timed in routes:
            links = tuple(step.link for step in timed.steps)
            # truncated steps shorten the chain but keep it a prefix of a dictionary route
            assert any(
                known[: len(links)] == links
                for known in dict_links[(timed.origin, timed.destination)]
            )

    def test_conservation_identities(self):
        net, d = self._setup()
        table = sample_demand(d, 250, 1200.0, seed=2)
        model = TravelTimeModel()
        counts, od, routes = simulate_item(
            net, d, table, model, 4, 300.0, np.random.default_rng(1), return_routes=True
        )
        assert od.sum() == len(table.trips)
        assert counts.sum() == sum(len(r.steps) for r in routes)
        assert np.all(np.diag(od) == 0)
        assert np.all(counts >= 0) and np.all(od >= 0)
        assert np.all(counts == np.round(counts)) and np.all(od == np.round(od))


class TestGenerateDataset:
    def _config(self, **overrides):
        base = dict(
            rows=2,
            cols=2,
            link_length_m=500.0,
            n_items=10,
            n_timeslices=4,
            slice_s=300.0,
            period_s=1200.0,
            trips_min=30,
            trips_max=60,
            route_cap=10,
        )
        base.update(overrides)
        return SimConfig(**base)

    def test_shapes_follow_network_and_slicing(self):
        ds = generate_dataset(self._config(), seed=5)
        assert ds.counts.shape == (10, 8, 4)
        assert ds.ods.shape == (10, 4, 4)

    def test_reference_shapes_from_defaults(self):
        cfg = SimConfig(n_items=1, trips_min=100, trips_max=120)
        ds = generate_dataset(cfg, seed=0)
        assert ds.counts.shape == (1, 120, 12)
        assert ds.ods.shape == (1, 36, 36)

    def test_same_seed_is_bit_identical(self):
        a = generate_dataset(self._config(), seed=7)
        b = generate_dataset(self._config(), seed=7)
        assert np.array_equal(a.counts, b.counts)
        assert np.array_equal(a.ods, b.ods)
        assert a.train_indices == b.train_indices
        assert a.val_indices == b.val_indices

    def test_different_seeds_differ(self):
        a = generate_dataset(self._config(), seed=1)
        b = generate_dataset(self._config(), seed=2)
        assert not np.array_equal(a.counts, b.counts)

    def test_split_is_disjoint_and_complete(self):
        ds = generate_dataset(self._config(n_items=13), seed=3)
        train, val = set(ds.train_indices), set(ds.val_indices)
        assert train.isdisjoint(val)
        assert train | val == set(range(13))

    def test_split_counts_match_published_arithmetic(self):
        # 12292 items at 80/20 split: 9834 train, 2458 validation
        assert split_counts(12292, 0.8) == (9834, 2458)
        assert split_counts(10, 0.8) == (8, 2)
        assert split_counts(5, 0.8) == (4, 1)


class TestDatasetPersistence:
    def test_round_trip_is_exact(self, tmp_path, toy_dataset):
        save_dataset(toy_dataset, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert np.array_equal(loaded.counts, toy_dataset.counts)
        assert np.array_equal(loaded.ods, toy_dataset.ods)
        assert loaded.train_indices == toy_dataset.train_indices
        assert loaded.val_indices == toy_dataset.val_indices
        assert loaded.meta == toy_dataset.meta

    def test_saved_bytes_are_deterministic(self, tmp_path, toy_dataset):
        save_dataset(toy_dataset, tmp_path / "a")
        save_dataset(toy_dataset, tmp_path / "b")
        assert (tmp_path / "a/data.bin").read_bytes() == (tmp_path / "b/data.bin").read_bytes()
        assert (
            (tmp_path / "a/manifest.json").read_bytes()
            == (tmp_path / "b/manifest.json").read_bytes()
        )

    def test_truncated_blob_is_detected(self, tmp_path, toy_dataset):
        path = save_dataset(toy_dataset, tmp_path / "ds")
        blob = (path / "data.bin").read_bytes()
        (path / "data.bin").write_bytes(blob[:-8])
        with pytest.raises(DataError, match="bytes"):
            load_dataset(path)

    def test_corrupted_blob_fails_checksum(self, tmp_path, toy_dataset):
        path = save_dataset(toy_dataset, tmp_path / "ds")
        blob = bytearray((path / "data.bin").read_bytes())
        blob[0] ^= 0xFF
        (path / "data.bin").write_bytes(bytes(blob))
        with pytest.raises(DataError, match="checksum"):
            load_dataset(path)

    def test_unsupported_version_is_rejected(self, tmp_path, toy_dataset):
        import json

        path = save_dataset(toy_dataset, tmp_path / "ds")
        manifest = json.loads((path / "manifest.json").read_text())
        manifest["format_version"] = 99
        (path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError, match="version"):
            load_dataset(path)
