"""Trip simulation and dataset generation.

Each trip becomes a timed route: the ordered links of its chosen route, each
tagged with the time slice in which the trip enters that link.  Two observable
matrices summarize a set of timed routes:

* the link counts matrix ``F`` (n_links x n_timeslices): entry ``(l, t)`` is
  the number of trips entering link ``l`` during slice ``t``;
* the OD matrix ``D`` (n_spots x n_spots): entry ``(o, d)`` is the number of
  trips departing from ``o`` toward ``d`` during the period.

Link travel times come from a kinematic stand-in for a microsimulator: each
(trip, link) draws a speed from a clamped normal distribution and the travel
time is ``length / speed``.  Trips that run past the observation horizon keep
their full weight in ``D`` (which counts departures) but contribute only the
link entries that fall inside the horizon to ``F``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, DataError
from .netgen import (
    RoadNetwork,
    RouteDictionary,
    Trip,
    TripTable,
    build_grid,
    build_route_dictionary,
    sample_demand_with_rng,
)

DATASET_FORMAT_VERSION = 1


class TimedStep(NamedTuple):
    link: int
    timeslice: int


@dataclass(frozen=True)
class TimedRoute:
    origin: int
    destination: int
    steps: tuple[TimedStep, ...]
    trip_count: int = 1


@dataclass(frozen=True)
class TravelTimeModel:
    """Per-link travel time: ``length / speed`` with a random speed.

    Speeds are drawn from a normal distribution, clamped to
    ``mean +- truncation_sigmas * sd`` and floored at ``speed_floor_mps``.
    The floor must be positive so every travel time is positive.
    """

    speed_mean_mps: float = 12.0
    speed_sd_mps: float = 2.0
    speed_floor_mps: float = 1.0
    truncation_sigmas: float = 3.0

    def __post_init__(self) -> None:
        if self.speed_mean_mps <= 0:
            raise ConfigError(f"mean speed must be positive, got {self.speed_mean_mps}")
        if self.speed_sd_mps < 0:
            raise ConfigError(f"speed sd must be nonnegative, got {self.speed_sd_mps}")
        if self.speed_floor_mps <= 0:
            raise ConfigError(
                f"speed floor must be positive to keep travel times positive, "
                f"got {self.speed_floor_mps}"
            )
        if self.truncation_sigmas <= 0:
            raise ConfigError(f"truncation width must be positive, got {self.truncation_sigmas}")

    def sample_speeds(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.speed_sd_mps == 0:
            return np.full(shape, self.speed_mean_mps)
        speeds = rng.normal(self.speed_mean_mps, self.speed_sd_mps, size=shape)
        half_width = self.truncation_sigmas * self.speed_sd_mps
        np.clip(
            speeds,
            self.speed_mean_mps - half_width,
            self.speed_mean_mps + half_width,
            out=speeds,
        )
        return np.maximum(speeds, self.speed_floor_mps)


def _route_steps(
    link_ids: np.ndarray,
    lengths: np.ndarray,
    departs: np.ndarray,
    speeds: np.ndarray,
    n_t: int,
    slice_s: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized slice assignment for a batch of trips on one route.

    ``departs`` has shape (n_trips,), ``speeds`` (n_trips, n_links_on_route).
    Returns the (n_trips, n_links) slice-index matrix and the boolean mask of
    steps entered before the observation horizon ``n_t * slice_s``.
    """
    times = lengths[np.newaxis, :] / speeds
    entry = departs[:, np.newaxis] + np.concatenate(
        [np.zeros((times.shape[0], 1)), np.cumsum(times, axis=1)[:, :-1]], axis=1
    )
    horizon = n_t * slice_s
    mask = entry < horizon
    slices = np.floor_divide(entry, slice_s).astype(np.int64)
    return slices, mask


def timestamp_route(
    trip: Trip,
    network: RoadNetwork,
    dictionary: RouteDictionary,
    travel_time_model: TravelTimeModel,
    n_t: int,
    slice_s: float,
    rng: np.random.Generator,
) -> TimedRoute:
    """Assign a time slice to every link of one trip's route.

    A link's entry time is the depart time plus the travel times of the links
    before it; its slice is ``floor(entry / slice_s)``.  Steps entered at or
    after the horizon ``n_t * slice_s`` are dropped.
    """
    if slice_s <= 0:
        raise ConfigError(f"slice_s must be positive, got {slice_s}")
    route = dictionary.routes(trip.origin, trip.destination)[trip.route_index]
    link_ids = np.array(route.links, dtype=np.int64)
    lengths = np.array([network.links[l].length_m for l in route.links])
    speeds = travel_time_model.sample_speeds(rng, (1, len(link_ids)))
    slices, mask = _route_steps(
        link_ids, lengths, np.array([trip.depart_time_s]), speeds, n_t, slice_s
    )
    steps = tuple(
        TimedStep(int(l), int(s)) for l, s, keep in zip(link_ids, slices[0], mask[0]) if keep
    )
    return TimedRoute(origin=trip.origin, destination=trip.destination, steps=steps)


def accumulate_counts(
    timed_routes: Iterable[TimedRoute], n_l: int, n_t: int
) -> np.ndarray:
    """Sum trip counts into the link counts matrix ``F`` (exact integers)."""
    counts = np.zeros((n_l, n_t), dtype=np.int64)
    for route in timed_routes:
        for link, timeslice in route.steps:
            if not (0 <= link < n_l and 0 <= timeslice < n_t):
                raise IndexError(
                    f"step ({link}, {timeslice}) outside a {n_l}x{n_t} counts matrix"
                )
            counts[link, timeslice] += route.trip_count
    return counts.astype(np.float64)


def accumulate_od(timed_routes: Iterable[TimedRoute], n_p: int) -> np.ndarray:
    """Sum trip counts into the OD matrix ``D`` (exact integers)."""
    od = np.zeros((n_p, n_p), dtype=np.int64)
    for route in timed_routes:
        if not (0 <= route.origin < n_p and 0 <= route.destination < n_p):
            raise IndexError(
                f"pair ({route.origin}, {route.destination}) outside {n_p} spots"
            )
        od[route.origin, route.destination] += route.trip_count
    return od.astype(np.float64)


def simulate_item(
    network: RoadNetwork,
    dictionary: RouteDictionary,
    table: TripTable,
    travel_time_model: TravelTimeModel,
    n_t: int,
    slice_s: float,
    rng: np.random.Generator,
    *,
    return_routes: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[TimedRoute] | None]:
    """Simulate one trip table into its ``(F, D)`` observation pair.

    Trips are grouped by (origin, destination, route index) and each group's
    speeds are drawn in one call, in sorted group order, so results are
    deterministic for a given generator state.  With ``return_routes`` the
    per-trip timed routes are materialized as well (one route per trip).
    """
    if slice_s <= 0:
        raise ConfigError(f"slice_s must be positive, got {slice_s}")
    n_l, n_p = network.n_links, network.n_spots
    counts = np.zeros((n_l, n_t), dtype=np.int64)
    od = np.zeros((n_p, n_p), dtype=np.int64)
    routes_out: list[TimedRoute] | None = [] if return_routes else None

    groups: dict[tuple[int, int, int], list[float]] = {}
    for trip in table.trips:
        groups.setdefault((trip.origin, trip.destination, trip.route_index), []).append(
            trip.depart_time_s
        )

    for (origin, destination, route_index) in sorted(groups):
        departs = np.array(groups[(origin, destination, route_index)])
        route = dictionary.routes(origin, destination)[route_index]
        link_ids = np.array(route.links, dtype=np.int64)
        lengths = np.array([network.links[l].length_m for l in route.links])
        speeds = travel_time_model.sample_speeds(rng, (len(departs), len(link_ids)))
        slices, mask = _route_steps(link_ids, lengths, departs, speeds, n_t, slice_s)

        tiled_links = np.broadcast_to(link_ids, slices.shape)
        np.add.at(counts, (tiled_links[mask], slices[mask]), 1)
        od[origin, destination] += len(departs)

        if routes_out is not None:
            for row in range(len(departs)):
                steps = tuple(
                    TimedStep(int(l), int(s))
                    for l, s, keep in zip(link_ids, slices[row], mask[row])
                    if keep
                )
                routes_out.append(TimedRoute(origin, destination, steps))

    return counts.astype(np.float64), od.astype(np.float64), routes_out


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a generated dataset except the seed."""

    rows: int = 6
    cols: int = 6
    link_length_m: float = 2000.0
    n_items: int = 12292
    n_timeslices: int = 12
    slice_s: float = 300.0
    period_s: float = 3600.0
    trips_min: int = 20000
    trips_max: int = 30000
    route_cap: int = 20
    concentration: float | None = 1.0
    hotspot_fraction: float = 0.05
    hotspot_boost: float = 10.0
    speed_mean_mps: float = 12.0
    speed_sd_mps: float = 2.0
    speed_floor_mps: float = 1.0
    train_fraction: float = 0.8

    def __post_init__(self) -> None:
        if self.n_items < 1:
            raise ConfigError(f"n_items must be at least 1, got {self.n_items}")
        if self.n_timeslices < 1:
            raise ConfigError(f"n_timeslices must be at least 1, got {self.n_timeslices}")
        if self.slice_s <= 0 or self.period_s <= 0:
            raise ConfigError("slice_s and period_s must be positive")
        if not 0 <= self.trips_min <= self.trips_max:
            raise ConfigError(
                f"need 0 <= trips_min <= trips_max, got {self.trips_min}, {self.trips_max}"
            )
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")

    def travel_time_model(self) -> TravelTimeModel:
        return TravelTimeModel(
            speed_mean_mps=self.speed_mean_mps,
            speed_sd_mps=self.speed_sd_mps,
            speed_floor_mps=self.speed_floor_mps,
        )


@dataclass
class Dataset:
    """Stacked observation pairs plus a train/validation split."""

    counts: np.ndarray  # (n_items, n_links, n_timeslices)
    ods: np.ndarray  # (n_items, n_spots, n_spots)
    train_indices: list[int]
    val_indices: list[int]
    meta: dict

    @property
    def n_items(self) -> int:
        return self.counts.shape[0]

    @property
    def n_links(self) -> int:
        return self.counts.shape[1]

    @property
    def n_timeslices(self) -> int:
        return self.counts.shape[2]

    @property
    def n_spots(self) -> int:
        return self.ods.shape[1]


def split_counts(n_items: int, train_fraction: float) -> tuple[int, int]:
    """Train/validation sizes: train gets round(n * fraction), rest validates."""
    n_train = int(n_items * train_fraction + 0.5)
    return n_train, n_items - n_train


def generate_dataset(config: SimConfig, seed: int) -> Dataset:
    """Generate ``config.n_items`` observation pairs from independent sub-seeds.

    Item ``i`` depends only on (config, child seed ``i``), so regenerating with
    the same seed reproduces the dataset bit for bit.
    """
    network = build_grid(config.rows, config.cols, config.link_length_m)
    dictionary = build_route_dictionary(network, config.route_cap)
    model = config.travel_time_model()

    children = np.random.SeedSequence(seed).spawn(config.n_items + 1)
    split_rng = np.random.default_rng(children[0])

    counts = np.empty((config.n_items, network.n_links, config.n_timeslices))
    ods = np.empty((config.n_items, network.n_spots, network.n_spots))
    for i in range(config.n_items):
        rng = np.random.default_rng(children[i + 1])
        total = int(rng.integers(config.trips_min, config.trips_max + 1))
        table = sample_demand_with_rng(
            dictionary,
            total,
            config.period_s,
            rng,
            concentration=config.concentration,
            hotspot_fraction=config.hotspot_fraction,
            hotspot_boost=config.hotspot_boost,
        )
        counts[i], ods[i], _ = simulate_item(
            network, dictionary, table, model, config.n_timeslices, config.slice_s, rng
        )

    n_train, _ = split_counts(config.n_items, config.train_fraction)
    perm = split_rng.permutation(config.n_items)
    train_indices = sorted(int(i) for i in perm[:n_train])
    val_indices = sorted(int(i) for i in perm[n_train:])

    meta = asdict(config)
    meta["seed"] = seed
    return Dataset(
        counts=counts,
        ods=ods,
        train_indices=train_indices,
        val_indices=val_indices,
        meta=meta,
    )


def _dataset_blob(dataset: Dataset) -> bytes:
    parts = []
    for i in range(dataset.n_items):
        parts.append(dataset.counts[i].astype("<f4").tobytes())
        parts.append(dataset.ods[i].astype("<f4").tobytes())
    return b"".join(parts)


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write a dataset directory: ``manifest.json`` plus ``data.bin``.

    The blob holds, per item, ``F`` then ``D`` as row-major little-endian
    32-bit floats; the manifest records shapes, the split, generation
    metadata, and the blob's SHA-256.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = _dataset_blob(dataset)
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "n_items": dataset.n_items,
        "n_links": dataset.n_links,
        "n_timeslices": dataset.n_timeslices,
        "n_spots": dataset.n_spots,
        "train_indices": dataset.train_indices,
        "val_indices": dataset.val_indices,
        "meta": dataset.meta,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / "data.bin").write_bytes(blob)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path: str | Path) -> Dataset:
    """Read back a dataset directory, verifying version, size, and checksum."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset manifest at {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DataError(
            f"unsupported dataset format version {version!r}, "
            f"expected {DATASET_FORMAT_VERSION}"
        )
    n_items = manifest["n_items"]
    n_l, n_t, n_p = manifest["n_links"], manifest["n_timeslices"], manifest["n_spots"]
    blob = (path / "data.bin").read_bytes()
    item_floats = n_l * n_t + n_p * n_p
    expected = n_items * item_floats * 4
    if len(blob) != expected:
        raise DataError(
            f"dataset blob is {len(blob)} bytes but the manifest implies {expected}"
        )
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise DataError("dataset blob does not match its manifest checksum")

    flat = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(n_items, item_floats)
    counts = flat[:, : n_l * n_t].reshape(n_items, n_l, n_t).copy()
    ods = flat[:, n_l * n_t :].reshape(n_items, n_p, n_p).copy()
    return Dataset(
        counts=counts,
        ods=ods,
        train_indices=[int(i) for i in manifest["train_indices"]],
        val_indices=[int(i) for i in manifest["val_indices"]],
        meta=manifest["meta"],
    )
