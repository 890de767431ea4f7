"""Grid road networks, minimal-hop route enumeration, and random trip demand.

Zones ("spots") sit on the intersections of a rows x cols grid and are numbered
row-major.  Every pair of grid-adjacent spots is connected by two directed
links, so a rows x cols grid has ``2 * (rows*(cols-1) + cols*(rows-1))`` links.
A route between two spots "without detouring" is a simple directed path whose
hop count equals the Manhattan distance between the spots, i.e. every step
moves toward the destination.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Link:
    id: int
    from_spot: int
    to_spot: int
    length_m: float


@dataclass(frozen=True)
class Route:
    """A directed simple path, stored as the ordered link ids it traverses."""

    origin: int
    destination: int
    links: tuple[int, ...]


class Trip(NamedTuple):
    origin: int
    destination: int
    depart_time_s: float
    route_index: int


@dataclass
class TripTable:
    """Individual trips sampled for one observation period."""

    trips: list[Trip]
    period_s: float


@dataclass
class RoadNetwork:
    """Directed grid network with deterministic spot and link numbering.

    Spot ``s`` sits at row ``s // cols``, column ``s % cols``.  Links are
    sorted by ``(from_spot, to_spot)`` and numbered in that order.
    """

    rows: int
    cols: int
    link_length_m: float
    links: tuple[Link, ...]

    @property
    def n_spots(self) -> int:
        return self.rows * self.cols

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def spots(self) -> range:
        return range(self.n_spots)

    def position(self, spot: int) -> tuple[int, int]:
        return divmod(spot, self.cols)

    def spot_at(self, row: int, col: int) -> int:
        return row * self.cols + col

    def manhattan(self, a: int, b: int) -> int:
        ra, ca = self.position(a)
        rb, cb = self.position(b)
        return abs(ra - rb) + abs(ca - cb)

    @cached_property
    def _out_links(self) -> dict[int, tuple[Link, ...]]:
        out: dict[int, list[Link]] = {s: [] for s in self.spots}
        for link in self.links:
            out[link.from_spot].append(link)
        # already sorted because links are numbered by (from, to)
        return {s: tuple(ls) for s, ls in out.items()}

    def out_links(self, spot: int) -> tuple[Link, ...]:
        return self._out_links[spot]


@dataclass
class RouteDictionary:
    """All non-detouring routes for every ordered spot pair of a network."""

    entries: dict[tuple[int, int], list[Route]]

    @property
    def n_pairs(self) -> int:
        return len(self.entries)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self.entries)

    def routes(self, origin: int, destination: int) -> list[Route]:
        return self.entries[(origin, destination)]


def build_grid(rows: int, cols: int, link_length_m: float) -> RoadNetwork:
    """Build a rows x cols grid network with bidirectional links.

    Raises ``ConfigError`` if either dimension is below 2 or the link length
    is not positive.
    """
    if rows < 2 or cols < 2:
        raise ConfigError(f"grid dimensions must be at least 2x2, got {rows}x{cols}")
    if link_length_m <= 0:
        raise ConfigError(f"link length must be positive, got {link_length_m}")

    edges: list[tuple[int, int]] = []
    for row in range(rows):
        for col in range(cols):
            spot = row * cols + col
            if col + 1 < cols:
                right = spot + 1
                edges.append((spot, right))
                edges.append((right, spot))
            if row + 1 < rows:
                below = spot + cols
                edges.append((spot, below))
                edges.append((below, spot))
    edges.sort()
    links = tuple(
        Link(id=i, from_spot=a, to_spot=b, length_m=float(link_length_m))
        for i, (a, b) in enumerate(edges)
    )
    return RoadNetwork(rows=rows, cols=cols, link_length_m=float(link_length_m), links=links)


def enumerate_routes(
    network: RoadNetwork, origin: int, destination: int, cap: int
) -> list[Route]:
    """Enumerate all minimal-hop simple routes from origin to destination.

    Routes are returned in lexicographic order of their link-id sequences;
    if more than ``cap`` exist, the first ``cap`` in that order are kept.
    """
    if origin == destination:
        raise ValueError(f"origin and destination must differ, got spot {origin} twice")
    for spot in (origin, destination):
        if not 0 <= spot < network.n_spots:
            raise ValueError(f"spot {spot} outside network with {network.n_spots} spots")
    if cap < 1:
        raise ConfigError(f"route cap must be at least 1, got {cap}")

    routes: list[Route] = []
    path: list[int] = []

    def walk(spot: int) -> bool:
        if spot == destination:
            routes.append(Route(origin=origin, destination=destination, links=tuple(path)))
            return len(routes) >= cap
        remaining = network.manhattan(spot, destination)
        for link in network.out_links(spot):
            # only steps that strictly approach the destination are non-detouring
            if network.manhattan(link.to_spot, destination) != remaining - 1:
                continue
            path.append(link.id)
            if walk(link.to_spot):
                return True
            path.pop()
        return False

    walk(origin)
    return routes


def build_route_dictionary(network: RoadNetwork, cap: int) -> RouteDictionary:
    """Enumerate routes for every ordered pair of distinct spots."""
    entries = {
        (o, d): enumerate_routes(network, o, d, cap)
        for o in network.spots
        for d in network.spots
        if o != d
    }
    return RouteDictionary(entries=entries)


def pair_weights(
    dictionary: RouteDictionary,
    rng: np.random.Generator,
    *,
    concentration: float | None = 1.0,
    hotspot_fraction: float = 0.05,
    hotspot_boost: float = 10.0,
) -> np.ndarray:
    """Draw a demand intensity profile over the ordered spot pairs.

    ``concentration`` is the symmetric Dirichlet concentration; ``None`` gives
    exactly uniform weights.  A random ``hotspot_fraction`` of pairs is then
    boosted by ``hotspot_boost`` and the profile renormalized, which produces
    the strongly heterogeneous demand cells the estimators are judged on.
    """
    n = dictionary.n_pairs
    if n == 0:
        raise ConfigError("route dictionary is empty")
    if concentration is None:
        weights = np.full(n, 1.0 / n)
    else:
        if concentration <= 0:
            raise ConfigError(f"concentration must be positive, got {concentration}")
        weights = rng.dirichlet(np.full(n, float(concentration)))
    n_hot = int(round(hotspot_fraction * n))
    if n_hot > 0 and hotspot_boost != 1.0:
        hot = rng.choice(n, size=n_hot, replace=False)
        weights = weights.copy()
        weights[hot] *= hotspot_boost
        weights /= weights.sum()
    return weights


def sample_demand(
    dictionary: RouteDictionary,
    total_trips: int,
    period_s: float,
    seed: int,
    *,
    concentration: float | None = 1.0,
    hotspot_fraction: float = 0.05,
    hotspot_boost: float = 10.0,
) -> TripTable:
    """Sample ``total_trips`` random trips over one observation period.

    Origin-destination pairs follow a random intensity profile (see
    ``pair_weights``), the route is uniform over the pair's dictionary entry,
    and depart times are uniform over ``[0, period_s)``.  Identical arguments
    produce identical tables.
    """
    rng = np.random.default_rng(seed)
    return sample_demand_with_rng(
        dictionary,
        total_trips,
        period_s,
        rng,
        concentration=concentration,
        hotspot_fraction=hotspot_fraction,
        hotspot_boost=hotspot_boost,
    )


def sample_demand_with_rng(
    dictionary: RouteDictionary,
    total_trips: int,
    period_s: float,
    rng: np.random.Generator,
    *,
    concentration: float | None = 1.0,
    hotspot_fraction: float = 0.05,
    hotspot_boost: float = 10.0,
) -> TripTable:
    """Like ``sample_demand`` but drawing from a caller-owned generator."""
    if total_trips < 0:
        raise ConfigError(f"total_trips must be nonnegative, got {total_trips}")
    if period_s <= 0:
        raise ConfigError(f"period_s must be positive, got {period_s}")
    pairs = dictionary.pairs
    if not pairs:
        raise ConfigError("route dictionary is empty")

    weights = pair_weights(
        dictionary,
        rng,
        concentration=concentration,
        hotspot_fraction=hotspot_fraction,
        hotspot_boost=hotspot_boost,
    )
    counts = rng.multinomial(total_trips, weights)

    trips: list[Trip] = []
    for (origin, destination), count in zip(pairs, counts):
        if count == 0:
            continue
        n_routes = len(dictionary.routes(origin, destination))
        route_idx = rng.integers(0, n_routes, size=count)
        departs = rng.uniform(0.0, period_s, size=count)
        trips.extend(
            Trip(origin, destination, float(t), int(r))
            for t, r in zip(departs, route_idx)
        )
    return TripTable(trips=trips, period_s=float(period_s))
