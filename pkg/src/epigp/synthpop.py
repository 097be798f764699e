"""Synthetic population generator over a gridded study region.

Produces a deterministic toy population (agents grouped into households,
plus schools and workplaces) on a rectangular grid of zones. Zones stand in
for ZIP-code-like areas; every downstream spatial computation (centroids,
contiguity, distances) works off them. Real polygon geographies can be
imported from GeoJSON instead of the grid.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigurationError

MAX_HOUSEHOLD_SIZE = 8
SCHOOL_AGE_LO = 5
SCHOOL_AGE_HI = 18  # exclusive


@dataclass(frozen=True)
class Zone:
    zone_id: int
    grid_row: Optional[int]
    grid_col: Optional[int]
    centroid: tuple[float, float]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


@dataclass(frozen=True)
class Place:
    place_id: int
    kind: str  # 'household' | 'school' | 'workplace'
    location: tuple[float, float]
    zone_id: int
    capacity: Optional[int] = None


@dataclass(frozen=True)
class Agent:
    agent_id: int
    age: int
    household_id: int
    daytime_place_id: Optional[int]


@dataclass
class Population:
    agents: list[Agent]
    places: list[Place]
    zones: list[Zone]
    seed: int

    def __post_init__(self):
        self._place_by_id = {p.place_id: p for p in self.places}

    def place(self, place_id: int) -> Place:
        return self._place_by_id[place_id]

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def household_locations(self) -> np.ndarray:
        """(N, 2) array of each agent's household coordinates."""
        return np.array(
            [self._place_by_id[a.household_id].location for a in self.agents],
            dtype=float,
        )

    def household_zones(self) -> np.ndarray:
        return np.array(
            [self._place_by_id[a.household_id].zone_id for a in self.agents],
            dtype=int,
        )


@dataclass
class PopulationConfig:
    n_agents: int
    mean_household_size: float = 2.5
    n_schools: int = 4
    n_workplaces: int = 8
    employment_rate: float = 0.6
    grid_rows: int = 4
    grid_cols: int = 4
    region: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    # household density: fraction placed in Gaussian urban cores
    # (sd = urban_sd * region span); the rest uniform. Cores default to the
    # region center; multiple cores give a polycentric layout.
    urban_fraction: float = 0.0
    urban_sd: float = 0.2
    urban_centers: Optional[list[tuple[float, float]]] = None

    def validate(self) -> None:
        if self.n_agents < 0:
            raise ConfigurationError("n_agents must be >= 0")
        if self.mean_household_size <= 0:
            raise ConfigurationError("mean_household_size must be > 0")
        if self.n_agents > 0 and (self.n_schools < 1 or self.n_workplaces < 1):
            raise ConfigurationError(
                "n_schools and n_workplaces must be >= 1 when n_agents > 0"
            )
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ConfigurationError("grid dimensions must be positive")
        xmin, ymin, xmax, ymax = self.region
        if not (xmax > xmin and ymax > ymin):
            raise ConfigurationError("region must have positive area")
        if not 0.0 <= self.urban_fraction <= 1.0:
            raise ConfigurationError("urban_fraction must be in [0, 1]")
        if self.urban_sd <= 0:
            raise ConfigurationError("urban_sd must be > 0")
        if self.urban_centers is not None:
            for ctr in self.urban_centers:
                if len(ctr) != 2:
                    raise ConfigurationError("urban_centers entries must be [x, y]")

    @classmethod
    def from_file(cls, path: str) -> "PopulationConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"population config not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse population config {path}: {exc}")
        if not isinstance(raw, dict):
            raise ConfigurationError(f"population config {path} must be a mapping")
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "PopulationConfig":
        known = {
            "n_agents", "mean_household_size", "n_schools", "n_workplaces",
            "employment_rate", "grid_rows", "grid_cols", "region",
            "urban_fraction", "urban_sd", "urban_centers",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(
                f"unknown population config keys: {sorted(unknown)}"
            )
        if "n_agents" not in raw:
            raise ConfigurationError("population config requires n_agents")
        kwargs = dict(raw)
        if "region" in kwargs:
            region = kwargs["region"]
            if not (isinstance(region, (list, tuple)) and len(region) == 4):
                raise ConfigurationError("region must be [xmin, ymin, xmax, ymax]")
            kwargs["region"] = tuple(float(v) for v in region)
        if kwargs.get("urban_centers") is not None:
            kwargs["urban_centers"] = [
                (float(c[0]), float(c[1])) for c in kwargs["urban_centers"]
            ]
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def generate_zones(
    rows: int, cols: int, region: tuple[float, float, float, float]
) -> list[Zone]:
    """Tile `region` with rows x cols rectangular zones, row-major ids.

    Grid row 0 is the bottom row (lowest y). Centroids sit at cell centers.
    """
    if rows < 1 or cols < 1:
        raise ConfigurationError(f"grid dimensions must be positive, got {rows}x{cols}")
    xmin, ymin, xmax, ymax = region
    if not (xmax > xmin and ymax > ymin):
        raise ConfigurationError("region must have positive area")
    dx = (xmax - xmin) / cols
    dy = (ymax - ymin) / rows
    zones = []
    for r in range(rows):
        for c in range(cols):
            x0 = xmin + c * dx
            y0 = ymin + r * dy
            zones.append(
                Zone(
                    zone_id=r * cols + c,
                    grid_row=r,
                    grid_col=c,
                    centroid=(x0 + dx / 2, y0 + dy / 2),
                    bounds=(x0, y0, x0 + dx, y0 + dy),
                )
            )
    return zones


def locate_zone(zones: Sequence[Zone], x: float, y: float) -> Optional[int]:
    """Zone containing (x, y) under the half-open rule (left/bottom edges in)."""
    for z in zones:
        x0, y0, x1, y1 = z.bounds
        if x0 <= x < x1 and y0 <= y < y1:
            return z.zone_id
    return None


def _household_sizes(n_agents: int, mean_size: float, rng: np.random.Generator) -> list[int]:
    """Split n_agents into household sizes ~ 1 + Poisson(mean-1), capped at 8."""
    sizes: list[int] = []
    remaining = n_agents
    lam = max(mean_size - 1.0, 0.0)
    while remaining > 0:
        size = 1 + int(rng.poisson(lam))
        size = min(max(size, 1), MAX_HOUSEHOLD_SIZE, remaining)
        sizes.append(size)
        remaining -= size
    return sizes


def generate_population(
    config: PopulationConfig, zones: Sequence[Zone], seed: int
) -> Population:
    """Generate a population; pure function of (config, zones, seed)."""
    config.validate()
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = config.region

    places: list[Place] = []
    agents: list[Agent] = []

    centers = config.urban_centers or [((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)]
    sx = config.urban_sd * (xmax - xmin)
    sy = config.urban_sd * (ymax - ymin)

    def random_place(kind: str, capacity: Optional[int] = None) -> Place:
        while True:
            if rng.random() < config.urban_fraction:
                cx, cy = centers[int(rng.integers(len(centers)))]
                x = rng.normal(cx, sx)
                y = rng.normal(cy, sy)
                if not (xmin <= x < xmax and ymin <= y < ymax):
                    continue
            else:
                x = rng.uniform(xmin, xmax)
                y = rng.uniform(ymin, ymax)
            zid = locate_zone(zones, x, y)
            if zid is not None:
                break
        p = Place(len(places), kind, (x, y), zid, capacity)
        places.append(p)
        return p

    if config.n_agents == 0:
        return Population([], [], list(zones), seed)

    schools = [random_place("school") for _ in range(config.n_schools)]
    workplaces = [random_place("workplace") for _ in range(config.n_workplaces)]

    sizes = _household_sizes(config.n_agents, config.mean_household_size, rng)
    school_ids = np.array([p.place_id for p in schools])
    work_ids = np.array([p.place_id for p in workplaces])

    for size in sizes:
        home = random_place("household")
        for _ in range(size):
            age = int(rng.integers(0, 101))
            daytime: Optional[int] = None
            if SCHOOL_AGE_LO <= age < SCHOOL_AGE_HI:
                daytime = int(rng.choice(school_ids))
            elif rng.random() < config.employment_rate:
                daytime = int(rng.choice(work_ids))
            agents.append(Agent(len(agents), age, home.place_id, daytime))

    # backfill capacities from realized membership
    counts: dict[int, int] = {}
    for a in agents:
        if a.daytime_place_id is not None:
            counts[a.daytime_place_id] = counts.get(a.daytime_place_id, 0) + 1
    places = [
        Place(p.place_id, p.kind, p.location, p.zone_id, counts.get(p.place_id, 0))
        if p.kind != "household"
        else p
        for p in places
    ]
    return Population(agents, places, list(zones), seed)


def zones_from_geojson(path: str) -> list[Zone]:
    """Import zones from a GeoJSON FeatureCollection of polygons.

    Each feature needs a `zone_id` property; the centroid is the average of
    the outer-ring vertices and the bounds are the ring's bounding box.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"GeoJSON file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"cannot parse GeoJSON {path}: {exc}")
    if doc.get("type") != "FeatureCollection":
        raise ConfigurationError("expected a GeoJSON FeatureCollection")
    zones = []
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        if "zone_id" not in props:
            raise ConfigurationError("every feature needs a zone_id property")
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise ConfigurationError("only Polygon geometries are supported")
        ring = np.asarray(geom["coordinates"][0], dtype=float)
        # closed rings repeat the first vertex; drop it before averaging
        if len(ring) > 1 and np.allclose(ring[0], ring[-1]):
            ring = ring[:-1]
        cx, cy = ring.mean(axis=0)
        zones.append(
            Zone(
                zone_id=int(props["zone_id"]),
                grid_row=None,
                grid_col=None,
                centroid=(float(cx), float(cy)),
                bounds=(
                    float(ring[:, 0].min()),
                    float(ring[:, 1].min()),
                    float(ring[:, 0].max()),
                    float(ring[:, 1].max()),
                ),
            )
        )
    ids = [z.zone_id for z in zones]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate zone_id in GeoJSON")
    return sorted(zones, key=lambda z: z.zone_id)


def write_agents_csv(pop: Population, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "age", "household_id", "daytime_place_id", "zone_id"])
        for a in pop.agents:
            home = pop.place(a.household_id)
            w.writerow(
                [
                    a.agent_id,
                    a.age,
                    a.household_id,
                    "" if a.daytime_place_id is None else a.daytime_place_id,
                    home.zone_id,
                ]
            )


def write_places_csv(pop: Population, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["place_id", "kind", "x", "y", "zone_id"])
        for p in pop.places:
            w.writerow([p.place_id, p.kind, repr(p.location[0]), repr(p.location[1]), p.zone_id])


def write_zones_csv(zones: Sequence[Zone], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["zone_id", "grid_row", "grid_col", "cx", "cy", "xmin", "ymin", "xmax", "ymax"]
        )
        for z in zones:
            w.writerow(
                [
                    z.zone_id,
                    "" if z.grid_row is None else z.grid_row,
                    "" if z.grid_col is None else z.grid_col,
                    repr(z.centroid[0]),
                    repr(z.centroid[1]),
                    repr(z.bounds[0]),
                    repr(z.bounds[1]),
                    repr(z.bounds[2]),
                    repr(z.bounds[3]),
                ]
            )


def read_zones_csv(path: str) -> list[Zone]:
    zones = []
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                zones.append(
                    Zone(
                        zone_id=int(row["zone_id"]),
                        grid_row=int(row["grid_row"]) if row["grid_row"] else None,
                        grid_col=int(row["grid_col"]) if row["grid_col"] else None,
                        centroid=(float(row["cx"]), float(row["cy"])),
                        bounds=(
                            float(row["xmin"]),
                            float(row["ymin"]),
                            float(row["xmax"]),
                            float(row["ymax"]),
                        ),
                    )
                )
    except FileNotFoundError:
        raise ConfigurationError(f"zones file not found: {path}")
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"malformed zones CSV {path}: {exc}")
    return sorted(zones, key=lambda z: z.zone_id)
