"""Zone-level spatial analysis: incident binning, weight matrices, Moran's I.

Weight schemes cover the usual families: inverse distance, grid contiguity
(von Neumann = 4 edge neighbors, Moore = 8 including corners), k nearest
neighbors, and fixed distance. Distances are Euclidean on the zone
coordinate plane. Moran's I follows the classic normalization
I = N * sum_ij w_ij (x_i - xbar)(x_j - xbar) / (W * sum_i (x_i - xbar)^2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigurationError, DegenerateFieldError
from .epidemic import IncidentLog
from .synthpop import Zone

ROW_SUM_TOL = 1e-12


@dataclass
class SpatialField:
    """Per-zone values (incident counts or surface values) for one window."""

    zone_ids: np.ndarray
    values: np.ndarray
    label: str = ""
    time_window: Optional[tuple[int, int]] = None

    def __post_init__(self):
        self.zone_ids = np.asarray(self.zone_ids, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.zone_ids.shape != self.values.shape:
            raise ConfigurationError("zone_ids and values must align")

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["zone_id", "value"])
            for zid, v in zip(self.zone_ids, self.values):
                w.writerow([int(zid), repr(float(v))])

    @classmethod
    def from_csv(cls, path: str, label: str = "") -> "SpatialField":
        zone_ids, values = [], []
        try:
            with open(path, newline="") as fh:
                for i, row in enumerate(csv.DictReader(fh), start=2):
                    zone_ids.append(int(row["zone_id"]))
                    values.append(float(row["value"]))
        except FileNotFoundError:
            raise ConfigurationError(f"field file not found: {path}")
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigurationError(f"malformed field CSV {path}, line {i}: {exc}")
        return cls(np.array(zone_ids), np.array(values), label=label)


@dataclass
class WeightMatrix:
    entries: np.ndarray
    scheme: str
    row_standardized: bool = False

    def __post_init__(self):
        w = np.asarray(self.entries, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ConfigurationError("weight matrix must be square")
        if (w < 0).any():
            raise ConfigurationError("weights must be nonnegative")
        if np.diag(w).any():
            raise ConfigurationError("weight matrix diagonal must be zero")
        self.entries = w

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def total(self) -> float:
        """W = sum of all entries."""
        return float(self.entries.sum())

    def to_csv(self, path: str) -> None:
        np.savetxt(path, self.entries, delimiter=",")


@dataclass(frozen=True)
class MoranResult:
    I: float
    n: int
    total_weight: float
    scheme: str


def bin_incidents(
    log: IncidentLog, zones: Sequence[Zone], window: tuple[int, int]
) -> SpatialField:
    """Count incidents with step in [lo, hi) per zone.

    Cell membership is half-open: left/bottom edges inclusive, right/top
    exclusive, so a point on a shared edge lands in exactly one zone.
    """
    lo, hi = window
    if not lo < hi:
        raise ConfigurationError(f"window must satisfy lo < hi, got {window}")
    if not zones:
        raise ConfigurationError("zones must be non-empty")
    zones = sorted(zones, key=lambda z: z.zone_id)
    counts = np.zeros(len(zones), dtype=float)
    bounds = np.array([z.bounds for z in zones])
    unplaced = []
    for r in log.records:
        if not (lo <= r.step < hi):
            continue
        inside = (
            (bounds[:, 0] <= r.x)
            & (r.x < bounds[:, 2])
            & (bounds[:, 1] <= r.y)
            & (r.y < bounds[:, 3])
        )
        hit = np.flatnonzero(inside)
        if hit.size == 0:
            unplaced.append((r.x, r.y))
        else:
            counts[hit[0]] += 1
    if unplaced:
        raise ConfigurationError(
            f"{len(unplaced)} incident(s) fall outside all zones, e.g. {unplaced[:3]}"
        )
    return SpatialField(
        zone_ids=np.array([z.zone_id for z in zones]),
        values=counts,
        time_window=(lo, hi),
    )


def _centroids(zones: Sequence[Zone]) -> np.ndarray:
    zones = sorted(zones, key=lambda z: z.zone_id)
    return np.array([z.centroid for z in zones], dtype=float)


def inverse_distance_weights(zones: Sequence[Zone], alpha: float = 1.0) -> WeightMatrix:
    """w_ij = d(c_i, c_j)^(-alpha) off the diagonal."""
    if alpha <= 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    c = _centroids(zones)
    d = squareform(pdist(c))
    off = ~np.eye(len(c), dtype=bool)
    if (d[off] == 0).any():
        raise ConfigurationError("coincident zone centroids give infinite weights")
    w = np.zeros_like(d)
    w[off] = d[off] ** (-alpha)
    return WeightMatrix(w, scheme=f"inverse:{alpha:g}")


def contiguity_weights(zones: Sequence[Zone], rule: str) -> WeightMatrix:
    """Binary grid contiguity: 'vonneumann' (edges) or 'moore' (edges+corners)."""
    rule = rule.lower()
    if rule not in ("vonneumann", "moore"):
        raise ConfigurationError(f"unknown contiguity rule '{rule}'")
    zs = sorted(zones, key=lambda z: z.zone_id)
    if any(z.grid_row is None or z.grid_col is None for z in zs):
        raise ConfigurationError(
            "zones lack grid indices; use a distance-based weight scheme instead"
        )
    rows = np.array([z.grid_row for z in zs])
    cols = np.array([z.grid_col for z in zs])
    dr = np.abs(rows[:, None] - rows[None, :])
    dc = np.abs(cols[:, None] - cols[None, :])
    if rule == "vonneumann":
        adj = dr + dc == 1
    else:
        adj = (np.maximum(dr, dc) == 1)
    return WeightMatrix(adj.astype(float), scheme=rule)


def knn_weights(zones: Sequence[Zone], k: int) -> WeightMatrix:
    """Binary w_ij = 1 iff j is among the k nearest centroids to i.

    Distance ties break toward the lower zone_id. The matrix may be
    asymmetric.
    """
    c = _centroids(zones)
    n = len(c)
    if not 1 <= k < n:
        raise ConfigurationError(f"k must satisfy 1 <= k < {n}, got {k}")
    d = squareform(pdist(c))
    np.fill_diagonal(d, np.inf)
    w = np.zeros((n, n))
    ids = np.arange(n)
    for i in range(n):
        order = np.lexsort((ids, d[i]))  # distance, then zone_id
        w[i, order[:k]] = 1.0
    return WeightMatrix(w, scheme=f"knn:{k}")


def fixed_distance_weights(zones: Sequence[Zone], r: float) -> WeightMatrix:
    """Binary w_ij = 1 iff d(c_i, c_j) <= r, i != j."""
    if r <= 0:
        raise ConfigurationError(f"radius must be > 0, got {r}")
    c = _centroids(zones)
    d = squareform(pdist(c))
    w = (d <= r).astype(float)
    np.fill_diagonal(w, 0.0)
    return WeightMatrix(w, scheme=f"fixed:{r:g}")


def row_standardize(w: WeightMatrix) -> WeightMatrix:
    """Divide each row by its sum. Errors on isolated (all-zero) rows."""
    sums = w.entries.sum(axis=1)
    isolated = np.flatnonzero(sums == 0)
    if isolated.size:
        raise ConfigurationError(
            f"cannot row-standardize: zone(s) {isolated.tolist()} have no neighbors"
        )
    return WeightMatrix(
        w.entries / sums[:, None],
        scheme=w.scheme + "+rowstd",
        row_standardized=True,
    )


def morans_i(field: SpatialField, w: WeightMatrix) -> MoranResult:
    """Global Moran's I of the field under the given weights."""
    x = field.values
    n = x.size
    if n < 2:
        raise ConfigurationError(f"Moran's I needs at least 2 zones, got {n}")
    if w.n != n:
        raise ConfigurationError(
            f"weight matrix order {w.n} does not match field size {n}"
        )
    total = w.total
    if total <= 0:
        raise ConfigurationError("weight matrix has zero total weight")
    z = x - x.mean()
    denom = float(z @ z)
    if denom == 0.0:
        raise DegenerateFieldError(
            "field has zero variance; Moran's I is undefined"
        )
    num = float(z @ w.entries @ z)
    return MoranResult(I=n * num / (total * denom), n=n, total_weight=total, scheme=w.scheme)


def parse_weight_spec(spec: str, zones: Sequence[Zone], standardize: bool = False) -> WeightMatrix:
    """Build a weight matrix from a CLI-style spec string.

    Accepted forms: 'inverse:ALPHA', 'vonneumann', 'moore', 'knn:K',
    'fixed:R'; row standardization is a separate flag.
    """
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    try:
        if name == "inverse":
            w = inverse_distance_weights(zones, float(arg or 1.0))
        elif name in ("vonneumann", "moore"):
            w = contiguity_weights(zones, name)
        elif name == "knn":
            w = knn_weights(zones, int(arg))
        elif name == "fixed":
            w = fixed_distance_weights(zones, float(arg))
        else:
            raise ConfigurationError(f"unknown weight scheme '{spec}'")
    except ValueError:
        raise ConfigurationError(f"bad weight scheme argument in '{spec}'")
    if standardize:
        w = row_standardize(w)
    return w
