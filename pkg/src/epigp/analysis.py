"""End-to-end inference workflow.

Runs two disease conditions over one shared population, bins one analysis
month of incidents per zone, selects a kernel by held-out MSE, fits a GP
per condition, builds Moran's I distributions over posterior draws, and
reports a Gaussian difference-in-means confidence interval between the two
conditions. Every artifact is seed-deterministic and digest-manifested.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import yaml

from . import epidemic, gp, spatial, synthpop
from .errors import ConfigurationError, DegenerateFieldError, NumericalError
from .kernels import parse_kernel
from .spatial import SpatialField, WeightMatrix, morans_i
from .synthpop import Zone

log = logging.getLogger(__name__)

DAYS_PER_MONTH = 30  # calendar-free month for day-unit models


def stage_seed(master_seed: int, stage: str) -> int:
    """Derive an independent, platform-stable seed for a named stage."""
    digest = hashlib.sha256(f"{master_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# Normal quantile (Acklam's rational approximation, |error| < 1.15e-9).
# ---------------------------------------------------------------------------

_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ConfigurationError(f"quantile probability must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
               ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
               ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
           (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


# ---------------------------------------------------------------------------
# Kernel selection by held-out MSE
# ---------------------------------------------------------------------------


@dataclass
class CandidateScore:
    spec: str
    fitted_spec: Optional[str]
    train_mse: Optional[float]
    test_mse: Optional[float]
    lml: Optional[float]
    failed: bool = False
    error: str = ""


@dataclass
class KernelSelectionReport:
    candidates: list[CandidateScore]
    winner: CandidateScore
    train_fraction: float
    split_seed: int

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["spec", "fitted_spec", "train_mse", "test_mse", "lml", "winner", "failed"])
            for c in self.candidates:
                w.writerow([
                    c.spec,
                    c.fitted_spec or "",
                    "" if c.train_mse is None else repr(c.train_mse),
                    "" if c.test_mse is None else repr(c.test_mse),
                    "" if c.lml is None else repr(c.lml),
                    int(c is self.winner),
                    int(c.failed),
                ])


def select_kernel(
    candidates: Sequence[str],
    X: np.ndarray,
    y: np.ndarray,
    train_fraction: float = 0.8,
    seed: int = 0,
    fit_options: Optional[gp.FitOptions] = None,
) -> KernelSelectionReport:
    """Fit each candidate on a train split, rank by test-set MSE.

    Ties break by higher LML, then candidate order. Candidates whose fit
    fails are recorded and excluded; if all fail, raises.
    """
    if len(candidates) < 1:
        raise ConfigurationError("need at least one kernel candidate")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    if not 2 <= n_train < n:
        raise ConfigurationError(
            f"split leaves train={n_train}, test={n - n_train}; both must be non-empty"
        )
    train, test = perm[:n_train], perm[n_train:]

    scores: list[CandidateScore] = []
    for i, spec in enumerate(candidates):
        try:
            model = gp.fit(spec, X[train], y[train], fit_options, seed=stage_seed(seed, f"fit:{i}"))
            mu_train = model.predict_mean(X[train])
            mu_test = model.predict_mean(X[test])
            scores.append(
                CandidateScore(
                    spec=spec,
                    fitted_spec=model.kernel.spec(),
                    train_mse=float(np.mean((mu_train - y[train]) ** 2)),
                    test_mse=float(np.mean((mu_test - y[test]) ** 2)),
                    lml=float(model.lml),
                )
            )
        except (NumericalError, ConfigurationError) as exc:
            scores.append(CandidateScore(spec, None, None, None, None, failed=True, error=str(exc)))
    viable = [c for c in scores if not c.failed]
    if not viable:
        raise NumericalError(
            "all kernel candidates failed to fit: "
            + "; ".join(f"{c.spec}: {c.error}" for c in scores)
        )
    winner = min(viable, key=lambda c: (c.test_mse, -c.lml, candidates.index(c.spec)))
    return KernelSelectionReport(scores, winner, train_fraction, seed)


# ---------------------------------------------------------------------------
# Moran distributions over posterior draws
# ---------------------------------------------------------------------------


@dataclass
class MoranDistribution:
    label: str
    samples: np.ndarray
    seed: int
    scheme: str
    degenerate_draws: int = 0

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def std(self) -> float:
        if self.samples.size < 2:
            return 0.0
        return float(np.std(self.samples, ddof=1))

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "moran_i"])
            for i, v in enumerate(self.samples):
                w.writerow([i, repr(float(v))])


def moran_distribution(
    model: gp.GPModel,
    zones: Sequence[Zone],
    w: WeightMatrix,
    s: int = 200,
    seed: int = 0,
    label: str = "",
) -> MoranDistribution:
    """Moran's I of s posterior draws at the zone centroids.

    Zero-variance draws are rejected, counted, and redrawn; more than 50%
    degenerate draws is an error (posterior is effectively constant).
    """
    if s < 1:
        raise ConfigurationError(f"draw count must be >= 1, got {s}")
    zones = sorted(zones, key=lambda z: z.zone_id)
    centroids = np.array([z.centroid for z in zones])
    zone_ids = np.array([z.zone_id for z in zones])
    samples: list[float] = []
    degenerate = 0
    total = 0
    batch_seed = seed
    while len(samples) < s:
        need = s - len(samples)
        draws = gp.sample_posterior(model, centroids, need, batch_seed).draws
        batch_seed += 1
        for row in draws:
            total += 1
            fld = SpatialField(zone_ids, row, label=label)
            try:
                samples.append(morans_i(fld, w).I)
            except DegenerateFieldError:
                degenerate += 1
        if total >= 2 * s and degenerate > total / 2:
            raise DegenerateFieldError(
                f"{degenerate}/{total} posterior draws had zero variance; "
                "the posterior is effectively constant"
            )
    return MoranDistribution(label, np.array(samples), seed, w.scheme, degenerate)


# ---------------------------------------------------------------------------
# Difference-in-means CI
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonResult:
    mean_diff: float
    ci_low: float
    ci_high: float
    level: float
    n_a: int
    n_b: int

    def straddles_zero(self) -> bool:
        return self.ci_low <= 0.0 <= self.ci_high


def diff_means_ci(
    a: MoranDistribution, b: MoranDistribution, level: float = 0.95
) -> ComparisonResult:
    """Gaussian CI for mean(a) - mean(b), unpooled (Welch-style) variance."""
    if a.n < 2 or b.n < 2:
        raise ConfigurationError("both distributions need at least 2 samples")
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"level must be in (0, 1), got {level}")
    diff = a.mean - b.mean
    se = math.sqrt(a.std**2 / a.n + b.std**2 / b.n)
    z = normal_quantile(1.0 - (1.0 - level) / 2.0)
    return ComparisonResult(diff, diff - z * se, diff + z * se, level, a.n, b.n)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class ConditionConfig:
    model_path: str
    seed_count: int
    seed_state: str
    seed_zones: Optional[list[int]] = None


@dataclass
class PipelineConfig:
    master_seed: int
    population_path: str
    conditions: list[ConditionConfig]
    horizon_months: int = 24
    analysis_month: int = 12
    weights: str = "inverse:1.0"
    row_standardize: bool = False
    kernels: list[str] = field(default_factory=lambda: [
        "scale(v=1.0,rbf(l=1.0))",
        "scale(v=1.0,matern(nu=1.5,l=1.0))",
        "scale(v=1.0,rbf(l=1.0)*matern(nu=1.5,l=1.0))",
    ])
    train_fraction: float = 0.8
    draws: int = 200
    level: float = 0.95
    allow_edge_months: bool = False
    log1p: bool = False
    standardize_targets: bool = False
    geojson: bool = False
    fit_restarts: int = 5
    fit_max_iter: int = 500

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"pipeline config not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse pipeline config {path}: {exc}")
        if not isinstance(raw, dict):
            raise ConfigurationError(f"pipeline config {path} must be a mapping")
        base = os.path.dirname(os.path.abspath(path))
        return cls.from_dict(raw, base)

    @classmethod
    def from_dict(cls, raw: dict, base: str = ".") -> "PipelineConfig":
        def resolve(p: str) -> str:
            return p if os.path.isabs(p) else os.path.join(base, p)

        try:
            conds = []
            for c in raw["conditions"]:
                seeding = c.get("seeding") or {}
                conds.append(
                    ConditionConfig(
                        model_path=resolve(c["model"]),
                        seed_count=int(seeding.get("count", 10)),
                        seed_state=str(seeding["target_state"]),
                        seed_zones=(
                            [int(z) for z in seeding["zones"]]
                            if seeding.get("zones") is not None
                            else None
                        ),
                    )
                )
            cfg = cls(
                master_seed=int(raw.get("master_seed", 0)),
                population_path=resolve(raw["population"]),
                conditions=conds,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed pipeline config: {exc}")
        for key in ("horizon_months", "analysis_month", "draws", "fit_restarts", "fit_max_iter"):
            if key in raw:
                setattr(cfg, key, int(raw[key]))
        for key in ("train_fraction", "level"):
            if key in raw:
                setattr(cfg, key, float(raw[key]))
        for key in ("row_standardize", "allow_edge_months", "log1p",
                    "standardize_targets", "geojson"):
            if key in raw:
                setattr(cfg, key, bool(raw[key]))
        if "weights" in raw:
            cfg.weights = str(raw["weights"])
        if "kernels" in raw:
            cfg.kernels = [str(k) for k in raw["kernels"]]
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if len(self.conditions) != 2:
            raise ConfigurationError(
                f"pipeline compares exactly 2 conditions, got {len(self.conditions)}"
            )
        if self.horizon_months < 1:
            raise ConfigurationError("horizon_months must be >= 1")
        if not 0 <= self.analysis_month < self.horizon_months:
            raise ConfigurationError(
                f"analysis_month {self.analysis_month} outside [0, {self.horizon_months})"
            )
        if self.draws < 1:
            raise ConfigurationError("draws must be >= 1")
        for spec in self.kernels:
            parse_kernel(spec)  # fail early with position info


@dataclass
class ConditionReport:
    label: str
    incident_count: int
    field: SpatialField
    selection: KernelSelectionReport
    model: gp.GPModel
    moran: MoranDistribution


@dataclass
class PipelineReport:
    conditions: list[ConditionReport]
    comparison: ComparisonResult
    out_dir: str
    manifest: dict[str, str]


def _month_window(month: int, step_unit: str) -> tuple[int, int]:
    if step_unit == "day":
        return month * DAYS_PER_MONTH, (month + 1) * DAYS_PER_MONTH
    return month, month + 1


def _horizon_steps(months: int, step_unit: str) -> int:
    return months * DAYS_PER_MONTH if step_unit == "day" else months


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _export_geojson(zones: Sequence[Zone], field_vals: dict[int, float],
                    mean_vals: dict[int, float], path: str) -> None:
    features = []
    for z in sorted(zones, key=lambda z: z.zone_id):
        x0, y0, x1, y1 = z.bounds
        features.append({
            "type": "Feature",
            "properties": {
                "zone_id": z.zone_id,
                "count": field_vals.get(z.zone_id, 0.0),
                "posterior_mean": mean_vals.get(z.zone_id, 0.0),
            },
            "geometry": {
                "type": "Polygon",
                "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]],
            },
        })
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)


def run_pipeline(config: PipelineConfig, out_dir: str) -> PipelineReport:
    """Run the full two-condition comparison and write all artifacts."""
    config.validate()
    edge = config.analysis_month in (0, config.horizon_months - 1)
    if edge and not config.allow_edge_months:
        raise ConfigurationError(
            f"analysis_month {config.analysis_month} is the first or last simulated "
            "month; pass --allow-edge-months to proceed"
        )
    if edge:
        log.warning("analysis month %d is an edge month", config.analysis_month)

    os.makedirs(out_dir, exist_ok=True)
    master = config.master_seed

    pop_cfg = synthpop.PopulationConfig.from_file(config.population_path)
    zones = synthpop.generate_zones(pop_cfg.grid_rows, pop_cfg.grid_cols, pop_cfg.region)
    pop = synthpop.generate_population(pop_cfg, zones, stage_seed(master, "synth"))
    synthpop.write_zones_csv(zones, os.path.join(out_dir, "zones.csv"))

    centroids = np.array([z.centroid for z in zones])
    weights = spatial.parse_weight_spec(config.weights, zones, config.row_standardize)

    labels: list[str] = []
    reports: list[ConditionReport] = []
    artifacts = ["zones.csv"]
    for idx, cond in enumerate(config.conditions):
        model_cfg = epidemic.load_model(cond.model_path)
        label = model_cfg.name
        if label in labels:
            label = f"{label}_{idx}"
        labels.append(label)
        # content-addressed stage key: identical condition configs get
        # identical streams, so an identical-condition control is exact
        key = (
            f"{model_cfg.name}:{cond.seed_count}:{cond.seed_state}:"
            f"{sorted(cond.seed_zones) if cond.seed_zones else []}"
        )

        horizon = _horizon_steps(config.horizon_months, model_cfg.step_unit)
        inc_log, tallies = epidemic.run(
            model_cfg,
            pop,
            epidemic.SeedingSpec(cond.seed_count, cond.seed_state, cond.seed_zones),
            horizon,
            stage_seed(master, f"simulate:{key}"),
        )
        inc_path = os.path.join(out_dir, f"incidents_{label}.csv")
        inc_log.to_csv(inc_path)
        tally_path = os.path.join(out_dir, f"tallies_{label}.csv")
        epidemic.write_tallies_csv(model_cfg, tallies, tally_path)
        artifacts += [f"incidents_{label}.csv", f"tallies_{label}.csv"]

        window = _month_window(config.analysis_month, model_cfg.step_unit)
        fld = spatial.bin_incidents(inc_log, zones, window)
        fld.label = label
        fld.to_csv(os.path.join(out_dir, f"field_{label}.csv"))
        artifacts.append(f"field_{label}.csv")

        y = fld.values.copy()
        if config.log1p:
            y = np.log1p(y)
        if config.standardize_targets:
            sd = y.std()
            if sd > 0:
                y = (y - y.mean()) / sd
        if np.all(y == y[0]):
            raise DegenerateFieldError(
                f"condition '{label}' produced a constant incident field in "
                f"month {config.analysis_month}; nothing to fit"
            )

        opts = gp.FitOptions(n_restarts=config.fit_restarts, max_iter=config.fit_max_iter)
        selection = select_kernel(
            config.kernels, centroids, y,
            train_fraction=config.train_fraction,
            seed=stage_seed(master, f"select:{key}"),
            fit_options=opts,
        )
        selection.to_csv(os.path.join(out_dir, f"kernel_report_{label}.csv"))
        artifacts.append(f"kernel_report_{label}.csv")

        model = gp.fit(
            selection.winner.spec, centroids, y, opts,
            seed=stage_seed(master, f"fit:{key}"),
        )
        model.save(os.path.join(out_dir, f"gp_model_{label}.yaml"))
        artifacts.append(f"gp_model_{label}.yaml")

        mean, cov = model.posterior(centroids)
        std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        with open(os.path.join(out_dir, f"posterior_mean_{label}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["zone_id", "mean", "std"])
            for z, m, s_ in zip(zones, mean, std):
                w.writerow([z.zone_id, repr(float(m)), repr(float(s_))])
        artifacts.append(f"posterior_mean_{label}.csv")

        dist = moran_distribution(
            model, zones, weights, s=config.draws,
            seed=stage_seed(master, f"moran:{key}"), label=label,
        )
        dist.to_csv(os.path.join(out_dir, f"moran_samples_{label}.csv"))
        artifacts.append(f"moran_samples_{label}.csv")

        if config.geojson:
            geo_path = os.path.join(out_dir, f"choropleth_{label}.geojson")
            _export_geojson(
                zones,
                {int(z): float(v) for z, v in zip(fld.zone_ids, fld.values)},
                {z.zone_id: float(m) for z, m in zip(zones, mean)},
                geo_path,
            )
            artifacts.append(f"choropleth_{label}.geojson")

        reports.append(ConditionReport(label, len(inc_log), fld, selection, model, dist))

    comparison = diff_means_ci(reports[0].moran, reports[1].moran, config.level)
    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "mean_diff", "ci_low", "ci_high", "level", "n_a", "n_b"])
        w.writerow([
            labels[0], labels[1],
            repr(comparison.mean_diff), repr(comparison.ci_low),
            repr(comparison.ci_high), repr(comparison.level),
            comparison.n_a, comparison.n_b,
        ])
    artifacts.append("comparison.csv")

    manifest = {}
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write(f"master_seed={master}\n")
        fh.write(f"weights={weights.scheme}\n")
        for name in sorted(artifacts):
            digest = _sha256(os.path.join(out_dir, name))
            manifest[name] = digest
            fh.write(f"{digest}  {name}\n")
    return PipelineReport(reports, comparison, out_dir, manifest)
