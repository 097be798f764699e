"""Command-line entry point.

Subcommands mirror the pipeline stages: synth, simulate, bin, fit, moran,
compare. Every command prints a one-line key=value summary on success.
Exit codes: 0 success, 2 user/validation error, 1 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import analysis, epidemic, gp, spatial, synthpop
from .errors import ConfigurationError, EpiGPError


def _prepare_out_dir(path: str, force: bool) -> str:
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ConfigurationError(
            f"output directory '{path}' is not empty; pass --force to overwrite"
        )
    os.makedirs(path, exist_ok=True)
    return path


def _summary(args, **kv) -> None:
    if not getattr(args, "quiet", False):
        print(" ".join(f"{k}={v}" for k, v in kv.items()))


def cmd_synth(args) -> None:
    cfg = synthpop.PopulationConfig.from_file(args.config)
    out = _prepare_out_dir(args.out, args.force)
    zones = synthpop.generate_zones(cfg.grid_rows, cfg.grid_cols, cfg.region)
    pop = synthpop.generate_population(cfg, zones, args.seed)
    synthpop.write_agents_csv(pop, os.path.join(out, "agents.csv"))
    synthpop.write_places_csv(pop, os.path.join(out, "places.csv"))
    synthpop.write_zones_csv(zones, os.path.join(out, "zones.csv"))
    _summary(args, agents=pop.n_agents, places=len(pop.places), zones=len(zones), out=out)


def cmd_simulate(args) -> None:
    model = epidemic.load_model(args.model)
    pop_cfg = synthpop.PopulationConfig.from_file(args.pop_config)
    out = _prepare_out_dir(args.out, args.force)
    zones = synthpop.generate_zones(pop_cfg.grid_rows, pop_cfg.grid_cols, pop_cfg.region)
    pop = synthpop.generate_population(pop_cfg, zones, args.pop_seed)
    horizon = analysis._horizon_steps(args.horizon_months, model.step_unit)
    seed_zones = (
        [int(z) for z in args.seed_zones.split(",")] if args.seed_zones else None
    )
    log, tallies = epidemic.run(
        model,
        pop,
        epidemic.SeedingSpec(args.seed_count, args.seed_state, seed_zones),
        horizon,
        args.seed,
    )
    log.to_csv(os.path.join(out, "incidents.csv"))
    epidemic.write_tallies_csv(model, tallies, os.path.join(out, "tallies.csv"))
    synthpop.write_zones_csv(zones, os.path.join(out, "zones.csv"))
    _summary(args, model=model.name, steps=horizon, incidents=len(log), out=out)


def _parse_window(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise ConfigurationError(f"window must be LO:HI, got '{text}'")


def cmd_bin(args) -> None:
    log = epidemic.IncidentLog.from_csv(args.incidents)
    zones = synthpop.read_zones_csv(args.zones)
    field = spatial.bin_incidents(log, zones, _parse_window(args.window))
    field.to_csv(args.out)
    _summary(args, zones=len(zones), total=int(field.values.sum()), out=args.out)


def _field_and_centroids(args):
    field = spatial.SpatialField.from_csv(args.field)
    zones = synthpop.read_zones_csv(args.zones)
    by_id = {z.zone_id: z for z in zones}
    missing = [int(z) for z in field.zone_ids if int(z) not in by_id]
    if missing:
        raise ConfigurationError(f"field references unknown zones: {missing[:5]}")
    centroids = np.array([by_id[int(z)].centroid for z in field.zone_ids])
    ordered = [by_id[int(z)] for z in field.zone_ids]
    return field, ordered, centroids


def cmd_fit(args) -> None:
    field, _, centroids = _field_and_centroids(args)
    opts = gp.FitOptions(n_restarts=args.restarts)
    if args.noise is not None:
        opts.fixed_noise = args.noise
    model = gp.fit(args.kernel, centroids, field.values, opts, seed=args.seed)
    model.save(args.out)
    _summary(
        args,
        kernel=model.kernel.spec(),
        noise=f"{model.noise_variance:.6g}",
        lml=f"{model.lml:.6f}",
        out=args.out,
    )


def cmd_moran(args) -> None:
    field, zones, _ = _field_and_centroids(args)
    w = spatial.parse_weight_spec(args.weights, zones, args.row_standardize)
    result = spatial.morans_i(field, w)
    _summary(args, I=f"{result.I:.10f}", n=result.n, W=f"{result.total_weight:.6g}", scheme=w.scheme)


def cmd_compare(args) -> None:
    config = analysis.PipelineConfig.from_file(args.config)
    if args.seed is not None:
        config.master_seed = args.seed
    if args.allow_edge_months:
        config.allow_edge_months = True
    if args.geojson:
        config.geojson = True
    if args.row_standardize:
        config.row_standardize = True
    out = _prepare_out_dir(args.out, args.force)
    report = analysis.run_pipeline(config, out)
    c = report.comparison
    _summary(
        args,
        a=report.conditions[0].label,
        b=report.conditions[1].label,
        mean_diff=f"{c.mean_diff:.6f}",
        ci=f"[{c.ci_low:.6f},{c.ci_high:.6f}]",
        out=out,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epigp",
        description=(
            "Synthetic-population epidemic simulation with GP emulation and "
            "Moran's I spatial comparison"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default=None, out_is_dir=True):
        p.add_argument("--seed", type=int, default=0, help="stage RNG seed")
        p.add_argument("--out", default=out_default, required=out_default is None,
                       help="output " + ("directory" if out_is_dir else "file"))
        p.add_argument("--force", action="store_true", help="overwrite non-empty output")
        p.add_argument("--quiet", action="store_true", help="suppress the summary line")

    p = sub.add_parser("synth", help="generate a synthetic population")
    p.add_argument("--config", required=True, help="population config (YAML)")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="run one disease simulation")
    p.add_argument("--model", required=True, help="disease model config (YAML)")
    p.add_argument("--pop-config", required=True, help="population config (YAML)")
    p.add_argument("--pop-seed", type=int, default=0, help="population generation seed")
    p.add_argument("--horizon-months", type=int, default=24)
    p.add_argument("--seed-count", type=int, default=10, help="initial cases")
    p.add_argument("--seed-state", required=True, help="state seeded cases start in")
    p.add_argument("--seed-zones", default=None, help="comma-separated zone ids to seed in")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bin", help="bin incidents into per-zone counts")
    p.add_argument("--incidents", required=True)
    p.add_argument("--zones", required=True)
    p.add_argument("--window", required=True, help="step window LO:HI (half-open)")
    common(p, out_is_dir=False)
    p.set_defaults(func=cmd_bin)

    p = sub.add_parser("fit", help="fit a GP to a spatial field")
    p.add_argument("--field", required=True)
    p.add_argument("--zones", required=True)
    p.add_argument("--kernel", required=True, help="kernel spec, e.g. 'matern(nu=1.5,l=1.0)'")
    p.add_argument("--noise", type=float, default=None, help="pin the noise variance")
    p.add_argument("--restarts", type=int, default=5)
    common(p, out_is_dir=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("moran", help="Moran's I of a spatial field")
    p.add_argument("--field", required=True)
    p.add_argument("--zones", required=True)
    p.add_argument(
        "--weights", default="inverse:1.0",
        help="inverse:ALPHA | vonneumann | moore | knn:K | fixed:R",
    )
    p.add_argument("--row-standardize", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_moran)

    p = sub.add_parser("compare", help="full two-condition pipeline")
    p.add_argument("--config", required=True, help="pipeline config (YAML)")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument("--allow-edge-months", action="store_true")
    p.add_argument("--geojson", action="store_true")
    p.add_argument("--row-standardize", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EpiGPError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
