"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria are property-based plus a qualitative replication of the paper-style
two-condition ordering at desk scale; the headline experiment uses
scenarios/inf_vs_oud.cfg. Run with `pytest -v`; the verdict lines also print
directly to the terminal.
"""

import math
import os
import tempfile
import time

import numpy as np
import pytest

from epigp import gp
from epigp.analysis import (
    MoranDistribution,
    PipelineConfig,
    diff_means_ci,
    run_pipeline,
    select_kernel,
)
from epigp.epidemic import SeedingSpec, load_model, run
from epigp.errors import DegenerateFieldError
from epigp.kernels import RBF, Matern, gram_matrix, kernel_eval, parse_kernel
from epigp.spatial import (
    SpatialField,
    contiguity_weights,
    inverse_distance_weights,
    morans_i,
    row_standardize,
)
from epigp.synthpop import PopulationConfig, generate_population, generate_zones

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "scenarios")


@pytest.fixture
def verdict(capsys, request):
    """Print one PASS/FAIL line per criterion, bypassing pytest capture."""
    outcome = {"label": request.node.name, "passed": False, "detail": ""}
    yield outcome
    status = "PASS" if outcome["passed"] else "FAIL"
    with capsys.disabled():
        print(f"[acceptance] {status} {outcome['label']}: {outcome['detail']}")


def finish(verdict, passed, detail):
    verdict["passed"] = bool(passed)
    verdict["detail"] = detail
    assert passed, detail


def test_01_kernel_identities(verdict):
    """RBF/Matern closed forms match a direct-formula oracle to 1e-12."""
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        x = rng.uniform(-10, 10, size=2)
        xp = rng.uniform(-10, 10, size=2)
        l = rng.uniform(0.05, 10.0)
        d = float(np.linalg.norm(x - xp))
        pairs = [
            (kernel_eval(RBF(l), x, xp), math.exp(-d * d / (2 * l * l))),
            (kernel_eval(Matern(0.5, l), x, xp), math.exp(-d / l)),
            (
                kernel_eval(Matern(1.5, l), x, xp),
                (1 + math.sqrt(3) * d / l) * math.exp(-math.sqrt(3) * d / l),
            ),
            (
                kernel_eval(Matern(2.5, l), x, xp),
                (1 + math.sqrt(5) * d / l + 5 * d * d / (3 * l * l))
                * math.exp(-math.sqrt(5) * d / l),
            ),
        ]
        worst = max(worst, *(abs(a - b) for a, b in pairs))
    unit_ok = all(
        kernel_eval(k, [1.0, 2.0], [1.0, 2.0]) == 1.0
        for k in (RBF(0.3), Matern(0.5, 2.0), Matern(1.5, 1.0), Matern(2.5, 0.7))
    )
    elapsed = time.time() - t0
    finish(
        verdict,
        worst < 1e-12 and unit_ok and elapsed < 1.0,
        f"max |err|={worst:.2e} (tol 1e-12), k(x,x)=1 {unit_ok}, {elapsed:.2f}s (<1s)",
    )


def test_02_gram_psd(verdict):
    """Min eigenvalue >= -1e-8 for random point sets per kernel tree."""
    t0 = time.time()
    specs = [
        "rbf(l=1.0)",
        "matern(nu=0.5,l=0.5)",
        "matern(nu=1.5,l=1.5)",
        "matern(nu=2.5,l=3.0)",
        "scale(v=2.0,rbf(l=0.7))",
        "rbf(l=1.0)+matern(nu=1.5,l=2.0)",
        "scale(v=0.5,rbf(l=1.0))*matern(nu=2.5,l=0.8)",
        "scale(v=1.5,rbf(l=1.0)+matern(nu=0.5,l=2.0))",
    ]
    rng = np.random.default_rng(99)
    min_eig = np.inf
    for spec in specs:
        kernel = parse_kernel(spec)
        for _ in range(50):
            n = int(rng.integers(2, 51))
            X = rng.uniform(-8, 8, size=(n, 2))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(gram_matrix(kernel, X)).min()))
    elapsed = time.time() - t0
    finish(
        verdict,
        min_eig >= -1e-8 and elapsed < 10.0,
        f"min eigenvalue={min_eig:.2e} (tol -1e-8) over {len(specs)}x50 sets, "
        f"{elapsed:.1f}s (<10s)",
    )


def test_03_lml_gradient_vs_finite_differences(verdict):
    """Analytic LML gradient vs central differences, rel err < 1e-4."""
    t0 = time.time()
    specs = [
        "rbf(l=0.8)",
        "matern(nu=1.5,l=1.2)",
        "rbf(l=1.0)+matern(nu=1.5,l=0.7)",
        "rbf(l=0.9)*matern(nu=1.5,l=1.5)",
        "scale(v=1.5,rbf(l=1.1))",
    ]
    h = 1e-5
    worst = 0.0
    for case in range(20):
        spec = specs[case % len(specs)]
        rng = np.random.default_rng(3000 + case)
        X = rng.uniform(-3, 3, size=(12, 2))
        y = rng.standard_normal(12)
        kernel = parse_kernel(spec)
        log_noise = math.log(0.1)
        _, grad = gp.log_marginal_likelihood(kernel, log_noise, X, y)
        theta = np.array(kernel.get_log_params() + [log_noise])
        for i in range(theta.size):
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            probe = parse_kernel(spec)
            probe.set_log_params(list(up[:-1]))
            vu, _ = gp.log_marginal_likelihood(probe, float(up[-1]), X, y)
            probe.set_log_params(list(dn[:-1]))
            vd, _ = gp.log_marginal_likelihood(probe, float(dn[-1]), X, y)
            fd = (vu - vd) / (2 * h)
            worst = max(worst, abs(grad[i] - fd) / max(abs(fd), 1e-8))
    elapsed = time.time() - t0
    finish(
        verdict,
        worst < 1e-4 and elapsed < 30.0,
        f"max rel err={worst:.2e} (tol 1e-4) over 20 problems, {elapsed:.1f}s (<30s)",
    )


def test_04_noise_free_interpolation(verdict):
    """With noise pinned to 1e-10 the posterior mean reproduces targets."""
    worst = 0.0
    for case in range(20):
        rng = np.random.default_rng(4000 + case)
        X = rng.uniform(-3, 3, size=(15, 2))
        K = gram_matrix(parse_kernel("scale(v=1.0,rbf(l=1.0))"), X)
        y = np.linalg.cholesky(K + 1e-10 * np.eye(15)) @ rng.standard_normal(15)
        model = gp.fit(
            "scale(v=1.0,rbf(l=1.0))", X, y,
            gp.FitOptions(fixed_noise=1e-10, n_restarts=2), seed=case,
        )
        worst = max(worst, float(np.abs(model.predict_mean(X) - y).max()))
    finish(verdict, worst < 1e-6, f"max |mean - y|={worst:.2e} (tol 1e-6) over 20 problems")


def test_05_rbf_lengthscale_recovery(verdict):
    """Fitted l in [0.5, 2.0] for >= 16/20 seeds on RBF(l=1) data."""
    t0 = time.time()
    hits = 0
    fitted = []
    for seed in range(20):
        rng = np.random.default_rng(5000 + seed)
        X = rng.uniform(-3, 3, size=(50, 2))
        K = gram_matrix(RBF(1.0), X) + 0.01 * np.eye(50)
        y = np.linalg.cholesky(K) @ rng.standard_normal(50)
        model = gp.fit("scale(v=1.0,rbf(l=1.0))", X, y, seed=seed)
        l = model.kernel.child.lengthscale
        fitted.append(l)
        if 0.5 <= l <= 2.0:
            hits += 1
    elapsed = time.time() - t0
    finish(
        verdict,
        hits >= 16 and elapsed < 120.0,
        f"{hits}/20 seeds with l in [0.5, 2.0] (need >= 16), "
        f"median l={np.median(fitted):.2f}, {elapsed:.0f}s (<120s)",
    )


def test_06_moran_oracles(verdict):
    """Checkerboard, permutation expectation, naive oracle, invariances."""
    problems = []

    # checkerboard: 8x8, row-standardized von Neumann -> I = -1
    zones = generate_zones(8, 8, (0, 0, 8, 8))
    w = row_standardize(contiguity_weights(zones, "vonneumann"))
    x = np.array([1.0 if (z.grid_row + z.grid_col) % 2 == 0 else -1.0 for z in zones])
    I_cb = morans_i(SpatialField(np.arange(64), x), w).I
    if abs(I_cb + 1.0) > 1e-9:
        problems.append(f"checkerboard I={I_cb}")

    # permutation expectation -1/(N-1) within 3 MC standard errors
    zones = generate_zones(5, 5, (0, 0, 5, 5))
    w = inverse_distance_weights(zones)
    rng = np.random.default_rng(66)
    vals = rng.normal(size=25)
    samples = np.array([
        morans_i(SpatialField(np.arange(25), vals[rng.permutation(25)]), w).I
        for _ in range(10_000)
    ])
    se = samples.std(ddof=1) / math.sqrt(10_000)
    gap = abs(samples.mean() - (-1.0 / 24.0))
    if gap >= 3 * se:
        problems.append(f"permutation mean off by {gap:.2e} (3 SE = {3 * se:.2e})")

    # production vs naive double loop for N <= 25
    def naive(xv, wm):
        n = xv.size
        xbar = xv.mean()
        num = sum(
            wm[i][j] * (xv[i] - xbar) * (xv[j] - xbar)
            for i in range(n) for j in range(n)
        )
        den = sum((v - xbar) ** 2 for v in xv)
        W = sum(wm[i][j] for i in range(n) for j in range(n))
        return n * num / (W * den)

    worst = 0.0
    for side in (2, 3, 4, 5):
        zones = generate_zones(side, side, (0, 0, side, side))
        n = side * side
        for wmat in (inverse_distance_weights(zones),
                     contiguity_weights(zones, "moore"),
                     row_standardize(contiguity_weights(zones, "vonneumann"))):
            xv = rng.normal(size=n)
            got = morans_i(SpatialField(np.arange(n), xv), wmat).I
            worst = max(worst, abs(got - naive(xv, wmat.entries.tolist())))
    if worst > 1e-12:
        problems.append(f"naive-vs-production err {worst:.2e}")

    # affine and weight-scaling invariance
    zones = generate_zones(4, 4, (0, 0, 4, 4))
    w = inverse_distance_weights(zones)
    xv = rng.normal(size=16)
    base = morans_i(SpatialField(np.arange(16), xv), w).I
    aff = morans_i(SpatialField(np.arange(16), -2.5 * xv + 3.0), w).I
    from epigp.spatial import WeightMatrix

    scl = morans_i(SpatialField(np.arange(16), xv), WeightMatrix(7.0 * w.entries, "s")).I
    if abs(aff - base) > 1e-12 or abs(scl - base) > 1e-12:
        problems.append("invariance violated")

    finish(
        verdict,
        not problems,
        "checkerboard -1, permutation mean, naive oracle, invariances all ok"
        if not problems else "; ".join(problems),
    )


def test_07_simulation_laws(verdict):
    """Conservation, null bound, absorbing monotonicity, determinism,
    attack-rate monotonicity."""
    cfg = PopulationConfig.from_dict(dict(
        n_agents=2000, mean_household_size=2.5, n_schools=2, n_workplaces=4,
        grid_rows=4, grid_cols=4, region=[0.0, 0.0, 4.0, 4.0],
    ))
    zones = generate_zones(4, 4, (0, 0, 4, 4))
    pop = generate_population(cfg, zones, seed=1)
    base = {
        "name": "sir", "step_unit": "day",
        "states": ["Susceptible", "Infectious", "Recovered"],
        "susceptible_state": "Susceptible", "exposed_state": "Infectious",
        "transitions": {"Infectious": {"Recovered": 1.0}},
        "dwell": {"Infectious": {"uniform": [3, 7]}},
        "transmissible_states": ["Infectious"], "transmissibility": 0.05,
        "logged_states": ["Infectious"],
    }
    problems = []

    log, tallies = run(load_model(dict(base)), pop, SeedingSpec(10, "Infectious"), 60, seed=2)
    if not (tallies.sum(axis=1) == 2000).all():
        problems.append("conservation violated")
    if (np.diff(tallies[:, 2]) < 0).any():
        problems.append("absorbing state decreased")

    _, null_tallies = run(load_model({**base, "transmissibility": 0.0}), pop,
                          SeedingSpec(10, "Infectious"), 60, seed=3)
    if 2000 - null_tallies[:, 0].min() != 10:
        problems.append("null-transmission bound violated")

    logs = []
    for _ in range(2):
        l2, _ = run(load_model(dict(base)), pop, SeedingSpec(10, "Infectious"), 60, seed=9)
        logs.append(l2.records)
    if logs[0] != logs[1]:
        problems.append("determinism violated")

    rates = []
    for tau in (0.01, 0.05, 0.1):
        model = load_model({**base, "transmissibility": tau})
        finals = [
            1.0 - run(model, pop, SeedingSpec(10, "Infectious"), 60, seed=s)[1][-1, 0] / 2000
            for s in range(20)
        ]
        rates.append(float(np.mean(finals)))
    if not (rates[0] <= rates[1] <= rates[2]):
        problems.append(f"attack rate not monotone: {rates}")

    finish(
        verdict,
        not problems,
        f"conservation, null bound, absorbing, determinism ok; "
        f"attack rates {['%.3f' % r for r in rates]} monotone"
        if not problems else "; ".join(problems),
    )


def test_08_kernel_selection_recovery(verdict):
    """Matern 3/2 or the product kernel wins on Matern 3/2 data >= 14/20."""
    candidates = [
        "scale(v=1.0,rbf(l=1.0))",
        "scale(v=1.0,matern(nu=1.5,l=1.0))",
        "scale(v=1.0,rbf(l=1.0)*matern(nu=1.5,l=1.0))",
    ]
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(8000 + seed)
        X = rng.uniform(-3, 3, size=(40, 2))
        K = gram_matrix(Matern(1.5, 1.0), X) + 0.05 * np.eye(40)
        y = np.linalg.cholesky(K) @ rng.standard_normal(40)
        report = select_kernel(candidates, X, y, seed=seed)
        if "matern" in report.winner.spec:
            hits += 1
    finish(verdict, hits >= 14, f"{hits}/20 seeds picked a Matern-bearing kernel (need >= 14)")


def test_09_ci_calibration(verdict):
    """95% CI excludes 0 for equal-mean Gaussian pairs in 3-7% of 1000 trials."""
    rng = np.random.default_rng(909)
    excluded = 0
    for _ in range(1000):
        a = MoranDistribution("a", rng.normal(size=100), 0, "x")
        b = MoranDistribution("b", rng.normal(size=100), 0, "x")
        if not diff_means_ci(a, b).straddles_zero():
            excluded += 1
    rate = excluded / 1000.0
    finish(verdict, 0.03 <= rate <= 0.07, f"exclusion rate {rate:.1%} (accept 3%-7%)")


def test_10_qualitative_replication(verdict):
    """Headline desk-scale experiment: I(OUD-like) > I(INF-like) with strictly
    negative CI in >= 16/20 seeds; identical control straddles 0 in >= 18/20;
    < 5 min per seed."""
    seeds = list(range(101, 121))
    cfg_path = os.path.join(SCENARIOS, "inf_vs_oud.cfg")
    ctl_path = os.path.join(SCENARIOS, "identical_control.cfg")

    ok = 0
    max_elapsed = 0.0
    for seed in seeds:
        cfg = PipelineConfig.from_file(cfg_path)
        cfg.master_seed = seed
        t0 = time.time()
        try:
            with tempfile.TemporaryDirectory() as out:
                report = run_pipeline(cfg, out)
        except DegenerateFieldError:
            continue
        max_elapsed = max(max_elapsed, time.time() - t0)
        inf_mean = report.conditions[0].moran.mean
        oud_mean = report.conditions[1].moran.mean
        c = report.comparison
        if oud_mean > inf_mean and c.ci_high < 0.0:
            ok += 1

    straddle = 0
    for seed in seeds:
        cfg = PipelineConfig.from_file(ctl_path)
        cfg.master_seed = seed
        t0 = time.time()
        with tempfile.TemporaryDirectory() as out:
            report = run_pipeline(cfg, out)
        max_elapsed = max(max_elapsed, time.time() - t0)
        if report.comparison.straddles_zero():
            straddle += 1

    finish(
        verdict,
        ok >= 16 and straddle >= 18 and max_elapsed < 300.0,
        f"ordering+negative CI in {ok}/20 seeds (need >= 16); control straddles 0 in "
        f"{straddle}/20 (need >= 18); slowest seed {max_elapsed:.0f}s (<300s)",
    )
