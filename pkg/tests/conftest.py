"""Shared fixtures: a small, fast end-to-end scenario for pipeline tests."""

import textwrap

import pytest

POP_SMALL = textwrap.dedent(
    """\
    n_agents: 1200
    mean_household_size: 2.5
    n_schools: 2
    n_workplaces: 6
    employment_rate: 0.6
    grid_rows: 6
    grid_cols: 6
    region: [0.0, 0.0, 12.0, 12.0]
    urban_fraction: 0.7
    urban_sd: 0.15
    urban_centers: [[3, 3], [9, 9]]
    """
)

SIS_MONTHLY = textwrap.dedent(
    """\
    name: sis
    step_unit: month
    states: [Susceptible, Infectious]
    susceptible_state: Susceptible
    exposed_state: Infectious
    transitions:
      Infectious:
        Susceptible: 1.0
    dwell:
      Infectious: {uniform: [1, 3]}
    transmissible_states: [Infectious]
    transmissibility: 0.25
    logged_states: [Infectious]
    """
)

PIPELINE_SMALL = textwrap.dedent(
    """\
    master_seed: 5
    population: pop_small.yaml
    conditions:
      - model: sis.model
        seeding: {count: 40, target_state: Infectious}
      - model: sis.model
        seeding:
          count: 40
          target_state: Infectious
          zones: [0, 1, 6, 7]
    horizon_months: 8
    analysis_month: 4
    weights: inverse:1.0
    kernels:
      - scale(v=1.0,rbf(l=1.0))
      - scale(v=1.0,matern(nu=1.5,l=1.0))
    train_fraction: 0.8
    draws: 40
    log1p: true
    fit_restarts: 2
    fit_max_iter: 150
    """
)


@pytest.fixture(scope="session")
def small_scenario_dir(tmp_path_factory):
    """Directory with a small population, disease model, and pipeline config."""
    d = tmp_path_factory.mktemp("scenario")
    (d / "pop_small.yaml").write_text(POP_SMALL)
    (d / "sis.model").write_text(SIS_MONTHLY)
    (d / "pipeline.cfg").write_text(PIPELINE_SMALL)
    return d
