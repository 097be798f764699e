"""CLI tests: subcommand wiring, exit codes, determinism of artifacts."""

import hashlib
import os

import pytest

from epigp.cli import main


def sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_out(small_scenario_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run_cli("synth", "--config", small_scenario_dir / "pop_small.yaml",
                   "--seed", 7, "--out", out, "--force", "--quiet")
    assert code == 0
    return out


@pytest.fixture(scope="module")
def sim_out(small_scenario_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = run_cli(
        "simulate", "--model", small_scenario_dir / "sis.model",
        "--pop-config", small_scenario_dir / "pop_small.yaml",
        "--horizon-months", 8, "--seed-count", 40, "--seed-state", "Infectious",
        "--seed", 3, "--out", out, "--force", "--quiet",
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def field_csv(sim_out, tmp_path_factory):
    out = tmp_path_factory.mktemp("bin") / "field.csv"
    code = run_cli("bin", "--incidents", sim_out / "incidents.csv",
                   "--zones", sim_out / "zones.csv", "--window", "4:5",
                   "--out", out, "--quiet")
    assert code == 0
    return out


class TestSynth:
    def test_writes_population_files(self, synth_out):
        for name in ("agents.csv", "places.csv", "zones.csv"):
            assert os.path.exists(synth_out / name)

    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = run_cli("synth", "--config", "/nonexistent/pop.yaml", "--out", tmp_path / "x")
        assert code == 2
        assert "/nonexistent/pop.yaml" in capsys.readouterr().err

    def test_rerun_identical_digests(self, small_scenario_dir, synth_out, tmp_path):
        out = tmp_path / "again"
        assert run_cli("synth", "--config", small_scenario_dir / "pop_small.yaml",
                       "--seed", 7, "--out", out, "--quiet") == 0
        for name in ("agents.csv", "places.csv", "zones.csv"):
            assert sha256(out / name) == sha256(synth_out / name)

    def test_refuses_non_empty_out_without_force(self, small_scenario_dir, synth_out):
        code = run_cli("synth", "--config", small_scenario_dir / "pop_small.yaml",
                       "--out", synth_out, "--quiet")
        assert code == 2

    def test_summary_line(self, small_scenario_dir, tmp_path, capsys):
        assert run_cli("synth", "--config", small_scenario_dir / "pop_small.yaml",
                       "--out", tmp_path / "s") == 0
        line = capsys.readouterr().out.strip()
        assert "agents=1200" in line and "zones=36" in line


class TestSimulateAndBin:
    def test_simulate_outputs(self, sim_out):
        for name in ("incidents.csv", "tallies.csv", "zones.csv"):
            assert os.path.exists(sim_out / name)

    def test_simulate_unknown_state_exits_2(self, small_scenario_dir, tmp_path):
        code = run_cli(
            "simulate", "--model", small_scenario_dir / "sis.model",
            "--pop-config", small_scenario_dir / "pop_small.yaml",
            "--seed-state", "Zombie", "--out", tmp_path / "x", "--quiet",
        )
        assert code == 2

    def test_bin_output(self, field_csv):
        with open(field_csv) as fh:
            assert fh.readline().strip() == "zone_id,value"
            assert len(fh.readlines()) == 36

    def test_bin_bad_window_exits_2(self, sim_out, tmp_path):
        code = run_cli("bin", "--incidents", sim_out / "incidents.csv",
                       "--zones", sim_out / "zones.csv", "--window", "nope",
                       "--out", tmp_path / "f.csv", "--quiet")
        assert code == 2


class TestFitAndMoran:
    def test_fit_writes_model_and_summary(self, sim_out, field_csv, tmp_path, capsys):
        out = tmp_path / "model.yaml"
        code = run_cli("fit", "--field", field_csv, "--zones", sim_out / "zones.csv",
                       "--kernel", "scale(v=1.0,rbf(l=1.0))", "--restarts", 2,
                       "--out", out)
        assert code == 0
        assert os.path.exists(out)
        assert "lml=" in capsys.readouterr().out

    def test_fit_invalid_kernel_exits_2(self, sim_out, field_csv, tmp_path, capsys):
        code = run_cli("fit", "--field", field_csv, "--zones", sim_out / "zones.csv",
                       "--kernel", "rbf(l=-1)", "--out", tmp_path / "m.yaml")
        assert code == 2
        assert "position" in capsys.readouterr().err

    def test_moran_prints_statistic(self, sim_out, field_csv, capsys):
        code = run_cli("moran", "--field", field_csv, "--zones", sim_out / "zones.csv",
                       "--weights", "inverse:1.0")
        assert code == 0
        out = capsys.readouterr().out
        assert "I=" in out and "scheme=inverse:1" in out

    def test_moran_weight_schemes(self, sim_out, field_csv):
        for spec in ("vonneumann", "moore", "knn:4", "fixed:3.0"):
            assert run_cli("moran", "--field", field_csv,
                           "--zones", sim_out / "zones.csv",
                           "--weights", spec, "--quiet") == 0

    def test_moran_bad_scheme_exits_2(self, sim_out, field_csv):
        assert run_cli("moran", "--field", field_csv, "--zones", sim_out / "zones.csv",
                       "--weights", "mystery", "--quiet") == 2


class TestCompare:
    def test_full_pipeline_and_digest_determinism(self, small_scenario_dir, tmp_path, capsys):
        outs = []
        for name in ("runA", "runB"):
            out = tmp_path / name
            code = run_cli("compare", "--config", small_scenario_dir / "pipeline.cfg",
                           "--seed", 7, "--out", out)
            assert code == 0
            outs.append(out)
        text = capsys.readouterr().out
        assert "mean_diff=" in text and "ci=[" in text
        manifests = []
        for out in outs:
            assert os.path.exists(out / "comparison.csv")
            with open(out / "manifest.txt") as fh:
                manifests.append(fh.read())
        assert manifests[0] == manifests[1]

    def test_missing_config_exits_2(self, tmp_path):
        assert run_cli("compare", "--config", "/nonexistent.cfg",
                       "--out", tmp_path / "x", "--quiet") == 2

    def test_missing_model_in_config_exits_2(self, small_scenario_dir, tmp_path):
        cfg = tmp_path / "broken.cfg"
        cfg.write_text(
            "master_seed: 1\n"
            f"population: {small_scenario_dir / 'pop_small.yaml'}\n"
            "conditions:\n"
            f"  - model: {small_scenario_dir / 'sis.model'}\n"
            "    seeding: {count: 10, target_state: Infectious}\n"
            "  - model: /nonexistent/other.model\n"
            "    seeding: {count: 10, target_state: Infectious}\n"
            "horizon_months: 8\nanalysis_month: 4\ndraws: 10\n"
        )
        assert run_cli("compare", "--config", cfg, "--out", tmp_path / "y", "--quiet") == 2
