import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from netrisk.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from netrisk.fileio import read_frame, read_json

FIX = Path(__file__).parent / "fixtures"


def run(*argv):
    return main([str(a) for a in argv])


def files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def tables(tmp_path, use_rows=None):
    use = tmp_path / "use.csv"
    if use_rows is None:
        use.write_text((FIX / "use.csv").read_text())
    else:
        use.write_text("commodity_id,industry_id,value\n" + "\n".join(use_rows) + "\n")
    return ["--make", FIX / "make.csv", "--use", use, "--totals", FIX / "totals.csv"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--config", FIX / "sim.json", "--seed", 1, "-o", out) == EXIT_OK
    return out


class TestBuildNetwork:
    def test_outputs(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert run("build-network", *tables(tmp_path), "-o", out) == EXIT_OK
        for name in ("w_up.csv", "w_down.csv", "h_up.csv", "h_down.csv", "network_stats.json"):
            assert (out / name).is_file()
        assert (out / "w_up.csv").read_text().startswith("# netrisk ")
        assert "_meta" in (out / "network_stats.json").read_text()
        assert capsys.readouterr().out.count("\n") == 1
        W = read_frame(out / "w_down.csv").to_numpy()
        H = read_frame(out / "h_down.csv").to_numpy()
        np.testing.assert_allclose(H @ (np.eye(4) - W), np.eye(4), atol=1e-12)

    def test_missing_file(self, tmp_path):
        assert run("build-network", "--make", tmp_path / "nope.csv", "--use", FIX / "use.csv",
                   "--totals", FIX / "totals.csv", "-o", tmp_path) == EXIT_INVALID

    def test_negative_entry(self, tmp_path):
        assert run("build-network", *tables(tmp_path, ["A,B,-3"]), "-o", tmp_path / "o") == EXIT_INVALID

    def test_unstable(self, tmp_path):
        rows = ["B,A,150", "A,B,160", "C,C,1", "D,D,1"]
        assert run("build-network", *tables(tmp_path, rows), "-o", tmp_path / "o") == EXIT_NUMERICAL


class TestUsage:
    def test_no_subcommand(self):
        assert run() == EXIT_USAGE

    def test_bad_flag(self, tmp_path):
        assert run("calibrate", "--bogus", "-o", tmp_path) == EXIT_USAGE

    def test_seed_required(self, tmp_path):
        assert run("verify-idio", "--config", FIX / "experiment.json", "-o", tmp_path) == EXIT_USAGE

    def test_help(self):
        assert run("--help") == 0


class TestPipeline:
    def test_simulate_then_decompose_fast(self, tmp_path):
        t0 = time.perf_counter()
        assert run("simulate", "--config", FIX / "sim.json", "--seed", 1, "-o", tmp_path / "s") == EXIT_OK
        assert run("decompose", "--h", tmp_path / "s" / "h_up.csv", "--panel", tmp_path / "s" / "firm_growth.csv",
                   "-o", tmp_path / "d") == EXIT_OK
        assert time.perf_counter() - t0 < 60
        comp = read_frame(tmp_path / "d" / "components.csv")
        parts = comp[["self", "across", "between", "substitutability"]].sum(axis=1)
        np.testing.assert_allclose(parts, comp["total"], rtol=1e-10)

    def test_fit_spatial(self, sim_dir, tmp_path):
        assert run("fit-spatial", "--panel", sim_dir / "firm_growth.csv", "--w-up", sim_dir / "w_up.csv",
                   "--w-down", sim_dir / "w_down.csv", "-o", tmp_path) == EXIT_OK
        rep = read_json(tmp_path / "spatial.json")
        assert set(rep["coef"]) == {"phi", "beta_u", "beta_d"}
        assert (tmp_path / "sigma.csv").is_file()

    def test_calibrate_then_factors(self, sim_dir, tmp_path):
        firms = [f"f{i}" for i in range(30)]
        targets = pd.DataFrame({
            "firm": np.repeat(firms, 2), "direction": ["u", "d"] * 30,
            "var_target": 0.09, "omega": 0.5, "s_bar": -4.0,
        })
        targets.to_csv(tmp_path / "targets.csv", index=False)
        assert run("calibrate", "--targets", tmp_path / "targets.csv", "-o", tmp_path) == EXIT_OK
        macro = read_frame(sim_dir / "factors.csv")[["time", "a", "g", "consumption_growth"]]
        macro.to_csv(tmp_path / "macro.csv", index=False)
        assert run("factors", "--subst-u", sim_dir / "substitutability_u.csv", "--subst-d", sim_dir / "substitutability_d.csv",
                   "--calibrations", tmp_path / "calibrations.csv", "--macro", tmp_path / "macro.csv", "-o", tmp_path) == EXIT_OK
        f = read_frame(tmp_path / "factors.csv")
        assert len(f) == 120 and f["w_u"].between(0, 1).all()
        assert len(read_frame(tmp_path / "regressions.csv")) == 4

    def test_missing_calibration_is_invalid(self, sim_dir, tmp_path):
        pd.DataFrame({"firm": ["f0"], "direction": ["u"], "var_target": [0.1], "omega": [0.5], "s_bar": [-1.0]}).to_csv(
            tmp_path / "t.csv", index=False)
        assert run("calibrate", "--targets", tmp_path / "t.csv", "-o", tmp_path) == EXIT_OK
        assert run("factors", "--subst-u", sim_dir / "substitutability_u.csv", "--subst-d", sim_dir / "substitutability_d.csv",
                   "--calibrations", tmp_path / "calibrations.csv", "-o", tmp_path) == EXIT_INVALID

    def test_sort_portfolios(self, sim_dir, tmp_path):
        assert run("sort-portfolios", "--returns", sim_dir / "returns.csv", "--factors", sim_dir / "factors.csv",
                   "--seed", 2, "--n-boot", 200, "-o", tmp_path) == EXIT_OK
        rep = read_json(tmp_path / "spread.json")
        assert 0 <= rep["mr_test"]["p_value"] <= 1 and len(rep["bin_means_ew"]) == 5


STOCHASTIC = {
    "simulate": lambda d: ["--config", FIX / "sim.json", "--seed", 5],
    "verify-idio": lambda d: ["--config", FIX / "experiment.json", "--seed", 7],
    "diagnose": lambda d: ["--config", FIX / "diagnose.json", "--seed", 3],
    "sort-portfolios": lambda d: ["--returns", d / "returns.csv", "--factors", d / "factors.csv", "--seed", 4, "--n-boot", 300],
    "decompose": lambda d: ["--h", d / "h_up.csv", "--panel", d / "firm_growth.csv", "--drop", 0.2, "--samples", 30, "--seed", 6],
}


@pytest.mark.parametrize("command", sorted(STOCHASTIC))
def test_byte_identical_across_runs_and_threads(command, sim_dir, tmp_path, monkeypatch):
    args = STOCHASTIC[command](sim_dir)
    assert run(command, *args, "--threads", 1, "-o", tmp_path / "a") == EXIT_OK
    assert run(command, *args, "--threads", 1, "-o", tmp_path / "b") == EXIT_OK
    assert run(command, *args, "--threads", 8, "-o", tmp_path / "c") == EXIT_OK
    monkeypatch.setenv("NETRISK_THREADS", "3")
    assert run(command, *args, "-o", tmp_path / "d") == EXIT_OK
    ref = files(tmp_path / "a")
    assert ref
    for other in "bcd":
        assert files(tmp_path / other) == ref


def test_seed_changes_output(tmp_path):
    run("simulate", "--config", FIX / "sim.json", "--seed", 1, "-o", tmp_path / "a")
    run("simulate", "--config", FIX / "sim.json", "--seed", 2, "-o", tmp_path / "b")
    assert files(tmp_path / "a")["factors.csv"] != files(tmp_path / "b")["factors.csv"]
