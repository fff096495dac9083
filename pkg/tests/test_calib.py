import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given, settings, strategies as st

from netrisk.calib import (
    FirmCalibration,
    calibrate_firms,
    calibration_targets,
    calibrations_frame,
    control_regression,
    macro_regressions,
    propagation_factors,
    solve_firm_params,
)
from netrisk.errors import MissingCalibration, NoSolution
from netrisk.netsim import EconomyConfig, FirmShockParams, default_states, propensity, simulate_economy, synthetic_network


class TestSolve:
    def test_degenerate_branch(self):
        k, x, flags = solve_firm_params(0.25, 1.0, 1.0)
        assert k == 0.0 and x == 1.0 and "degenerate_k" in flags

    def test_first_equation_inverted(self):
        p = 0.2
        k, x, flags = solve_firm_params(p * (1 - p), 0.4, -1.5)
        assert k * (-1.5 - x) == pytest.approx(np.log(4), rel=1e-12)
        assert "upper_root_available" in flags

    @pytest.mark.parametrize("v", [0.3, 0.0, -0.1])
    def test_variance_out_of_range(self, v):
        with pytest.raises(NoSolution) as exc:
            solve_firm_params(v, 0.5, -1.0)
        assert np.isfinite(exc.value.residual)

    def test_no_nonnegative_k(self):
        with pytest.raises(NoSolution):
            solve_firm_params(0.2, 0.5, 1.0)
        with pytest.raises(NoSolution):
            solve_firm_params(0.2, 1.0, -1.0)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(1e-12, 0.25), st.floats(1e-9, 1.0), st.floats(-50, -1e-3))
    def test_round_trip(self, v, w, s):
        try:
            k, x, _ = solve_firm_params(v, w, s)
        except NoSolution:
            assume(False)
        v2, w2 = calibration_targets(k, x, s)
        assert abs(v2 - v) <= 1e-8 and abs(w2 - w) <= 1e-8
        assert k >= 0
        assert 0 < propensity(s, k, x) <= 0.5


class TestCalibrateFirms:
    def test_frame_and_flags(self):
        t = pd.DataFrame({
            "firm": ["a", "b", "c"], "direction": ["u", "d", "u"],
            "var_target": [0.16, 0.3, 0.25], "omega": [0.5, 0.5, 1.0], "s_bar": [-1.0, -1.0, 2.0],
        })
        cals = calibrate_firms(t)
        assert cals[0].flags == ("upper_root_available",)
        assert cals[1].flags == ("no_solution",) and np.isnan(cals[1].k)
        assert cals[2].flags == ("degenerate_k",) and cals[2].x == 2.0
        df = calibrations_frame(cals)
        assert list(df["flags"]) == ["upper_root_available", "no_solution", "degenerate_k"]


def cal(firm, q, k, x):
    return FirmCalibration(str(firm), q, k, x, 0.0, 0.25, 1.0)


class TestPropagationFactors:
    def test_half(self):
        S = pd.DataFrame(np.random.default_rng(0).normal(size=(3, 5)))
        cals = [cal(i, q, 0.0, 0.0) for i in range(3) for q in "ud"]
        f = propagation_factors({"u": S, "d": S}, cals)
        np.testing.assert_array_equal(f.w_hat_u, 0.5)
        np.testing.assert_array_equal(f.w_hat_d, 0.5)

    def test_single_firm(self):
        s = np.array([[-1.0, 0.0, 2.0]])
        cals = [cal(0, "u", 1.5, 0.3), cal(0, "d", 1.0, 0.0)]
        f = propagation_factors({"u": pd.DataFrame(s), "d": pd.DataFrame(s)}, cals)
        np.testing.assert_array_equal(f.w_hat_u, propensity(s[0], 1.5, 0.3))

    def test_missing_observations(self):
        s = pd.DataFrame([[0.0, np.nan], [0.0, 0.0]])
        cals = [cal(0, q, 1.0, 0.0) for q in "ud"] + [cal(1, q, 1.0, np.log(3)) for q in "ud"]
        f = propagation_factors({"u": s, "d": s}, cals)
        assert f.w_hat_u[1] == pytest.approx(0.75)
        assert list(f.counts["u"]) == [2, 1]

    def test_missing_calibration(self):
        S = pd.DataFrame(np.zeros((2, 2)))
        with pytest.raises(MissingCalibration):
            propagation_factors({"u": S, "d": S}, [cal(0, "u", 1, 0), cal(0, "d", 1, 0)])

    def test_round_trip_with_simulation(self):
        n = 15
        net = synthetic_network(n, 4, seed=1)
        rng = np.random.default_rng(2)
        par = FirmShockParams(rng.uniform(0.5, 2, n), rng.uniform(-4, -1, n), rng.uniform(0.5, 2, n), rng.uniform(-4, -1, n))
        r = simulate_economy(net, default_states(n, 1), par, EconomyConfig(), 200, 3)
        cals = [cal(i, "u", par.k_u[i], par.x_u[i]) for i in range(n)] + [cal(i, "d", par.k_d[i], par.x_d[i]) for i in range(n)]
        f = propagation_factors({"u": pd.DataFrame(r.s_u), "d": pd.DataFrame(r.s_d)}, cals)
        assert np.max(np.abs(f.w_hat_u - r.mu_u)) <= 1e-12
        assert np.max(np.abs(f.w_hat_d - r.mu_d)) <= 1e-12


def factor_frame(T, rng):
    return pd.DataFrame({c: rng.normal(size=T) for c in ("w_u", "w_d", "a", "g")})


class TestMacroRegressions:
    def test_exact(self):
        F = factor_frame(30, np.random.default_rng(0))
        tab = macro_regressions(F, pd.DataFrame({"dc": -F["w_u"]})).set_index("regressor")
        np.testing.assert_allclose(tab["coef"], [-1, 0, 0, 0], atol=1e-12)
        assert tab["r2"].iloc[0] == pytest.approx(1.0)

    def test_size_under_noise(self):
        hits = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            F = factor_frame(24, rng)
            tab = macro_regressions(F, pd.DataFrame({"y": rng.normal(size=24)}))
            hits += bool(np.all(np.abs(tab["t"]) <= 3))
        # four 3-SE tests on t(19): joint coverage about 0.97
        assert hits / 200 >= 0.95

    def test_recover_loadings(self):
        rng = np.random.default_rng(3)
        T = 2000
        F = factor_frame(T, rng)
        load = np.array([-0.5, -0.2, 1.0, 0.8])
        y = F.to_numpy() @ load + 0.3 * rng.normal(size=T)
        tab = macro_regressions(F, pd.DataFrame({"dc": y}))
        scale = F.std(ddof=1).to_numpy() / y.std(ddof=1)
        np.testing.assert_allclose(tab["coef"], load * scale, atol=4 * tab["se"].max())

    def test_controls_join(self):
        rng = np.random.default_rng(4)
        F = factor_frame(40, rng)
        tab = macro_regressions(F[["w_u", "w_d"]], pd.DataFrame({"y": rng.normal(size=40)}), F[["a", "g"]])
        assert len(tab) == 4 and (tab["nobs"] == 40).all()


class TestControlRegression:
    def test_fixed_effects_and_cluster(self):
        rng = np.random.default_rng(5)
        firms = np.repeat(np.arange(50), 20)
        years = np.tile(np.arange(20), 50)
        X = rng.normal(size=(1000, 2))
        y = 0.7 * X[:, 0] - 0.3 * X[:, 1] + rng.normal(size=50)[firms] * 5 + rng.normal(size=20)[years] + 0.1 * rng.normal(size=1000)
        df = pd.DataFrame({"y": y, "a": X[:, 0], "g": X[:, 1], "firm": firms, "year": years})
        fit = control_regression(df, "y", ["a", "g"], fixed_effects=("firm", "year"), cluster="firm")
        np.testing.assert_allclose(fit.coef, [0.7, -0.3], atol=0.02)
        assert fit.names == ["a", "g"]
        plain = control_regression(df, "y", ["a", "g"], fixed_effects=())
        assert plain.names[0] == "const"
