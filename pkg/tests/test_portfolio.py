import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from netrisk.errors import InsufficientData, TooFewAssets, ValidationError
from netrisk.netsim import EconomyConfig, FirmShockParams, default_states, sdf_priced_returns, simulate_economy, synthetic_network
from netrisk.portfolio import (
    alphas,
    assign_bins,
    mr_test,
    returns_from_matrix,
    rolling_betas,
    sort_and_spread,
    stationary_bootstrap,
)


def factor_frame(T, rng):
    return pd.DataFrame({c: rng.normal(size=T) for c in ("a", "g", "w_u", "w_d")})


class TestRollingBetas:
    def test_exact_linear(self):
        F = factor_frame(30, np.random.default_rng(0))
        b = rolling_betas(returns_from_matrix(2 * F["w_u"].to_numpy()[None, :]), F, 15)
        assert len(b) == 16
        np.testing.assert_allclose(b[["beta_a", "beta_g", "beta_u", "beta_d"]], np.tile([0, 0, 2, 0], (16, 1)), atol=1e-12)

    def test_factor_scaling(self):
        rng = np.random.default_rng(1)
        F = factor_frame(40, rng)
        R = rng.normal(size=(12, 40))
        b1 = rolling_betas(returns_from_matrix(R), F, 15)
        F2 = F.copy()
        F2["w_u"] *= 4.0
        b2 = rolling_betas(returns_from_matrix(R), F2, 15)
        np.testing.assert_allclose(b2["beta_u"], b1["beta_u"] / 4.0, rtol=1e-10)
        t1 = sort_and_spread(b1, returns_from_matrix(R))
        t2 = sort_and_spread(b2, returns_from_matrix(R))
        pd.testing.assert_frame_equal(t1.ew, t2.ew)

    def test_recover_known_betas(self):
        rng = np.random.default_rng(2)
        T, m = 15, 200
        F = factor_frame(T, rng) * 0.2
        B = rng.uniform(-1, 1, (m, 4))
        R = B @ F.to_numpy().T + 0.05 * rng.normal(size=(m, T))
        b = rolling_betas(returns_from_matrix(R), F, 15)
        assert np.corrcoef(b["beta_u"], B[:, 2])[0, 1] > 0.9

    def test_short_history_and_window_rule(self):
        rng = np.random.default_rng(3)
        F = factor_frame(20, rng)
        panel = returns_from_matrix(rng.normal(size=(2, 20)))
        panel = panel[~((panel["asset"] == 1) & (panel["time"] < 10))]
        b = rolling_betas(panel, F, 15)
        assert set(b.loc[b["asset"] == 1, "time"]) == set()
        assert len(b[b["asset"] == 0]) == 6
        with pytest.raises(ValidationError):
            rolling_betas(panel, F, 5)

    def test_rank_deficient_window_skipped(self):
        rng = np.random.default_rng(4)
        F = factor_frame(20, rng)
        F.loc[:16, "g"] = 0.0
        b = rolling_betas(returns_from_matrix(rng.normal(size=(3, 20))), F, 15)
        assert sorted(b["time"].unique()) == [17, 18, 19]


class TestBins:
    def test_boundary_lower(self):
        assert list(assign_bins(np.arange(10.0), np.arange(10), 5)) == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
        assert list(assign_bins(np.arange(7.0), np.arange(7), 5)) == [0, 1, 2, 2, 3, 4, 4]
        assert list(assign_bins(np.arange(7.0), np.arange(7), 5, "upper")) == [0, 0, 1, 2, 2, 3, 4]

    def test_ties_by_id(self):
        assert list(assign_bins(np.zeros(4), np.array([3, 1, 2, 0]), 2)) == [1, 0, 1, 0]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-40, 40), min_size=5, max_size=40), st.integers(2, 5))
    def test_monotone_transform_invariance(self, vals, n_bins):
        # a grid keeps exp() strictly increasing in floating point
        v = np.array(vals) / 8.0
        ids = np.arange(v.size)
        a = assign_bins(v, ids, n_bins)
        np.testing.assert_array_equal(a, assign_bins(np.exp(v) * 3 + 1, ids, n_bins))
        assert set(a) == set(range(n_bins)) or v.size < n_bins


class TestSortAndSpread:
    def _setup(self, m=10, T=6, f=lambda beta: -beta, weight=False):
        rows, brow = [], []
        for t in range(T):
            for i in range(m):
                rows.append({"asset": i, "time": t, "excess_return": f(float(i)), "weight": 1.0 + i})
                brow.append({"asset": i, "time": t, "beta_u": float(i)})
        ret = pd.DataFrame(rows)
        if not weight:
            ret = ret.drop(columns="weight")
        return pd.DataFrame(brow), ret

    def test_decreasing(self):
        b, r = self._setup()
        tab = sort_and_spread(b, r)
        means = tab.bin_means()
        assert np.all(np.diff(means) < 0) and tab.spread()["spread"] < 0
        assert len(tab.ew) == 5

    def test_identical_returns_undefined_t(self):
        b, r = self._setup(f=lambda beta: 0.02)
        s = sort_and_spread(b, r).spread()
        assert s["spread"] == 0 and s["t_undefined"] and np.isnan(s["t"])

    def test_equal_and_value_weights(self):
        b, r = self._setup(m=5, weight=True)
        tab = sort_and_spread(b, r)
        np.testing.assert_array_equal(tab.vw.iloc[0].to_numpy(), -np.arange(5.0))
        b, r = self._setup(m=10, weight=True)
        tab = sort_and_spread(b, r)
        np.testing.assert_allclose(tab.ew.iloc[0, 0], np.mean([0.0, -1.0]))
        np.testing.assert_allclose(tab.vw.iloc[0, 0], (0 * 1 + -1 * 2) / 3)
        assert set(tab.long_frame()["weighting"]) == {"ew", "vw"}

    def test_too_few_assets(self):
        b, r = self._setup(m=3)
        with pytest.raises(TooFewAssets):
            sort_and_spread(b, r)

    def test_model_economy_sign(self):
        neg = 0
        for seed in range(20):
            net = synthetic_network(40, 4, seed=seed)
            res = simulate_economy(net, default_states(40, seed), FirmShockParams.uniform(40, 1.0, -2.5), EconomyConfig(), 80, seed, store_panels=False)
            R, _ = sdf_priced_returns(res, 100, seed=seed + 500)
            b = rolling_betas(returns_from_matrix(R), pd.DataFrame(res.factors()), 15)
            neg += sort_and_spread(b, returns_from_matrix(R)).spread()["spread"] < 0
        assert neg >= 18


def naive_stationary(n, block, rng):
    out, t = [], int(rng.integers(n))
    while len(out) < n:
        out.append(t)
        t = int(rng.integers(n)) if rng.random() < 1 / block else (t + 1) % n
    return np.array(out)


class TestMRTest:
    def test_bootstrap_block_lengths(self):
        idx = stationary_bootstrap(100_000, 4.0, np.random.default_rng(0))
        breaks = np.mean(np.diff(idx) != 1)
        assert breaks == pytest.approx(0.25, abs=0.01)
        assert idx.min() >= 0 and idx.max() < 100_000

    def test_power(self):
        X = np.linspace(0.1, -0.1, 5) + 1e-3 * np.random.default_rng(0).normal(size=(30, 5))
        r = mr_test(X, 2000, seed=1)
        assert r.p_value < 0.05 and r.orientation == "decreasing"
        assert mr_test(X, 2000, seed=1, orientation="increasing").p_value > 0.5
        assert mr_test(X[:, ::-1], 2000, seed=1, orientation="increasing").p_value < 0.05

    def test_size(self):
        rej = sum(mr_test(np.random.default_rng(s).normal(size=(40, 5)), 500, seed=s).p_value <= 0.05 for s in range(200))
        assert 0.01 <= rej / 200 <= 0.12

    def test_two_bins_match_bootstrap_difference_test(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(60, 2))
        X[:, 1] -= 0.12
        p = mr_test(X, 20_000, seed=3).p_value
        d = X[:, 0] - X[:, 1]
        orng = np.random.default_rng(99)
        boot = np.array([d[naive_stationary(60, 2.0, orng)].mean() for _ in range(20_000)])
        assert abs(p - np.mean(boot - d.mean() >= d.mean())) <= 0.02

    def test_deterministic_and_errors(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        assert mr_test(X, 300, seed=4) == mr_test(X, 300, seed=4)
        with pytest.raises(InsufficientData):
            mr_test(X[:1], 10)
        with pytest.raises(InsufficientData):
            mr_test(X[:, :1], 10)


class TestAlphas:
    def test_exact(self):
        rng = np.random.default_rng(0)
        bench = pd.DataFrame({"mkt": rng.normal(size=50)})
        port = pd.DataFrame({"p1": bench["mkt"], "p2": bench["mkt"] + 0.01})
        tab = alphas(port, bench).set_index("portfolio")
        np.testing.assert_allclose(tab["alpha"], [0, 0.01], atol=1e-14)
        np.testing.assert_allclose(tab["b_mkt"], 1.0)

    def test_ff3_size(self):
        ok = 0
        for s in range(100):
            rng = np.random.default_rng(s)
            bench = pd.DataFrame(rng.normal(size=(60, 3)), columns=["mkt", "smb", "hml"])
            port = pd.DataFrame({"p": bench.to_numpy() @ [1.0, 0.3, -0.2] + rng.normal(size=60)})
            ok += abs(alphas(port, bench, "ff3")["alpha_t"].iloc[0]) <= 3
        assert ok >= 95

    def test_bad_model(self):
        with pytest.raises(ValidationError):
            alphas(pd.DataFrame({"p": [1.0]}), pd.DataFrame({"mkt": [1.0]}), "ff5")
