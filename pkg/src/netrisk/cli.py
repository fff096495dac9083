"""Command-line entry point: ``netrisk <subcommand> ...``.

Every subcommand reads explicit input paths, writes into ``--out`` and prints
a one-line summary. Exit codes: 0 success, 1 invalid input, 2 numerical
failure, 64 usage error. Outputs carry a header with the tool version, seed
and a hash of the configuration (arguments other than ``--out`` and
``--threads`` plus the bytes of every input file).
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from ._parallel import THREADS_ENV, resolve_threads, task_rng
from .errors import NumericalError, ValidationError
from .fileio import config_hash, read_frame, read_json, read_matrix, write_frame, write_json, write_matrix

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2, 64

INPUT_FLAGS = (
    "make", "use", "totals", "h", "sigma", "panel", "w_up", "w_down", "config",
    "targets", "subst_u", "subst_d", "calibrations", "macro", "returns", "factors",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


class _Run:
    """Per-invocation context: output directory, seed, hash and thread count."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.seed = getattr(args, "seed", None)
        self.threads = resolve_threads(args.threads)
        self.hash = config_hash(_hash_payload(args))

    def frame(self, name: str, df: pd.DataFrame) -> None:
        write_frame(self.out / name, df, seed=self.seed, chash=self.hash)

    def matrix(self, name: str, M, labels) -> None:
        write_matrix(self.out / name, M, labels, seed=self.seed, chash=self.hash)

    def json(self, name: str, obj: dict) -> None:
        write_json(self.out / name, obj, seed=self.seed, chash=self.hash)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _hash_payload(args: argparse.Namespace) -> dict:
    skip = {"out", "threads", "func"}
    payload = {"command": args.command, "version": __version__}
    for key, val in sorted(vars(args).items()):
        if key in skip:
            continue
        payload[key] = _file_digest(val) if key in INPUT_FLAGS and val is not None else val
    return payload


def _check_inputs(args: argparse.Namespace) -> None:
    for key in INPUT_FLAGS:
        val = getattr(args, key, None)
        if val is not None and not Path(val).is_file():
            raise ValidationError(f"input file not found: {val}")


# ---------------------------------------------------------------- subcommands


def cmd_build_network(run: _Run) -> str:
    from .io_tables import build_propagation_matrices, leontief_inverse, network_stats, read_tables

    a = run.args
    net = build_propagation_matrices(read_tables(a.make, a.use, a.totals), cost_normalize=a.cost_normalize)
    pair = leontief_inverse(net, eps=a.eps)
    labels = list(net.labels)
    run.matrix("w_up.csv", net.w_up, labels)
    run.matrix("w_down.csv", net.w_down, labels)
    run.matrix("h_up.csv", pair.h_up, labels)
    run.matrix("h_down.csv", pair.h_down, labels)
    try:
        stats = network_stats(net).as_dict()
    except NumericalError as exc:
        stats = {"centrality_error": str(exc)}
    stats["dropped_industries"] = net.metadata.get("dropped", [])
    run.json("network_stats.json", stats)
    return f"build-network: {net.n} industries, spectral radius up {pair.radius_up:.4f} down {pair.radius_down:.4f}"


def _read_network(w_up, w_down):
    from .io_tables import IoNetwork

    up, labels = read_matrix(w_up)
    down, labels_d = read_matrix(w_down)
    if labels != labels_d:
        raise ValidationError("w_up and w_down labels differ")
    return IoNetwork(up, down, tuple(labels))


def _read_panel(path):
    from .shock_cov import PanelData

    return PanelData(read_frame(path, dtype={"unit": str}))


def cmd_decompose(run: _Run) -> str:
    from .riskdecomp import bootstrap_components, components_frame, decompose_variance, substitutability_score
    from .shock_cov import estimate_covariance

    a = run.args
    H, labels = read_matrix(a.h)
    if a.sigma is not None:
        S, s_labels = read_matrix(a.sigma)
        if s_labels != labels:
            raise ValidationError("sigma labels differ from h labels")
    else:
        S = estimate_covariance(_read_panel(a.panel), "observed", labels=labels).sigma
    if a.drop > 0:
        if run.seed is None:
            raise UsageError("--seed is required with --drop")
        comps = bootstrap_components(H, S, a.drop, a.samples, run.seed, direction=a.direction,
                                     labels=labels, exclude_self=a.exclude_self, threads=run.threads)
    else:
        comps = decompose_variance(H, S, a.direction, labels=labels, exclude_self=a.exclude_self)
    df = components_frame(comps)
    score, shift = substitutability_score(comps)
    df["score"] = score
    run.frame("components.csv", df)
    return f"decompose: {len(df)} units, direction {a.direction}, score shift {shift:.6g}"


def cmd_fit_spatial(run: _Run) -> str:
    from .shock_cov import estimate_covariance, fit_spatial_panel

    a = run.args
    net = _read_network(a.w_up, a.w_down)
    fit = fit_spatial_panel(_read_panel(a.panel), net, cluster=a.cluster)
    run.json("spatial.json", fit.as_dict())
    cov = estimate_covariance(fit, "spatial")
    run.matrix("sigma.csv", cov.sigma, list(cov.labels))
    c = fit.coef
    return f"fit-spatial: phi {c['phi']:.4f} beta_u {c['beta_u']:.4f} beta_d {c['beta_d']:.4f}"


def _sim_setup(cfg: dict, seed: int, args):
    from .netsim import EconomyConfig, FirmShockParams, default_states, synthetic_network

    n = int(cfg.get("n", 20))
    if args.w_up is not None:
        net = _read_network(args.w_up, args.w_down)
        n = net.n
    else:
        net = synthetic_network(n, int(cfg.get("partners", 4)), float(cfg.get("weight", 0.5)), seed=task_rng(seed, 0))
    states = default_states(n, task_rng(seed, 1), rho=float(cfg.get("rho", 0.9)), sigma_theta=float(cfg.get("sigma_theta", 0.5)))
    k, x = float(cfg.get("k", 1.0)), float(cfg.get("x", -2.5))
    params = FirmShockParams(
        np.full(n, float(cfg.get("k_u", k))), np.full(n, float(cfg.get("x_u", x))),
        np.full(n, float(cfg.get("k_d", k))), np.full(n, float(cfg.get("x_d", x))),
    )
    return net, states, params, EconomyConfig.from_dict(cfg.get("economy", {}))


def _long(M, labels, value):
    T = M.shape[1]
    return pd.DataFrame({"unit": np.repeat(labels, T), "time": np.tile(np.arange(T), len(labels)), value: M.ravel()})


def cmd_simulate(run: _Run) -> str:
    from .io_tables import leontief_inverse
    from .netsim import sdf_priced_returns, simulate_economy

    a = run.args
    cfg = read_json(a.config)
    net, states, params, econ = _sim_setup(cfg, run.seed, a)
    T = int(cfg.get("T", 200))
    res = simulate_economy(net, states, params, econ, T, task_rng(run.seed, 2),
                           distance_mode=cfg.get("distance_mode", "wrapped"), force_p=cfg.get("force_p"))
    labels = list(net.labels)
    pair = leontief_inverse(net)
    run.matrix("w_up.csv", net.w_up, labels)
    run.matrix("w_down.csv", net.w_down, labels)
    run.matrix("h_up.csv", pair.h_up, labels)
    run.matrix("h_down.csv", pair.h_down, labels)
    run.frame("factors.csv", pd.DataFrame({
        "time": np.arange(T), "a": res.a, "g": res.g, "w_u": res.w_u, "w_d": res.w_d,
        "mu_u": res.mu_u, "mu_d": res.mu_d, "consumption_growth": res.consumption_growth, "sdf": res.sdf,
    }))
    run.frame("firm_growth.csv", _long(res.firm_growth, labels, "value"))
    run.frame("substitutability_u.csv", _long(res.s_u, labels, "s"))
    run.frame("substitutability_d.csv", _long(res.s_d, labels, "s"))
    n_assets = int(cfg.get("assets", 0))
    if n_assets > 0:
        R, _ = sdf_priced_returns(res, n_assets, task_rng(run.seed, 3))
        run.frame("returns.csv", pd.DataFrame({
            "asset": np.repeat(np.arange(n_assets), T), "time": np.tile(np.arange(T), n_assets),
            "excess_return": R.ravel(),
        }))
    return f"simulate: n {net.n}, T {T}, mean W_u {res.w_u.mean():.4f}, identity gap {res.identity_gap():.3g}"


def cmd_verify_idio(run: _Run) -> str:
    from .idio_gate import ExperimentConfig, run_experiment

    a = run.args
    cfg = read_json(a.config)
    cfg["seed"] = run.seed
    rep = run_experiment(ExperimentConfig.from_dict(cfg), threads=run.threads)
    run.json("report.json", rep.as_dict())
    if a.per_iteration:
        run.frame("iterations.csv", pd.DataFrame({"f_dense": rep.f_dense, "f_diag": rep.f_diag}))
    return f"verify-idio: n {rep.config.n}, S {rep.config.S}, p {rep.p_value:.4f}, failures {rep.failures}"


def cmd_calibrate(run: _Run) -> str:
    from .calib import calibrate_firms, calibrations_frame

    targets = read_frame(run.args.targets, dtype={"firm": str})
    cals = calibrations_frame(calibrate_firms(targets))
    run.frame("calibrations.csv", cals)
    bad = int((cals["flags"].str.contains("no_solution")).sum())
    return f"calibrate: {len(cals)} records, {bad} without solution"


def _wide_subst(path) -> pd.DataFrame:
    df = read_frame(path, dtype={"unit": str})
    need = {"unit", "time", "s"}
    if not need <= set(df.columns):
        raise ValidationError(f"{path}: needs columns {sorted(need)}")
    return df.pivot(index="unit", columns="time", values="s")


def cmd_factors(run: _Run) -> str:
    from .calib import FirmCalibration, macro_regressions, propagation_factors

    a = run.args
    cal_df = read_frame(a.calibrations, dtype={"firm": str}, keep_default_na=False, na_values={"k": ["nan", ""], "x": ["nan", ""]})
    cals = [
        FirmCalibration(r.firm, r.direction, float(r.k), float(r.x), float(r.s_bar), float(r.var_target),
                        float(r.omega), tuple(f for f in str(r.flags).split(";") if f))
        for r in cal_df.itertuples(index=False)
    ]
    f = propagation_factors({"u": _wide_subst(a.subst_u), "d": _wide_subst(a.subst_d)}, cals)
    run.frame("factors.csv", f.frame())
    msg = f"factors: {len(f.times)} periods, mean W_u {np.nanmean(f.w_hat_u):.4f} W_d {np.nanmean(f.w_hat_d):.4f}"
    if a.macro is not None:
        macro = read_frame(a.macro).set_index("time")
        F = f.frame().set_index("time")
        controls = macro[["a", "g"]]
        outcomes = macro.drop(columns=["a", "g"])
        tab = macro_regressions(F, outcomes, controls)
        run.frame("regressions.csv", tab)
        msg += f", {outcomes.shape[1]} regressions"
    return msg


def cmd_sort_portfolios(run: _Run) -> str:
    from .portfolio import mr_test, rolling_betas, sort_and_spread

    a = run.args
    returns = read_frame(a.returns)
    factors = read_frame(a.factors).set_index("time")
    betas = rolling_betas(returns, factors, a.window)
    tab = sort_and_spread(betas, returns, beta=a.beta, n_bins=a.bins, boundary=a.boundary)
    mr = mr_test(tab.ew.to_numpy(), a.n_boot, run.seed, block=a.block, orientation=a.orientation)
    run.frame("betas.csv", betas)
    run.frame("portfolios.csv", tab.long_frame())
    report = {
        "beta": a.beta, "bins": a.bins, "window": a.window,
        "bin_means_ew": tab.bin_means("ew").tolist(),
        "spread_ew": tab.spread("ew"),
        "mr_test": {"p_value": mr.p_value, "statistic": mr.statistic, "orientation": mr.orientation,
                    "n_boot": mr.n_boot, "block": mr.block},
    }
    if tab.vw is not None:
        report["bin_means_vw"] = tab.bin_means("vw").tolist()
        report["spread_vw"] = tab.spread("vw")
    run.json("spread.json", report)
    s = tab.spread("ew")
    return f"sort-portfolios: H-L {s['spread']:.6g} (t {s['t']:.3g}), MR p {mr.p_value:.4f}"


def cmd_diagnose(run: _Run) -> str:
    from .netsim import EconomyConfig, diagnostic_sweep

    a = run.args
    cfg = read_json(a.config) if a.config is not None else {}
    ns = [int(v) for v in cfg.get("ns", [10, 100, 1000])]
    seeds = [int(run.seed) + s for s in range(int(cfg.get("seeds", 20)))]
    rows = diagnostic_sweep(
        ns, seeds, int(cfg.get("T", 2000)), partners=int(cfg.get("partners", 4)),
        k=float(cfg.get("k", 1.0)), x=float(cfg.get("x", -3.0)),
        config=EconomyConfig.from_dict(cfg.get("economy", {})), force_p=cfg.get("force_p"),
        threads=run.threads,
    )
    df = pd.DataFrame(rows)
    run.frame("diagnostics.csv", df)
    ks = df["ks_u"].to_numpy()
    run.json("diagnostics.json", {"rows": rows, "ks_u_decreasing": bool(np.all(np.diff(ks) < 0))})
    return "diagnose: KS(u) " + " ".join(f"n={n}:{v:.4f}" for n, v in zip(df["n"], ks))


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netrisk", description="Network propagation risk toolkit.")
    p.add_argument("--version", action="version", version=f"netrisk {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_, seed=False):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("-o", "--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
        sp.add_argument("--seed", type=int, default=None, required=seed, help="master seed")
        sp.set_defaults(func=func)
        return sp

    sp = add("build-network", cmd_build_network, "Propagation matrices and Leontief inverses from make/use tables.")
    sp.add_argument("--make", required=True)
    sp.add_argument("--use", required=True)
    sp.add_argument("--totals", required=True)
    sp.add_argument("--cost-normalize", action="store_true")
    sp.add_argument("--eps", type=float, default=1e-6, help="stability margin below spectral radius 1")

    sp = add("decompose", cmd_decompose, "Variance decomposition of propagated shocks.")
    sp.add_argument("--h", required=True, help="Leontief inverse matrix CSV")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--sigma", help="shock covariance matrix CSV")
    src.add_argument("--panel", help="long shock panel (unit,time,value); covariance estimated")
    sp.add_argument("--direction", default="up", choices=["up", "down"])
    sp.add_argument("--exclude-self", action="store_true")
    sp.add_argument("--drop", type=float, default=0.0, help="bootstrap drop probability for correlations")
    sp.add_argument("--samples", type=int, default=100)

    sp = add("fit-spatial", cmd_fit_spatial, "Spatial autoregressive panel fit and residual covariance.")
    sp.add_argument("--panel", required=True)
    sp.add_argument("--w-up", required=True)
    sp.add_argument("--w-down", required=True)
    sp.add_argument("--cluster", action="store_true", default=None)

    sp = add("simulate", cmd_simulate, "Simulate the network economy.", seed=True)
    sp.add_argument("--config", required=True, help="simulation JSON")
    sp.add_argument("--w-up", default=None)
    sp.add_argument("--w-down", default=None)

    sp = add("verify-idio", cmd_verify_idio, "Monte Carlo test of the idiosyncratic-shock restriction.", seed=True)
    sp.add_argument("--config", required=True, help="experiment JSON")
    sp.add_argument("--per-iteration", action="store_true", help="also write iterations.csv")

    sp = add("calibrate", cmd_calibrate, "Solve firm sigmoid parameters from moment targets.")
    sp.add_argument("--targets", required=True)

    sp = add("factors", cmd_factors, "Propagation factors and macro regressions.")
    sp.add_argument("--subst-u", required=True, help="long substitutability panel (unit,time,s)")
    sp.add_argument("--subst-d", required=True)
    sp.add_argument("--calibrations", required=True)
    sp.add_argument("--macro", default=None, help="time,a,g plus outcome columns")

    sp = add("sort-portfolios", cmd_sort_portfolios, "Rolling betas, sorted portfolios and the MR test.", seed=True)
    sp.add_argument("--returns", required=True)
    sp.add_argument("--factors", required=True)
    sp.add_argument("--window", type=int, default=15)
    sp.add_argument("--bins", type=int, default=5)
    sp.add_argument("--beta", default="beta_u", choices=["beta_a", "beta_g", "beta_u", "beta_d"])
    sp.add_argument("--boundary", default="lower", choices=["lower", "upper"])
    sp.add_argument("--n-boot", type=int, default=2000)
    sp.add_argument("--block", type=float, default=2.0)
    sp.add_argument("--orientation", default="decreasing", choices=["decreasing", "increasing"])

    sp = add("diagnose", cmd_diagnose, "Normality and tail diagnostics of the propagation factors.", seed=True)
    sp.add_argument("--config", default=None, help="sweep JSON (ns, seeds, T, k, x, force_p, economy)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if args.command == "simulate" and (args.w_up is None) != (args.w_down is None):
            raise UsageError("--w-up and --w-down go together")
    except UsageError as exc:
        print(f"netrisk: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    try:
        _check_inputs(args)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        summary = args.func(_Run(args))
    except UsageError as exc:
        print(f"netrisk: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"netrisk {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, KeyError, OSError, pd.errors.ParserError) as exc:
        print(f"netrisk {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
