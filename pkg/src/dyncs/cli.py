"""Command-line front end.

Subcommands: ``generate`` (synthetic datasets), ``recover`` (filtering or
smoothing with optional EM), ``sks``/``skf`` (support-aware oracles),
``phase-plane``/``dynamics`` (experiment suites), ``selftest`` (fast
internal consistency checks).

A JSON config file (``--config``) may supply any long option; explicit
command-line values win. Every output JSON echoes the fully resolved
configuration and the library version. Exit codes: 0 success, 1 validation
or usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ampcore import DivergenceError, LocalPrior, posterior_variance
from .em import em_loop, init_heuristics
from .harness import (
    ALGORITHMS,
    ExperimentGrid,
    emit_results,
    run_dynamics_plane,
    run_phase_plane,
    tnmse_db,
)
from .model import (
    DynamicDataset,
    ModelParams,
    generate_synthetic,
    load_dataset,
    rho_for_variance,
    save_dataset,
)
from .oracle import NonConvergenceError, OracleProblem, exact_mmse_small, skf_estimate, sks_estimate
from .posteriors import compute_posteriors, save_estimates
from .scheduler import SolverConfig, run_filter, run_smooth

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _default_seed() -> int:
    env = os.environ.get("DYNCS_SEED")
    return int(env) if env else 0


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """Resolve option values: defaults < config file < explicit flags."""
    resolved = dict(parser_defaults)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        file_values = json.loads(Path(cfg_path).read_text())
        unknown = set(file_values) - set(parser_defaults)
        if unknown:
            raise ValueError(f"config file sets unknown options: {sorted(unknown)}")
        resolved.update(file_values)
    for key, value in vars(args).items():
        if key in parser_defaults and value is not None:
            resolved[key] = value
    return resolved


def _params_from(resolved: dict) -> ModelParams:
    rho = resolved.get("rho")
    if rho is None:
        rho = rho_for_variance(resolved["sigma2"], resolved["alpha"])
    return ModelParams(
        lam=resolved["lam"], p01=resolved["p01"],
        zeta=complex(resolved["zeta_re"], resolved["zeta_im"]),
        alpha=resolved["alpha"], rho=rho,
        sigma_e2=resolved.get("sigma_e2") or 1.0,
    )


def _solver_config(resolved: dict, mode: str) -> SolverConfig:
    return SolverConfig(
        mode=mode, passes=resolved["passes"], i_max=resolved["i_max"],
        stop_tol=resolved["stop_tol"], epsilon=resolved["epsilon"],
        tau=resolved["tau"], taylor_switch_p01=resolved["taylor_switch_p01"],
        collapse=resolved["collapse"], damping=resolved["damping"],
    )


def _write_report(path: Path, payload: dict) -> None:
    payload = {"version": __version__, **payload}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _add_solver_options(sp):
    sp.add_argument("--passes", type=int)
    sp.add_argument("--i-max", type=int, dest="i_max")
    sp.add_argument("--stop-tol", type=float, dest="stop_tol")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--taylor-switch-p01", type=float, dest="taylor_switch_p01")
    sp.add_argument("--collapse", choices=("auto", "threshold", "taylor"))
    sp.add_argument("--damping", type=float)


_SOLVER_DEFAULTS = dict(passes=5, i_max=25, stop_tol=1e-5, epsilon=1e-7, tau=0.99,
                        taylor_switch_p01=0.025, collapse="auto", damping=0.0)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dyncs", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dyncs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a synthetic dataset", parents=[])
    g.add_argument("--config")
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--t", type=int)
    g.add_argument("--lambda", type=float, dest="lam")
    g.add_argument("--p01", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--sigma2", type=float, help="steady-state amplitude variance")
    g.add_argument("--rho", type=float, help="innovation variance (overrides --sigma2)")
    g.add_argument("--zeta-re", type=float, dest="zeta_re")
    g.add_argument("--zeta-im", type=float, dest="zeta_im")
    g.add_argument("--snr-db", type=float, dest="snr_db")
    g.add_argument("--sigma-e2", type=float, dest="sigma_e2")
    g.add_argument("--time-invariant-a", action="store_const", const=True, dest="time_invariant_a")
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--output", required=True)

    r = sub.add_parser("recover", help="run filtering or smoothing on a dataset")
    r.add_argument("dataset")
    r.add_argument("--config")
    r.add_argument("--mode", choices=("filter", "smooth"))
    r.add_argument("--em", action="store_const", const=True)
    r.add_argument("--max-em-iters", type=int, dest="max_em_iters")
    _add_solver_options(r)
    r.add_argument("-o", "--output", required=True)

    for name in ("sks", "skf"):
        o = sub.add_parser(name, help=f"support-aware oracle ({name})")
        o.add_argument("dataset")
        o.add_argument("--config")
        o.add_argument("-o", "--output", required=True)

    pp = sub.add_parser("phase-plane", help="sparsity-undersampling experiment suite")
    pp.add_argument("--config")
    pp.add_argument("--deltas")
    pp.add_argument("--betas")
    pp.add_argument("--n", type=int)
    pp.add_argument("--t", type=int)
    pp.add_argument("--trials", type=int)
    pp.add_argument("--snr-db", type=float, dest="snr_db")
    pp.add_argument("--p01", type=float)
    pp.add_argument("--alpha", type=float)
    pp.add_argument("--algorithms")
    pp.add_argument("--jobs", type=int)
    pp.add_argument("--runtime", action="store_const", const=True,
                    help="record wall-clock runtimes (off keeps outputs reproducible)")
    pp.add_argument("--seed", type=int)
    pp.add_argument("--format", choices=("csv", "json"), dest="fmt")
    pp.add_argument("-o", "--output", required=True)

    dy = sub.add_parser("dynamics", help="temporal-correlation experiment suite")
    dy.add_argument("--config")
    dy.add_argument("--p01-values", dest="p01_values")
    dy.add_argument("--alphas")
    dy.add_argument("--delta", type=float)
    dy.add_argument("--beta", type=float)
    dy.add_argument("--n", type=int)
    dy.add_argument("--t", type=int)
    dy.add_argument("--trials", type=int)
    dy.add_argument("--snr-db", type=float, dest="snr_db")
    dy.add_argument("--algorithms")
    dy.add_argument("--jobs", type=int)
    dy.add_argument("--runtime", action="store_const", const=True)
    dy.add_argument("--seed", type=int)
    dy.add_argument("--format", choices=("csv", "json"), dest="fmt")
    dy.add_argument("-o", "--output", required=True)

    sub.add_parser("selftest", help="run fast internal consistency checks")
    return parser


def _cmd_generate(args) -> int:
    defaults = dict(n=512, m=128, t=25, lam=0.08, p01=0.05, alpha=0.01, sigma2=1.0,
                    rho=None, zeta_re=0.0, zeta_im=0.0, snr_db=None, sigma_e2=None,
                    time_invariant_a=False, seed=_default_seed(), config=None)
    resolved = _merge_config(args, defaults)
    params = _params_from(resolved)
    if resolved["snr_db"] is None and resolved["sigma_e2"] is None:
        raise ValueError("set either --snr-db or --sigma-e2")
    if resolved["sigma_e2"] is not None:
        params = params.replace(sigma_e2=resolved["sigma_e2"])
    dataset = generate_synthetic(
        params, n=resolved["n"], m=resolved["m"], t=resolved["t"],
        seed=resolved["seed"], snr_db=resolved["snr_db"],
        time_invariant_a=resolved["time_invariant_a"],
    )
    out = Path(args.output)
    save_dataset(dataset, out)
    resolved.pop("config")
    _write_report(out / "generate.json", {
        "config": resolved, "resolved_params": dataset.params.to_dict(),
    })
    print(f"wrote dataset (T={dataset.t}, M={dataset.m}, N={dataset.n}) to {out}")
    return EXIT_OK


def _cmd_recover(args) -> int:
    defaults = dict(mode="smooth", em=False, max_em_iters=300, config=None,
                    **_SOLVER_DEFAULTS)
    resolved = _merge_config(args, defaults)
    dataset = load_dataset(args.dataset)
    config = _solver_config(resolved, resolved["mode"])

    em_info = None
    if resolved["em"]:
        if resolved["mode"] != "smooth":
            raise ValueError("--em requires --mode smooth")
        init = dataset.params if dataset.params is not None else init_heuristics(dataset)
        post, params, trace = em_loop(dataset, init_params=init, config=config,
                                      max_em_iters=resolved["max_em_iters"],
                                      truth=dataset.truth)
        em_info = trace.to_dict()
    else:
        params = dataset.params
        if params is None:
            raise ValueError("dataset carries no model parameters; use --em")
        runner = run_smooth if resolved["mode"] == "smooth" else run_filter
        state = runner(dataset, params, config)
        post = compute_posteriors(state, params)

    out = Path(args.output)
    save_estimates(post, out)
    report = {
        "config": {k: v for k, v in resolved.items() if k != "config"},
        "dataset": str(args.dataset),
        "params": params.to_dict(),
    }
    if dataset.truth is not None:
        report["tnmse_db"] = tnmse_db(dataset.truth.x, post.x_mean)
    if em_info is not None:
        report["em"] = em_info
        (out / "em_trace.json").write_text(json.dumps(em_info, indent=2, sort_keys=True))
    _write_report(out / "recover.json", report)
    msg = f"recovered {dataset.t} frames -> {out}"
    if "tnmse_db" in report:
        msg += f" (TNMSE {report['tnmse_db']:.2f} dB)"
    print(msg)
    return EXIT_OK


def _cmd_oracle(args, smoother: bool) -> int:
    dataset = load_dataset(args.dataset)
    if dataset.truth is None:
        raise ValueError("oracle runs need the dataset's ground-truth support")
    if dataset.params is None:
        raise ValueError("oracle runs need the dataset's generating parameters")
    problem = OracleProblem(dataset, dataset.truth.s, dataset.params)
    post = sks_estimate(problem) if smoother else skf_estimate(problem)
    out = Path(args.output)
    save_estimates(post, out)
    report = {
        "config": {"dataset": str(args.dataset), "oracle": "sks" if smoother else "skf"},
        "params": dataset.params.to_dict(),
        "tnmse_db": tnmse_db(dataset.truth.x, post.x_mean),
    }
    _write_report(out / ("sks.json" if smoother else "skf.json"), report)
    print(f"oracle TNMSE {report['tnmse_db']:.2f} dB -> {out}")
    return EXIT_OK


def _parse_float_list(text: str):
    return tuple(float(v) for v in str(text).split(",") if v != "")


def _parse_alg_list(text: str):
    names = tuple(v.strip() for v in str(text).split(",") if v.strip())
    for n in names:
        if n not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {n!r}; choose from {sorted(ALGORITHMS)}")
    return names


def _cmd_phase_plane(args) -> int:
    defaults = dict(deltas="0.1,0.2,0.35,0.5", betas="0.3,0.5,0.7,0.9", n=512, t=25,
                    trials=100, snr_db=25.0, p01=0.05, alpha=0.01,
                    algorithms="sks,amp-smooth,bg-amp", jobs=1, runtime=False,
                    seed=_default_seed(), fmt="csv", config=None)
    resolved = _merge_config(args, defaults)
    grid = ExperimentGrid(
        delta_values=_parse_float_list(resolved["deltas"]),
        beta_values=_parse_float_list(resolved["betas"]),
        n=resolved["n"], t=resolved["t"], trials=resolved["trials"],
        snr_db=resolved["snr_db"], p01=resolved["p01"], alpha=resolved["alpha"],
        seed=resolved["seed"],
    )
    table = run_phase_plane(grid, algorithms=_parse_alg_list(resolved["algorithms"]),
                            jobs=resolved["jobs"], record_runtime=resolved["runtime"])
    table.config["cli"] = {k: v for k, v in resolved.items() if k != "config"}
    table.config["version"] = __version__
    emit_results(table, args.output, resolved["fmt"])
    print(f"wrote {len(table.rows)} rows to {args.output}")
    return EXIT_OK


def _cmd_dynamics(args) -> int:
    defaults = dict(p01_values="0.0,0.05,0.1,0.15", alphas="0.001,0.01,0.1,0.95",
                    delta=1.0 / 3.0, beta=0.45, n=512, t=25, trials=100, snr_db=25.0,
                    algorithms="sks,amp-smooth,bg-amp", jobs=1, runtime=False,
                    seed=_default_seed(), fmt="csv", config=None)
    resolved = _merge_config(args, defaults)
    table = run_dynamics_plane(
        p01_values=_parse_float_list(resolved["p01_values"]),
        alpha_values=_parse_float_list(resolved["alphas"]),
        delta=resolved["delta"], beta=resolved["beta"], n=resolved["n"],
        t=resolved["t"], trials=resolved["trials"], snr_db=resolved["snr_db"],
        seed=resolved["seed"], algorithms=_parse_alg_list(resolved["algorithms"]),
        jobs=resolved["jobs"], record_runtime=resolved["runtime"],
    )
    table.config["cli"] = {k: v for k, v in resolved.items() if k != "config"}
    table.config["version"] = __version__
    emit_results(table, args.output, resolved["fmt"])
    print(f"wrote {len(table.rows)} rows to {args.output}")
    return EXIT_OK


def _cmd_selftest(_args) -> int:
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except Exception as exc:  # noqa: BLE001 - report and continue
            checks.append((name, False, str(exc)))

    def params_roundtrip():
        p = ModelParams(lam=0.1, p01=0.05, alpha=0.01, rho=199.0, sigma_e2=1e-3)
        assert abs(p.p10 - 0.1 * 0.05 / 0.9) < 1e-15
        assert abs(p.sigma2 - 1.0) < 1e-12

    def scalar_channel():
        prior = LocalPrior(pi=np.array([0.5]), xi=np.array([0.0j]), psi=np.array([1.0]))
        g = posterior_variance(np.array([0.0j]), 1.0, prior)[0]
        assert abs(g - 1.0 / 6.0) < 1e-12

    def generation_deterministic():
        p = ModelParams(lam=0.2, p01=0.05, alpha=0.1, rho=19.0, sigma_e2=1e-2)
        d1 = generate_synthetic(p, n=24, m=12, t=3, seed=5)
        d2 = generate_synthetic(p, n=24, m=12, t=3, seed=5)
        assert np.array_equal(d1.y, d2.y)
        norms = np.linalg.norm(d1.operator(0), axis=0)
        assert np.max(np.abs(norms - 1)) < 1e-12

    def oracle_exactness():
        p = ModelParams(lam=0.3, p01=0.05, alpha=0.05,
                        rho=rho_for_variance(1.0, 0.05), sigma_e2=1e-2)
        d = generate_synthetic(p, n=8, m=5, t=4, seed=1, snr_db=25.0)
        prob = OracleProblem(d, d.truth.s, d.params)
        diff = np.abs(sks_estimate(prob).x_mean - exact_mmse_small(prob).x_mean)
        assert float(np.max(diff)) < 1e-6

    def filter_causality():
        p = ModelParams(lam=0.2, p01=0.05, alpha=0.1,
                        rho=rho_for_variance(1.0, 0.1), sigma_e2=1e-2)
        d = generate_synthetic(p, n=24, m=12, t=4, seed=2, snr_db=20.0)
        cfg = SolverConfig(mode="filter")
        a = run_filter(d, d.params, cfg)
        y2 = d.y.copy()
        y2[2:] *= -1
        b = run_filter(DynamicDataset(y=y2, a=d.a), d.params, cfg)
        assert np.array_equal(a.mu[:2], b.mu[:2])

    check("parameter-derivations", params_roundtrip)
    check("scalar-channel-values", scalar_channel)
    check("generation-determinism", generation_deterministic)
    check("oracle-exactness", oracle_exactness)
    check("filter-causality", filter_causality)

    failed = False
    for name, ok, msg in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {msg}" if msg else ""))
        failed |= not ok
    return EXIT_NUMERICAL if failed else EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "recover":
            return _cmd_recover(args)
        if args.command == "sks":
            return _cmd_oracle(args, smoother=True)
        if args.command == "skf":
            return _cmd_oracle(args, smoother=False)
        if args.command == "phase-plane":
            return _cmd_phase_plane(args)
        if args.command == "dynamics":
            return _cmd_dynamics(args)
        if args.command == "selftest":
            return _cmd_selftest(args)
        raise ValueError(f"unknown command {args.command!r}")
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, TypeError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DivergenceError, NonConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
