"""Command-line interface: ``mmriv <subcommand> ...``.

Exit codes: 0 on success, 1 on bad input or configuration, 2 when every
method (or the single requested fit) fails numerically.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, diagnostics, harness, kernels, nn, nystrom, rkhs, selection
from .errors import InputError, NumericalError
from .kernels import KernelSpec

log = logging.getLogger("mmriv")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str):
    return [int(v) for v in text.split(",") if v.strip()]


def _scenario_spec(args):
    if args.scenario == "mendelian":
        return datagen.MendelianSpec(args.d_prime, args.beta, args.c1, args.c2, args.n, args.seed, args.param_seed)
    return datagen.LowDimSpec(args.scenario, args.n, args.seed)


def cmd_generate(args) -> int:
    data = datagen.generate(_scenario_spec(args))
    datagen.write_csv(data, args.out)
    log.info("wrote %d rows to %s", data.n, args.out)
    return EXIT_OK


def _load_train(args):
    data = datagen.read_csv(args.data)
    yt = None
    if args.standardize:
        data, _, yt = datagen.standardize_y(data)
    return data, yt


def cmd_fit(args) -> int:
    data, yt = _load_train(args)
    if args.method == "mmr_nn":
        arch = tuple(_ints(args.arch))
        cfg = nn.TrainConfig(args.lr, args.epochs, args.lam if args.lam is not None else 1e-4, args.seed, args.optimizer)
        params = nn.train(data, arch=arch, config=cfg)
        nn.save_mlp(params, args.out, yt, cfg)
        log.info("final objective %.6g after %d epochs", min(params.history), cfg.epochs)
        return EXIT_OK

    kernel_k = kernels.sum_gaussians_from_median(data.z)
    sigma = args.sigma if args.sigma is not None else kernels.median_heuristic(data.x)
    kernel_l = KernelSpec.gaussian(sigma)
    lam = args.lam if args.lam is not None else 1e-4
    if args.method == "mmr_rkhs":
        model = rkhs.fit(data, kernel_k, kernel_l, lam)
    else:
        # averaging alpha over landmark draws averages the predictions
        m = min(args.m, data.n)
        fits = [nystrom.fit_nystrom(data, kernel_k, kernel_l, lam, m, [args.seed, d]) for d in range(args.draws)]
        alpha = np.mean([f.alpha for f in fits], axis=0)
        model = rkhs.RkhsModel(alpha, data.x.copy(), kernel_l, lam, 0.0, {"m": m, "draws": args.draws})
    rkhs.save_model(model, args.out, yt)
    log.info("saved %s model (lambda=%g, sigma_l=%g) to %s", args.method, lam, sigma, args.out)
    return EXIT_OK


def _predict_any(path, x):
    with np.load(path, allow_pickle=False) as npz:
        kind = json.loads(str(npz["meta"])).get("kind", "rkhs")
    if kind == "mlp":
        params, yt = nn.load_mlp(path)
        pred = nn.forward(params, x)
    else:
        model, yt = rkhs.load_model(path)
        pred = model.predict(x)
    return yt.invert(pred) if yt is not None else pred


def cmd_predict(args) -> int:
    if args.data:
        x = datagen.read_csv(args.data).x
    else:
        x = np.asarray(_floats(args.x))[:, None]
    pred = _predict_any(args.model, x)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("y_pred\n")
        for v in pred:
            out.write(f"{v:.17g}\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_select(args) -> int:
    data, _ = _load_train(args)
    kernel_k = kernels.sum_gaussians_from_median(data.z)
    lambdas = _floats(args.lambdas) if args.lambdas else list(rkhs.DEFAULT_LAMBDA_GRID)
    sigmas = _floats(args.sigmas) if args.sigmas else selection.sigma_grid(data.x)
    plan = selection.make_plan(data.n, args.M, args.seed)
    factors = None
    if args.nystrom_m:
        factors = nystrom.nystrom_factors_from_kernel(kernel_k, data.z, min(args.nystrom_m, data.n), args.seed)
    delta, spec, table = selection.select_hyperparams(
        data, kernel_k, "gaussian", selection.delta_grid_from_lambdas(data.n, lambdas), [[s] for s in sigmas], plan, factors
    )
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["delta", "sigma_l", "cv_error", "status"])
        for row in table:
            w.writerow([repr(row["delta"]), *[repr(p) for p in row["l_params"]], repr(row["cv_error"]), row["status"]])
    finally:
        if args.out:
            out.close()
    log.info("selected delta=%g (lambda=%g), sigma_l=%g", delta, 1.0 / (delta * data.n ** 2), spec.params[0])
    return EXIT_OK


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config)
    changes = {}
    if args.out_dir:
        changes["output_dir"] = args.out_dir
    if args.workers:
        changes["workers"] = args.workers
    if getattr(args, "repetitions", None):
        changes["repetitions"] = args.repetitions
    if getattr(args, "n", None):
        changes["scenario"] = harness.ScenarioConfig(**{**cfg.scenario.to_dict(), "n": args.n})
    from dataclasses import replace

    return replace(cfg, **changes)


def _all_failed(records) -> bool:
    return all(r.status != "OK" for r in records)


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    res = harness.run_benchmark(cfg)
    for row in res.summary:
        print(f"{row['scenario']}  {row['method']:<12} mse {row['mean_mse']:.4f} +- {row['std_mse']:.4f}  ({row['n_failed']} failed)")
    return EXIT_NUMERIC if _all_failed(res.records) else EXIT_OK


def cmd_mendelian(args) -> int:
    cfg = _load_config(args)
    values = _floats(args.values) if args.values else None
    records = harness.run_mendelian_sweep(cfg, args.sweep, values)
    text = harness.emit_plot_data(records, args.sweep) if not _all_failed(records) else ""
    if text:
        (Path(cfg.output_dir) / "plot_data.csv").write_text(text)
        sys.stdout.write(text)
    return EXIT_NUMERIC if _all_failed(records) else EXIT_OK


def cmd_diagnose(args) -> int:
    if args.check == "normality":
        rep = diagnostics.asymptotic_normality_check(args.n, args.R, args.seed)
        sk, ku, v = diagnostics.normality_self_test(args.R, args.seed)
        out = rep.to_dict()
        if not args.with_estimates:
            out.pop("estimates")
        out["self_test"] = {"skewness": sk, "excess_kurtosis": ku, "verdict": v}
    elif args.check == "wu":
        z = np.random.default_rng(args.seed).normal(size=(args.n, 1))
        out = diagnostics.wu_indefiniteness_check(kernels.gram(KernelSpec.gaussian(1.0), z))
    elif args.check == "identification":
        f = datagen.structural(args.scenario)
        cands = {"f_star": f, "f_star+1": lambda x: f(x) + 1.0, "2*f_star": lambda x: 2.0 * f(x)}
        out = diagnostics.identification_probe(datagen.LowDimSpec(args.scenario), cands, args.n, args.seed)
    else:
        n_list = _ints(args.n_list)
        out = {"table": diagnostics.consistency_sweep(args.scenario, args.method, n_list, _ints(args.seeds))}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_plot_data(args) -> int:
    records = harness.read_results(args.results)
    text = harness.emit_plot_data(records, args.x)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmriv", description="Kernel instrumental-variable regression by maximum moment restriction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a synthetic dataset as CSV")
    g.add_argument("--scenario", choices=sorted(datagen.STRUCTURAL_FUNCTIONS) + ["mendelian"], default="sin")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--d-prime", type=int, default=16)
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--c1", type=float, default=1.0)
    g.add_argument("--c2", type=float, default=1.0)
    g.add_argument("--param-seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def data_args(sp):
        sp.add_argument("--data", required=True, help="CSV with x_*, y, z_* columns")
        sp.add_argument("--standardize", action="store_true", help="standardize y before fitting")
        sp.add_argument("--seed", type=int, default=0)

    f = sub.add_parser("fit", help="fit one estimator and save it")
    data_args(f)
    f.add_argument("--method", choices=("mmr_rkhs", "mmr_nystrom", "mmr_nn"), default="mmr_nystrom")
    f.add_argument("--lambda", dest="lam", type=float, default=None)
    f.add_argument("--sigma", type=float, default=None, help="bandwidth of l (default: median heuristic)")
    f.add_argument("--nystrom-m", "--m", dest="m", type=int, default=nystrom.DEFAULT_M)
    f.add_argument("--nystrom-draws", dest="draws", type=int, default=nystrom.DEFAULT_DRAWS)
    f.add_argument("--arch", default="100,100")
    f.add_argument("--lr", type=float, default=5e-2)
    f.add_argument("--epochs", type=int, default=1000)
    f.add_argument("--optimizer", choices=("momentum", "gd"), default="momentum")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="evaluate a saved model")
    pr.add_argument("--model", required=True)
    src = pr.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--x", help="comma-separated treatment values")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("select", help="analytical leave-M-out CV over (lambda, sigma_l)")
    data_args(s)
    s.add_argument("--M", type=int, default=2)
    s.add_argument("--lambdas", help="comma-separated lambda grid")
    s.add_argument("--sigmas", help="comma-separated sigma_l grid")
    s.add_argument("--nystrom-m", type=int, default=0, help="use Nystrom factors with this many landmarks")
    s.add_argument("--out")
    s.set_defaults(func=cmd_select)

    def cfg_args(sp):
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--out-dir")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--repetitions", type=int)
        sp.add_argument("--n", type=int)

    b = sub.add_parser("benchmark", help="run an experiment config")
    cfg_args(b)
    b.set_defaults(func=cmd_benchmark)

    m = sub.add_parser("mendelian", help="sweep a Mendelian randomization parameter")
    cfg_args(m)
    m.add_argument("--sweep", choices=sorted(harness.SWEEPS), default="d_prime")
    m.add_argument("--values", help="comma-separated sweep values")
    m.set_defaults(func=cmd_mendelian)

    d = sub.add_parser("diagnose", help="run a diagnostic check")
    d.add_argument("check", choices=("normality", "wu", "identification", "consistency"))
    d.add_argument("--n", type=int, default=2000)
    d.add_argument("--R", type=int, default=500)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--scenario", default="sin")
    d.add_argument("--method", default="mmr_nystrom")
    d.add_argument("--n-list", default="200,500,1000,2000")
    d.add_argument("--seeds", default="0,1,2")
    d.add_argument("--with-estimates", action="store_true")
    d.set_defaults(func=cmd_diagnose)

    pd = sub.add_parser("plot-data", help="median and quartiles per (method, x) from a results CSV")
    pd.add_argument("--results", required=True)
    pd.add_argument("--x", default="d_prime", help="'n' or a scenario parameter such as d_prime")
    pd.add_argument("--out")
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
