"""Command-line entry point: ``covmatch <subcommand> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 solver budget exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, directed, undirected
from .errors import CovMatchError, InputError, ParameterError
from .experiment import OUTPUT_ENV, ExperimentConfig, grid_search_alpha, run_experiment
from .graphs import (
    Gso,
    WeightRange,
    gen_cyclic_directed,
    gen_dag,
    gen_undirected,
    load_matrix,
    matrix_to_csv,
    save_matrix,
)
from .sem import ASYMPTOTIC, SemModel, asymptotic_cov, sample_cov, sample_data

log = logging.getLogger("covmatch")


def _t_value(text: str):
    if text == ASYMPTOTIC:
        return ASYMPTOTIC
    try:
        t = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"T must be an integer or {ASYMPTOTIC!r}") from None
    if t < 1:
        raise argparse.ArgumentTypeError("T must be positive")
    return t


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(x) for x in text.split(",") if x]
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _read_graph(path: str) -> Gso:
    p = Path(path)
    if p.suffix == ".json":
        try:
            return Gso.from_json(p.read_text())
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc}") from exc
    return Gso(load_matrix(p))


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise ParameterError(f"cannot write {path}: {exc}") from exc


def _matrix_arg(path: str | None) -> np.ndarray | None:
    return None if path is None else load_matrix(path)


# -- subcommands -----------------------------------------------------------------


def cmd_generate(args) -> None:
    w = None
    if args.weights is not None:
        w = WeightRange(args.weights[0], args.weights[1], args.nonnegative)
    kw = {} if w is None else {"w": w}
    if args.mode == "undirected":
        g = gen_undirected(args.n, args.m if args.m is not None else 2 * args.n, seed=args.seed, **kw)
    elif args.mode == "dag":
        g = gen_dag(args.n, args.p if args.p is not None else 2.0 / args.n, seed=args.seed, **kw)
    else:
        g = gen_cyclic_directed(args.n, args.m if args.m is not None else 2 * args.n, seed=args.seed, **kw)
    text = g.to_csv() if args.out and args.out.endswith(".csv") else g.to_json() + "\n"
    _write_text(args.out, text)


def cmd_simulate(args) -> None:
    g = _read_graph(args.graph)
    model = SemModel(g.entries, _matrix_arg(args.sigma_e))
    if args.t == ASYMPTOTIC:
        cov = asymptotic_cov(model)
    else:
        x = sample_data(model, args.t, seed=args.seed)
        if args.data_out:
            save_matrix(args.data_out, x)
        cov = sample_cov(x)
    _write_text(args.out, matrix_to_csv(cov.c))


def cmd_copula(args) -> None:
    cov = baselines.kendall_copula_cov(load_matrix(args.data))
    _write_text(args.out, matrix_to_csv(cov.c))


def cmd_identify(args) -> None:
    c = load_matrix(args.cov)
    sigma_e = _matrix_arg(args.sigma_e)
    t0 = time.perf_counter()
    report: dict = {"mode": args.mode}
    if args.mode == "undirected":
        alpha = 0.0 if args.alpha is None else args.alpha
        if sigma_e is None:
            p = undirected.build_problem(c, alpha, eig_floor=args.eig_floor)
        else:
            p = undirected.build_problem_colored(c, sigma_e, alpha, eig_floor=args.eig_floor)
        q = undirected.solve(p, args.solver)
        s_hat = undirected.reconstruct_undirected(p, q)
        report.update(alpha=alpha, objective=undirected.objective(p, q), q=q.astype(int).tolist())
        # conditions evaluated on the estimate, the only graph available here
        try:
            ident = undirected.identifiability_check(s_hat, residual_tol=1e-6)
            report.update(cond_i=ident.cond_i, cond_ii=ident.cond_ii)
        except CovMatchError:
            report.update(cond_i=None, cond_ii=None)
        report["flags"] = list(p.flags)
    else:
        alpha = 1e-2 if args.alpha is None else args.alpha
        s_hat, res, p = directed.identify_directed(
            c, alpha, sigma_e, budget=args.budget, seed=args.seed, workers=args.workers,
            eig_floor=args.eig_floor,
        )
        report.update(alpha=alpha, final_cost=res.best.cost, cycles_used=res.cycles_used,
                      candidate_costs=[o.cost for o in res.candidates], trace=res.trace,
                      budget=args.budget, seed=args.seed)
    report["wall_time"] = time.perf_counter() - t0
    _write_text(args.out, matrix_to_csv(s_hat))
    if args.report:
        _write_text(args.report, json.dumps(report, indent=2) + "\n")


def cmd_baseline(args) -> None:
    s_hat = baselines.sigmatch(load_matrix(args.cov), args.alpha, symmetric=args.symmetric)
    _write_text(args.out, matrix_to_csv(s_hat))


def cmd_evaluate(args) -> None:
    truth = _read_graph(args.truth).entries
    est = load_matrix(args.estimate)
    if truth.shape != est.shape:
        raise InputError("truth and estimate differ in size")
    if args.prune is not None:
        est = baselines.prune(est, args.prune)
    rep = baselines.evaluate(truth, est, threshold=args.threshold)
    _write_text(args.out, rep.to_json() + "\n")


def cmd_consensus(args) -> None:
    graphs = [load_matrix(p) for p in args.estimates]
    g = baselines.consensus_graph(graphs, args.top_k, args.min_freq)
    _write_text(args.out, matrix_to_csv(g))


def _experiment_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParameterError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(d, dict):
            raise ParameterError("config file must hold a JSON object")
    overrides = {
        "mode": args.mode, "n_list": args.n_list, "t_list": args.t_list, "n_graphs": args.n_graphs,
        "alpha": args.alpha, "sigmatch_alpha": args.sigmatch_alpha, "budget": args.budget,
        "seed": args.seed, "out_dir": args.out_dir, "workers": args.workers, "solver": args.solver,
        "methods": args.methods, "prune_below": args.prune_below, "eig_floor": args.eig_floor,
    }
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(d)


def cmd_experiment(args) -> None:
    cfg = _experiment_config(args)

    def progress(rec):
        log.info("done %s N=%s T=%s g=%s", rec["mode"], rec["N"], rec["T"], rec["graph_index"])

    res = run_experiment(cfg, progress=progress)
    log.info("%d instances computed, %d reused; output in %s",
             res.n_computed, len(res.records) - res.n_computed, res.out_dir)
    sys.stdout.write(res.aggregate_csv)


def cmd_grid_search(args) -> None:
    cfg = _experiment_config(args)
    best = grid_search_alpha(cfg, args.alphas, method=args.method)
    rows = ["N,T,alpha"] + [f"{n},{t},{a!r}" for (n, t), a in best.items()]
    _write_text(args.out, "\n".join(rows) + "\n")


def cmd_plot(args) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ParameterError("plotting needs the optional 'plot' extra (matplotlib)") from exc
    import csv

    with open(args.aggregate, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InputError("aggregate table is empty")
    col = "mean_nse_unflagged" if args.exclude_flagged else "mean_nse"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series: dict[tuple, list] = {}
    for r in rows:
        series.setdefault((r["method"], r["T"]), []).append((int(r["N"]), float(r[col])))
    for (method, t), pts in sorted(series.items()):
        pts.sort()
        style = "--" if t == ASYMPTOTIC else "-"
        ax.semilogy([p[0] for p in pts], [max(p[1], 1e-300) for p in pts], style, marker="o",
                    label=f"{method}, T={t}")
    ax.set_xlabel("N")
    ax.set_ylabel("NSE")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(args.out)


# -- parser --------------------------------------------------------------------------


def _add_experiment_args(sp) -> None:
    sp.add_argument("--config", help="JSON file with ExperimentConfig fields")
    sp.add_argument("--mode", choices=["undirected", "dag", "cyclic"])
    sp.add_argument("--n-list", type=_csv_list(int))
    sp.add_argument("--t-list", type=_csv_list(_t_value))
    sp.add_argument("--n-graphs", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--sigmatch-alpha", type=float)
    sp.add_argument("--budget", choices=sorted(directed.BUDGETS))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_ENV} or ./results)")
    sp.add_argument("--workers", type=int, help="total worker threads")
    sp.add_argument("--solver", choices=["auto", "exact", "bnb"])
    sp.add_argument("--methods", type=_csv_list(str))
    sp.add_argument("--prune-below", type=float)
    sp.add_argument("--eig-floor", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="covmatch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("generate", help="draw a seeded ground-truth graph")
    sp.add_argument("--mode", choices=["undirected", "dag", "cyclic"], required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int, help="edge count (default 2N)")
    sp.add_argument("--p", type=float, help="DAG edge probability (default 2/N)")
    sp.add_argument("--weights", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--nonnegative", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help=".json or .csv (default: JSON on stdout)")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("simulate", help="sample or asymptotic covariance of an SEM")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--t", type=_t_value, default=ASYMPTOTIC)
    sp.add_argument("--sigma-e")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--data-out")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("copula", help="Kendall copula covariance of an N x T data matrix")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_copula)

    sp = sub.add_parser("identify", help="estimate the GSO from a covariance")
    sp.add_argument("--mode", choices=["undirected", "directed"], required=True)
    sp.add_argument("--cov", required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--sigma-e")
    sp.add_argument("--budget", choices=sorted(directed.BUDGETS), default="desk")
    sp.add_argument("--eig-floor", type=float)
    sp.add_argument("--solver", choices=["auto", "exact", "bnb"], default="auto")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", help="estimate CSV (default stdout)")
    sp.add_argument("--report", help="JSON run report")
    sp.set_defaults(func=cmd_identify)

    sp = sub.add_parser("baseline", help="SigMatch estimate")
    sp.add_argument("--cov", required=True)
    sp.add_argument("--alpha", type=float, default=1e-2)
    sp.add_argument("--symmetric", action="store_true", help="symmetric hollow variant")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("evaluate", help="NSE and support metrics as JSON")
    sp.add_argument("--truth", required=True)
    sp.add_argument("--estimate", required=True)
    sp.add_argument("--prune", type=float)
    sp.add_argument("--threshold", type=float, default=0.0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("consensus", help="consensus support over several estimates")
    sp.add_argument("estimates", nargs="+")
    sp.add_argument("--top-k", type=int, required=True)
    sp.add_argument("--min-freq", type=int, required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_consensus)

    sp = sub.add_parser("experiment", help="seeded resumable sweep")
    _add_experiment_args(sp)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("grid-search", help="tune alpha on a held-out seed block")
    _add_experiment_args(sp)
    sp.add_argument("--alphas", type=_csv_list(float), required=True)
    sp.add_argument("--method", choices=["covmatch", "sigmatch"], default="covmatch")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_grid_search)

    sp = sub.add_parser("plot", help="NSE vs N line chart from an aggregate CSV")
    sp.add_argument("--aggregate", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--exclude-flagged", action="store_true")
    sp.set_defaults(func=cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CovMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
