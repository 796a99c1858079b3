"""Seeded, resumable simulation sweeps over (N, T, graph).

Every instance writes one JSON file; the aggregate table is rebuilt from those
files, so an interrupted run that is resumed gives the same output as an
uninterrupted one. Run times are kept out of the aggregate table (they go to a
separate ``runtime.csv``) so that reruns compare byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._rng import derive_int
from .baselines import evaluate, prune, sigmatch
from .directed import BUDGETS, DirectedProblem, identify_directed, objective_s
from .errors import BudgetError, CovMatchError, InputError, ParameterError
from .graphs import Gso, gen_cyclic_directed, gen_dag, gen_undirected
from .sem import ASYMPTOTIC, CovSpec, SemModel, asymptotic_cov, sample_cov, sample_data
from .undirected import UndirectedProblem, build_problem, identifiability_check, reconstruct_undirected, solve

MODES = ("undirected", "dag", "cyclic")
METHODS = ("covmatch", "sigmatch")
DEFAULT_ALPHA = {"undirected": 0.0, "dag": 1e-2, "cyclic": 1e-2}
OUTPUT_ENV = "COVMATCH_OUTPUT_DIR"

AGG_COLUMNS = [
    "mode", "N", "T", "method", "n_instances", "n_failed",
    "mean_nse", "std_nse", "mean_nse_unflagged", "std_nse_unflagged",
    "n_flagged_nonidentifiable",
]
RUNTIME_COLUMNS = ["mode", "N", "T", "method", "mean_runtime"]

# fields that do not change any single instance result
_NON_RESULT_FIELDS = ("out_dir", "workers", "n_list", "t_list", "n_graphs")


@dataclass
class ExperimentConfig:
    mode: str = "undirected"
    n_list: list[int] = field(default_factory=lambda: [10, 20])
    t_list: list = field(default_factory=lambda: [200, 1000, 5000, ASYMPTOTIC])
    n_graphs: int = 10
    alpha: float | None = None
    sigmatch_alpha: float = 1e-2
    # preset name or an explicit {"k", "l", "capacity"} mapping
    budget: str | dict = "desk"
    seed: int = 0
    out_dir: str | None = None
    workers: int = 1
    solver: str = "auto"
    methods: list[str] = field(default_factory=lambda: ["covmatch"])
    prune_below: float = 0.0
    # |entries| above this count as edges in precision/recall
    support_threshold: float = 1e-6
    eig_floor: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.n_list:
            raise ParameterError("n_list must be nonempty")
        if any(int(n) < 2 for n in self.n_list):
            raise ParameterError("every N must be at least 2")
        if not self.t_list:
            raise ParameterError("t_list must be nonempty")
        for t in self.t_list:
            if t != ASYMPTOTIC and (isinstance(t, bool) or not isinstance(t, int) or t < 1):
                raise ParameterError(f"T must be a positive integer or {ASYMPTOTIC!r}, got {t!r}")
        if self.n_graphs < 1:
            raise ParameterError("n_graphs must be at least 1")
        if self.workers < 1:
            raise ParameterError("workers must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ParameterError(f"methods must be a nonempty subset of {METHODS}")
        if isinstance(self.budget, str) and self.budget not in BUDGETS:
            raise ParameterError(f"budget must be one of {sorted(BUDGETS)} or a mapping")
        if isinstance(self.budget, dict) and set(self.budget) != {"k", "l", "capacity"}:
            raise ParameterError("a budget mapping needs exactly the keys k, l, capacity")
        if self.alpha is None:
            self.alpha = DEFAULT_ALPHA[self.mode]
        if min(self.alpha, self.sigmatch_alpha, self.prune_below, self.support_threshold) < 0:
            raise ParameterError("alpha, sigmatch_alpha, prune_below and support_threshold must be nonnegative")
        self.n_list = [int(n) for n in self.n_list]
        self.methods = list(self.methods)
        self.t_list = list(self.t_list)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParameterError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ParameterError("config file must hold a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def key(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _NON_RESULT_FIELDS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def output_dir(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUTPUT_ENV) or "results")


# -- one instance -----------------------------------------------------------------


def _t_code(t) -> int:
    return 0 if t == ASYMPTOTIC else int(t)


def instance_seeds(cfg: ExperimentConfig, n: int, g: int, t) -> dict:
    """Graph seeds depend on (N, g) only, so every T sees the same graphs."""
    return {
        "graph": derive_int(cfg.seed, n, g),
        "data": derive_int(cfg.seed, n, g, _t_code(t), 1),
        "solver": derive_int(cfg.seed, n, g, _t_code(t), 2),
    }


def make_graph(mode: str, n: int, seed: int) -> Gso:
    if mode == "undirected":
        return gen_undirected(n, min(2 * n, n * (n - 1) // 2), seed=seed)
    if mode == "dag":
        return gen_dag(n, min(1.0, 2.0 / n), seed=seed)
    return gen_cyclic_directed(n, min(2 * n, n * (n - 1)), seed=seed)


def make_cov(truth: Gso, t, seed: int) -> CovSpec:
    model = SemModel(truth.entries)
    if t == ASYMPTOTIC:
        return asymptotic_cov(model)
    return sample_cov(sample_data(model, int(t), seed=seed))


def flag_nonidentifiable(
    truth: Gso | np.ndarray,
    estimate: Gso | np.ndarray,
    p: UndirectedProblem | DirectedProblem,
    tol: float = 1e-9,
) -> bool:
    """Directed: the estimate beats the truth's objective by more than ``tol``.
    Undirected: the truth fails the identifiability conditions."""
    s_true = np.asarray(getattr(truth, "entries", truth), dtype=float)
    s_est = np.asarray(getattr(estimate, "entries", estimate), dtype=float)
    if s_true.shape != s_est.shape:
        raise InputError("truth and estimate differ in size")
    if isinstance(p, DirectedProblem):
        return objective_s(p, s_est) < objective_s(p, s_true) - tol
    return not identifiability_check(s_true).identifiable


def _covmatch(cfg: ExperimentConfig, truth: Gso, c: CovSpec, seed: int):
    if cfg.mode == "undirected":
        p = build_problem(c, cfg.alpha, eig_floor=cfg.eig_floor)
        q = solve(p, cfg.solver)
        return reconstruct_undirected(p, q), p
    s_hat, _, p = identify_directed(c, cfg.alpha, budget=cfg.budget, seed=seed,
                                    eig_floor=cfg.eig_floor)
    return s_hat, p


def run_instance(cfg: ExperimentConfig, n: int, t, g: int) -> dict:
    seeds = instance_seeds(cfg, n, g, t)
    truth = make_graph(cfg.mode, n, seeds["graph"])
    c = make_cov(truth, t, seeds["data"])
    rec = {
        "config_key": cfg.key(), "mode": cfg.mode, "N": n, "T": t, "graph_index": g,
        "seeds": seeds, "n_edges": truth.n_edges, "flagged": False, "flags": [],
        "results": {},
    }
    raw = problem = None
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            if method == "covmatch":
                raw, problem = _covmatch(cfg, truth, c, seeds["solver"])
                s_hat = raw
            else:
                s_hat = sigmatch(c, cfg.sigmatch_alpha)
        except CovMatchError as exc:
            rec["results"][method] = {"error": f"{type(exc).__name__}: {exc}",
                                      "runtime_s": time.perf_counter() - t0}
            continue
        runtime = time.perf_counter() - t0
        if cfg.prune_below > 0:
            s_hat = prune(s_hat, cfg.prune_below)
        res = asdict(evaluate(truth.entries, s_hat, cfg.support_threshold, runtime_s=runtime))
        del res["flags"]
        rec["results"][method] = res
    # the flag is a property of the instance and applies to every method's row
    try:
        if cfg.mode == "undirected":
            rec["flagged"] = not identifiability_check(truth.entries).identifiable
        elif problem is not None:
            rec["flagged"] = flag_nonidentifiable(truth, raw, problem)
    except BudgetError:
        rec["flags"].append("identifiability-unchecked")
    except CovMatchError as exc:
        rec["flags"].append(f"flag-check-failed: {type(exc).__name__}")
    return rec


# -- sweep -----------------------------------------------------------------------


def _instance_path(root: Path, mode: str, n: int, t, g: int) -> Path:
    return root / "instances" / f"{mode}_N{n}_T{t}_g{g:03d}.json"


def _load_done(path: Path, key: str) -> dict | None:
    try:
        rec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    return rec if rec.get("config_key") == key else None


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return repr(float(x))


def aggregate(cfg: ExperimentConfig, records: list[dict]) -> tuple[str, str]:
    """Aggregate and runtime CSV texts, rows ordered as in the config."""
    by_cell: dict[tuple, list[dict]] = {}
    for rec in records:
        by_cell.setdefault((rec["N"], rec["T"]), []).append(rec)
    agg, rt = io.StringIO(), io.StringIO()
    wa, wr = csv.writer(agg, lineterminator="\n"), csv.writer(rt, lineterminator="\n")
    wa.writerow(AGG_COLUMNS)
    wr.writerow(RUNTIME_COLUMNS)
    for n in cfg.n_list:
        for t in cfg.t_list:
            recs = sorted(by_cell.get((n, t), []), key=lambda r: r["graph_index"])
            for method in cfg.methods:
                ok = [r for r in recs if "nse" in r["results"].get(method, {})]
                nse_all = np.array([r["results"][method]["nse"] for r in ok])
                nse_unf = np.array([r["results"][method]["nse"] for r in ok if not r["flagged"]])
                flagged = sum(1 for r in recs if r["flagged"])
                stats = []
                for a in (nse_all, nse_unf):
                    stats += [_fmt(a.mean()), _fmt(a.std())] if a.size else ["nan", "nan"]
                wa.writerow([cfg.mode, n, t, method, len(recs), len(recs) - len(ok), *stats, flagged])
                times = [r["results"][method]["runtime_s"] for r in recs if method in r["results"]]
                wr.writerow([cfg.mode, n, t, method, _fmt(np.mean(times)) if times else "nan"])
    return agg.getvalue(), rt.getvalue()


@dataclass
class ExperimentResult:
    records: list[dict]
    aggregate_csv: str
    runtime_csv: str
    out_dir: Path
    n_computed: int = 0

    def rows(self) -> list[dict]:
        return list(csv.DictReader(io.StringIO(self.aggregate_csv)))


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Run (or resume) the sweep and write ``instances/*.json``,
    ``aggregate.csv`` and ``runtime.csv`` under the output directory.

    With ``workers > 1`` instances run concurrently; the results do not
    depend on the worker count.
    """
    root = cfg.output_dir()
    try:
        (root / "instances").mkdir(parents=True, exist_ok=True)
        _write_atomic(root / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ParameterError(f"output directory {root} is not writable: {exc}") from exc
    key = cfg.key()
    cells = [(n, t, g) for n in cfg.n_list for t in cfg.t_list for g in range(cfg.n_graphs)]
    records: dict[tuple, dict] = {}
    todo = []
    for cell in cells:
        rec = _load_done(_instance_path(root, cfg.mode, *cell), key)
        if rec is None:
            todo.append(cell)
        else:
            records[cell] = rec

    def work(cell):
        rec = run_instance(cfg, *cell)
        _write_atomic(_instance_path(root, cfg.mode, *cell), json.dumps(rec, sort_keys=True) + "\n")
        if progress is not None:
            progress(rec)
        return cell, rec

    if cfg.workers == 1 or len(todo) <= 1:
        done = [work(cell) for cell in todo]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            done = list(pool.map(work, todo))
    records.update(done)
    ordered = [records[cell] for cell in cells]
    agg, rt = aggregate(cfg, ordered)
    _write_atomic(root / "aggregate.csv", agg)
    _write_atomic(root / "runtime.csv", rt)
    return ExperimentResult(ordered, agg, rt, root, len(todo))


# offset that separates the tuning seed block from the evaluation seeds
HELD_OUT_OFFSET = 1_000_003


def grid_search_alpha(
    cfg: ExperimentConfig, alpha_list: list[float], method: str = "covmatch"
) -> dict[tuple, float]:
    """Best alpha per (N, T) by mean NSE on a held-out seed block; ties go to
    the smaller alpha. ``method="sigmatch"`` tunes the baseline's weight."""
    if not alpha_list:
        raise ParameterError("alpha_list must be nonempty")
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}")
    root = cfg.output_dir() / "grid"
    best: dict[tuple, tuple[float, float]] = {}
    for i, alpha in enumerate(sorted(float(a) for a in alpha_list)):
        over = {"sigmatch_alpha": alpha} if method == "sigmatch" else {"alpha": alpha}
        sub = replace(cfg, seed=cfg.seed + HELD_OUT_OFFSET, methods=[method],
                      out_dir=str(root / f"{method}_{i:03d}"), **over)
        for row in run_experiment(sub).rows():
            cell = (int(row["N"]), row["T"] if row["T"] == ASYMPTOTIC else int(row["T"]))
            score = float(row["mean_nse"])
            if np.isnan(score):
                score = np.inf
            if cell not in best or score < best[cell][0]:
                best[cell] = (score, alpha)
    return {cell: a for cell, (_, a) in best.items()}
