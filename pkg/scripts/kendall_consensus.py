"""Consensus directed network from several non-Gaussian data sets.

Each data set (N x T CSV, one row per variable) is mapped to a Kendall copula
covariance and fed to the directed estimator. Every run keeps its ``--top-k``
largest-magnitude edges, and an edge enters the consensus if it survives in at
least ``--min-freq`` runs. ``--demo`` replaces the inputs with synthetic data
sets drawn from one random cyclic graph and passed through monotone distortions.
The demo only exercises the pipeline: rank correlations put every variable on
unit variance, which removes the variance information the equal-noise model
uses to orient edges, so its precision against the latent graph is low.

    python scripts/kendall_consensus.py cond*.csv --min-freq 5 --out consensus.csv
    python scripts/kendall_consensus.py --demo 14 --min-freq 5
"""
import argparse
import sys

import numpy as np

from covmatch.baselines import consensus_graph, evaluate, kendall_copula_cov
from covmatch.directed import identify_directed
from covmatch.graphs import WeightRange, gen_cyclic_directed, load_matrix, matrix_to_csv
from covmatch.sem import SemModel, sample_data


def demo_data(runs: int, n: int, t: int, seed: int):
    # weak edges keep every variance near one, where a correlation matrix is
    # close to the white-noise SEM covariance the estimator assumes
    truth = gen_cyclic_directed(n, n, WeightRange(0.1, 0.4), seed=seed).entries
    distort = [np.exp, np.tanh, lambda x: x ** 3, lambda x: x]
    data = []
    for k in range(runs):
        x = sample_data(SemModel(truth), t, seed=seed + 1 + k)
        data.append(np.vstack([distort[(i + k) % len(distort)](x[i]) for i in range(n)]))
    return truth, data


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data", nargs="*", help="N x T CSV files, one per condition")
    ap.add_argument("--demo", type=int, metavar="RUNS", help="use synthetic data sets instead")
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--top-k", type=int, default=20)
    ap.add_argument("--min-freq", type=int, required=True)
    ap.add_argument("--budget", default="desk")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--truth", help="reference adjacency for precision/recall")
    ap.add_argument("--out")
    args = ap.parse_args()

    truth = load_matrix(args.truth) if args.truth else None
    if args.demo:
        truth, data = demo_data(args.demo, 11, 800, args.seed)
    elif args.data:
        data = [load_matrix(path) for path in args.data]
    else:
        ap.error("give data files or --demo")

    estimates = []
    for k, x in enumerate(data):
        c = kendall_copula_cov(x)
        s_hat, res, _ = identify_directed(c, args.alpha, budget=args.budget, seed=args.seed + k,
                                          workers=args.workers)
        print(f"run {k}: objective {res.best.cost:.6g}", file=sys.stderr)
        estimates.append(s_hat)
    consensus = consensus_graph(estimates, args.top_k, args.min_freq)
    text = matrix_to_csv(consensus)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")
    if truth is not None:
        rep = evaluate((truth != 0).astype(float), consensus, threshold=0.5)
        print(f"edges {int(consensus.sum())}, precision {rep.precision:.3f}, recall {rep.recall:.3f}",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
