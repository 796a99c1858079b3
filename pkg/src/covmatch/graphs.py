"""Seeded ground-truth graph generators and graph (de)serialization.

A graph shift operator (GSO) here is the weighted adjacency matrix ``S``
with ``S[i, j]`` the weight of the edge ``j -> i``.
"""
from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import SeedLike, as_generator
from .errors import GenerationError, InputError, ParameterError

UNDIRECTED = "undirected"
DIRECTED = "directed"

# (I - S) with a larger condition number is rejected and resampled
MAX_COND = 1e8


@dataclass(frozen=True)
class WeightRange:
    """Edge weight magnitudes in ``[lo_abs, hi_abs]``, sign chosen at random
    unless ``nonnegative`` is set."""

    lo_abs: float
    hi_abs: float
    nonnegative: bool = False

    def __post_init__(self):
        if not (0 < self.lo_abs <= self.hi_abs):
            raise ParameterError(
                f"need 0 < lo_abs <= hi_abs, got {self.lo_abs}, {self.hi_abs}"
            )

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        mag = rng.uniform(self.lo_abs, self.hi_abs, size=size)
        if self.nonnegative:
            return mag
        sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        return sign * mag


UNDIRECTED_WEIGHTS = WeightRange(0.1, 1.0)
DAG_WEIGHTS = WeightRange(0.5, 2.0)
CYCLIC_WEIGHTS = WeightRange(0.1, 1.0)


@dataclass
class Gso:
    entries: np.ndarray
    kind: str = DIRECTED

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise InputError(f"GSO must be square, got shape {self.entries.shape}")
        if self.kind not in (UNDIRECTED, DIRECTED):
            raise InputError(f"unknown graph kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def n_edges(self) -> int:
        nz = int(np.count_nonzero(self.entries))
        return nz // 2 if self.kind == UNDIRECTED else nz

    def is_hollow(self) -> bool:
        return bool(np.all(np.diag(self.entries) == 0))

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.entries, self.entries.T))

    # -- serialization -------------------------------------------------

    def to_json(self) -> str:
        rows, cols = np.nonzero(self.entries)
        triplets = [[int(i), int(j), float(self.entries[i, j])] for i, j in zip(rows, cols)]
        return json.dumps({"n": self.n, "kind": self.kind, "triplets": triplets})

    @classmethod
    def from_json(cls, text: str) -> "Gso":
        try:
            doc = json.loads(text)
            n = int(doc["n"])
            s = np.zeros((n, n))
            for i, j, w in doc["triplets"]:
                s[int(i), int(j)] = float(w)
            return cls(s, doc.get("kind", DIRECTED))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise InputError(f"malformed graph JSON: {exc}") from exc

    def to_csv(self) -> str:
        return matrix_to_csv(self.entries)

    @classmethod
    def from_csv(cls, text: str, kind: str | None = None) -> "Gso":
        s = matrix_from_csv(text)
        if kind is None:
            kind = UNDIRECTED if np.array_equal(s, s.T) else DIRECTED
        return cls(s, kind)


def matrix_to_csv(a: np.ndarray) -> str:
    """Dense row-major CSV; ``repr`` floats round-trip exactly."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in a:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def matrix_from_csv(text: str) -> np.ndarray:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    try:
        a = np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise InputError(f"non-numeric CSV entry: {exc}") from exc
    if a.ndim != 2:
        raise InputError("ragged CSV matrix")
    return a


def load_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        if isinstance(doc, dict) and "triplets" in doc:
            return Gso.from_json(text).entries
        if isinstance(doc, dict) and "c" in doc:
            return np.asarray(doc["c"], dtype=float)
        return np.asarray(doc, dtype=float)
    return matrix_from_csv(text)


def save_matrix(path: str | Path, a: np.ndarray) -> None:
    Path(path).write_text(matrix_to_csv(a))


# -- generators ------------------------------------------------------------


def _sample_without_replacement(rng: np.random.Generator, pool: int, m: int) -> np.ndarray:
    """Partial Fisher-Yates draw of ``m`` distinct indices from ``range(pool)``.

    Only displaced slots are stored, so memory is O(m).
    """
    swapped: dict[int, int] = {}
    out = np.empty(m, dtype=np.int64)
    for k in range(m):
        r = int(rng.integers(k, pool))
        out[k] = swapped.get(r, r)
        swapped[r] = swapped.get(k, k)
    return out


def _well_conditioned(s: np.ndarray) -> bool:
    return bool(np.linalg.cond(np.eye(s.shape[0]) - s) <= MAX_COND)


def gen_undirected(
    n: int, m: int, w: WeightRange = UNDIRECTED_WEIGHTS, seed: SeedLike = None,
    max_retries: int = 100,
) -> Gso:
    """Symmetric hollow graph with exactly ``m`` undirected edges."""
    pairs = n * (n - 1) // 2
    if n < 1 or not (0 <= m <= pairs):
        raise ParameterError(f"edge count m={m} outside [0, {pairs}] for n={n}")
    rng = as_generator(seed)
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(max_retries):
        idx = _sample_without_replacement(rng, pairs, m)
        s = np.zeros((n, n))
        s[iu[idx], ju[idx]] = w.draw(rng, m)
        s = s + s.T
        if _well_conditioned(s):
            return Gso(s, UNDIRECTED)
    raise GenerationError(f"no well-conditioned undirected graph in {max_retries} draws")


def gen_dag(n: int, p: float, w: WeightRange = DAG_WEIGHTS, seed: SeedLike = None) -> Gso:
    """Erdos-Renyi graph, lower triangle kept as a DAG, then labels permuted."""
    if not (0.0 <= p <= 1.0):
        raise ParameterError(f"edge probability {p} outside [0, 1]")
    if n < 1:
        raise ParameterError("n must be positive")
    rng = as_generator(seed)
    il, jl = np.tril_indices(n, k=-1)
    keep = rng.random(il.size) < p
    s = np.zeros((n, n))
    s[il[keep], jl[keep]] = w.draw(rng, int(keep.sum()))
    perm = rng.permutation(n)
    return Gso(s[np.ix_(perm, perm)], DIRECTED)


def gen_cyclic_directed(
    n: int, m: int, w: WeightRange = CYCLIC_WEIGHTS, seed: SeedLike = None,
    max_retries: int = 100,
) -> Gso:
    """Directed graph with exactly ``m`` edges and at least one cycle.

    Acyclic or ill-conditioned draws are discarded and regenerated.
    """
    pool = n * (n - 1)
    if n < 1 or not (0 <= m <= pool):
        raise ParameterError(f"edge count m={m} outside [0, {pool}] for n={n}")
    rng = as_generator(seed)
    off = ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(off)
    for _ in range(max_retries):
        idx = _sample_without_replacement(rng, pool, m)
        s = np.zeros((n, n))
        s[ii[idx], jj[idx]] = w.draw(rng, m)
        if not is_acyclic(s) and _well_conditioned(s):
            return Gso(s, DIRECTED)
    raise GenerationError(f"no cyclic well-conditioned graph in {max_retries} draws")


def is_acyclic(s: np.ndarray | Gso) -> bool:
    """Kahn topological sort on the support of ``s`` (edge j -> i for s[i, j] != 0)."""
    a = s.entries if isinstance(s, Gso) else np.asarray(s)
    n = a.shape[0]
    adj = a != 0
    if np.any(np.diag(adj)):
        return False
    indeg = adj.sum(axis=1)
    queue = deque(int(i) for i in np.flatnonzero(indeg == 0))
    seen = 0
    while queue:
        j = queue.popleft()
        seen += 1
        for i in np.flatnonzero(adj[:, j]):
            indeg[i] -= 1
            if indeg[i] == 0:
                queue.append(int(i))
    return seen == n
