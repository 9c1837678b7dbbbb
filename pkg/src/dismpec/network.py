"""Communication graphs, Metropolis mixing matrices and the consensus
contraction factor ``lambda_w = ||W - (1/m) 1 1^T||_2``."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .exceptions import ContractError, GraphConstructionError, NumericalError

TOPOLOGIES = ("complete", "ring", "sparse", "tree", "erdos_renyi")

ER_MAX_RETRIES = 1000


def _normalize_edges(edges):
    out = set()
    for i, j in edges:
        i, j = int(i), int(j)
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


def is_connected(m: int, edges) -> bool:
    """Breadth-first search from node 0."""
    adj = [[] for _ in range(m)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == m


@dataclass(frozen=True)
class Graph:
    """Undirected, connected, loop-free graph on nodes ``0..m-1``."""

    m: int
    edges: frozenset = field(default_factory=frozenset)
    kind: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "edges", _normalize_edges(self.edges))
        if self.m < 2:
            raise ContractError(f"a graph needs m >= 2 nodes, got {self.m}")
        for i, j in self.edges:
            if i == j:
                raise ContractError(f"self-loop at node {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ContractError(f"edge ({i}, {j}) out of range for m={self.m}")
        if not is_connected(self.m, self.edges):
            raise GraphConstructionError(f"{self.kind} graph on {self.m} nodes is not connected")

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.m, self.m))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


def _random_spanning_tree(m, rng):
    # Pruefer decoding gives a uniform draw over the m^(m-2) labelled trees.
    if m == 2:
        return {(0, 1)}
    seq = rng.integers(0, m, size=m - 2)
    degree = np.ones(m, dtype=int)
    for s in seq:
        degree[s] += 1
    edges = set()
    for s in seq:
        leaf = int(np.flatnonzero(degree == 1)[0])
        edges.add((leaf, int(s)))
        degree[leaf] -= 1
        degree[s] -= 1
    u, v = np.flatnonzero(degree == 1)
    edges.add((int(u), int(v)))
    return edges


def build_topology(kind: str, m: int, *, sparse_degree: float = 3.0,
                   er_probability: float = 0.2, rng_seed=None) -> Graph:
    """Build one of the five graph families used in the experiments.

    ``sparse`` is a random spanning tree topped up with uniformly chosen extra
    edges until the average degree reaches ``sparse_degree``; ``tree`` is a
    uniform random spanning tree of the complete graph; ``erdos_renyi`` is
    resampled until connected.
    """
    if m < 2:
        raise ContractError(f"m must be >= 2, got {m}")
    rng = np.random.default_rng(rng_seed)
    if kind == "complete":
        edges = combinations(range(m), 2)
    elif kind == "ring":
        edges = {(i, (i + 1) % m) for i in range(m)}
    elif kind == "tree":
        edges = _random_spanning_tree(m, rng)
    elif kind == "sparse":
        max_edges = m * (m - 1) // 2
        target = int(round(m * sparse_degree / 2.0))
        if target < m - 1:
            raise GraphConstructionError(
                f"sparse_degree={sparse_degree} is too small to keep {m} nodes connected",
                parameter="sparse_degree")
        target = min(target, max_edges)
        edges = _normalize_edges(_random_spanning_tree(m, rng))
        missing = [e for e in combinations(range(m), 2) if e not in edges]
        extra = rng.choice(len(missing), size=target - len(edges), replace=False)
        edges = set(edges) | {missing[i] for i in sorted(extra)}
    elif kind == "erdos_renyi":
        if not 0.0 < er_probability <= 1.0:
            raise ContractError(f"er_probability must lie in (0, 1], got {er_probability}")
        pairs = list(combinations(range(m), 2))
        for _ in range(ER_MAX_RETRIES):
            keep = rng.random(len(pairs)) < er_probability
            edges = [p for p, k in zip(pairs, keep) if k]
            if is_connected(m, edges):
                break
        else:
            raise GraphConstructionError(
                f"no connected Erdos-Renyi draw in {ER_MAX_RETRIES} attempts "
                f"(er_probability={er_probability}, m={m})", parameter="er_probability")
    else:
        raise ContractError(f"unknown topology {kind!r}; expected one of {TOPOLOGIES}")
    return Graph(m=m, edges=frozenset(edges), kind=kind)


def spectral_gap(w, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Largest singular value of ``W - (1/m) 1 1^T``.

    Power iteration on the symmetric product ``B^T B``; stops once the
    eigen-residual drops below ``tol``.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {w.shape}")
    m = w.shape[0]
    b = w - np.full((m, m), 1.0 / m)
    a = b.T @ b
    scale = np.abs(a).max()
    if scale == 0.0:
        return 0.0
    v = np.random.default_rng(0).standard_normal(m)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        av = a @ v
        rho = float(v @ av)
        if np.linalg.norm(av - rho * v) <= tol * max(scale, 1.0):
            return float(np.sqrt(max(rho, 0.0)))
        nrm = np.linalg.norm(av)
        if nrm == 0.0:
            return 0.0
        v = av / nrm
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class MixingMatrix:
    """Doubly stochastic weight matrix together with its ``lambda_w``."""

    w: np.ndarray
    lambda_w: float

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        check_doubly_stochastic(w)
        if not 0.0 <= self.lambda_w < 1.0:
            raise ContractError(f"lambda_w={self.lambda_w} outside [0, 1)")

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @classmethod
    def from_matrix(cls, w) -> "MixingMatrix":
        return cls(w=np.asarray(w, dtype=float), lambda_w=spectral_gap(w))


def check_doubly_stochastic(w, tol: float = 1e-12) -> None:
    w = np.asarray(w)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ContractError(f"mixing matrix must be square, got {w.shape}")
    if (w < 0).any():
        raise ContractError("mixing matrix has negative entries")
    if np.abs(w.sum(axis=1) - 1.0).max() > tol:
        raise ContractError("mixing matrix rows do not sum to one")
    if np.abs(w.sum(axis=0) - 1.0).max() > tol:
        raise ContractError("mixing matrix columns do not sum to one")
    if not (np.diag(w) > 0).any():
        raise ContractError("mixing matrix needs at least one positive diagonal entry")


def metropolis_weights(g: Graph) -> MixingMatrix:
    deg = g.degrees()
    w = np.zeros((g.m, g.m))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.diag_indices(g.m)] = 1.0 - w.sum(axis=1)
    return MixingMatrix.from_matrix(w)


def mix(w, x) -> np.ndarray:
    """One round of neighbour averaging, ``W x`` on stacked agent rows."""
    wm = w.w if isinstance(w, MixingMatrix) else np.asarray(w)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != wm.shape[0]:
        raise ContractError(f"x has {x.shape[0]} rows but W is {wm.shape[0]}x{wm.shape[0]}")
    return wm @ x


def dump_matrix(a, fh) -> None:
    """Write one row per line, space separated, 17 significant digits."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    for row in a:
        fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix(fh) -> np.ndarray:
    rows = [[float(t) for t in line.split()] for line in fh if line.strip()]
    return np.array(rows)
