"""Ollivier-Ricci curvature of embedding sets.

Pipeline: build a symmetrized k-nearest-neighbor graph, put a uniform
probability measure on each node's neighbors, compute the exact
1-Wasserstein distance between the two endpoint measures of every edge
under the hop metric, and report kappa = 1 - W1/d.  Negative kappa marks
locally tree-like (hyperbolic) regions.

The transport solver scales the rational masses to integers and runs
successive-shortest-path min-cost flow in exact integer arithmetic, so
results are exact for the uniform measures produced here.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np


class InfiniteDistanceError(ValueError):
    """Transport between measures in different components is undefined."""


@dataclass
class NeighborGraph:
    """Undirected simple graph with BFS hop distances."""

    n: int
    adjacency: List[List[int]]

    def __post_init__(self):
        self._dist_cache: Dict[int, np.ndarray] = {}

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def edges(self) -> List[Tuple[int, int]]:
        return [(i, j) for i in range(self.n) for j in self.adjacency[i] if i < j]

    def distances_from(self, i: int) -> np.ndarray:
        """Hop distances from node i; unreachable nodes get -1."""
        if i in self._dist_cache:
            return self._dist_cache[i]
        dist = np.full(self.n, -1, dtype=np.int64)
        dist[i] = 0
        queue = deque([i])
        while queue:
            u = queue.popleft()
            for v in self.adjacency[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        self._dist_cache[i] = dist
        return dist

    def hop_distance(self, i: int, j: int) -> int:
        d = int(self.distances_from(i)[j])
        if d < 0:
            raise InfiniteDistanceError(f"nodes {i} and {j} are disconnected")
        return d


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability masses on a list of graph nodes."""

    support: Tuple[int, ...]
    mass: Tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.support) != len(self.mass):
            raise ValueError("support/mass length mismatch")
        if any(m < 0 for m in self.mass):
            raise ValueError("negative mass")
        if abs(float(sum(self.mass)) - 1.0) > 1e-12:
            raise ValueError("masses must sum to 1")


def knn_graph(embeddings: np.ndarray, k: int) -> NeighborGraph:
    """Symmetrized k-nearest-neighbor graph under Euclidean distance.

    Edge (i, j) exists iff j is among i's k nearest or vice versa; ties
    are broken by index.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ValueError("embeddings must be an N x d array")
    n = emb.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"need N > k >= 1, got N={n}, k={k}")
    sq = np.sum(emb * emb, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * emb @ emb.T
    adjacency: List[set] = [set() for _ in range(n)]
    idx = np.arange(n)
    for i in range(n):
        row = d2[i].copy()
        row[i] = np.inf
        order = np.lexsort((idx, row))
        for j in order[:k]:
            adjacency[i].add(int(j))
            adjacency[int(j)].add(i)
    return NeighborGraph(n, [sorted(s) for s in adjacency])


def neighbor_measure(g: NeighborGraph, i: int) -> DiscreteMeasure:
    """Uniform mass 1/deg(i) on each neighbor of i."""
    deg = g.degree(i)
    if deg == 0:
        raise ValueError(f"node {i} is isolated")
    w = Fraction(1, deg)
    return DiscreteMeasure(tuple(g.adjacency[i]), tuple(w for _ in range(deg)))


def _exact_masses(mass: Sequence) -> List[Fraction]:
    exact = [m if isinstance(m, Fraction) else Fraction(m) for m in mass]
    total = sum(exact)
    if total == 0:
        raise ValueError("measure with zero total mass")
    return [m / total for m in exact]


def _min_cost_flow(supply: List[int], demand: List[int],
                   cost: List[List[int]]) -> int:
    """Exact uncapacitated transportation optimum via successive
    shortest augmenting paths (Bellman-Ford; all arithmetic integral).

    Nodes 0..m-1 are sources, m..m+n-1 sinks.  Forward arcs i -> m+j
    cost c_ij are always open; backward arcs m+j -> i cost -c_ij open
    while flow[i][j] > 0.
    """
    m, n = len(supply), len(demand)
    rem_s, rem_d = list(supply), list(demand)
    flow = [[0] * n for _ in range(m)]
    total = 0
    while any(rem_s):
        dist: List = [None] * (m + n)
        parent: List[int] = [-1] * (m + n)
        for i in range(m):
            if rem_s[i] > 0:
                dist[i] = 0
        for _ in range(m + n):
            changed = False
            for i in range(m):
                if dist[i] is None:
                    continue
                di = dist[i]
                for j in range(n):
                    nd = di + cost[i][j]
                    if dist[m + j] is None or nd < dist[m + j]:
                        dist[m + j] = nd
                        parent[m + j] = i
                        changed = True
            for j in range(n):
                if dist[m + j] is None:
                    continue
                dj = dist[m + j]
                for i in range(m):
                    if flow[i][j] > 0:
                        nd = dj - cost[i][j]
                        if dist[i] is None or nd < dist[i]:
                            dist[i] = nd
                            parent[i] = m + j
                            changed = True
            if not changed:
                break
        live = [j for j in range(n) if rem_d[j] > 0 and dist[m + j] is not None]
        if not live:
            raise InfiniteDistanceError("no augmenting path (unbalanced measures)")
        sink = min(live, key=lambda j: dist[m + j])
        path = []
        node = m + sink
        while parent[node] != -1:
            prev = parent[node]
            path.append((prev, node))
            node = prev
        root = node
        bottleneck = min(rem_s[root], rem_d[sink])
        for u, v in path:
            if u >= m:  # backward arc m+j -> i cancels existing flow
                bottleneck = min(bottleneck, flow[v][u - m])
        for u, v in path:
            if u < m:
                flow[u][v - m] += bottleneck
                total += bottleneck * cost[u][v - m]
            else:
                flow[v][u - m] -= bottleneck
                total -= bottleneck * cost[v][u - m]
        rem_s[root] -= bottleneck
        rem_d[sink] -= bottleneck
    return total


def w1(mu: DiscreteMeasure, nu: DiscreteMeasure,
       dist: Callable[[int, int], int]):
    """Exact 1-Wasserstein distance between two measures under `dist`.

    Returns a Fraction; raises InfiniteDistanceError when the supports
    straddle components.
    """
    a = _exact_masses(mu.mass)
    b = _exact_masses(nu.mass)
    scale = 1
    for f in a + b:
        scale = scale * f.denominator // math.gcd(scale, f.denominator)
    supply = [int(f * scale) for f in a]
    demand = [int(f * scale) for f in b]
    cost = [[dist(u, v) for v in nu.support] for u in mu.support]
    return Fraction(_min_cost_flow(supply, demand, cost), scale)


def ollivier_ricci(g: NeighborGraph, i: int, j: int) -> float:
    """kappa(i, j) = 1 - W1(mu_i, mu_j) / d(i, j)."""
    d = g.hop_distance(i, j)
    if d == 0:
        raise ValueError("curvature of a node with itself is undefined")
    cost = w1(neighbor_measure(g, i), neighbor_measure(g, j), g.hop_distance)
    return float(1 - cost / d)


def edge_curvatures(g: NeighborGraph, warn=None) -> List[Tuple[int, int, float]]:
    """kappa for every edge; disconnected-support pairs are skipped."""
    rows = []
    for i, j in g.edges():
        try:
            rows.append((i, j, ollivier_ricci(g, i, j)))
        except InfiniteDistanceError:
            if warn is not None:
                warn(f"skipping edge ({i},{j}): supports are disconnected")
    return rows


def parse_embeddings(path) -> np.ndarray:
    """One vector per line, space-separated decimals."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [float(tok) for tok in line.split()]
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValueError(f"line {lineno}: expected {width} values, "
                                 f"got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ValueError("embedding file is empty")
    return np.asarray(rows, dtype=np.float64)


def curvature_report(embeddings: np.ndarray, k: int, bins: int, out_path,
                     warn=None) -> dict:
    """Write per-edge kappas, a histogram, and summary stats.

    Files: <out>, <out stem>_hist.csv, <out stem>_summary.csv.
    Returns the summary dict.
    """
    from .checkpoint import atomic_write_bytes

    g = knn_graph(embeddings, k)
    rows = edge_curvatures(g, warn=warn)
    kappas = np.asarray([r[2] for r in rows])

    def fmt(x: float) -> str:
        return repr(float(x))

    edge_lines = ["i,j,kappa"]
    edge_lines += [f"{i},{j},{fmt(kappa)}" for i, j, kappa in rows]
    atomic_write_bytes(out_path, ("\n".join(edge_lines) + "\n").encode())

    out_path = str(out_path)
    stem = out_path[:-4] if out_path.endswith(".csv") else out_path
    lo, hi = float(kappas.min()), float(kappas.max())
    if lo == hi:
        hi = lo + 1e-12
    counts, edges = np.histogram(kappas, bins=bins, range=(lo, hi))
    hist_lines = ["bin_lo,bin_hi,count"]
    hist_lines += [f"{fmt(edges[b])},{fmt(edges[b + 1])},{int(counts[b])}"
                   for b in range(bins)]
    atomic_write_bytes(stem + "_hist.csv", ("\n".join(hist_lines) + "\n").encode())

    summary = {
        "edges": len(rows),
        "mean": float(kappas.mean()),
        "min": float(kappas.min()),
        "max": float(kappas.max()),
        "fraction_negative": float(np.mean(kappas < 0)),
    }
    sum_lines = ["stat,value"]
    sum_lines += [f"{key},{fmt(val) if isinstance(val, float) else val}"
                  for key, val in summary.items()]
    atomic_write_bytes(stem + "_summary.csv", ("\n".join(sum_lines) + "\n").encode())
    return summary
