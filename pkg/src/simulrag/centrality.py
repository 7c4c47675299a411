"""Centrality scores over undirected graphs, used as claim confidence.

All functions take a symmetric adjacency mapping ``node -> set(neighbors)``
and return ``node -> float``. Nodes are iterated in sorted order so float
accumulation is reproducible run to run.

The closeness score is the confidence measure of the claim graph: the
classic inverse-farness term over a node's connected component, times a
component-size correction ``|V| / |V_c|``. That correction is applied as
written, which rewards small components; the ``wasserman_faust`` variant
swaps in the standard ``(|V_c| - 1) / (|V| - 1)`` factor, which instead
rewards well-connected components and is monotone in a claim's support.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Mapping

from .errors import NonConvergence, SchemaViolation

Adjacency = Mapping[str, set]

EIGENVECTOR_TOL = 1e-10
PAGERANK_TOL = 1e-10
MAX_ITERATIONS = 500
PAGERANK_DAMPING = 0.85


def _nodes(adj: Adjacency) -> list[str]:
    return sorted(adj)


def _check_symmetric(adj: Adjacency) -> None:
    for node, nbrs in adj.items():
        for nbr in nbrs:
            if nbr not in adj or node not in adj[nbr]:
                raise SchemaViolation(f"adjacency is not symmetric at edge {node!r}-{nbr!r}")


def _bfs_distances(adj: Adjacency, source: str) -> dict[str, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for nbr in sorted(adj[node]):
            if nbr not in dist:
                dist[nbr] = dist[node] + 1
                queue.append(nbr)
    return dist


def closeness_scores(adj: Adjacency, variant: str = "as_written") -> dict[str, float]:
    """Component-restricted closeness with a component-size factor.

    Isolated nodes score exactly 0. For |V| = 2 joined by an edge each node
    scores exactly 1 under the as-written variant.
    """
    if variant not in ("as_written", "wasserman_faust"):
        raise SchemaViolation(f"unknown closeness variant {variant!r}")
    _check_symmetric(adj)
    n = len(adj)
    scores: dict[str, float] = {}
    for node in _nodes(adj):
        dist = _bfs_distances(adj, node)
        total = sum(dist.values())
        reachable = len(dist)
        if total == 0 or n <= 1:
            scores[node] = 0.0
            continue
        inverse_farness = (n - 1) / total
        if variant == "as_written":
            scores[node] = inverse_farness * (n / reachable)
        else:
            scores[node] = inverse_farness * ((reachable - 1) / (n - 1))
    return scores


def degree_scores(adj: Adjacency) -> dict[str, float]:
    _check_symmetric(adj)
    n = len(adj)
    if n < 2:
        return {node: 0.0 for node in adj}
    return {node: len(adj[node]) / (n - 1) for node in _nodes(adj)}


def betweenness_scores(adj: Adjacency) -> dict[str, float]:
    """Brandes betweenness, normalized by the (n-1)(n-2)/2 pair count."""
    _check_symmetric(adj)
    nodes = _nodes(adj)
    n = len(nodes)
    raw = {node: 0.0 for node in nodes}
    if n < 3:
        return raw
    for source in nodes:
        stack: list[str] = []
        preds: dict[str, list[str]] = {node: [] for node in nodes}
        sigma = {node: 0.0 for node in nodes}
        sigma[source] = 1.0
        dist = {node: -1 for node in nodes}
        dist[source] = 0
        queue = deque([source])
        while queue:
            node = queue.popleft()
            stack.append(node)
            for nbr in sorted(adj[node]):
                if dist[nbr] < 0:
                    dist[nbr] = dist[node] + 1
                    queue.append(nbr)
                if dist[nbr] == dist[node] + 1:
                    sigma[nbr] += sigma[node]
                    preds[nbr].append(node)
        delta = {node: 0.0 for node in nodes}
        while stack:
            node = stack.pop()
            for pred in preds[node]:
                delta[pred] += sigma[pred] / sigma[node] * (1.0 + delta[node])
            if node != source:
                raw[node] += delta[node]
    # Each unordered pair was accumulated from both endpoints.
    norm = (n - 1) * (n - 2) / 2.0
    return {node: raw[node] / 2.0 / norm for node in nodes}


def eigenvector_scores(
    adj: Adjacency, tol: float = EIGENVECTOR_TOL, max_iter: int = MAX_ITERATIONS
) -> dict[str, float]:
    """Power iteration for the dominant adjacency eigenvector.

    Iterates on A + I rather than A: the shift leaves eigenvectors
    untouched but breaks the +/- eigenvalue symmetry of bipartite graphs,
    without which plain power iteration oscillates forever. Scores are
    absolute values of the L2-normalized fixed point.
    """
    _check_symmetric(adj)
    nodes = _nodes(adj)
    n = len(nodes)
    if n == 0:
        return {}
    x = {node: 1.0 / math.sqrt(n) for node in nodes}
    for _ in range(max_iter):
        prev = x
        x = {}
        for node in nodes:
            acc = prev[node]  # the +I shift
            for nbr in sorted(adj[node]):
                acc += prev[nbr]
            x[node] = acc
        norm = math.sqrt(sum(v * v for v in x.values()))
        if norm > 0:
            x = {node: v / norm for node, v in x.items()}
        if max(abs(x[node] - prev[node]) for node in nodes) < tol:
            return {node: abs(x[node]) for node in nodes}
    raise NonConvergence(
        f"eigenvector power iteration did not converge in {max_iter} iterations"
    )


def pagerank_scores(
    adj: Adjacency,
    damping: float = PAGERANK_DAMPING,
    tol: float = PAGERANK_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> dict[str, float]:
    """PageRank with uniform teleport; isolated nodes spread rank uniformly."""
    _check_symmetric(adj)
    nodes = _nodes(adj)
    n = len(nodes)
    if n == 0:
        return {}
    x = {node: 1.0 / n for node in nodes}
    base = (1.0 - damping) / n
    for _ in range(max_iter):
        dangling = sum(x[node] for node in nodes if not adj[node])
        nxt = {}
        for node in nodes:
            rank = base + damping * dangling / n
            for nbr in sorted(adj[node]):
                rank += damping * x[nbr] / len(adj[nbr])
            nxt[node] = rank
        err = sum(abs(nxt[node] - x[node]) for node in nodes)
        x = nxt
        if err < tol:
            return x
    raise NonConvergence(f"pagerank did not converge in {max_iter} iterations")


_METRIC_FNS = {
    "degree": degree_scores,
    "betweenness": betweenness_scores,
    "eigenvector": eigenvector_scores,
    "pagerank": pagerank_scores,
}


def raw_centrality(
    adj: Adjacency, metric: str, closeness_variant: str = "as_written"
) -> dict[str, float]:
    """Dispatch to one of the five supported centrality measures."""
    if metric == "closeness":
        return closeness_scores(adj, variant=closeness_variant)
    if metric in _METRIC_FNS:
        return _METRIC_FNS[metric](adj)
    raise SchemaViolation(f"unknown centrality metric {metric!r}")


def minmax_normalize(scores: Mapping[str, float], keys: list[str]) -> dict[str, float]:
    """Min-max rescale ``scores`` over ``keys`` into [0, 1].

    A constant vector (including a single key) maps to all ones.
    """
    if not keys:
        return {}
    values = [scores[k] for k in keys]
    lo, hi = min(values), max(values)
    if hi == lo:
        return {k: 1.0 for k in keys}
    return {k: (scores[k] - lo) / (hi - lo) for k in keys}
