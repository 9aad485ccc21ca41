"""Undirected graphs, truncated shortest-path neighborhoods and growth statistics."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import InputError, SchemaError

__all__ = [
    "Graph",
    "NeighborhoodIndex",
    "GrowthReport",
    "build_graph",
    "build_neighborhoods",
    "growth_report",
    "degree_normalize",
    "read_edge_list",
    "write_edge_list",
]

# layers denser than this fraction of n*n are multiplied as dense arrays
_DENSE_FRACTION = 1.0 / 16


class Graph:
    """Immutable undirected simple graph on nodes ``0..n-1``.

    Adjacency is kept in CSR form (``indptr``, ``indices``) with sorted
    neighbor lists. Use :func:`build_graph` to construct one from raw pairs.
    """

    __slots__ = ("n", "edges", "indptr", "indices")

    def __init__(self, n: int, edges: np.ndarray):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.n = int(n)
        self.edges = edges
        both = np.concatenate([edges, edges[:, ::-1]]) if len(edges) else edges
        order = np.lexsort((both[:, 1], both[:, 0])) if len(both) else np.array([], dtype=np.int64)
        both = both[order]
        counts = np.bincount(both[:, 0], minlength=self.n) if len(both) else np.zeros(self.n, np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.indices = both[:, 1].copy() if len(both) else np.zeros(0, np.int64)
        for arr in (self.edges, self.indptr, self.indices):
            arr.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency matrix as CSR."""
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def subgraph(self, keep: Sequence[int]) -> "Graph":
        """Induced subgraph on ``keep``, relabelled to ``0..len(keep)-1`` in the given order."""
        keep = np.asarray(keep, dtype=np.int64)
        relabel = np.full(self.n, -1, dtype=np.int64)
        relabel[keep] = np.arange(len(keep))
        e = relabel[self.edges] if len(self.edges) else self.edges
        e = e[(e >= 0).all(axis=1)] if len(e) else e
        return build_graph(len(keep), e)

    def __eq__(self, other):
        return (
            isinstance(other, Graph)
            and self.n == other.n
            and np.array_equal(self.edges, other.edges)
        )

    def __repr__(self):
        return f"Graph(n={self.n}, n_edges={self.n_edges})"


def build_graph(n: int, edges: Iterable[Sequence[int]]) -> Graph:
    """Build a :class:`Graph` from node pairs.

    Self-loops are dropped and duplicate pairs (in either orientation)
    collapse to one undirected edge.

    Raises
    ------
    InputError
        If ``n`` is negative or a pair references a node outside ``[0, n)``.
    """
    if n < 0:
        raise InputError(f"node count must be non-negative, got {n}")
    pairs = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    pairs = pairs.reshape(-1, 2)
    bad = (pairs < 0) | (pairs >= n)
    if bad.any():
        k = int(np.flatnonzero(bad.any(axis=1))[0])
        i, j = pairs[k]
        raise InputError(f"edge ({i}, {j}) references a node outside [0, {n})")
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    if len(pairs):
        pairs = np.unique(pairs, axis=0)
    return Graph(n, pairs)


class NeighborhoodIndex:
    """Layered shortest-path neighborhoods truncated at ``m_max``.

    Layer ``k`` of node ``i`` holds the nodes at distance exactly ``k`` from
    ``i``. Layer 0 is ``{i}``. Nodes farther than ``m_max`` (or unreachable)
    appear in no layer. Internally every layer ``k >= 1`` is a symmetric
    0/1 CSR matrix whose row ``i`` lists that layer.
    """

    def __init__(self, n: int, m_max: int, layers: list[sp.csr_matrix]):
        self.n = n
        self.m_max = m_max
        self._layers = layers
        self._dense: dict[int, np.ndarray] = {}
        counts = np.ones((n, m_max + 1), dtype=np.int64)
        for k, mat in enumerate(layers, start=1):
            counts[:, k] = np.diff(mat.indptr)
        counts.setflags(write=False)
        self.layer_sizes = counts
        """``layer_sizes[i, k]`` is the number of nodes at distance exactly k from i."""

    @property
    def sizes(self) -> np.ndarray:
        """Cumulative neighborhood sizes, ``sizes[i, m] = N_m(i)``."""
        return np.cumsum(self.layer_sizes, axis=1)

    def layer(self, i: int, k: int) -> np.ndarray:
        if not 0 <= k <= self.m_max:
            raise InputError(f"layer {k} outside 0..{self.m_max}")
        if k == 0:
            return np.array([i], dtype=np.int64)
        mat = self._layers[k - 1]
        return mat.indices[mat.indptr[i]:mat.indptr[i + 1]]

    def layers(self, i: int) -> list[np.ndarray]:
        return [self.layer(i, k) for k in range(self.m_max + 1)]

    def layer_pairs(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Ordered pairs ``(i, j)`` at distance exactly ``k >= 1``, both orientations."""
        mat = self._layers[k - 1]
        rows = np.repeat(np.arange(self.n), np.diff(mat.indptr))
        return rows, mat.indices

    def layer_matrix(self, k: int) -> sp.csr_matrix:
        return self._layers[k - 1]

    def layer_product(self, k: int, v: np.ndarray) -> np.ndarray:
        """``D_k @ v`` where ``D_k`` indicates pairs at distance exactly ``k``.

        ``k = 0`` returns ``v`` itself. Dense layers are multiplied with BLAS.
        """
        if k == 0:
            return v
        mat = self._layers[k - 1]
        if mat.nnz > _DENSE_FRACTION * self.n * self.n:
            dense = self._dense.get(k)
            if dense is None:
                dense = mat.toarray()
                self._dense[k] = dense
            return dense @ v
        return mat @ v

    def layered_gram(self, u: np.ndarray) -> np.ndarray:
        """Per-layer bilinear forms of a stack of column blocks.

        Parameters
        ----------
        u : ndarray, shape (n, B, q)
            ``B`` independent blocks of ``q`` columns each.

        Returns
        -------
        ndarray, shape (m_max + 1, B, q, q)
            Entry ``[k, b]`` is ``u[:, b].T @ D_k @ u[:, b]``, i.e. the sum of
            ``u[i, b, r] * u[j, b, s]`` over ordered pairs at distance exactly ``k``.
        """
        n, nb, q = u.shape
        flat = u.reshape(n, nb * q)
        out = np.empty((self.m_max + 1, nb, q, q))
        for k in range(self.m_max + 1):
            prod = self.layer_product(k, flat).reshape(n, nb, q)
            out[k] = np.einsum("nbr,nbs->brs", u, prod)
        return out

    def __repr__(self):
        return f"NeighborhoodIndex(n={self.n}, m_max={self.m_max})"


def _bfs_layers(adj: list[list[int]], src: int, m_max: int) -> list[list[int]]:
    seen = {src}
    frontier = [src]
    out = []
    for _ in range(m_max):
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if not nxt:
            break
        nxt.sort()
        out.append(nxt)
        frontier = nxt
    return out


def build_neighborhoods(g: Graph, m_max: int) -> NeighborhoodIndex:
    """Truncated breadth-first search from every node.

    Memory is proportional to the total number of within-``m_max`` pairs
    rather than ``n**2``.
    """
    if m_max < 0:
        raise InputError(f"m_max must be non-negative, got {m_max}")
    n = g.n
    adj = [g.indices[g.indptr[i]:g.indptr[i + 1]].tolist() for i in range(n)]
    per_layer_cols: list[list[list[int]]] = [[] for _ in range(m_max)]
    for i in range(n):
        found = _bfs_layers(adj, i, m_max)
        for k in range(m_max):
            per_layer_cols[k].append(found[k] if k < len(found) else [])
    layers = []
    for cols in per_layer_cols:
        counts = np.fromiter((len(c) for c in cols), dtype=np.int64, count=n)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        indices = np.fromiter((j for c in cols for j in c), dtype=np.int64, count=int(indptr[-1]))
        layers.append(sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n)))
    return NeighborhoodIndex(n, m_max, layers)


@dataclass(frozen=True)
class GrowthReport:
    """Neighborhood growth curve, indexed by radius ``m = 0..m_max``.

    ``cubic_term[m]`` is ``(mean_i N_m(i)**3) ** 0.5``, ``square_term[m]`` is
    ``mean_i N_m(i)**2`` and ``mean_size[m]`` is ``mean_i N_m(i)``.
    """

    m_max: int
    mean_size: np.ndarray
    square_term: np.ndarray
    cubic_term: np.ndarray

    @property
    def bound(self) -> np.ndarray:
        """The larger of the two growth terms at each radius."""
        return np.maximum(self.cubic_term, self.square_term)


def growth_report(idx: NeighborhoodIndex) -> GrowthReport:
    sizes = idx.sizes.astype(float)
    return GrowthReport(
        m_max=idx.m_max,
        mean_size=sizes.mean(axis=0),
        square_term=(sizes**2).mean(axis=0),
        cubic_term=np.sqrt((sizes**3).mean(axis=0)),
    )


def degree_normalize(g: Graph, sparse: bool = False):
    """Row-normalized adjacency: each row divided by its degree.

    Rows of isolated nodes stay zero.
    """
    a = g.adjacency()
    deg = g.degrees.astype(float)
    scale = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    an = sp.diags(scale) @ a
    return sp.csr_matrix(an) if sparse else an.toarray()


_SPLIT = re.compile(r"[,\s]+")


def read_edge_list(path, n: int | None = None, one_based: bool = False) -> Graph:
    """Read an edge list: one pair of non-negative integers per line.

    Columns are separated by a comma or whitespace. A non-numeric first line
    is treated as a header; blank lines and ``#`` comments are skipped. When
    ``n`` is omitted it is taken as the largest index plus one.
    """
    pairs = []
    with open(path) as fh:
        first = True
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = [f for f in _SPLIT.split(line) if f]
            if first:
                first = False
                if not all(re.fullmatch(r"[+-]?\d+", f) for f in fields[:2]):
                    continue
            if len(fields) < 2:
                raise SchemaError(f"{path}:{lineno}: expected two node ids, got {line!r}")
            try:
                i, j = int(fields[0]), int(fields[1])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
            pairs.append((i, j))
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if one_based:
        arr = arr - 1
    if (arr < 0).any():
        raise SchemaError(f"{path}: negative node id (check the one-based setting)")
    if n is None:
        n = int(arr.max()) + 1 if len(arr) else 0
    return build_graph(n, arr)


def write_edge_list(g: Graph, path) -> None:
    lines = ["source,target"] + [f"{i},{j}" for i, j in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")
