"""Pixel-grid graphs, their Laplacians and the quadratic-form kernels."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class Connectivity(enum.Enum):
    N4 = 4
    N8 = 8


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid shape must be positive, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def index(self, r: int, c: int) -> int:
        return r * self.cols + c


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EdgeList:
    """Undirected edges of a pixel grid, each stored once with ``i < j``.

    ``pairs`` is an (E, 2) integer array and ``weights`` an (E,) float array.
    """

    shape: GridShape
    connectivity: Connectivity
    pairs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(weights) != len(pairs):
            raise ValueError("one weight per edge required")
        if np.any(weights < 0):
            raise ValueError("edge weights must be nonnegative")
        object.__setattr__(self, "pairs", _readonly(pairs))
        object.__setattr__(self, "weights", _readonly(weights))

    def __len__(self) -> int:
        return len(self.pairs)

    def with_weights(self, weights) -> EdgeList:
        return EdgeList(self.shape, self.connectivity, self.pairs, weights)

    def __eq__(self, other):
        if not isinstance(other, EdgeList):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.connectivity == other.connectivity
            and np.array_equal(self.pairs, other.pairs)
            and np.array_equal(self.weights, other.weights)
        )


def expected_edge_count(shape: GridShape, connectivity: Connectivity) -> int:
    r, c = shape.rows, shape.cols
    n4 = r * (c - 1) + c * (r - 1)
    if connectivity is Connectivity.N4:
        return n4
    return n4 + 2 * (r - 1) * (c - 1)


@lru_cache(maxsize=64)
def _grid_pairs(rows: int, cols: int, connectivity: Connectivity) -> np.ndarray:
    idx = np.arange(rows * cols).reshape(rows, cols)
    # (direction rank, source block, target block); ranks fix the per-pixel order
    steps = [
        (0, idx[:, :-1], idx[:, 1:]),  # right
        (1, idx[:-1, :], idx[1:, :]),  # down
    ]
    if connectivity is Connectivity.N8:
        steps += [
            (2, idx[:-1, :-1], idx[1:, 1:]),  # down-right
            (3, idx[:-1, 1:], idx[1:, :-1]),  # down-left
        ]
    src = np.concatenate([s.ravel() for _, s, _ in steps])
    dst = np.concatenate([d.ravel() for _, _, d in steps])
    rank = np.concatenate([np.full(s.size, k) for k, s, _ in steps])
    order = np.lexsort((rank, src))
    return _readonly(np.stack([src[order], dst[order]], axis=1))


def build_grid_edges(shape: GridShape, connectivity: Connectivity = Connectivity.N4) -> EdgeList:
    """All neighbour pairs of the grid with unit weights.

    Edges come out in row-major pixel order; for each pixel: right, down, then
    (N8 only) down-right and down-left.
    """
    pairs = _grid_pairs(shape.rows, shape.cols, connectivity)
    return EdgeList(shape, connectivity, pairs, np.ones(len(pairs)))


def masked_subgraph(edges: EdgeList, member) -> EdgeList:
    """Keep only edges whose two endpoints are both members."""
    member = np.asarray(member, dtype=bool).reshape(-1)
    if member.size != edges.shape.size:
        raise ValueError(f"member mask has {member.size} entries, grid has {edges.shape.size}")
    keep = member[edges.pairs[:, 0]] & member[edges.pairs[:, 1]]
    return EdgeList(edges.shape, edges.connectivity, edges.pairs[keep], edges.weights[keep])


@dataclass(frozen=True, eq=False)
class WeightedLaplacian:
    """L = D - A for an edge list, held as the edge list itself.

    Products are evaluated edge by edge, so ``matvec`` costs O(|E|).
    """

    n: int
    edges: EdgeList
    degree: np.ndarray = field(repr=False)

    def matvec(self, y) -> np.ndarray:
        return laplacian_matvec(self, y)

    def quadratic_form(self, y) -> float:
        return quadratic_form(self, y)

    def to_dense(self) -> np.ndarray:
        i, j = self.edges.pairs.T
        a = np.zeros((self.n, self.n))
        np.add.at(a, (i, j), self.edges.weights)
        np.add.at(a, (j, i), self.edges.weights)
        return np.diag(a.sum(axis=1)) - a


def laplacian_from_edges(edges: EdgeList) -> WeightedLaplacian:
    n = edges.shape.size
    i, j = edges.pairs.T
    w = edges.weights
    degree = np.bincount(i, w, minlength=n) + np.bincount(j, w, minlength=n)
    return WeightedLaplacian(n, edges, _readonly(degree))


def _check_vector(lap: WeightedLaplacian, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != lap.n:
        raise ValueError(f"vector has {y.size} entries, Laplacian is {lap.n}x{lap.n}")
    return y


def edge_differences(edges: EdgeList, y) -> np.ndarray:
    """y_i - y_j for every edge (the incidence matrix applied to y)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    return y[edges.pairs[:, 0]] - y[edges.pairs[:, 1]]


def quadratic_form(lap: WeightedLaplacian, y) -> float:
    """y^T L y, evaluated as the weighted sum of squared edge differences."""
    y = _check_vector(lap, y)
    d = edge_differences(lap.edges, y)
    return float(np.dot(lap.edges.weights, d * d))


def laplacian_matvec(lap: WeightedLaplacian, y) -> np.ndarray:
    y = _check_vector(lap, y)
    i, j = lap.edges.pairs.T
    w = lap.edges.weights
    out = lap.degree * y
    out -= np.bincount(i, w * y[j], minlength=lap.n)
    out -= np.bincount(j, w * y[i], minlength=lap.n)
    return out
