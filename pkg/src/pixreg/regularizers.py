"""Loss terms with analytic gradients w.r.t. the predicted probability map.

Every term returns a :class:`LossGrad` whose ``grad`` has the shape of ``y``.
Maps are 2-D (H x W) and flattened row-major wherever a graph is involved.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid_graph import (
    Connectivity,
    EdgeList,
    GridShape,
    build_grid_edges,
    edge_differences,
    expected_edge_count,
    laplacian_from_edges,
    laplacian_matvec,
    masked_subgraph,
    quadratic_form,
)


class LossGrad(NamedTuple):
    value: float
    grad: np.ndarray

    def scaled(self, factor: float) -> LossGrad:
        return LossGrad(self.value * factor, self.grad * factor)

    def __add__(self, other):  # type: ignore[override]
        return LossGrad(self.value + other.value, self.grad + other.grad)


class Normalize(enum.Enum):
    NONE = "none"
    PER_EDGE = "per_edge"
    PER_PIXEL = "per_pixel"


class ObjectiveKind(enum.Enum):
    BASELINE = "baseline"
    O1_GBS = "o1"
    O2_GLRDN = "o2"
    O3_EC = "o3"


class EcDirection(enum.Enum):
    DIR1 = 1  # main diagonal (r,c)-(r+1,c+1)
    DIR2 = 2  # anti-diagonal (r,c+1)-(r+1,c)


@dataclass(frozen=True)
class RegularizerConfig:
    """Settings shared by the regularizers.

    ``connectivity=None`` picks N4 for the graph terms and N8 for the Euler
    characteristic term (which only affects its per-edge normalisation).
    """

    lam: float = 0.1
    connectivity: Connectivity | None = None
    normalize: Normalize = Normalize.PER_EDGE
    fg_threshold: float = 0.5
    clamp_eps: float = 1e-7

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not 0 < self.fg_threshold < 1:
            raise ValueError(f"fg_threshold must lie in (0, 1), got {self.fg_threshold}")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError(f"clamp_eps must lie in (0, 0.5), got {self.clamp_eps}")

    def graph_connectivity(self, default: Connectivity = Connectivity.N4) -> Connectivity:
        return self.connectivity or default

    def norm_factor(self, shape: GridShape, connectivity: Connectivity) -> float:
        if self.normalize is Normalize.PER_EDGE:
            return 1.0 / max(expected_edge_count(shape, connectivity), 1)
        if self.normalize is Normalize.PER_PIXEL:
            return 1.0 / shape.size
        return 1.0


RAW = RegularizerConfig(normalize=Normalize.NONE)


def _pair(y, t) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if y.shape != t.shape:
        raise ValueError(f"prediction shape {y.shape} != target shape {t.shape}")
    if y.ndim != 2 or y.size == 0:
        raise ValueError(f"expected a non-empty 2-D map, got shape {y.shape}")
    return y, t


# ---------------------------------------------------------------- BCE


def bce_value_grad(y, t, cfg: RegularizerConfig = RAW) -> LossGrad:
    """Pixel-mean binary cross-entropy, negated so that lower is better."""
    y, t = _pair(y, t)
    eps = cfg.clamp_eps
    yc = np.clip(y, eps, 1 - eps)
    n = y.size
    value = -np.sum(t * np.log(yc) + (1 - t) * np.log1p(-yc)) / n
    grad = (yc - t) / (yc * (1 - yc)) / n
    grad[(y < eps) | (y > 1 - eps)] = 0.0
    return LossGrad(float(value), grad)


# ---------------------------------------------------------------- GBS


def region_similarity_weights(t, edges: EdgeList) -> np.ndarray:
    """beta = 1 - |t_i - t_j| for every edge."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.size != edges.shape.size:
        raise ValueError(f"target has {t.size} pixels, graph has {edges.shape.size}")
    return 1.0 - np.abs(edge_differences(edges, t))


def region_graph(t, cfg: RegularizerConfig = RAW) -> EdgeList:
    """Union of the foreground and background graphs of a target map.

    Cross-region edges are dropped; the rest carry their similarity weights.
    The two regions share no vertex, so one Laplacian of the union equals
    L_F + L_B.
    """
    t = np.asarray(t, dtype=np.float64)
    shape = GridShape(*t.shape)
    grid = build_grid_edges(shape, cfg.graph_connectivity())
    fg = (t >= cfg.fg_threshold).ravel()
    same = fg[grid.pairs[:, 0]] == fg[grid.pairs[:, 1]]
    both = EdgeList(shape, grid.connectivity, grid.pairs[same], grid.weights[same])
    return both.with_weights(region_similarity_weights(t, both))


def foreground_background_graphs(t, cfg: RegularizerConfig = RAW) -> tuple[EdgeList, EdgeList]:
    t = np.asarray(t, dtype=np.float64)
    grid = build_grid_edges(GridShape(*t.shape), cfg.graph_connectivity())
    fg = (t >= cfg.fg_threshold).ravel()
    graphs = []
    for member in (fg, ~fg):
        sub = masked_subgraph(grid, member)
        graphs.append(sub.with_weights(region_similarity_weights(t, sub)))
    return graphs[0], graphs[1]


def gbs_value_grad(y, t, cfg: RegularizerConfig = RAW) -> LossGrad:
    """Graph-based smoothing: y^T (L_F + L_B) y over the target's two regions."""
    y, t = _pair(y, t)
    lap = laplacian_from_edges(region_graph(t, cfg))
    ly = laplacian_matvec(lap, y)
    value = quadratic_form(lap, y)
    scale = cfg.norm_factor(lap.edges.shape, lap.edges.connectivity)
    return LossGrad(value * scale, (2 * scale) * ly.reshape(y.shape))


# ---------------------------------------------------------------- GLRDN


def glrdn_value_grad(y, t, cfg: RegularizerConfig = RAW) -> LossGrad:
    """Squared mismatch of neighbouring-pixel differences, (t-y)^T L (t-y)."""
    y, t = _pair(y, t)
    shape = GridShape(*y.shape)
    edges = build_grid_edges(shape, cfg.graph_connectivity())
    lap = laplacian_from_edges(edges)
    r = y - t
    lr = laplacian_matvec(lap, r)
    value = quadratic_form(lap, r)
    scale = cfg.norm_factor(shape, edges.connectivity)
    return LossGrad(value * scale, (2 * scale) * lr.reshape(y.shape))


# ---------------------------------------------------------------- Euler characteristic


def _check_binary(b) -> np.ndarray:
    b = np.asarray(b)
    if b.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {b.shape}")
    if not np.all((b == 0) | (b == 1)):
        raise ValueError("euler_characteristic_hard needs a strictly binary image")
    return b.astype(bool)


def euler_characteristic_hard(b, direction: EcDirection = EcDirection.DIR1) -> int:
    """Vertices - edges + triangles of the triangulated foreground complex.

    Vertices are foreground pixels, edges join rook neighbours plus the one
    diagonal of each 2x2 block selected by ``direction``, and each block
    contributes the (up to two) triangles cut by that diagonal.
    """
    b = _check_binary(b)
    tl, tr, bl, br = b[:-1, :-1], b[:-1, 1:], b[1:, :-1], b[1:, 1:]
    vertices = int(b.sum())
    edges = int((b[:, :-1] & b[:, 1:]).sum() + (b[:-1, :] & b[1:, :]).sum())
    if direction is EcDirection.DIR1:
        edges += int((tl & br).sum())
        faces = int((tl & tr & br).sum() + (tl & bl & br).sum())
    else:
        edges += int((tr & bl).sum())
        faces = int((tl & tr & bl).sum() + (tr & bl & br).sum())
    return vertices - edges + faces


def _check_prob(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.size == 0:
        raise ValueError(f"expected a non-empty 2-D map, got shape {y.shape}")
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return y


def euler_characteristic_soft(y, direction: EcDirection = EcDirection.DIR1) -> LossGrad:
    """Multilinear relaxation of the Euler characteristic.

    Each vertex, edge and triangle counts with the product of its pixel
    probabilities, so the value is exact on binary maps.
    """
    y = _check_prob(y)
    g = np.ones_like(y)
    value = y.sum()

    def edge(a, b, ga, gb):
        nonlocal value
        value -= np.sum(a * b)
        ga -= b
        gb -= a

    edge(y[:, :-1], y[:, 1:], g[:, :-1], g[:, 1:])
    edge(y[:-1, :], y[1:, :], g[:-1, :], g[1:, :])

    tl, tr, bl, br = y[:-1, :-1], y[:-1, 1:], y[1:, :-1], y[1:, 1:]
    gtl, gtr, gbl, gbr = g[:-1, :-1], g[:-1, 1:], g[1:, :-1], g[1:, 1:]
    if direction is EcDirection.DIR1:
        edge(tl, br, gtl, gbr)
        triangles = [((tl, gtl), (tr, gtr), (br, gbr)), ((tl, gtl), (bl, gbl), (br, gbr))]
    else:
        edge(tr, bl, gtr, gbl)
        triangles = [((tl, gtl), (tr, gtr), (bl, gbl)), ((tr, gtr), (bl, gbl), (br, gbr))]
    for (a, ga), (b, gb), (c, gc) in triangles:
        value += np.sum(a * b * c)
        ga += b * c
        gb += a * c
        gc += a * b
    return LossGrad(float(value), g)


def ec_regularizer(y) -> LossGrad:
    """Mean of the soft Euler characteristic over both triangulation directions."""
    a = euler_characteristic_soft(y, EcDirection.DIR1)
    b = euler_characteristic_soft(y, EcDirection.DIR2)
    return LossGrad((a.value + b.value) / 2, (a.grad + b.grad) / 2)


def ec_value_grad(y, t=None, cfg: RegularizerConfig = RAW) -> LossGrad:
    """ec_regularizer with the configured normalisation (``t`` is unused)."""
    y = np.asarray(y, dtype=np.float64)
    scale = cfg.norm_factor(GridShape(*y.shape), cfg.graph_connectivity(Connectivity.N8))
    return ec_regularizer(y).scaled(scale)


# ---------------------------------------------------------------- objectives

REGULARIZERS = {
    ObjectiveKind.O1_GBS: gbs_value_grad,
    ObjectiveKind.O2_GLRDN: glrdn_value_grad,
    ObjectiveKind.O3_EC: ec_value_grad,
}


def regularizer_value_grad(y, t, kind: ObjectiveKind, cfg: RegularizerConfig) -> LossGrad:
    if kind is ObjectiveKind.BASELINE:
        y = np.asarray(y, dtype=np.float64)
        return LossGrad(0.0, np.zeros_like(y))
    return REGULARIZERS[kind](y, t, cfg)


def objective(y, t, kind: ObjectiveKind, cfg: RegularizerConfig) -> LossGrad:
    """BCE plus lambda times the regularizer selected by ``kind``."""
    bce = bce_value_grad(y, t, cfg)
    if kind is ObjectiveKind.BASELINE or cfg.lam == 0:
        return bce
    return bce + regularizer_value_grad(y, t, kind, cfg).scaled(cfg.lam)


class BatchLoss(NamedTuple):
    value: float
    reg_value: float
    grad: np.ndarray


def batch_objective(y, t, kind: ObjectiveKind, cfg: RegularizerConfig) -> BatchLoss:
    """Mean per-patch objective over an N x 1 x H x W batch.

    ``reg_value`` is the mean (unscaled by lambda) regularizer value. Patches
    are reduced in index order.
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n = y.shape[0]
    grad = np.empty_like(y)
    total = reg_total = 0.0
    for k in range(n):
        bce = bce_value_grad(y[k, 0], t[k, 0], cfg)
        reg = regularizer_value_grad(y[k, 0], t[k, 0], kind, cfg)
        if kind is ObjectiveKind.BASELINE or cfg.lam == 0:
            total += bce.value
            grad[k, 0] = bce.grad
        else:
            total += bce.value + cfg.lam * reg.value
            grad[k, 0] = bce.grad + cfg.lam * reg.grad
        reg_total += reg.value
    return BatchLoss(total / n, reg_total / n, grad / n)
