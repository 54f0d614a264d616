"""Local-to-global cost fusion with per-cluster linear-kernel ridge regression.

Observed local costs are moved into the world frame, described by terrain
patch features, and regressed per cluster; the fitted model then re-costs
every cell of that cluster in the global costmap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .clustering import ClusterMap
from .features import FeatureConfig, TopDownImage, extract_features, luminance, patch_inside
from .kinematics import body_to_world
from .sensor import LocalCostMap
from .terrain import C_MAX, TerrainModel

PRIOR, OBSERVED, INTERPOLATED = 0, 1, 2
FLAG_NAMES = {PRIOR: "prior", OBSERVED: "observed", INTERPOLATED: "interpolated"}

DEFAULT_LAMBDA = 1e-3
K_MIN = 5


@dataclass(frozen=True)
class CostSample:
    position: tuple[float, float]
    cost: float
    feature: np.ndarray = field(repr=False)
    timestamp: float = 0.0


@dataclass(eq=False)
class RegressionModel:
    w: np.ndarray
    lam: float
    offset: np.ndarray
    scale: np.ndarray
    cluster_id: int = -1

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.offset) / self.scale

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.transform(X) @ self.w


@dataclass(eq=False)
class GlobalCostMap:
    costs: np.ndarray  # (H, W)
    flags: np.ndarray  # (H, W) int8, PRIOR / OBSERVED / INTERPOLATED
    cell_m: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape

    def copy(self) -> "GlobalCostMap":
        return GlobalCostMap(self.costs.copy(), self.flags.copy(), self.cell_m, self.origin)

    def cell_of(self, xy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        u = (xy[:, 0] - self.origin[0]) / self.cell_m
        v = (xy[:, 1] - self.origin[1]) / self.cell_m
        h, w = self.shape
        # the closing edge of the map belongs to the last cell
        j = np.where(u == w, w - 1, np.floor(u)).astype(np.intp)
        i = np.where(v == h, h - 1, np.floor(v)).astype(np.intp)
        inside = (i >= 0) & (i < h) & (j >= 0) & (j < w)
        return i, j, inside

    def cell_center(self, i, j) -> tuple[float, float]:
        return (self.origin[0] + (j + 0.5) * self.cell_m, self.origin[1] + (i + 0.5) * self.cell_m)

    def to_csv(self, path) -> None:
        h, w = self.shape
        with open(path, "w") as f:
            f.write("row,col,x,y,cost,flag\n")
            for i in range(h):
                for j in range(w):
                    x, y = self.cell_center(i, j)
                    f.write(f"{i},{j},{x:.3f},{y:.3f},{self.costs[i, j]:.6g},"
                            f"{FLAG_NAMES[int(self.flags[i, j])]}\n")


def init_global_costmap(img: TopDownImage, a: float = 0.5, b: float = 0.0, cell_m: float = 1.0,
                        out_shape: tuple[int, int] | None = None) -> GlobalCostMap:
    """Prior cost = a * mean luminance of the cell + b."""
    if a < 0 or b < 0:
        raise ValueError("a and b must be nonnegative")
    lum = luminance(img.rgb)
    ph, pw = lum.shape
    if out_shape is None:
        out_shape = (int(np.floor(ph * img.m_per_px / cell_m + 1e-9)),
                     int(np.floor(pw * img.m_per_px / cell_m + 1e-9)))
    h, w = out_shape
    ci = np.floor((np.arange(ph) + 0.5) * img.m_per_px / cell_m).astype(np.intp)
    cj = np.floor((np.arange(pw) + 0.5) * img.m_per_px / cell_m).astype(np.intp)
    ok = (ci[:, None] < h) & (cj[None, :] < w)
    cell = (ci[:, None] * w + cj[None, :])[ok]
    total = np.bincount(cell, weights=lum[ok], minlength=h * w)
    count = np.bincount(cell, minlength=h * w)
    mean = np.empty(h * w)
    has = count > 0
    mean[has] = total[has] / count[has]
    if not np.all(has):
        idx = np.nonzero(~has)[0]
        pi = np.minimum(((idx // w + 0.5) * cell_m / img.m_per_px).astype(np.intp), ph - 1)
        pj = np.minimum(((idx % w + 0.5) * cell_m / img.m_per_px).astype(np.intp), pw - 1)
        mean[idx] = lum[pi, pj]
    costs = (a * mean + b).reshape(h, w)
    return GlobalCostMap(costs, np.full((h, w), PRIOR, dtype=np.int8), cell_m, img.origin)


def collect_cost_samples(lcm: LocalCostMap, terrain: TerrainModel,
                         cfg: FeatureConfig = FeatureConfig(),
                         timestamp: float | None = None) -> list[CostSample]:
    """One world-frame sample per observed local cell whose feature patch fits."""
    local = lcm.cell_centers()
    if len(local) == 0:
        return []
    costs = lcm.costs[lcm.observed]
    world = body_to_world(lcm.pose, local)
    keep = patch_inside(terrain, world, cfg)
    if not np.any(keep):
        return []
    world, costs = world[keep], costs[keep]
    feats = extract_features(terrain, world, cfg)
    ts = lcm.pose.t if timestamp is None else timestamp
    return [CostSample((float(p[0]), float(p[1])), float(c), f, ts)
            for p, c, f in zip(world, costs, feats)]


def standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension offset and scale: zero offset, root-mean-square scale.

    All-zero dimensions keep scale 1.
    """
    rms = np.sqrt(np.mean(X * X, axis=0))
    scale = np.where(rms > 0, rms, 1.0)
    return np.zeros(X.shape[1]), scale


def ridge_weights(Z: np.ndarray, c: np.ndarray, lam: float) -> np.ndarray:
    """argmin_w 1/2 ||c - Z w||^2 + lam/2 ||w||^2, dual form when n < d."""
    n, d = Z.shape
    if n < d:
        K = Z @ Z.T
        K[np.diag_indices_from(K)] += lam
        alpha = linalg.solve(K, c, assume_a="pos")
        return Z.T @ alpha
    A = Z.T @ Z
    A[np.diag_indices_from(A)] += lam
    return linalg.solve(A, Z.T @ c, assume_a="pos")


def fit_krr_arrays(X, c, lam: float = DEFAULT_LAMBDA, standardize: bool = True,
                   cluster_id: int = -1) -> RegressionModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    c = np.asarray(c, dtype=float).ravel()
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if len(X) < 1 or len(X) != len(c):
        raise ValueError("need at least one sample with matching targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(c))):
        raise ValueError("non-finite features or costs")
    if standardize:
        offset, scale = standardization(X)
    else:
        offset, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = (X - offset) / scale
    w = ridge_weights(Z, c, lam)
    return RegressionModel(w, lam, offset, scale, cluster_id)


def fit_krr(samples: Sequence[CostSample], lam: float = DEFAULT_LAMBDA,
            standardize: bool = True) -> RegressionModel:
    if not samples:
        raise ValueError("need at least one sample")
    X = np.stack([s.feature for s in samples])
    c = np.array([s.cost for s in samples])
    return fit_krr_arrays(X, c, lam, standardize)


def _latest_observations(cells: np.ndarray, costs: np.ndarray, ts: np.ndarray):
    """Per cell, the mean cost of the samples sharing its latest timestamp."""
    order = np.lexsort((ts, cells))
    cells, costs, ts = cells[order], costs[order], ts[order]
    last = np.ones(len(cells), dtype=bool)
    last[:-1] = cells[1:] != cells[:-1]
    latest_t = np.repeat(ts[last], np.diff(np.r_[0, np.nonzero(last)[0] + 1]))
    sel = ts == latest_t
    uc, inv = np.unique(cells[sel], return_inverse=True)
    mean = np.bincount(inv, weights=costs[sel]) / np.bincount(inv)
    return uc, mean


def update_global_costmap(g: GlobalCostMap, clusters: ClusterMap, samples: Sequence[CostSample],
                          lam: float = DEFAULT_LAMBDA, cell_features: np.ndarray | None = None,
                          k_min: int = K_MIN, models: dict | None = None) -> GlobalCostMap:
    """Refit every sufficiently sampled cluster and re-cost its cells.

    Cells holding a direct observation take the observed cost and are never
    overwritten by interpolation afterwards. ``cell_features`` holds the
    feature of every cell center (NaN rows are left untouched); without it
    only direct observations are written. Fitted models are stored into
    ``models`` (cluster id -> RegressionModel) when given.
    """
    if g.shape != clusters.shape:
        raise ValueError(f"costmap {g.shape} and clusters {clusters.shape} misaligned")
    if cell_features is not None and cell_features.shape[:2] != g.shape:
        raise ValueError("cell_features grid does not match the costmap")
    out = g.copy()
    if not samples:
        return out

    pos = np.array([s.position for s in samples], dtype=float)
    i, j, inside = g.cell_of(pos)
    idx = np.nonzero(inside)[0]
    if idx.size == 0:
        return out
    w = g.shape[1]
    flat = i[idx] * w + j[idx]
    costs = np.array([samples[k].cost for k in idx])
    ts = np.array([samples[k].timestamp for k in idx])
    sample_cluster = clusters.labels.ravel()[flat]

    costs_flat = out.costs.reshape(-1)
    flags_flat = out.flags.reshape(-1)
    labels_flat = clusters.labels.reshape(-1)

    if cell_features is not None:
        feats_flat = cell_features.reshape(-1, cell_features.shape[-1])
        for k in np.unique(sample_cluster):
            members = idx[sample_cluster == k]
            if len(members) < k_min:
                continue
            X = np.stack([samples[m].feature for m in members])
            c = np.array([samples[m].cost for m in members])
            model = fit_krr_arrays(X, c, lam, cluster_id=int(k))
            if models is not None:
                models[int(k)] = model
            cells = np.nonzero(labels_flat == k)[0]
            cells = cells[(flags_flat[cells] != OBSERVED)
                          & np.all(np.isfinite(feats_flat[cells]), axis=1)]
            if cells.size == 0:
                continue
            pred = model.predict(feats_flat[cells])
            costs_flat[cells] = np.clip(pred, 0.0, C_MAX)
            flags_flat[cells] = INTERPOLATED

    uc, mean = _latest_observations(flat, costs, ts)
    costs_flat[uc] = np.clip(mean, 0.0, C_MAX)
    flags_flat[uc] = OBSERVED
    return out
