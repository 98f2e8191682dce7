"""Control distance on the grid graph, metric balls, and volume statistics.

The distance is a shortest path over the full ``3**N - 1`` neighbour
stencil.  Moving along offset ``o`` costs ``h * sqrt(o^T A^+ o)`` with ``A``
the structure matrix at the edge midpoint: the least time a sub-unit curve
``v = sum c_j X_j, |c| <= 1`` needs to travel ``h*o``.  Offsets outside the
span of the fields are not edges at all.
"""
from __future__ import annotations

import csv
import functools
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .errors import ConfigurationError, MisuseError
from .fields import FieldFamily, max_structure_eigenvalue
from .geometry import BoundingBox, stencil_offsets


@functools.lru_cache(maxsize=None)
def metrication_factor(dim: int) -> float:
    """Worst ratio of stencil path length to Euclidean length for the identity metric.

    Paths use at most ``N`` move types (the greedy octahedral decomposition),
    so the worst direction maximises ``sum_k sqrt(k) * (a_k - a_{k+1})`` over
    unit vectors with sorted components ``a_1 >= ... >= a_N``.
    """
    # the maximiser lies on the sphere; brute force over a sorted sample
    rng = np.random.default_rng(0)
    a = np.abs(rng.standard_normal((200000, dim)))
    a = -np.sort(-a, axis=1)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    nxt = np.concatenate([a[:, 1:], np.zeros((a.shape[0], 1))], axis=1)
    w = np.sqrt(np.arange(1, dim + 1))
    return max(1.0, float(np.max(np.sum(w * (a - nxt), axis=1))))


def _edge_costs(family: FieldFamily, mid: np.ndarray, o: np.ndarray, h: float) -> np.ndarray:
    """Cost of the edge ``h*o`` at midpoints ``mid`` (shape ``(N, ...)``); inf if inadmissible."""
    A = family.structure_matrix(mid)
    N = family.dim
    off = A.copy()
    for i in range(N):
        off[i, i] = 0.0
    if not np.any(off):
        diag = np.stack([A[i, i] for i in range(N)])
        cost2 = np.zeros(mid.shape[1:])
        bad = np.zeros(mid.shape[1:], dtype=bool)
        for i in range(N):
            if o[i] == 0:
                continue
            ai = diag[i]
            tol = 1e-12 * np.max(diag, axis=0)
            bad |= ai <= tol
            with np.errstate(divide="ignore"):
                cost2 = cost2 + o[i] ** 2 / np.where(ai > tol, ai, 1.0)
        return np.where(bad, np.inf, h * np.sqrt(cost2))
    Am = np.moveaxis(A.reshape(N, N, -1), -1, 0)
    w, V = np.linalg.eigh(Am)
    proj = np.einsum("pab,a->pb", V, o.astype(float))
    tol = 1e-12 * np.maximum(w[:, -1:], 1e-300)
    rng_ = w > tol
    with np.errstate(divide="ignore", invalid="ignore"):
        cost2 = np.sum(np.where(rng_, proj**2 / np.where(rng_, w, 1.0), 0.0), axis=1)
    leak = np.sum(np.where(rng_, 0.0, proj**2), axis=1)
    cost = np.where(leak > 1e-10 * float(o @ o), np.inf, h * np.sqrt(cost2))
    return cost.reshape(mid.shape[1:])


def _grid_graph(family: FieldFamily, box: BoundingBox, lo_idx, hi_idx):
    """Undirected stencil graph on the sub-grid ``[lo_idx, hi_idx)``."""
    h, N = box.h, box.dim
    sub_shape = tuple(int(v) for v in np.asarray(hi_idx) - np.asarray(lo_idx))
    axes = [box.axes()[i][lo_idx[i]:hi_idx[i]] for i in range(N)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    ids = np.arange(int(np.prod(sub_shape))).reshape(sub_shape)
    rows, cols, data = [], [], []
    for o in stencil_offsets(N):
        # one direction per undirected edge: first nonzero component positive
        if o[np.flatnonzero(o)[0]] < 0:
            continue
        a_sl = tuple(slice(max(0, -k), n - max(0, k)) for k, n in zip(o, sub_shape))
        b_sl = tuple(slice(max(0, k), n - max(0, -k)) for k, n in zip(o, sub_shape))
        mid = coords[(slice(None),) + a_sl] + 0.5 * h * o.reshape((N,) + (1,) * N)
        cost = _edge_costs(family, mid, o, h)
        ok = np.isfinite(cost)
        rows.append(ids[a_sl][ok])
        cols.append(ids[b_sl][ok])
        data.append(cost[ok])
    n = ids.size
    G = sparse.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    return G, sub_shape


@dataclass
class DistanceField:
    """Control distance from ``source`` to every node; ``inf`` marks unreachable nodes."""

    box: BoundingBox
    source: tuple
    values: np.ndarray
    family_name: str = ""
    cropped: bool = False
    reach: float = math.inf

    @property
    def reachable(self) -> np.ndarray:
        return np.isfinite(self.values)

    def at(self, point) -> float:
        return float(self.values[self.box.nearest_node(point)])

    def ball(self, r: float) -> np.ndarray:
        return ball(self, r)


def control_distance(family: FieldFamily, source, box: BoundingBox,
                     reach: Optional[float] = None, amax: Optional[float] = None) -> DistanceField:
    """Single-source control distance on the grid graph.

    ``source`` is a point or a node-index tuple.  With ``reach`` set, the
    search stops at that distance and the graph is cropped to the Euclidean
    cube the reach can cover (``|x - y| <= reach * sqrt(amax)`` where
    ``amax`` bounds the eigenvalues of ``A``); nodes beyond stay ``inf``.
    """
    if family.dim != box.dim:
        raise ConfigurationError("family and box dimensions differ")
    if isinstance(source, tuple) and all(isinstance(v, (int, np.integer)) for v in source):
        src = tuple(int(v) for v in source)
        if any(s < 0 or s >= n for s, n in zip(src, box.shape)):
            raise ConfigurationError(f"source index {src} outside the box")
    else:
        if not box.contains(source):
            raise ConfigurationError(f"source {source} lies outside the bounding box")
        src = box.nearest_node(source)
    lo_idx = np.zeros(box.dim, dtype=int)
    hi_idx = np.array(box.shape)
    if reach is not None:
        if amax is None:
            amax = max_structure_eigenvalue(family, box)
        half = int(math.ceil(reach * math.sqrt(amax) / box.h)) + 2
        lo_idx = np.maximum(np.array(src) - half, 0)
        hi_idx = np.minimum(np.array(src) + half + 1, box.shape)
    G, sub_shape = _grid_graph(family, box, lo_idx, hi_idx)
    s_local = int(np.ravel_multi_index(tuple(np.array(src) - lo_idx), sub_shape))
    d = csgraph.dijkstra(G, directed=False, indices=s_local,
                         limit=np.inf if reach is None else reach)
    values = np.full(box.shape, np.inf)
    values[tuple(slice(a, b) for a, b in zip(lo_idx, hi_idx))] = d.reshape(sub_shape)
    if not np.isfinite(values).any() or np.count_nonzero(np.isfinite(values)) == 1:
        warnings.warn("control distance: no node other than the source is reachable")
    return DistanceField(box, src, values, family.name, reach is not None,
                         math.inf if reach is None else float(reach))


def distance_to_set(family: FieldFamily, mask: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Control distance from every node to the nearest node of ``mask``."""
    if not mask.any():
        raise ConfigurationError("distance to an empty set")
    G, shape = _grid_graph(family, box, np.zeros(box.dim, dtype=int), np.array(box.shape))
    d = csgraph.dijkstra(G, directed=False, indices=np.flatnonzero(mask.ravel()), min_only=True)
    return d.reshape(shape)


def ball(dist: DistanceField, r: float) -> np.ndarray:
    """Open metric ball ``{d < r}`` as a node mask."""
    if r <= 0:
        raise ConfigurationError("ball radius must be positive")
    if r > dist.reach:
        raise MisuseError(f"radius {r:g} exceeds the computed reach {dist.reach:g}")
    return dist.values < r


def _touches_box(mask: np.ndarray, box: BoundingBox) -> bool:
    for a in range(mask.ndim):
        for side in (0, -1):
            if side == 0 and a in box.mirror:
                continue
            sl = [slice(None)] * mask.ndim
            sl[a] = side
            if mask[tuple(sl)].any():
                return True
    return False


@dataclass
class VolumeProfile:
    """Ball volumes ``|B_r|`` and ``|B_2r|`` with doubling ratios per radius."""

    center: tuple
    radii: np.ndarray
    volumes: np.ndarray
    volumes_2r: np.ndarray
    truncated: np.ndarray

    @property
    def doubling_ratios(self) -> np.ndarray:
        return self.volumes_2r / self.volumes

    @property
    def A_est(self) -> float:
        return float(np.max(self.doubling_ratios))

    @property
    def Q_est(self) -> float:
        return math.log2(self.A_est)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "ball_volume", "doubling_ratio", "truncated"])
            for r, v, q, t in zip(self.radii, self.volumes, self.doubling_ratios, self.truncated):
                w.writerow([f"{r:.10g}", f"{v:.10g}", f"{q:.10g}", int(t)])


def ball_volume(mask: np.ndarray, box: BoundingBox) -> float:
    """Cell-count volume, counting mirrored copies."""
    return float(np.sum(box.node_weights()[mask])) * box.h**box.dim


def volume_profile(dist: DistanceField, radii) -> VolumeProfile:
    """Volumes of ``B_r`` and ``B_2r`` for each radius (cell count times ``h**N``)."""
    radii = np.asarray(sorted(float(r) for r in radii))
    if radii.size == 0:
        raise ConfigurationError("volume profile needs at least one radius")
    vols, vols2, trunc = [], [], []
    for r in radii:
        b1, b2 = ball(dist, r), ball(dist, 2 * r)
        vols.append(ball_volume(b1, dist.box))
        vols2.append(ball_volume(b2, dist.box))
        trunc.append(_touches_box(b2, dist.box))
    vols = np.array(vols)
    if np.any(np.diff(vols) <= 0):
        warnings.warn("ball volumes are not strictly increasing; radii below grid resolution")
    return VolumeProfile(dist.source, radii, vols, np.array(vols2), np.array(trunc))


@dataclass
class ReverseDoubling:
    beta_est: float
    mu_est: float
    violates: bool

    def to_json(self):
        return {"beta_est": self.beta_est, "mu_est": self.mu_est, "violates": self.violates}


def reverse_doubling(profile: VolumeProfile, tol: float = 1e-9) -> ReverseDoubling:
    """``beta = max |B_r| / |B_2r|`` and ``mu = log2(1/beta)``; ``beta >= 1`` violates the bound."""
    if len(profile.radii) < 3:
        raise ConfigurationError("reverse doubling needs at least three radii")
    beta = float(np.max(profile.volumes / profile.volumes_2r))
    mu = math.log2(1.0 / beta) if beta > 0 else math.inf
    return ReverseDoubling(beta, mu, beta >= 1.0 - tol)


def horizontal_gradient(family: FieldFamily, u: np.ndarray, box: BoundingBox) -> np.ndarray:
    """``(X_1 u, ..., X_m u)`` at the nodes via centred differences, shape ``(m, ...)``."""
    grad = np.stack(np.gradient(u, box.h)) if u.ndim > 1 else np.gradient(u, box.h)[None]
    X = family.evaluate(box.coordinates())
    return np.einsum("ja...,a...->j...", X, grad)


def poincare_ratio(family: FieldFamily, u: np.ndarray, ball_r: np.ndarray,
                   ball_2r: np.ndarray, r: float, box: BoundingBox) -> float:
    """``mean_{B_r} |u - u_r|`` divided by ``r * mean_{B_2r} |Xu|``.

    Returns ``inf`` when the denominator vanishes but the numerator does not,
    which is evidence against the Poincaré hypothesis.
    """
    if not ball_r.any() or not ball_2r.any():
        raise ConfigurationError("Poincaré ratio needs non-empty balls")
    vals = u[ball_r]
    num = float(np.mean(np.abs(vals - vals.mean())))
    Xu = horizontal_gradient(family, u, box)
    den = r * float(np.mean(np.sqrt(np.sum(Xu**2, axis=0))[ball_2r]))
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return num / den


def shell_components(dist: DistanceField, r: float, width: Optional[float] = None) -> int:
    """Connected components of the shell ``{r <= d < r + width}`` (full-stencil adjacency)."""
    if width is None:
        width = 2 * dist.box.h * metrication_factor(dist.box.dim)
    shell = (dist.values >= r) & (dist.values < r + width)
    _, n = ndimage.label(shell, structure=np.ones((3,) * shell.ndim, dtype=bool))
    return int(n)
