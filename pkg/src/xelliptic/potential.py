"""Capacities, capacitary potentials and measures, Green columns, and barriers.

Energies computed on a mirrored box are multiplied by the box multiplicity,
so every reported capacity and measure refers to the full (unfolded) region.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, GeometryError, MisuseError
from .geometry import GridDomain, compact_obstacle
from .metric import DistanceField, ball_volume
from .solver import DirichletProblem, EnergyForm, solve_dirichlet


@dataclass(frozen=True)
class CapacityResult:
    """Capacitary potential ``u``, capacity ``u^T S u`` and measure ``(S u)|_K``."""

    K: np.ndarray
    u: np.ndarray
    capacity: float
    measure: np.ndarray
    total_measure: float
    residual: float
    max_excess: float
    negative_measure: int

    @property
    def n_nodes(self) -> int:
        return int(np.count_nonzero(self.K))

    @property
    def identity_defect(self) -> float:
        """``|total_measure - capacity| / capacity`` (0 for an empty obstacle)."""
        if self.capacity == 0:
            return abs(self.total_measure)
        return abs(self.total_measure - self.capacity) / self.capacity


def capacity(form: EnergyForm, K: np.ndarray, rtol: float = 1e-9) -> CapacityResult:
    """Capacity of the node set ``K`` relative to the host domain ``D`` of the form."""
    K = np.asarray(K, dtype=bool)
    domain = form.domain
    if K.shape != form.box.shape:
        raise ConfigurationError("obstacle mask must match the node grid")
    if not K.any():
        zero = np.zeros(form.box.shape)
        return CapacityResult(K, zero, 0.0, zero, 0.0, 0.0, 0.0, 0)
    if np.any(K & ~domain.interior_D):
        raise ConfigurationError("obstacle touches the boundary of D")
    interior = domain.mask_D & ~K
    u = solve_dirichlet(DirichletProblem(form, interior, K.astype(float)), rtol=rtol)
    Su = form.apply(u)
    m = form.multiplicity
    cap = m * float(np.sum(u * Su))
    measure = np.where(K, m * Su, 0.0)
    total = float(np.sum(measure))
    scale = float(np.linalg.norm(Su)) or 1.0
    res = float(np.max(np.abs(Su[interior]))) / scale if interior.any() else 0.0
    # entries below roundoff level are not counted as negative mass
    neg = measure[K] < -1e-10 * float(np.max(np.abs(measure)))
    return CapacityResult(K, u, cap, measure, total, res,
                          float(np.max(u) - 1.0), int(np.count_nonzero(neg)))


@dataclass(frozen=True)
class GreenColumn:
    """``g(., pole)`` solving ``S g = e_pole`` with zero values outside ``D``."""

    pole: tuple
    values: np.ndarray

    def __call__(self, index) -> float:
        return float(self.values[tuple(index)])


def green_column(form: EnergyForm, pole, rtol: float = 1e-10) -> GreenColumn:
    """Discrete Green function with unit nodal mass at ``pole`` (an index tuple)."""
    domain = form.domain
    pole = tuple(int(v) for v in pole)
    if not domain.interior_D[pole]:
        raise ConfigurationError(f"pole {pole} is not an interior node of D")
    if form.box.mirror:
        raise ConfigurationError("Green columns are computed on unmirrored boxes")
    load = np.zeros(form.box.shape)
    load[pole] = 1.0
    g = solve_dirichlet(DirichletProblem(form, domain.mask_D, np.zeros(form.box.shape), load),
                        rtol=rtol)
    return GreenColumn(pole, g)


def volume_integral(dist: DistanceField, d: np.ndarray, upper: float) -> np.ndarray:
    """``int_d^upper s / |B_s| ds`` for each entry of ``d``.

    ``|B_s|`` is the step function ``h**N * #{nodes with dist < s}`` taken from
    the distance field, so the integral is exact between its jumps.
    """
    vals = np.sort(dist.values[np.isfinite(dist.values)].ravel())
    vals = vals[vals < upper]
    hN = dist.box.h ** dist.box.dim
    # on (vals[k], vals[k+1]] the ball holds k+1 nodes
    knots = np.append(vals, upper)
    counts = np.arange(1, len(knots))
    pieces = 0.5 * (knots[1:] ** 2 - knots[:-1] ** 2) / (counts * hN)
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    d = np.asarray(d, dtype=float)
    k = np.searchsorted(knots, d, side="left")
    k = np.clip(k, 1, len(knots) - 1)
    # partial piece from d up to knots[k]
    partial = 0.5 * (knots[k] ** 2 - d**2) / (k * hN)
    out = partial + tail[k]
    return np.where(d >= upper, 0.0, out)


@dataclass
class GreenBand:
    """Ratios ``g(x, y) / int_{d(x,y)}^{dist} s/|B_s| ds`` over the tested pairs."""

    ratios: np.ndarray
    distances: np.ndarray
    boundary_distance: float

    @property
    def C(self) -> float:
        if self.ratios.size == 0:
            return math.nan
        return float(max(np.max(self.ratios), 1.0 / np.min(self.ratios)))


def green_band(form: EnergyForm, green: GreenColumn, dist: DistanceField,
               lower: Optional[float] = None, upper_fraction: float = 1 / 8) -> GreenBand:
    """Green-estimate ratios for all nodes ``x`` with ``4h <= d(pole, x) <= dist/8``.

    ``dist`` is the control distance from the pole; ``dist(pole, dD)`` is the
    smallest distance to a node outside ``D``.
    """
    if dist.source != green.pole:
        raise MisuseError("distance field and Green column have different poles")
    h = form.box.h
    lower = 4 * h if lower is None else lower
    outside = ~form.domain.mask_D
    R = float(np.min(dist.values[outside])) if outside.any() else math.inf
    if not math.isfinite(R):
        raise GeometryError("the boundary of D is not reachable from the pole")
    sel = (dist.values >= lower) & (dist.values <= upper_fraction * R)
    d = dist.values[sel]
    I = volume_integral(dist, d, R)
    return GreenBand(green.values[sel] / I, d, R)


# ---------------------------------------------------------------------------
# Potential profiles and barriers
# ---------------------------------------------------------------------------


def extrapolate_limit(u2: float, u4: float, u8: float) -> tuple:
    """Limit at distance 0 from samples at distances ``s, 2s, 4s``; returns ``(limit, ok)``.

    Successive differences are assumed to shrink geometrically with ratio
    ``q = (u2 - u4) / (u4 - u8)``; the remaining geometric tail is added to
    ``u2``.  Without a ratio in ``(0, 1)`` the nearest sample is returned and
    ``ok`` is False.
    """
    d1, d2 = u2 - u4, u4 - u8
    if d2 != 0:
        q = d1 / d2
        if 0 < q < 1:
            return float(np.clip(u2 + d1 * q / (1 - q), 0.0, 1.0)), True
    return float(np.clip(u2, 0.0, 1.0)), False


def approach_directions(domain: GridDomain, y: tuple, steps=(2, 4, 8)) -> list:
    """Signed axis directions along which ``y + k e`` lies in Omega for every ``k`` in ``steps``."""
    out = []
    shape = domain.box.shape
    for axis in range(domain.dim):
        for sign in (1, -1):
            if sign < 0 and axis in domain.box.mirror and y[axis] == 0:
                continue  # mirror image of the + direction
            nodes = []
            for k in steps:
                p = list(y)
                p[axis] += sign * k
                if not 0 <= p[axis] < shape[axis]:
                    break
                nodes.append(tuple(p))
            if len(nodes) == len(steps) and all(domain.mask_Omega[p] for p in nodes):
                out.append((axis, sign))
    return out


def sample_steps(rho: float, h: float) -> tuple:
    """Sample offsets (in cells) for the limit estimate: ``(2, 4, 8)``, or ``(1, 2, 4)``
    when ``8h`` would reach beyond the obstacle radius."""
    return (2, 4, 8) if 8 * h <= rho * (1 + 1e-12) else (1, 2, 4)


def limit_estimate(u: np.ndarray, domain: GridDomain, y: tuple, steps=(2, 4, 8)) -> tuple:
    """Minimum over approach directions of the extrapolated boundary limit of ``u`` at ``y``.

    ``steps`` are the three sample offsets in cells, each twice the previous.
    Returns ``(limit_est, all_extrapolations_ok)``.
    """
    dirs = approach_directions(domain, y, steps)
    if not dirs:
        raise GeometryError(f"no interior approach direction at {y}")
    ests, oks = [], []
    for axis, sign in dirs:
        samples = []
        for k in steps:
            p = list(y)
            p[axis] += sign * k
            samples.append(float(u[tuple(p)]))
        est, ok = extrapolate_limit(*samples)
        ests.append(est)
        oks.append(ok)
    return min(ests), all(oks)


@dataclass(frozen=True)
class ProfileEntry:
    rho: float
    result: CapacityResult
    ball_volume: float
    limit_est: float
    extrapolated: bool
    resolved: bool

    @property
    def capacity(self) -> float:
        return self.result.capacity


def potential_profile(form: EnergyForm, y: tuple, radii: Sequence[float],
                      dist: DistanceField, min_nodes: int = 8) -> list:
    """Capacitary potentials of ``K_rho`` for each radius, with boundary-limit estimates.

    ``resolved`` is False when ``K_rho`` has fewer than ``min_nodes`` nodes.
    """
    domain = form.domain
    h = domain.h
    out = []
    for rho in radii:
        if rho < 4 * h * (1 - 1e-12):
            raise ConfigurationError(f"radius {rho:g} is below 4h")
        K = compact_obstacle(domain, y, rho, dist.values)
        res = capacity(form, K)
        lim, ok = limit_estimate(res.u, domain, y, sample_steps(rho, h))
        vol = ball_volume(dist.values < rho, domain.box)
        out.append(ProfileEntry(float(rho), res, vol, lim, ok, res.n_nodes >= min_nodes))
    return out


def write_profile_csv(entries: Sequence[ProfileEntry], path) -> None:
    """Columns: rho, cap, ball_volume, limit_est, mu_diag (relative measure-identity defect)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "cap", "ball_volume", "limit_est", "mu_diag"])
        for e in entries:
            w.writerow([f"{e.rho:.10g}", f"{e.capacity:.10g}", f"{e.ball_volume:.10g}",
                        f"{e.limit_est:.10g}", f"{e.result.identity_defect:.3e}"])


def barrier_radii(rho: float, h: float) -> list:
    """Radii ``rho / k`` for ``k = 2, 3, ...`` while ``rho / k >= 4h``."""
    out, k = [], 2
    while rho / k >= 4 * h * (1 - 1e-12):
        out.append(rho / k)
        k += 1
    return out


@dataclass(frozen=True)
class Barrier:
    values: np.ndarray
    min_value: float
    n_terms: int


def assemble_barrier(potentials: Sequence) -> Barrier:
    """``V = sum_{k>=2} 2**-k (1 - u_k)`` with ``potentials[0]`` playing ``u_2``.

    Entries may be arrays, :class:`CapacityResult` or :class:`ProfileEntry`.
    """
    if len(potentials) < 3:
        raise ConfigurationError("barrier assembly needs at least three potentials")
    V = None
    for k, p in enumerate(potentials, start=2):
        u = p.result.u if isinstance(p, ProfileEntry) else (
            p.u if isinstance(p, CapacityResult) else np.asarray(p, dtype=float))
        term = 2.0 ** (-k) * (1.0 - u)
        V = term if V is None else V + term
    return Barrier(V, float(np.min(V)), len(potentials))


@dataclass(frozen=True)
class Pairing:
    mu_rho_on_Kr: float
    cap_r: float
    lemma_i_ok: bool
    lemma_ii_residual: Optional[float] = None
    limit_est: Optional[float] = None
    C_fit: Optional[float] = None


def capmeasure_pairing(cap_r: CapacityResult, cap_rho: CapacityResult,
                       cap_r4: Optional[CapacityResult] = None,
                       limit_est: Optional[float] = None, tol: float = 1e-7) -> Pairing:
    """Measure of ``K_r`` under the capacitary measure of ``K_rho`` against ``cap(K_r)``.

    With ``cap_r4`` (the capacity result of ``K_{r/4}``) and the boundary
    limit estimate of ``u_rho``, the residual ``cap(K_{r/4}) - mu_rho(K_r)`` and
    the constant ``C = residual / (cap(K_{r/4}) * limit_est)`` are reported.
    """
    if np.any(cap_r.K & ~cap_rho.K):
        raise MisuseError("K_r is not contained in K_rho")
    mu = float(np.sum(cap_rho.measure[cap_r.K]))
    ok = mu <= cap_r.capacity + tol
    resid = C = None
    if cap_r4 is not None:
        resid = cap_r4.capacity - mu
        if limit_est is not None and limit_est > 0 and cap_r4.capacity > 0:
            C = max(resid, 0.0) / (cap_r4.capacity * limit_est)
    return Pairing(mu, cap_r.capacity, ok, resid, limit_est, C)


def annulus_capacity(dim: int, r: float, R: float) -> float:
    """Laplacian capacity of the closed ball of radius ``r`` in the concentric ball of radius ``R``."""
    if not 0 < r < R:
        raise ConfigurationError("annulus capacity needs 0 < r < R")
    if dim == 2:
        return 2 * math.pi / math.log(R / r)
    area = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
    return (dim - 2) * area / (r ** (2 - dim) - R ** (2 - dim))
