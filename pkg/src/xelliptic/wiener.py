"""Wiener profiles, regularity classification, the cone test, and coefficient invariance.

Divergence of the Wiener series is judged from the decay rate of its terms
over the finest levels, fused with the boundary-limit estimates of the
capacitary potentials.  The fitted series is the capacity ratio
``delta_k = cap(K_rho_k) / cap(closed ball B_rho_k(y))``; the classical terms
``t_k = rho_k**2 cap(K_rho_k) / |B_rho_k|`` are reported alongside.  Both are
comparable up to constants, but ``delta_k`` cancels the bias a finite host
domain puts on the capacity of large balls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, MisuseError
from .fields import CoefficientMatrix, FieldFamily, check_x_ellipticity
from .geometry import GridDomain
from .metric import DistanceField, ball_volume
from .potential import capacity, potential_profile
from .solver import EnergyForm, assemble


@dataclass(frozen=True)
class Level:
    rho: float
    cap: float
    ball_volume: float
    limit_est: float
    reference_cap: float
    n_nodes: int
    resolved: bool
    extrapolated: bool
    mu_diag: float = 0.0

    @property
    def term(self) -> float:
        return self.rho**2 * self.cap / self.ball_volume

    @property
    def delta(self) -> float:
        return self.cap / self.reference_cap if self.reference_cap > 0 else math.nan


@dataclass
class CapacityProfile:
    """Per-level capacities of ``K_rho`` at ``rho_k = rho0 * lam**k``."""

    y: tuple
    point: tuple
    lam: float
    levels: list

    def __post_init__(self):
        rhos = [lv.rho for lv in self.levels]
        if any(b >= a for a, b in zip(rhos, rhos[1:])):
            raise ConfigurationError("profile radii must be strictly decreasing")

    @property
    def terms(self) -> np.ndarray:
        return np.array([lv.term for lv in self.levels])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([lv.delta for lv in self.levels])

    @property
    def limit_est(self) -> np.ndarray:
        return np.array([lv.limit_est for lv in self.levels])

    @property
    def integral_estimate(self) -> float:
        """Dyadic quadrature of ``int cap(K_rho) rho / |B_rho| d rho``, up to the ``rho0**2`` factor."""
        return float(np.sum(self.terms) * math.log(1.0 / self.lam))

    def rows(self) -> list:
        return [{"rho": lv.rho, "cap": lv.cap, "ball_volume": lv.ball_volume,
                 "limit_est": lv.limit_est, "reference_cap": lv.reference_cap,
                 "term": lv.term, "delta": lv.delta, "n_nodes": lv.n_nodes, "mu_diag": lv.mu_diag,
                 "resolved": lv.resolved, "extrapolated": lv.extrapolated}
                for lv in self.levels]


def wiener_radii(rho0: float, lam: float, levels: int) -> list:
    return [rho0 * lam**k for k in range(levels)]


def wiener_profile(form: EnergyForm, y: tuple, dist: DistanceField, rho0: float,
                   lam: float = 0.5, levels: int = 6,
                   reference_cache: Optional[dict] = None) -> CapacityProfile:
    """Capacity, ball volume, and boundary-limit record for each dyadic level.

    ``reference_cache`` maps a radius to the capacity of the closed ball of
    that radius about ``y``; it may be shared between profiles with the same
    host domain, coefficients and ``y``.
    """
    if not 0.3 <= lam <= 0.7:
        raise ConfigurationError(f"lambda must lie in [0.3, 0.7], got {lam}")
    if levels < 4:
        raise ConfigurationError("a Wiener profile needs at least four levels")
    h = form.box.h
    radii = wiener_radii(rho0, lam, levels)
    if radii[-1] < 4 * h * (1 - 1e-9):
        raise ConfigurationError(f"finest radius {radii[-1]:g} is below 4h = {4 * h:g}")
    if form.domain.mask_Omega[tuple(y)]:
        raise ConfigurationError("y must be a boundary point of Omega")
    entries = potential_profile(form, y, radii, dist)
    cache = {} if reference_cache is None else reference_cache
    levels_out = []
    for e in entries:
        key = round(e.rho / h, 9)
        if key not in cache:
            cache[key] = capacity(form, dist.values <= e.rho).capacity
        levels_out.append(Level(e.rho, e.capacity, e.ball_volume, e.limit_est, cache[key],
                                e.result.n_nodes, e.resolved, e.extrapolated,
                                e.result.identity_defect))
    point = tuple(float(v) for v in form.box.node_position(y))
    return CapacityProfile(tuple(int(v) for v in y), point, lam, levels_out)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    """Calibration of the verdict rule (all configurable)."""

    regular_slope: float = -0.1
    irregular_slope: float = -0.5
    regular_limit: float = 0.9
    window: int = 4
    series: str = "delta"


@dataclass
class RegularityVerdict:
    verdict: str
    slope: float
    term_slope: float
    delta_slope: float
    last_limit_est: float
    limit_est_series: list
    limit_trend: float
    flags: list
    point: tuple
    theta: Optional[float] = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def num(v):
            return None if v is None or not math.isfinite(v) else round(float(v), 10)

        return {"point": [num(v) for v in self.point], "verdict": self.verdict,
                "slope": num(self.slope), "term_slope": num(self.term_slope),
                "delta_slope": num(self.delta_slope),
                "last_limit_est": num(self.last_limit_est),
                "limit_est_series": [num(v) for v in self.limit_est_series],
                "limit_trend": num(self.limit_trend), "theta": num(self.theta),
                "flags": list(self.flags), "config": self.config}


def fitted_slope(values: Sequence[float]) -> float:
    """Least-squares slope of ``log2(values)`` against the level index."""
    v = np.asarray(values, dtype=float)
    if v.size < 2 or np.any(~np.isfinite(v)) or np.any(v <= 0):
        return math.nan
    k = np.arange(v.size)
    return float(np.polyfit(k, np.log2(v), 1)[0])


def classify(profile: CapacityProfile, thresholds: Thresholds = Thresholds(),
             theta: Optional[float] = None) -> RegularityVerdict:
    """REGULAR / IRREGULAR / INCONCLUSIVE from the term decay and the boundary limits.

    REGULAR: slope over the last ``window`` levels ``>= regular_slope`` and the
    finest limit estimate ``>= regular_limit``.  IRREGULAR: slope
    ``<= irregular_slope`` and the limit estimates decrease across levels.
    """
    th = thresholds
    lv = profile.levels
    if len(lv) < 4:
        raise ConfigurationError("classification needs at least four levels")
    if th.series not in ("delta", "term"):
        raise ConfigurationError(f"unknown series {th.series!r}")
    w = min(th.window, len(lv))
    term_slope = fitted_slope(profile.terms[-w:])
    delta_slope = fitted_slope(profile.deltas[-w:])
    slope = delta_slope if th.series == "delta" else term_slope
    lim = profile.limit_est
    trend = float(np.polyfit(np.arange(lim.size), lim, 1)[0])
    flags = []
    for i, level in enumerate(lv):
        if not level.resolved:
            flags.append(f"level {i}: obstacle has {level.n_nodes} nodes (unresolved)")
        if not level.extrapolated:
            flags.append(f"level {i}: limit extrapolation fell back to nearest sample")
    if not any(level.resolved for level in lv):
        verdict = "inconclusive"
        flags.append("every level is below resolution")
    elif not math.isfinite(slope):
        verdict = "inconclusive"
        flags.append("term series has non-positive entries")
    elif slope >= th.regular_slope and lim[-1] >= th.regular_limit:
        verdict = "regular"
    elif slope <= th.irregular_slope and trend < 0 and lim[-1] < lim[0]:
        verdict = "irregular"
    else:
        verdict = "inconclusive"
    config = {"lambda": profile.lam, "levels": len(lv), "window": th.window,
              "series": th.series, "regular_slope": th.regular_slope,
              "irregular_slope": th.irregular_slope, "regular_limit": th.regular_limit}
    return RegularityVerdict(verdict, slope, term_slope, delta_slope, float(lim[-1]),
                             [float(v) for v in lim], trend, flags, profile.point, theta, config)


# ---------------------------------------------------------------------------
# Cone test
# ---------------------------------------------------------------------------


@dataclass
class ConeReport:
    radii: list
    theta: list
    theta_min: float

    @property
    def passes(self) -> bool:
        return min(self.theta) >= self.theta_min

    def to_json(self) -> dict:
        return {"radii": [round(r, 10) for r in self.radii],
                "theta": [round(t, 10) for t in self.theta],
                "theta_min": self.theta_min, "pass": self.passes}


def cone_check(domain: GridDomain, dist: DistanceField, radii: Sequence[float],
               theta_min: float = 0.1) -> ConeReport:
    """Density ``theta(r) = |B_r(y) \\ Omega| / |B_r(y)|`` for each radius."""
    h = domain.h
    out = []
    for r in radii:
        if r <= 4 * h:
            raise ConfigurationError(f"cone radius {r:g} must exceed 4h")
        B = dist.values < r
        out.append(ball_volume(B & ~domain.mask_Omega, domain.box) / ball_volume(B, domain.box))
    return ConeReport([float(r) for r in radii], out, theta_min)


# ---------------------------------------------------------------------------
# Coefficient invariance
# ---------------------------------------------------------------------------


@dataclass
class InvarianceReport:
    labels: list
    verdicts: list
    profiles: list
    comparability: list

    @property
    def agree(self) -> bool:
        decided = {v.verdict for v in self.verdicts if v.verdict != "inconclusive"}
        return len(decided) <= 1

    @property
    def comparable(self) -> bool:
        return all(c["ok"] for c in self.comparability)

    def to_json(self) -> dict:
        return {"labels": self.labels, "verdicts": [v.to_json() for v in self.verdicts],
                "agree": self.agree, "comparable": self.comparable,
                "comparability": self.comparability}


def invariance_harness(domain: GridDomain, family: FieldFamily, matrices: Sequence[CoefficientMatrix],
                       y: tuple, dist: DistanceField, rho0: float, lam: float = 0.5,
                       levels: int = 6, thresholds: Thresholds = Thresholds(),
                       check_points: int = 4096, rng=None) -> InvarianceReport:
    """Profile and classify ``y`` under each coefficient matrix.

    Every matrix must pass the sampled X-ellipticity check against ``family``.
    Capacity ratios between each pair of matrices are checked level by level
    against ``[lam_i / Lam_j, Lam_i / lam_j]``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    pts = domain.box.coordinates().reshape(domain.dim, -1)
    pick = rng.choice(pts.shape[1], size=min(check_points, pts.shape[1]), replace=False)
    for B in matrices:
        rep = check_x_ellipticity(B, family, pts[:, np.sort(pick)], rng=rng)
        if not rep.passes:
            raise MisuseError(f"{B.label} is not X-elliptic with its declared band")
    profiles, verdicts = [], []
    for B in matrices:
        form = assemble(domain, B)
        prof = wiener_profile(form, y, dist, rho0, lam, levels)
        profiles.append(prof)
        verdicts.append(classify(prof, thresholds))
        del form
    comp = []
    for i, j in ((i, j) for i in range(len(matrices)) for j in range(len(matrices)) if i < j):
        lo = matrices[i].lam / matrices[j].Lam
        hi = matrices[i].Lam / matrices[j].lam
        for k, (a, b) in enumerate(zip(profiles[i].levels, profiles[j].levels)):
            ratio = a.cap / b.cap
            ok = lo * (1 - 1e-9) <= ratio <= hi * (1 + 1e-9)
            comp.append({"pair": [matrices[i].label, matrices[j].label], "level": k,
                         "ratio": round(ratio, 10), "lower": lo, "upper": hi, "ok": bool(ok)})
    return InvarianceReport([B.label for B in matrices], verdicts, profiles, comp)
