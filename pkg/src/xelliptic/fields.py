"""Vector-field families X_1..X_m and X-elliptic coefficient matrices B(x).

All evaluators are vectorised: points are arrays of shape ``(N, ...)`` and
results carry the field/matrix axes in front, e.g. ``(m, N, ...)`` for the
fields and ``(N, N, ...)`` for matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, XEllipticityViolation


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


@dataclass(frozen=True)
class FieldFamily:
    """A built-in family of vector fields on R^N.

    ``kind`` is one of ``euclidean``, ``grushin``, ``heisenberg`` or
    ``diagonal``.  For ``diagonal`` the fields are ``phi_i(x) d_i`` with
    each ``phi_i`` a constant, a bump ``{"delta", "center", "width"}``
    (value ``delta`` at the centre, 1 outside the ball of radius ``width``),
    or a vectorised callable.
    """

    kind: str
    dim: int
    alpha: float = 1.0
    phis: tuple = ()

    def __post_init__(self):
        if self.kind not in ("euclidean", "grushin", "heisenberg", "diagonal"):
            raise ConfigurationError(f"unknown field family {self.kind!r}")
        if self.dim < 1:
            raise ConfigurationError("dimension must be positive")
        if self.kind == "grushin":
            if self.dim < 2:
                raise ConfigurationError("grushin needs dim >= 2")
            if self.alpha < 1:
                raise ConfigurationError("grushin(alpha) needs alpha >= 1 for Lipschitz fields")
        if self.kind == "heisenberg" and self.dim != 3:
            raise ConfigurationError("heisenberg family lives in R^3")
        if self.kind == "diagonal" and len(self.phis) != self.dim:
            raise ConfigurationError("diagonal family needs one phi per coordinate")

    @property
    def count(self) -> int:
        return 2 if self.kind == "heisenberg" else self.dim

    @property
    def name(self) -> str:
        if self.kind == "grushin":
            return f"grushin(alpha={self.alpha:g})"
        return self.kind

    def evaluate(self, x) -> np.ndarray:
        """Field values, shape ``(m, N, ...)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise ConfigurationError(f"points have dimension {x.shape[0]}, family has {self.dim}")
        N = self.dim
        rest = x.shape[1:]
        if self.kind == "euclidean":
            out = np.zeros((N, N) + rest)
            for i in range(N):
                out[i, i] = 1.0
        elif self.kind == "grushin":
            out = np.zeros((N, N) + rest)
            for i in range(N - 1):
                out[i, i] = 1.0
            out[N - 1, N - 1] = np.sqrt(np.sum(x[: N - 1] ** 2, axis=0)) ** self.alpha
        elif self.kind == "heisenberg":
            out = np.zeros((2, 3) + rest)
            out[0, 0] = 1.0
            out[0, 2] = 2.0 * x[1]
            out[1, 1] = 1.0
            out[1, 2] = -2.0 * x[0]
        else:
            out = np.zeros((N, N) + rest)
            for i, phi in enumerate(self.phis):
                out[i, i] = _eval_phi(phi, x)
        return out

    def structure_matrix(self, x) -> np.ndarray:
        """``A(x) = sum_j X_j(x) X_j(x)^T``, shape ``(N, N, ...)``."""
        X = self.evaluate(x)
        return np.einsum("ja...,jb...->ab...", X, X)

    def lipschitz_bound(self, box) -> float:
        """Declared Lipschitz constant of the field components on ``box``."""
        lo, hi = np.abs(np.array(box.lo)), np.abs(np.array(box.hi))
        far = np.maximum(lo, hi)
        if self.kind == "euclidean":
            return 0.0
        if self.kind == "grushin":
            rmax = float(np.linalg.norm(far[: self.dim - 1]))
            return self.alpha * max(rmax, 1.0) ** (self.alpha - 1)
        if self.kind == "heisenberg":
            return 2.0
        bounds = []
        for phi in self.phis:
            if isinstance(phi, dict):
                bounds.append(4.0 * (1.0 - float(phi["delta"])) / float(phi["width"]))
            elif callable(phi):
                bounds.append(np.inf)
            else:
                bounds.append(0.0)
        return max(bounds)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "grushin":
            out["alpha"] = self.alpha
        if self.kind == "diagonal":
            out["phis"] = [p if not callable(p) else "<callable>" for p in self.phis]
        return out


def _eval_phi(phi, x):
    if callable(phi):
        return np.asarray(phi(x), dtype=float) * np.ones(x.shape[1:])
    if isinstance(phi, dict):
        delta = float(phi["delta"])
        c = np.asarray(phi["center"], dtype=float).reshape((-1,) + (1,) * (x.ndim - 1))
        s2 = np.sum((x - c) ** 2, axis=0) / float(phi["width"]) ** 2
        bump = np.maximum(0.0, 1.0 - s2) ** 2
        return 1.0 - (1.0 - delta) * bump
    return float(phi) * np.ones(x.shape[1:])


def euclidean(dim: int) -> FieldFamily:
    return FieldFamily("euclidean", dim)


def grushin(alpha: float = 1.0, dim: int = 2) -> FieldFamily:
    """``X_i = d_i`` for i < N and ``X_N = |x'|**alpha d_N`` with ``x' = (x_1..x_{N-1})``."""
    return FieldFamily("grushin", dim, alpha=float(alpha))


def heisenberg() -> FieldFamily:
    return FieldFamily("heisenberg", 3)


def diagonal(*phis) -> FieldFamily:
    return FieldFamily("diagonal", len(phis), phis=tuple(phis))


def family_from_config(cfg) -> FieldFamily:
    if isinstance(cfg, FieldFamily):
        return cfg
    if isinstance(cfg, str):
        cfg = {"name": cfg}
    if not isinstance(cfg, dict) or "name" not in cfg:
        raise ConfigurationError(f"field family needs a name, got {cfg!r}")
    name = cfg["name"]
    extra = set(cfg) - {"name", "dim", "alpha", "phis"}
    if extra:
        raise ConfigurationError(f"unknown field-family keys {sorted(extra)}")
    if name == "euclidean":
        return euclidean(int(cfg.get("dim", 2)))
    if name == "grushin":
        return grushin(float(cfg.get("alpha", 1.0)), int(cfg.get("dim", 2)))
    if name == "heisenberg":
        return heisenberg()
    if name == "diagonal":
        phis = cfg.get("phis")
        if not phis:
            raise ConfigurationError("diagonal family needs a 'phis' list")
        return diagonal(*phis)
    raise ConfigurationError(f"unknown field family {name!r}")


def structure_matrix(family: FieldFamily, x) -> np.ndarray:
    """``A(x)`` at a single point (``(N, N)``) or a batch (``(N, N, ...)``)."""
    x = np.asarray(x, dtype=float)
    A = family.structure_matrix(_points(x))
    return A[..., 0] if x.ndim == 1 else A


# ---------------------------------------------------------------------------
# Coefficient matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientMatrix:
    """Symmetric ``B(x)`` with declared X-ellipticity band ``[lam, Lam]``."""

    evaluator: Callable
    lam: float
    Lam: float
    label: str = "B"
    diagonal: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (self.lam > 0 and self.Lam >= self.lam):
            raise ConfigurationError(f"need 0 < lambda <= Lambda, got [{self.lam}, {self.Lam}]")

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        B = np.asarray(self.evaluator(_points(x)), dtype=float)
        return B[..., 0] if x.ndim == 1 else B

    def scaled(self, c: float) -> "CoefficientMatrix":
        ev = self.evaluator
        return CoefficientMatrix(lambda x: c * ev(x), c * self.lam, c * self.Lam,
                                 f"{c:g}*{self.label}", self.diagonal, dict(self.meta))


def structure_coefficients(family: FieldFamily, scale: float = 1.0) -> CoefficientMatrix:
    """``B = scale * A(x)``; the band is ``[scale, scale]``."""
    diag = family.kind in ("euclidean", "grushin", "diagonal")
    label = "A" if scale == 1 else f"{scale:g}A"
    return CoefficientMatrix(lambda x: scale * family.structure_matrix(x), scale, scale,
                             label, diag, {"family": family.name, "kind": "structure",
                                           "scale": scale})


def constant_coefficients(matrix, label: Optional[str] = None) -> CoefficientMatrix:
    """Constant ``B`` for the euclidean family; the band is its eigenvalue range."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError("constant coefficient matrix must be square")
    if not np.array_equal(M, M.T):
        raise ConfigurationError("coefficient matrix must be symmetric")
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 0:
        raise ConfigurationError("constant coefficient matrix must be positive definite")
    diag = bool(np.count_nonzero(M - np.diag(np.diag(M))) == 0)

    def evaluate(x):
        return np.broadcast_to(M.reshape(M.shape + (1,) * (x.ndim - 1)),
                               M.shape + x.shape[1:]).copy()

    return CoefficientMatrix(evaluate, float(ev[0]), float(ev[-1]),
                             label or ("diag" if diag else "mixed"), diag,
                             {"kind": "constant", "matrix": M.tolist()})


def max_structure_eigenvalue(family: FieldFamily, box) -> float:
    """Largest eigenvalue of ``A(x)`` over the box corners and node grid."""
    A = family.structure_matrix(box.coordinates().reshape(box.dim, -1))
    return float(np.max(np.linalg.eigvalsh(np.moveaxis(A, -1, 0))))


def sandwich_coefficients(family: FieldFamily, R, c1: float = 1.0, c2: float = 0.3,
                          amax: float = 1.0, label: str = "mixed") -> CoefficientMatrix:
    """``B = c1*A + c2*A R A``, X-elliptic by construction.

    With ``amax`` an upper bound for the eigenvalues of ``A`` on the region of
    interest, ``|xi^T A R A xi| <= ||R|| * amax * xi^T A xi`` gives the band
    ``[c1 - |c2| ||R|| amax, c1 + |c2| ||R|| amax]``.
    """
    R = np.asarray(R, dtype=float)
    if not np.array_equal(R, R.T):
        raise ConfigurationError("sandwich perturbation must be symmetric")
    norm = float(np.max(np.abs(np.linalg.eigvalsh(R))))
    spread = abs(c2) * norm * amax
    if c1 - spread <= 0:
        raise ConfigurationError("perturbation too large: lower band would be non-positive")

    def evaluate(x):
        A = family.structure_matrix(x)
        ARA = np.einsum("ab...,bc,cd...->ad...", A, R, A)
        B = c1 * A + c2 * ARA
        return 0.5 * (B + np.swapaxes(B, 0, 1))

    return CoefficientMatrix(evaluate, c1 - spread, c1 + spread, label, False,
                             {"kind": "sandwich", "c1": c1, "c2": c2, "R": R.tolist(),
                              "amax": amax, "family": family.name})


def random_symmetric(dim: int, rng, norm: float = 1.0) -> np.ndarray:
    """Random symmetric matrix with spectral norm ``norm`` and nonzero off-diagonals."""
    G = rng.standard_normal((dim, dim))
    R = 0.5 * (G + G.T)
    return norm * R / np.max(np.abs(np.linalg.eigvalsh(R)))


def coefficients_from_config(cfg, family: FieldFamily, box=None, rng=None) -> CoefficientMatrix:
    """``{"type": "structure", "scale": c}``, ``{"type": "constant", "matrix": M}``,
    ``{"type": "sandwich", "c1", "c2", "R" | "seed"}``."""
    if isinstance(cfg, CoefficientMatrix):
        return cfg
    if isinstance(cfg, str):
        cfg = {"type": cfg}
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ConfigurationError(f"coefficient spec needs a type, got {cfg!r}")
    kind = cfg["type"]
    if kind == "structure":
        return structure_coefficients(family, float(cfg.get("scale", 1.0)))
    if kind == "constant":
        if family.kind != "euclidean":
            raise ConfigurationError("constant coefficients are only X-elliptic for the euclidean family")
        return constant_coefficients(cfg["matrix"], cfg.get("label"))
    if kind == "sandwich":
        if "R" in cfg:
            R = np.asarray(cfg["R"], dtype=float)
        else:
            rng = np.random.default_rng(cfg.get("seed", 0)) if rng is None else rng
            R = random_symmetric(family.dim, rng)
        amax = float(cfg["amax"]) if "amax" in cfg else (
            max_structure_eigenvalue(family, box) if box is not None else 1.0)
        return sandwich_coefficients(family, R, float(cfg.get("c1", 1.0)),
                                     float(cfg.get("c2", 0.3)), amax, cfg.get("label", "mixed"))
    raise ConfigurationError(f"unknown coefficient type {kind!r}")


# ---------------------------------------------------------------------------
# Hypothesis checks
# ---------------------------------------------------------------------------


@dataclass
class EllipticityReport:
    min_ratio: float
    max_ratio: float
    lam: float
    Lam: float
    n_points: int
    n_directions: int

    @property
    def passes(self) -> bool:
        return (self.min_ratio >= self.lam * (1 - 1e-9)
                and self.max_ratio <= self.Lam * (1 + 1e-9))

    def to_json(self) -> dict:
        return {"min_ratio": self.min_ratio, "max_ratio": self.max_ratio, "lambda": self.lam,
                "Lambda": self.Lam, "passes": self.passes, "points": self.n_points}


def check_x_ellipticity(B: CoefficientMatrix, family: FieldFamily, points,
                        samples: int = 16, rng=None) -> EllipticityReport:
    """Sampled two-sided bound ``lam <A xi, xi> <= <B xi, xi> <= Lam <A xi, xi>``.

    ``points`` has shape ``(N, P)``; ``samples`` random directions are drawn
    per point.  Directions in the null space of ``A`` are tested as well and
    must not be charged by ``B``.
    """
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.asarray(points, dtype=float).reshape(family.dim, -1)
    A = np.moveaxis(family.structure_matrix(x), -1, 0)
    Bx = np.moveaxis(np.asarray(B.evaluator(x), dtype=float), -1, 0)
    if not np.array_equal(Bx, np.swapaxes(Bx, 1, 2)):
        raise XEllipticityViolation("B(x) is not symmetric as evaluated")
    P, N = A.shape[0], family.dim
    xi = rng.standard_normal((P, samples, N))
    qA = np.einsum("psa,pab,psb->ps", xi, A, xi)
    qB = np.einsum("psa,pab,psb->ps", xi, Bx, xi)
    scaleA = np.linalg.norm(A, axis=(1, 2))[:, None] * np.sum(xi**2, axis=2)
    scaleB = np.linalg.norm(Bx, axis=(1, 2))[:, None] * np.sum(xi**2, axis=2)
    pos = qA > 1e-12 * np.maximum(scaleA, 1e-300)
    if np.any(~pos & (qB > 1e-12 * np.maximum(scaleB, 1e-300))):
        raise XEllipticityViolation("<B xi, xi> > 0 where <A xi, xi> = 0")
    # null directions of A
    w, V = np.linalg.eigh(A)
    tol = 1e-12 * np.maximum(w[:, -1:], 1e-300)
    null = w <= tol
    if np.any(null):
        qn = np.einsum("pak,pab,pbk->pk", V, Bx, V)
        bn = np.linalg.norm(Bx, axis=(1, 2))[:, None]
        if np.any(null & (qn > 1e-12 * np.maximum(bn, 1e-300))):
            raise XEllipticityViolation("B charges a direction outside the span of the fields")
    ratio = qB[pos] / qA[pos]
    if ratio.size == 0:
        raise XEllipticityViolation("no sampled direction is spanned by the fields")
    return EllipticityReport(float(ratio.min()), float(ratio.max()), B.lam, B.Lam, P, samples)


def sampled_lipschitz(family: FieldFamily, box, n_pairs: int = 2000, rng=None,
                      step: Optional[float] = None) -> float:
    """Largest difference quotient ``|X(x) - X(x')| / |x - x'|`` over random close pairs."""
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = np.array(box.lo), np.array(box.hi)
    step = box.h if step is None else step
    x = lo[:, None] + (hi - lo)[:, None] * rng.random((box.dim, n_pairs))
    d = rng.standard_normal((box.dim, n_pairs))
    d *= step / np.linalg.norm(d, axis=0)
    x2 = np.clip(x + d, lo[:, None], hi[:, None])
    num = np.linalg.norm((family.evaluate(x2) - family.evaluate(x)).reshape(-1, n_pairs), axis=0)
    den = np.linalg.norm(x2 - x, axis=0)
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0
