"""Discrete energy form, Dirichlet solves, and structural checks.

The energy ``L(u, v) = int <B grad u, grad v>`` is discretised with
tensor-product linear (bilinear/trilinear) nodal elements.  ``B`` is frozen at
each cell midpoint and the gradient products are integrated exactly, so the
stiffness matrix is symmetric and positive semidefinite whenever ``B`` is.

The stiffness is stored stencil-wise: ``coupling[k][p]`` is the entry between
node ``p`` and node ``p + offsets[k]``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pyamg
from scipy import sparse
from scipy.sparse import csgraph

from .errors import AssemblyError, ConfigurationError, MisuseError, SolverStagnation
from .fields import CoefficientMatrix, FieldFamily
from .geometry import GridDomain, stencil_offsets
from .metric import distance_to_set, horizontal_gradient


def reference_integrals(dim: int) -> np.ndarray:
    """``R[i, j, a, b] = int_{[0,1]^N} d_i phi_a d_j phi_b`` for corners ``a, b``.

    Corners are indexed in lexicographic order of ``{0, 1}**N``.
    """
    corners = list(itertools.product((0, 1), repeat=dim))
    R = np.zeros((dim, dim, len(corners), len(corners)))
    sgn = {0: -1.0, 1: 1.0}
    for i, j in itertools.product(range(dim), repeat=2):
        for ia, a in enumerate(corners):
            for ib, b in enumerate(corners):
                val = 1.0
                for k in range(dim):
                    if k == i and k == j:
                        val *= 1.0 if a[k] == b[k] else -1.0
                    elif k == i:
                        val *= sgn[a[k]] / 2.0
                    elif k == j:
                        val *= sgn[b[k]] / 2.0
                    else:
                        val *= 1.0 / 3.0 if a[k] == b[k] else 1.0 / 6.0
                R[i, j, ia, ib] = val
    return R


@dataclass
class EnergyForm:
    """Stencil-stored stiffness of ``L`` on the node grid of ``domain.box``."""

    domain: GridDomain
    B: CoefficientMatrix
    offsets: np.ndarray
    coupling: np.ndarray
    element: str = "tensor-product linear"
    quadrature: str = "B at cell midpoint, exact gradient products"

    @property
    def box(self):
        return self.domain.box

    @property
    def multiplicity(self) -> int:
        return self.box.multiplicity

    def apply(self, u: np.ndarray, absolute: bool = False) -> np.ndarray:
        """Matrix-vector product ``S u`` on the full node grid."""
        up = np.pad(np.asarray(u, dtype=float), 1)
        shape = self.box.shape
        out = np.zeros(shape)
        for o, c in zip(self.offsets, self.coupling):
            sl = tuple(slice(1 + k, 1 + k + n) for k, n in zip(o, shape))
            out += (np.abs(c) if absolute else c) * up[sl]
        return out

    def energy(self, u: np.ndarray, v: Optional[np.ndarray] = None) -> float:
        """``u^T S v`` on the box (mirrored copies not included)."""
        v = u if v is None else v
        return float(np.sum(np.asarray(u, dtype=float) * self.apply(v)))

    def submatrix(self, mask: np.ndarray) -> sparse.csr_matrix:
        """CSR block of ``S`` on the nodes of ``mask`` (row-major node order)."""
        n = int(np.count_nonzero(mask))
        ids = np.full(self.box.shape, -1, dtype=np.int64)
        ids[mask] = np.arange(n)
        idp = np.pad(ids, 1, constant_values=-1)
        shape = self.box.shape
        cols = np.empty((n, len(self.offsets)), dtype=np.int64)
        vals = np.empty((n, len(self.offsets)))
        for k, (o, c) in enumerate(zip(self.offsets, self.coupling)):
            sl = tuple(slice(1 + q, 1 + q + m) for q, m in zip(o, shape))
            cols[:, k] = idp[sl][mask]
            vals[:, k] = c[mask]
        keep = (cols >= 0) & (vals != 0)
        indptr = np.concatenate([[0], np.cumsum(np.count_nonzero(keep, axis=1))])
        # lexicographic offsets give increasing column ids within a row
        return sparse.csr_matrix((vals[keep], cols[keep], indptr), shape=(n, n))

    def node_rows(self, mask: np.ndarray) -> tuple:
        """Row-major node coordinates of ``mask``, matching :meth:`submatrix` ordering."""
        return np.nonzero(mask)


def assemble(domain: GridDomain, B: CoefficientMatrix) -> EnergyForm:
    """Assemble the stencil couplings of ``int <B grad u, grad v>``."""
    box = domain.box
    N, h = box.dim, box.h
    axes = [0.5 * (a[1:] + a[:-1]) for a in box.axes()]
    mids = np.stack(np.meshgrid(*axes, indexing="ij"))
    Bc = np.asarray(B.evaluator(mids), dtype=float)
    if Bc.shape != (N, N) + tuple(box.n_cells):
        raise AssemblyError(f"coefficient evaluation has shape {Bc.shape}")
    if not np.array_equal(Bc, np.swapaxes(Bc, 0, 1)):
        raise AssemblyError("B(x) is not symmetric as evaluated")
    if not np.all(np.isfinite(Bc)):
        raise AssemblyError("B(x) has non-finite entries")
    R = reference_integrals(N) * h ** (N - 2)
    corners = list(itertools.product((0, 1), repeat=N))
    corner_id = {c: k for k, c in enumerate(corners)}
    offsets = stencil_offsets(N, include_zero=True)
    off_id = {tuple(o): k for k, o in enumerate(offsets)}
    Bp = np.pad(Bc, [(0, 0), (0, 0)] + [(1, 1)] * N)
    shape = box.shape
    coupling = np.zeros((len(offsets),) + shape)
    for a in corners:
        # cell with lower corner p - a, seen from node p (padded index shift +1)
        sl = tuple(slice(1 - ak, 1 - ak + n) for ak, n in zip(a, shape))
        Bs = Bp[(slice(None), slice(None)) + sl]
        for b in corners:
            o = tuple(bk - ak for ak, bk in zip(a, b))
            w = R[:, :, corner_id[a], corner_id[b]]
            coupling[off_id[o]] += np.tensordot(w, Bs, axes=([0, 1], [0, 1]))
    return EnergyForm(domain, B, offsets, coupling)


# ---------------------------------------------------------------------------
# Dirichlet problems
# ---------------------------------------------------------------------------


@dataclass
class DirichletProblem:
    """Unknowns on ``interior``; every other node is pinned to ``data``.

    ``load`` is an optional nodal right-hand side (``S u = load`` on the
    unknowns); it defaults to zero.
    """

    form: EnergyForm
    interior: np.ndarray
    data: np.ndarray
    load: Optional[np.ndarray] = None

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=bool)
        self.data = np.asarray(self.data, dtype=float)
        if self.interior.shape != self.form.box.shape or self.data.shape != self.form.box.shape:
            raise ConfigurationError("interior mask and data must match the node grid")
        if np.any(self.interior & ~self.form.domain.mask_D):
            raise ConfigurationError("Dirichlet interior must lie inside D")
        if not np.all(np.isfinite(self.data[~self.interior])):
            raise ConfigurationError("boundary data must be finite")


def floating_nodes(form: EnergyForm, interior: np.ndarray, A=None) -> np.ndarray:
    """Unknown nodes whose coupling component never reaches a pinned node."""
    A = form.submatrix(interior) if A is None else A
    anchored = form.apply((~interior).astype(float), absolute=True)[interior] > 0
    n_comp, labels = csgraph.connected_components(A, directed=False)
    ok = np.zeros(n_comp, dtype=bool)
    ok[labels[anchored]] = True
    bad = ~ok[labels]
    mask = np.zeros(form.box.shape, dtype=bool)
    idx = form.node_rows(interior)
    mask[tuple(i[bad] for i in idx)] = True
    return mask


def solve_dirichlet(problem: DirichletProblem, rtol: float = 1e-9,
                    maxiter: Optional[int] = None) -> np.ndarray:
    """Energy minimiser with the prescribed values off ``interior``.

    Solves the eliminated symmetric system with conjugate gradients and a
    smoothed-aggregation AMG preconditioner to relative residual ``rtol``.
    Returns the full nodal field.
    """
    form, interior = problem.form, problem.interior
    u = problem.data.copy()
    u[interior] = 0.0
    n = int(np.count_nonzero(interior))
    if n == 0:
        return u
    A = form.submatrix(interior)
    b = -form.apply(u)[interior]
    if problem.load is not None:
        b = b + np.asarray(problem.load, dtype=float)[interior]
    floating = floating_nodes(form, interior, A)
    if floating.any():
        raise SolverStagnation(
            f"{int(floating.sum())} unknowns are decoupled from every constraint "
            "(semidefinite block)", floating_nodes=floating)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return u
    maxiter = int(50 * math.sqrt(n)) if maxiter is None else maxiter
    # AMG setup draws from the global numpy RNG; pin it so solves are reproducible
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=500)
        x = ml.solve(b, tol=rtol, accel="cg", maxiter=maxiter)
    finally:
        np.random.set_state(state)
    res = float(np.linalg.norm(b - A @ x)) / bnorm
    if not np.isfinite(res) or res > rtol * 1.0001:
        raise SolverStagnation(f"CG stalled at relative residual {res:.3e}", residual=res)
    u[interior] = x
    return u


def solve_in_omega(form: EnergyForm, boundary_data: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """L-harmonic extension into Omega of nodal data on its boundary ring."""
    return solve_dirichlet(DirichletProblem(form, form.domain.mask_Omega, boundary_data), rtol)


def maximum_principle_excess(u: np.ndarray, domain: GridDomain) -> float:
    """``max_Omega u - max_{boundary} u``; positive values violate the weak maximum principle."""
    return float(np.max(u[domain.mask_Omega]) - np.max(u[domain.boundary]))


def interior_residual(form: EnergyForm, u: np.ndarray, interior: np.ndarray) -> float:
    """``max |(S u)_i|`` over the nodes of ``interior``."""
    r = form.apply(u)[interior]
    return float(np.max(np.abs(r))) if r.size else 0.0


def caccioppoli_ratio(form: EnergyForm, u: np.ndarray, K: np.ndarray, family: FieldFamily,
                      boundary_distance: Optional[np.ndarray] = None) -> float:
    """``dist(K, dOmega) * ||Xu||_{L2(K)} / ||u||_{L2(Omega)}`` for a discrete solution ``u``.

    ``boundary_distance`` is the control distance to the boundary ring of
    Omega; it is computed when not supplied.
    """
    domain = form.domain
    Su = form.apply(u)
    if np.linalg.norm(Su[domain.mask_Omega]) > 1e-6 * np.linalg.norm(Su) + 1e-300:
        raise MisuseError("u does not solve L u = 0 in Omega")
    if np.any(K & ~domain.mask_Omega) or not K.any():
        raise ConfigurationError("K must be a non-empty subset of Omega")
    if boundary_distance is None:
        boundary_distance = distance_to_set(family, domain.boundary, domain.box)
    dist = float(np.min(boundary_distance[K]))
    if dist < 4 * domain.h:
        raise ConfigurationError(f"K is within {dist:g} < 4h of the boundary")
    w = domain.box.node_weights() * domain.h ** domain.dim
    Xu = horizontal_gradient(family, u, domain.box)
    num = math.sqrt(float(np.sum((w * np.sum(Xu**2, axis=0))[K])))
    den = math.sqrt(float(np.sum((w * u**2)[domain.mask_Omega])))
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return dist * num / den
