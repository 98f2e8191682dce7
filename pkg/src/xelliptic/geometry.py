"""Bounding boxes, shape expressions, and grid masks for D, Omega, and obstacles.

Every grid quantity lives on the *nodes* of a uniform Cartesian grid.  A node
stands for the dual cell of width ``h`` centred on it, so "cell centre" and
"node" coincide and a node count times ``h**N`` is a volume estimate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, GeometryError, RadiusError


@dataclass(frozen=True)
class BoundingBox:
    """Uniform grid over ``[lo, hi]`` with ``n_cells[i]`` cells along axis i.

    ``mirror`` lists axes whose ``lo`` face is a reflection plane of the
    problem.  Nodes on such a face are ordinary unknowns (natural boundary
    condition) and energies/volumes computed on the box stand for
    ``2**len(mirror)`` copies of the reduced region.
    """

    lo: tuple
    hi: tuple
    n_cells: tuple
    mirror: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        n = tuple(int(v) for v in self.n_cells)
        if not (len(lo) == len(hi) == len(n)) or not lo:
            raise ConfigurationError("lo, hi and n_cells must have the same positive length")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigurationError(f"box requires hi > lo, got lo={lo} hi={hi}")
        if any(k < 2 for k in n):
            raise ConfigurationError("each axis needs at least two cells")
        widths = [(b - a) / k for a, b, k in zip(lo, hi, n)]
        if max(widths) - min(widths) > 1e-12 * max(widths):
            raise ConfigurationError(f"cell widths differ across axes: {widths}")
        mirror = tuple(sorted(set(int(a) for a in self.mirror)))
        if any(a < 0 or a >= len(lo) for a in mirror):
            raise ConfigurationError(f"mirror axes out of range: {mirror}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "mirror", mirror)

    @classmethod
    def cube(cls, lo, hi, h, dim, mirror=()):
        """Box ``[lo, hi]**dim`` with cell width ``h`` (rounded to fit)."""
        n = int(round((hi - lo) / h))
        return cls((lo,) * dim, (hi,) * dim, (n,) * dim, mirror)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def h(self) -> float:
        return (self.hi[0] - self.lo[0]) / self.n_cells[0]

    @property
    def shape(self) -> tuple:
        """Node-grid shape (``n_cells + 1`` per axis)."""
        return tuple(k + 1 for k in self.n_cells)

    @property
    def multiplicity(self) -> int:
        return 2 ** len(self.mirror)

    def axes(self):
        return [np.linspace(a, b, k + 1) for a, b, k in zip(self.lo, self.hi, self.n_cells)]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(N, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def node_weights(self) -> np.ndarray:
        """Number of full-space copies each node stands for (1 without mirrors)."""
        w = np.ones(self.shape)
        for a in self.mirror:
            idx = [slice(None)] * self.dim
            w *= 2.0
            idx[a] = 0
            w[tuple(idx)] /= 2.0
        return w

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        tol = 1e-12 * self.h
        return bool(np.all(p >= np.array(self.lo) - tol) and np.all(p <= np.array(self.hi) + tol))

    def nearest_node(self, point) -> tuple:
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            raise ConfigurationError(f"point {point} has wrong dimension for a {self.dim}D box")
        idx = np.rint((p - np.array(self.lo)) / self.h).astype(int)
        return tuple(int(v) for v in np.clip(idx, 0, np.array(self.n_cells)))

    def node_position(self, index) -> np.ndarray:
        return np.array(self.lo) + self.h * np.asarray(index, dtype=float)

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "n_cells": list(self.n_cells),
                "h": self.h, "mirror": list(self.mirror)}


# ---------------------------------------------------------------------------
# Shape expressions
# ---------------------------------------------------------------------------


class Shape:
    """Boolean membership predicate evaluated on coordinate arrays ``(N, ...)``."""

    def contains(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __or__(self, other):
        return Union((self, other))

    def __and__(self, other):
        return Intersection((self, other))

    def __invert__(self):
        return Complement(self)


def _vec(v, name):
    try:
        a = np.asarray(v, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} must be a numeric vector, got {v!r}") from exc
    if a.size == 0 or not np.all(np.isfinite(a)):
        raise ConfigurationError(f"{name} must be a finite non-empty vector")
    return a


def _bcast(a, x):
    return a.reshape((-1,) + (1,) * (x.ndim - 1))


def _check_dim(a, x, name):
    if a.size != x.shape[0]:
        raise ConfigurationError(f"{name} has dimension {a.size}, grid has {x.shape[0]}")


@dataclass(frozen=True)
class Ball(Shape):
    """Closed Euclidean ball."""

    center: tuple
    radius: float

    def contains(self, x):
        c = _vec(self.center, "ball center")
        _check_dim(c, x, "ball center")
        r2 = np.sum((x - _bcast(c, x)) ** 2, axis=0)
        return r2 <= self.radius**2 * (1 + 1e-12)


@dataclass(frozen=True)
class Box(Shape):
    lo: tuple
    hi: tuple

    def contains(self, x):
        lo, hi = _vec(self.lo, "box lo"), _vec(self.hi, "box hi")
        _check_dim(lo, x, "box lo")
        _check_dim(hi, x, "box hi")
        return np.all((x >= _bcast(lo, x)) & (x <= _bcast(hi, x)), axis=0)


@dataclass(frozen=True)
class HalfSpace(Shape):
    """``{x : <normal, x> >= offset}``."""

    normal: tuple
    offset: float = 0.0

    def contains(self, x):
        n = _vec(self.normal, "half-space normal")
        _check_dim(n, x, "half-space normal")
        return np.tensordot(n, x, axes=1) >= self.offset


@dataclass(frozen=True)
class CuspSpine(Shape):
    """Solid of revolution ``{apex + t*axis + w : t > 0, |w| <= r(t), w _|_ axis}``.

    ``profile`` is ``"power"`` with ``r(t) = scale * t**exponent`` or ``"exp"``
    with ``r(t) = scale * exp(-rate / t)`` (the Lebesgue spine for
    ``scale = rate = 1``).  ``length`` truncates the spine.
    """

    apex: tuple
    axis: tuple
    profile: str = "exp"
    exponent: float = 1.0
    rate: float = 1.0
    scale: float = 1.0
    length: float = math.inf

    def radius(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            if self.profile == "exp":
                r = self.scale * np.exp(-self.rate / np.where(t > 0, t, 1.0))
            elif self.profile == "power":
                r = self.scale * np.where(t > 0, t, 0.0) ** self.exponent
            else:
                raise ConfigurationError(f"unknown cusp profile {self.profile!r}")
        return np.where(t > 0, r, 0.0)

    def contains(self, x):
        a = _vec(self.apex, "spine apex")
        d = _vec(self.axis, "spine axis")
        _check_dim(a, x, "spine apex")
        _check_dim(d, x, "spine axis")
        d = d / np.linalg.norm(d)
        rel = x - _bcast(a, x)
        t = np.tensordot(d, rel, axes=1)
        perp2 = np.maximum(np.sum(rel**2, axis=0) - t**2, 0.0)
        r = self.radius(t)
        return (t > 0) & (t <= self.length) & (perp2 <= r**2)


@dataclass(frozen=True)
class PointCell(Shape):
    """The single grid node nearest ``center`` (resolved at rasterization)."""

    center: tuple

    def contains(self, x):
        c = _vec(self.center, "point-cell center")
        _check_dim(c, x, "point-cell center")
        d2 = np.sum((x - _bcast(c, x)) ** 2, axis=0)
        out = np.zeros(d2.shape, dtype=bool)
        out[np.unravel_index(np.argmin(d2), d2.shape)] = True
        return out


@dataclass(frozen=True)
class Union(Shape):
    parts: tuple

    def contains(self, x):
        if not self.parts:
            raise ConfigurationError("union needs at least one operand")
        out = np.zeros(x.shape[1:], dtype=bool)
        for p in self.parts:
            out |= p.contains(x)
        return out


@dataclass(frozen=True)
class Intersection(Shape):
    parts: tuple

    def contains(self, x):
        if not self.parts:
            raise ConfigurationError("intersection needs at least one operand")
        out = np.ones(x.shape[1:], dtype=bool)
        for p in self.parts:
            out &= p.contains(x)
        return out


@dataclass(frozen=True)
class Complement(Shape):
    part: Shape

    def contains(self, x):
        return ~self.part.contains(x)


@dataclass(frozen=True)
class Everything(Shape):
    def contains(self, x):
        return np.ones(x.shape[1:], dtype=bool)


@dataclass(frozen=True)
class Nothing(Shape):
    def contains(self, x):
        return np.zeros(x.shape[1:], dtype=bool)


_PRIMITIVE_KEYS = {
    "ball": (Ball, {"center", "radius"}),
    "box": (Box, {"lo", "hi"}),
    "half_space": (HalfSpace, {"normal", "offset"}),
    "cusp_spine": (CuspSpine, {"apex", "axis", "profile", "exponent", "rate", "scale", "length"}),
    "point_cell": (PointCell, {"center"}),
}


def shape_from_config(node) -> Shape:
    """Build a shape tree from nested dicts.

    Each dict has exactly one key: a primitive (``ball``, ``box``,
    ``half_space``, ``cusp_spine``, ``point_cell``) mapping to its parameters,
    or a combinator (``union``/``intersection`` with a list,
    ``complement`` with a single node).  The strings ``"all"`` and
    ``"empty"`` are accepted as leaves.
    """
    if isinstance(node, Shape):
        return node
    if node == "all":
        return Everything()
    if node == "empty":
        return Nothing()
    if not isinstance(node, dict) or len(node) != 1:
        raise ConfigurationError(f"shape node must be a single-key mapping, got {node!r}")
    (key, val), = node.items()
    key = key.replace("-", "_")
    if key in ("union", "intersection"):
        if not isinstance(val, (list, tuple)) or not val:
            raise ConfigurationError(f"{key} expects a non-empty list")
        parts = tuple(shape_from_config(v) for v in val)
        return Union(parts) if key == "union" else Intersection(parts)
    if key == "complement":
        return Complement(shape_from_config(val))
    if key not in _PRIMITIVE_KEYS:
        raise ConfigurationError(f"unknown shape {key!r}")
    cls, allowed = _PRIMITIVE_KEYS[key]
    if not isinstance(val, dict):
        raise ConfigurationError(f"{key} expects a parameter mapping")
    extra = set(val) - allowed
    if extra:
        raise ConfigurationError(f"{key}: unknown parameters {sorted(extra)}")
    params = dict(val)
    for k in ("center", "lo", "hi", "normal", "apex", "axis"):
        if k in params:
            params[k] = tuple(_vec(params[k], f"{key}.{k}"))
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigurationError(f"{key}: {exc}") from exc


def rasterize(shape, box: BoundingBox) -> np.ndarray:
    """Boolean node mask: True iff the node satisfies the shape predicate."""
    shape = shape_from_config(shape)
    mask = shape.contains(box.coordinates())
    if mask.shape != box.shape:
        raise ConfigurationError("shape evaluation returned a mask of the wrong shape")
    return np.asarray(mask, dtype=bool)


# ---------------------------------------------------------------------------
# Grid domains
# ---------------------------------------------------------------------------


def stencil_offsets(dim: int, include_zero: bool = False) -> np.ndarray:
    """All offsets in ``{-1, 0, 1}**dim`` in lexicographic order."""
    offs = np.array(np.meshgrid(*([[-1, 0, 1]] * dim), indexing="ij")).reshape(dim, -1).T
    if not include_zero:
        offs = offs[np.any(offs != 0, axis=1)]
    return offs


def full_dilation(mask: np.ndarray) -> np.ndarray:
    """Dilation by the full ``3**N`` neighbourhood."""
    return ndimage.binary_dilation(mask, structure=np.ones((3,) * mask.ndim, dtype=bool))


@dataclass
class GridDomain:
    """Host domain D and test domain Omega on a bounding box.

    ``boundary`` marks the nodes outside Omega that touch an Omega node
    through the full neighbour stencil; they carry Dirichlet data.
    """

    box: BoundingBox
    mask_D: np.ndarray
    mask_Omega: np.ndarray
    boundary: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mask_D = np.asarray(self.mask_D, dtype=bool)
        self.mask_Omega = np.asarray(self.mask_Omega, dtype=bool)
        if self.mask_D.shape != self.box.shape or self.mask_Omega.shape != self.box.shape:
            raise ConfigurationError("masks must match the node-grid shape")
        outside_D = self._outside(self.mask_D)
        # every Omega node keeps two cells of clearance from the complement of D
        near_out = ndimage.binary_dilation(
            outside_D, structure=np.ones((3,) * self.box.dim, dtype=bool), iterations=2)
        near_out = near_out[self._interior_slices()]
        if np.any(self.mask_Omega & near_out):
            raise ConfigurationError("Omega must be compactly contained in D "
                                     "(two cells clearance from the complement of D)")
        self.boundary = full_dilation(self.mask_Omega) & ~self.mask_Omega
        if self.mask_Omega.any() and not self.boundary.any():
            raise GeometryError("Omega is a non-empty proper subset but has no boundary nodes")

    def _interior_slices(self):
        return tuple(slice(1, -1) for _ in range(self.box.dim))

    def _outside(self, mask):
        """Complement of ``mask`` padded by one ghost layer (ghosts count as outside).

        Ghost layers next to mirrored lo faces copy the reflected interior instead.
        """
        padded = np.pad(~mask, 1, constant_values=True)
        for a in self.box.mirror:
            src = [slice(None)] * mask.ndim
            dst = [slice(None)] * mask.ndim
            src[a] = 2
            dst[a] = 0
            padded[tuple(dst)] = padded[tuple(src)]
        return padded

    @property
    def dim(self):
        return self.box.dim

    @property
    def h(self):
        return self.box.h

    @property
    def interior_D(self) -> np.ndarray:
        """D nodes whose whole stencil stays inside D."""
        out = self._outside(self.mask_D)
        touched = ndimage.binary_dilation(out, structure=np.ones((3,) * self.dim, dtype=bool))
        return self.mask_D & ~touched[self._interior_slices()]

    def snap_to_boundary(self, y) -> tuple:
        """Index of the boundary node nearest the point ``y``."""
        if not self.boundary.any():
            raise GeometryError("Omega has no boundary nodes")
        idx = np.argwhere(self.boundary)
        pos = np.asarray(self.box.lo) + self.h * idx
        k = int(np.argmin(np.sum((pos - np.asarray(y, dtype=float)) ** 2, axis=1)))
        return tuple(int(v) for v in idx[k])


def make_domain(box: BoundingBox, D, Omega) -> GridDomain:
    """Rasterize shape expressions for D and Omega into a :class:`GridDomain`."""
    return GridDomain(box, rasterize(D, box), rasterize(Omega, box))


def compact_obstacle(domain: GridDomain, y, rho: float, dist: np.ndarray,
                     closed: bool = True) -> np.ndarray:
    """Mask of ``K_rho``: nodes of the closed metric ball about ``y`` not in Omega.

    ``dist`` is the control-distance grid from ``y`` (see
    :func:`xelliptic.metric.control_distance`).  ``y`` is snapped to the
    nearest boundary node; the snapped node always belongs to the result.
    """
    h = domain.h
    if rho < 2 * h * (1 - 1e-12):
        raise RadiusError(f"rho={rho:g} is below two cells (2h={2 * h:g})")
    y_idx = y if (isinstance(y, tuple) and all(isinstance(v, (int, np.integer)) for v in y)) \
        else domain.snap_to_boundary(y)
    if domain.mask_Omega[y_idx]:
        raise GeometryError("y lies inside Omega, not on its boundary")
    ball = dist <= rho if closed else dist < rho
    if np.any(ball & ~domain.interior_D):
        raise RadiusError(f"closed ball of radius {rho:g} about y escapes the interior of D")
    K = ball & ~domain.mask_Omega
    K[y_idx] = True
    if not K.any():
        raise GeometryError("empty obstacle although y is a boundary node")
    return K


# ---------------------------------------------------------------------------
# Binary grid dumps
# ---------------------------------------------------------------------------


def dump_grid(path, values: np.ndarray, box: BoundingBox, **meta) -> None:
    """Write ``values`` row-major to ``path`` with a JSON header at ``path + '.json'``."""
    path = Path(path)
    arr = np.ascontiguousarray(values)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    header = {"dims": list(arr.shape), "dtype": arr.dtype.str, "h": box.h,
              "lo": list(box.lo), "order": "C"}
    header.update(meta)
    arr.tofile(path)
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2, sort_keys=True))


def load_grid(path) -> tuple:
    """Inverse of :func:`dump_grid`; returns ``(array, header)``."""
    header = json.loads(Path(str(path) + ".json").read_text())
    arr = np.fromfile(path, dtype=np.dtype(header["dtype"])).reshape(header["dims"])
    return arr, header
