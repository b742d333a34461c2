"""Uniform grids, grid functions with far-field tails, and discrete calculus.

Grid functions carry declared far-field behaviour so that nonlocal operators
can account for the part of the integral that falls outside the computational
window.  In 1D a tail is a pair of constants (left/right limit).  In 2D each
axis independently declares either constant limits or edge replication; the
latter is the exact closure for profiles that do not vary along that axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

EPS_CLIP = 1e-9


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Uniform symmetric 1D grid with an odd point count (x=0 is a node)."""

    half_width: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 3:
            raise GridError(f"need n_points >= 3, got {self.n_points}")
        if self.n_points % 2 == 0:
            raise GridError(f"n_points must be odd so that x=0 is a node, got {self.n_points}")
        if not self.half_width > 0:
            raise GridError(f"half_width must be positive, got {self.half_width}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @property
    def ndim(self) -> int:
        return 1

    def nodes(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_points)


@dataclass(frozen=True)
class Grid2D:
    """Uniform tensor grid on [-Lx,Lx] x [-Ly,Ly], odd point counts per axis."""

    half_widths: tuple[float, float]
    n_points: tuple[int, int]

    def __post_init__(self):
        for L, n in zip(self.half_widths, self.n_points):
            if n < 3 or n % 2 == 0:
                raise GridError(f"per-axis n_points must be odd and >= 3, got {n}")
            if not L > 0:
                raise GridError(f"half widths must be positive, got {L}")

    @property
    def spacings(self) -> tuple[float, float]:
        return tuple(2.0 * L / (n - 1) for L, n in zip(self.half_widths, self.n_points))

    @property
    def h(self) -> float:
        """Common spacing; raises if the axes are not equally spaced."""
        hx, hy = self.spacings
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise GridError("grid is anisotropic; equal spacings required here")
        return hx

    @property
    def ndim(self) -> int:
        return 2

    def axis_nodes(self, axis: int) -> np.ndarray:
        return np.linspace(-self.half_widths[axis], self.half_widths[axis], self.n_points[axis])

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis_nodes(0), self.axis_nodes(1), indexing="ij")

    def radii(self) -> np.ndarray:
        x1, x2 = self.meshgrid()
        return np.hypot(x1, x2)


Grid = Union[Grid1D, Grid2D]


@dataclass(frozen=True)
class ConstTail:
    """Constant far-field limits on one axis (left = -inf side)."""

    left: float
    right: float


@dataclass(frozen=True)
class ReplicateTail:
    """Edge replication: the function is treated as constant along this axis
    beyond the grid.  Exact for profiles invariant in the axis direction."""


Tail = Union[ConstTail, ReplicateTail]


@dataclass(frozen=True)
class GridFn:
    """Values on a grid plus declared far-field tails.

    1D: ``tails`` is a single ConstTail.
    2D: ``tails`` is one Tail per axis.
    """

    grid: Grid
    values: np.ndarray
    tails: Union[ConstTail, tuple[Tail, Tail]]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        expect = (self.grid.n_points,) if self.grid.ndim == 1 else tuple(self.grid.n_points)
        if v.shape != expect:
            raise GridError(f"values shape {v.shape} does not match grid {expect}")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function values must be finite")
        if self.grid.ndim == 1 and not isinstance(self.tails, ConstTail):
            raise GridError("1D grid functions take a single ConstTail")
        if self.grid.ndim == 2:
            if not (isinstance(self.tails, tuple) and len(self.tails) == 2):
                raise GridError("2D grid functions take one tail per axis")
        # well-normalized profiles must stay inside the wells up to roundoff
        if self._declares_unit_wells() and np.max(np.abs(v)) > 1.0 + EPS_CLIP:
            raise GridError("values exceed declared +-1 tails beyond clip tolerance")

    def _declares_unit_wells(self) -> bool:
        tails = self.tails if self.grid.ndim == 2 else (self.tails,)
        consts = [t for t in tails if isinstance(t, ConstTail)]
        if not consts:
            return False
        return all({t.left, t.right} == {-1.0, 1.0} for t in consts)

    @property
    def ndim(self) -> int:
        return self.grid.ndim

    def with_values(self, values: np.ndarray) -> "GridFn":
        return GridFn(self.grid, values, self.tails)

    def padded(self, width: int) -> np.ndarray:
        """Values extended by ``width`` ghost layers per side using the tails."""
        if self.ndim == 1:
            t = self.tails
            return np.concatenate([
                np.full(width, t.left),
                self.values,
                np.full(width, t.right),
            ])
        out = self.values
        for axis, tail in enumerate(self.tails):
            pw = [(0, 0), (0, 0)]
            pw[axis] = (width, width)
            if isinstance(tail, ConstTail):
                out = np.pad(out, pw, mode="constant", constant_values=0.0)
                sl_l = [slice(None)] * 2
                sl_r = [slice(None)] * 2
                sl_l[axis] = slice(0, width)
                sl_r[axis] = slice(out.shape[axis] - width, out.shape[axis])
                out[tuple(sl_l)] = tail.left
                out[tuple(sl_r)] = tail.right
            else:
                out = np.pad(out, pw, mode="edge")
        return out


def grid_fn_1d(grid: Grid1D, values: np.ndarray, left: float = 0.0, right: float = 0.0) -> GridFn:
    return GridFn(grid, values, ConstTail(left, right))


def sample_1d(grid: Grid1D, f: Callable[[np.ndarray], np.ndarray],
              left: float = 0.0, right: float = 0.0) -> GridFn:
    return grid_fn_1d(grid, f(grid.nodes()), left, right)


def sample_2d(grid: Grid2D, f, tails: tuple[Tail, Tail]) -> GridFn:
    x1, x2 = grid.meshgrid()
    return GridFn(grid, f(x1, x2), tails)


# ---------------------------------------------------------------------------
# discrete calculus
# ---------------------------------------------------------------------------

def discrete_laplacian(u: GridFn) -> GridFn:
    """Second-order centered Laplacian; ghost values come from the tails."""
    if u.ndim == 1:
        h = u.grid.h
        up = u.padded(1)
        lap = (up[2:] + up[:-2] - 2.0 * up[1:-1]) / h**2
        return GridFn(u.grid, lap, ConstTail(0.0, 0.0))
    hx, hy = u.grid.spacings
    up = u.padded(1)
    core = up[1:-1, 1:-1]
    lap = ((up[2:, 1:-1] + up[:-2, 1:-1] - 2.0 * core) / hx**2
           + (up[1:-1, 2:] + up[1:-1, :-2] - 2.0 * core) / hy**2)
    tails = tuple(t if isinstance(t, ReplicateTail) else ConstTail(0.0, 0.0) for t in u.tails)
    return GridFn(u.grid, lap, tails)


def centered_gradient(u: GridFn) -> list[np.ndarray]:
    """Centered first differences per axis, tails supplying ghost neighbors."""
    if u.ndim == 1:
        h = u.grid.h
        up = u.padded(1)
        return [(up[2:] - up[:-2]) / (2.0 * h)]
    hx, hy = u.grid.spacings
    up = u.padded(1)
    g1 = (up[2:, 1:-1] - up[:-2, 1:-1]) / (2.0 * hx)
    g2 = (up[1:-1, 2:] - up[1:-1, :-2]) / (2.0 * hy)
    return [g1, g2]


def _replicate_gradient(arr: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered difference of a derived field, edge-replicated ghosts."""
    ap = np.pad(arr, [(1, 1) if ax == axis else (0, 0) for ax in range(arr.ndim)], mode="edge")
    sl_p = [slice(None)] * arr.ndim
    sl_m = [slice(None)] * arr.ndim
    sl_p[axis] = slice(2, None)
    sl_m[axis] = slice(0, -2)
    return (ap[tuple(sl_p)] - ap[tuple(sl_m)]) / (2.0 * h)


@dataclass(frozen=True)
class LevelSetGeom:
    """Level-set curvature data on the set where the gradient exceeds g_tol.

    ``sz_sum`` is the left side of the Sternberg-Zumbrun identity
    sum_k |grad d_k u|^2 - |grad |grad u||^2, which equals
    |grad u|^2 kappa^2 + |grad_T |grad u||^2 on the included set.
    """

    mask: np.ndarray
    kappa_sq: np.ndarray
    tangential_sq: np.ndarray
    sz_sum: np.ndarray
    g_tol: float


def default_g_tol(u: GridFn) -> float:
    g = centered_gradient(u)
    gmax = max(float(np.max(np.abs(gi))) for gi in g)
    return 1e-8 * gmax if gmax > 0 else 1e-8


def sz_geometry(u: GridFn, g_tol: float | None = None) -> LevelSetGeom:
    """Squared principal curvatures and tangential gradient of |grad u| (2D).

    Both fields are recovered from the left side of the Sternberg-Zumbrun
    identity with centered second differences; nodes with |grad u| <= g_tol
    are excluded.
    """
    if u.ndim != 2:
        raise GridError("sz_geometry requires a 2D grid function")
    if g_tol is None:
        g_tol = default_g_tol(u)
    if not g_tol > 0:
        raise GridError("g_tol must be positive")
    hx, hy = u.grid.spacings
    g1, g2 = centered_gradient(u)
    gnorm = np.hypot(g1, g2)
    mask = gnorm > g_tol

    def grad_of(field):
        return _replicate_gradient(field, hx, 0), _replicate_gradient(field, hy, 1)

    d11, d12 = grad_of(g1)
    d21, d22 = grad_of(g2)
    m1, m2 = grad_of(gnorm)
    sz = d11**2 + d12**2 + d21**2 + d22**2 - (m1**2 + m2**2)
    sz = np.where(mask, np.maximum(sz, 0.0), 0.0)

    with np.errstate(invalid="ignore", divide="ignore"):
        normal_deriv = np.where(mask, (g1 * m1 + g2 * m2) / np.where(mask, gnorm, 1.0), 0.0)
    tang = np.where(mask, np.maximum(m1**2 + m2**2 - normal_deriv**2, 0.0), 0.0)
    tang = np.minimum(tang, sz)
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa_sq = np.where(mask, np.maximum(sz - tang, 0.0) / np.where(mask, gnorm**2, 1.0), 0.0)
    return LevelSetGeom(mask=mask, kappa_sq=kappa_sq, tangential_sq=tang, sz_sum=sz, g_tol=g_tol)


def node_measure(grid: Grid) -> float:
    if grid.ndim == 1:
        return grid.h
    hx, hy = grid.spacings
    return hx * hy


def ball_mask(grid: Grid, R: float) -> np.ndarray:
    if grid.ndim == 1:
        if R > grid.half_width + 1e-12:
            raise GridError(f"R={R} exceeds grid half-width {grid.half_width}")
        return np.abs(grid.nodes()) <= R + 1e-12
    if R > min(grid.half_widths) + 1e-12:
        raise GridError(f"R={R} exceeds grid half-widths {grid.half_widths}")
    return grid.radii() <= R + 1e-12


def ball_integral(u: GridFn, R: float) -> float:
    """Midpoint-rule integral of u over the ball |x| <= R."""
    mask = ball_mask(u.grid, R)
    return float(np.sum(u.values[mask]) * node_measure(u.grid))
