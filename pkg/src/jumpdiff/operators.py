"""Discrete application of L and T = -Delta - cL, the Dirichlet form, and the
operator identities (summation by parts, nonlocal product rule).

The principal value is realized through the symmetrized second difference
u(x+z) + u(x-z) - 2u(x), which is the standard PV regularization for even
kernels.  Far-field handling: ghost neighbours inside the table range come
from the declared tails; mass beyond the table range is paired with the tail
constants through a closed-form tail correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .grids import ConstTail, GridFn, Grid1D, Grid2D, GridError, ReplicateTail, node_measure
from .kernels import QuadratureTable, QuadratureTable1D, QuadratureTable2D


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorHandle:
    """The operator Delta + cL (mode 'delta_plus_L') or plain L (mode 'L_only'),
    backed by one quadrature table."""

    quadrature: QuadratureTable
    c: float
    mode: Literal["delta_plus_L", "L_only"] = "delta_plus_L"

    def __post_init__(self):
        if self.c < 0:
            raise OperatorError("coupling c must be nonnegative")
        if self.mode not in ("delta_plus_L", "L_only"):
            raise OperatorError(f"unknown mode {self.mode!r}")

    @property
    def has_local_part(self) -> bool:
        return self.mode == "delta_plus_L"


def _check_grid(u: GridFn, q: QuadratureTable):
    if u.ndim != q.ndim:
        raise OperatorError("grid function and quadrature table dimensions differ")
    h = u.grid.h
    if abs(h - q.h) > 1e-12 * h:
        raise OperatorError(f"grid spacing {h} does not match table spacing {q.h}")


def _tail_values_1d(u: GridFn) -> tuple[float, float]:
    t = u.tails
    return t.left, t.right


def apply_L(u: GridFn, q: QuadratureTable) -> GridFn:
    """L[u] at every node: weighted symmetrized second differences, plus the
    near-origin second-difference term and the beyond-range tail correction."""
    _check_grid(u, q)
    if q.ndim == 1:
        return _apply_L_1d(u, q)
    return _apply_L_2d(u, q)


def _apply_L_1d(u: GridFn, q: QuadratureTable1D) -> GridFn:
    K, h = q.K, q.h
    up = u.padded(K)
    w = q.w_eff
    # symmetric kernel [w_K..w_1, 0, w_1..w_K]; correlate gives
    # sum_k w_k (u_{i+k} + u_{i-k}) at every node
    kern = np.concatenate([w[::-1], [0.0], w])
    neigh = np.correlate(up, kern, mode="valid")
    out = neigh - 2.0 * np.sum(w) * u.values
    up1 = u.padded(1)
    d2 = (up1[2:] + up1[:-2] - 2.0 * u.values) / h**2
    out += q.near_origin_coeff * d2
    aL, aR = _tail_values_1d(u)
    out += 0.5 * q.tail_mass * ((aR - u.values) + (aL - u.values))
    return GridFn(u.grid, out, ConstTail(0.0, 0.0))


def _tail_constant_2d(u: GridFn) -> float | None:
    """Single far-field constant, required only when the table has tail mass."""
    consts = [t for t in u.tails if isinstance(t, ConstTail)]
    if len(consts) == 2 and all(t.left == t.right for t in consts) \
            and consts[0].left == consts[1].left:
        return consts[0].left
    return None


def _apply_L_2d(u: GridFn, q: QuadratureTable2D) -> GridFn:
    K, h = q.K, q.h
    up = u.padded(K)
    n1, n2 = u.values.shape
    out = -(float(np.sum(q.w)) + q.tail_mass) * u.values
    for (k1, k2), w in zip(q.offsets, q.w):
        if w == 0.0:
            continue
        out = out + w * up[K + k1:K + k1 + n1, K + k2:K + k2 + n2]
    d2 = _laplacian_values(u)
    out += q.near_origin_coeff * d2
    if q.tail_mass > 0.0:
        a = _tail_constant_2d(u)
        if a is None:
            raise OperatorError("2D tail correction needs equal constant tails on both axes")
        out += q.tail_mass * a
    tails = tuple(t if isinstance(t, ReplicateTail) else ConstTail(0.0, 0.0) for t in u.tails)
    return GridFn(u.grid, out, tails)


def _laplacian_values(u: GridFn) -> np.ndarray:
    from .grids import discrete_laplacian
    return discrete_laplacian(u).values


def apply_T(u: GridFn, op: OperatorHandle) -> GridFn:
    """T[u] = -Delta u - c L[u] (or -c L[u] in L-only mode)."""
    lu = apply_L(u, op.quadrature)
    vals = -op.c * lu.values
    if op.has_local_part:
        vals = vals - _laplacian_values(u)
    return GridFn(u.grid, vals, lu.tails)


def apply_generator(u: GridFn, op: OperatorHandle) -> GridFn:
    """Delta u + c L[u] (the generator, i.e. -T)."""
    t = apply_T(u, op)
    return GridFn(u.grid, -t.values, t.tails)


# ---------------------------------------------------------------------------
# matrix assembly (shared by the Newton solver and the eigen diagnostics)
# ---------------------------------------------------------------------------

def operator_matrix(op: OperatorHandle, grid: Grid1D | Grid2D,
                    tails=None) -> sp.csr_matrix:
    """Linear part of Delta + cL as a sparse matrix on the flattened grid.

    Ghost closure: constant tails contribute only to the affine part (not
    returned; residuals are always evaluated through apply_*), replicate axes
    fold their ghosts back onto edge nodes and are part of the linear map.
    """
    q = op.quadrature
    if isinstance(grid, Grid1D):
        return _matrix_1d(op, grid)
    return _matrix_2d(op, grid, tails)


def _matrix_1d(op: OperatorHandle, grid: Grid1D) -> sp.csr_matrix:
    q: QuadratureTable1D = op.quadrature
    n, h = grid.n_points, grid.h
    K = q.K
    diags: dict[int, float] = {}
    lap_diag = -2.0 / h**2
    if op.has_local_part:
        diags[0] = lap_diag
        diags[1] = 1.0 / h**2
        diags[-1] = 1.0 / h**2
    noc = q.near_origin_coeff / h**2
    mass = 2.0 * float(np.sum(q.w_eff)) + q.tail_mass
    diags[0] = diags.get(0, 0.0) + op.c * (-mass - 2.0 * noc)
    for k in range(1, min(K, n - 1) + 1):
        wk = op.c * (q.w_eff[k - 1] + (noc if k == 1 else 0.0))
        if wk != 0.0:
            diags[k] = diags.get(k, 0.0) + wk
            diags[-k] = diags.get(-k, 0.0) + wk
    offs = sorted(diags)
    return sp.diags([diags[o] for o in offs], offs, shape=(n, n), format="csr")


def _matrix_2d(op: OperatorHandle, grid: Grid2D, tails) -> sp.csr_matrix:
    q: QuadratureTable2D = op.quadrature
    n1, n2 = grid.n_points
    h = grid.h
    N = n1 * n2
    if tails is None:
        raise OperatorError("2D matrix assembly needs the tail modes")
    replicate = [isinstance(t, ReplicateTail) for t in tails]

    idx = np.arange(N).reshape(n1, n2)
    i1, i2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")

    rows, cols, vals = [], [], []

    def add_offset(k1: int, k2: int, w: float):
        """Couple every node to its (k1,k2)-shifted neighbour; replicate axes
        clamp the index, constant axes drop the out-of-grid part (affine)."""
        j1 = i1 + k1
        j2 = i2 + k2
        ok = np.ones((n1, n2), dtype=bool)
        if replicate[0]:
            j1 = np.clip(j1, 0, n1 - 1)
        else:
            ok &= (j1 >= 0) & (j1 < n1)
        if replicate[1]:
            j2 = np.clip(j2, 0, n2 - 1)
        else:
            ok &= (j2 >= 0) & (j2 < n2)
        r = idx[ok]
        c = idx[np.clip(j1, 0, n1 - 1), np.clip(j2, 0, n2 - 1)][ok]
        rows.append(r)
        cols.append(c)
        vals.append(np.full(r.shape, w))

    diag = np.zeros((n1, n2))
    noc = q.near_origin_coeff / h**2
    lap = 1.0 / h**2 if op.has_local_part else 0.0
    for (k1, k2) in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        w = lap + op.c * noc
        if w != 0.0:
            add_offset(k1, k2, w)
        diag -= w
    mass = float(np.sum(q.w)) + q.tail_mass
    diag -= op.c * mass
    for (k1, k2), w in zip(q.offsets, q.w):
        if w != 0.0:
            add_offset(int(k1), int(k2), op.c * w)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    return M


# ---------------------------------------------------------------------------
# Dirichlet form
# ---------------------------------------------------------------------------

def _grad_pair_sum(u: GridFn, v: GridFn) -> float:
    """sum over grid edges (incl. one ghost layer) of D+u * D+v * h^n / h^2,
    the exact summation-by-parts partner of -discrete_laplacian."""
    meas = node_measure(u.grid)
    if u.ndim == 1:
        h = u.grid.h
        du = np.diff(u.padded(1))
        dv = np.diff(v.padded(1))
        return float(np.sum(du * dv)) * meas / h**2
    hx, hy = u.grid.spacings
    upu, upv = u.padded(1), v.padded(1)
    total = 0.0
    d1u = np.diff(upu[:, 1:-1], axis=0)
    d1v = np.diff(upv[:, 1:-1], axis=0)
    total += float(np.sum(d1u * d1v)) / hx**2
    d2u = np.diff(upu[1:-1, :], axis=1)
    d2v = np.diff(upv[1:-1, :], axis=1)
    total += float(np.sum(d2u * d2v)) / hy**2
    return total * meas


def _pair_form(u: GridFn, v: GridFn, q: QuadratureTable) -> float:
    """Nonlocal pair sum  sum_x sum_k w_k [u(x)-u(x+kh)][v(x)-v(x+kh)] h^n,
    with exit pairs (one endpoint off the grid) counted twice so that the sum
    matches the ordered double integral over R^n x R^n, plus the near-origin
    and tail analogues of the operator terms."""
    meas = node_measure(u.grid)
    if q.ndim == 1:
        K, h = q.K, q.h
        n = u.grid.n_points
        upu, upv = u.padded(K), v.padded(K)
        uu, vv = u.values, v.values
        total = 0.0
        for k in range(1, K + 1):
            w = q.w_eff[k - 1]
            if w == 0.0:
                continue
            for sgn in (+1, -1):
                du = uu - upu[K + sgn * k:K + sgn * k + n]
                dv = vv - upv[K + sgn * k:K + sgn * k + n]
                prod = du * dv
                # double the pairs whose partner lies outside the grid
                j = np.arange(n) + sgn * k
                outside = (j < 0) | (j >= n)
                total += w * (np.sum(prod) + np.sum(prod[outside]))
        total += _near_origin_pair(u, v, q)
        aLu, aRu = _tail_values_1d(u)
        aLv, aRv = _tail_values_1d(v)
        # far mass beyond the covered range: one virtual partner per side,
        # exit pairs doubled like above
        total += q.tail_mass * (np.sum((uu - aRu) * (vv - aRv))
                                + np.sum((uu - aLu) * (vv - aLv)))
        return total * meas
    # 2D
    K, h = q.K, q.h
    n1, n2 = u.values.shape
    upu, upv = u.padded(K), v.padded(K)
    total = 0.0
    i1, i2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    for (k1, k2), w in zip(q.offsets, q.w):
        if w == 0.0:
            continue
        du = u.values - upu[K + k1:K + k1 + n1, K + k2:K + k2 + n2]
        dv = v.values - upv[K + k1:K + k1 + n1, K + k2:K + k2 + n2]
        prod = du * dv
        outside = ((i1 + k1 < 0) | (i1 + k1 >= n1) | (i2 + k2 < 0) | (i2 + k2 >= n2))
        total += w * (np.sum(prod) + np.sum(prod[outside]))
    total += _near_origin_pair(u, v, q)
    if q.tail_mass > 0.0:
        au = _tail_constant_2d(u)
        av = _tail_constant_2d(v)
        if au is None or av is None:
            raise OperatorError("2D tail pairs need equal constant tails")
        total += 2.0 * q.tail_mass * np.sum((u.values - au) * (v.values - av))
    return total * meas


def _near_origin_pair(u: GridFn, v: GridFn, q: QuadratureTable) -> float:
    """Pair-form counterpart of the near-origin second-difference term."""
    noc = q.near_origin_coeff
    if noc == 0.0:
        return 0.0
    if q.ndim == 1:
        du = np.diff(u.padded(1))
        dv = np.diff(v.padded(1))
        return 2.0 * noc / q.h**2 * float(np.sum(du * dv))
    total = 0.0
    upu, upv = u.padded(1), v.padded(1)
    d1u = np.diff(upu[:, 1:-1], axis=0)
    d1v = np.diff(upv[:, 1:-1], axis=0)
    d2u = np.diff(upu[1:-1, :], axis=1)
    d2v = np.diff(upv[1:-1, :], axis=1)
    total += float(np.sum(d1u * d1v) + np.sum(d2u * d2v))
    return 2.0 * noc / q.h**2 * total


def dirichlet_form(u: GridFn, v: GridFn, op: OperatorHandle) -> float:
    """I(u, v) = int grad u . grad v + (c/2) double-sum of pair differences.

    Matches sum v T[u] h^n exactly (to roundoff) for compactly supported v.
    """
    if u.grid != v.grid:
        raise OperatorError("grid mismatch between the two arguments")
    total = 0.0
    if op.has_local_part:
        total += _grad_pair_sum(u, v)
    total += 0.5 * op.c * _pair_form(u, v, op.quadrature)
    return total


def check_summation_by_parts(u: GridFn, v: GridFn, op: OperatorHandle) -> float:
    """|sum v T[u] h^n - I(u, v)|; vanishes to roundoff for zero-tail v."""
    meas = node_measure(u.grid)
    lhs = float(np.sum(v.values * apply_T(u, op).values)) * meas
    rhs = dirichlet_form(u, v, op)
    return abs(lhs - rhs)


def check_product_rule(g: GridFn, h_fn: GridFn, q: QuadratureTable) -> float:
    """Max-norm residual of the nonlocal product rule
    L[gh] = g L[h] + h L[g] + int [g(x)-g(y)][h(x)-h(y)] J(x-y) dy
    with every term evaluated through the same quadrature.

    Note the sign: with B(x) = int [g(x)-g(y)][h(x)-h(y)] J dy the identity
    carries +B (take g = h vanishing at x: L[g^2](x) = int g(y)^2 J >= 0 forces
    it), so the vanishing residual is L[gh] - gL[h] - hL[g] - B.
    """
    if g.grid != h_fn.grid:
        raise OperatorError("grid mismatch between the two arguments")
    if g.ndim != 1:
        raise OperatorError("product-rule check is implemented on 1D grids")
    tg, th = g.tails, h_fn.tails
    prod = GridFn(g.grid, g.values * h_fn.values,
                  ConstTail(tg.left * th.left, tg.right * th.right))
    L_prod = apply_L(prod, q).values
    L_g = apply_L(g, q).values
    L_h = apply_L(h_fn, q).values
    B = _pointwise_pair_integral(g, h_fn, q)
    resid = L_prod - g.values * L_h - h_fn.values * L_g - B
    return float(np.max(np.abs(resid)))


def _pointwise_pair_integral(g: GridFn, h_fn: GridFn, q: QuadratureTable1D) -> np.ndarray:
    """B(x) = int [g(x)-g(y)][h(x)-h(y)] J(x-y) dy with the table weights."""
    K, h = q.K, q.h
    n = g.grid.n_points
    gp, hp = g.padded(K), h_fn.padded(K)
    gv, hv = g.values, h_fn.values
    out = np.zeros(n)
    for k in range(1, K + 1):
        w = q.w_eff[k - 1]
        if w == 0.0:
            continue
        out += w * ((gv - gp[K + k:K + k + n]) * (hv - hp[K + k:K + k + n])
                    + (gv - gp[K - k:K - k + n]) * (hv - hp[K - k:K - k + n]))
    # near-origin: same second-difference closure as apply_L
    dgp = np.diff(g.padded(1))
    dhp = np.diff(h_fn.padded(1))
    out += q.near_origin_coeff / h**2 * (dgp[1:] * dhp[1:] + dgp[:-1] * dhp[:-1])
    aLg, aRg = _tail_values_1d(g)
    aLh, aRh = _tail_values_1d(h_fn)
    out += 0.5 * q.tail_mass * ((gv - aRg) * (hv - aRh) + (gv - aLg) * (hv - aLh))
    return out
