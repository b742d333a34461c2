"""Damped Newton solver for Delta u + c L[u] + f(u) = 0, the linearized
Dirichlet eigenvalue diagnostics, the stability quadratic form, and the
quotient-equation residual.

The linearized operator restricted to a ball with zero exterior condition is
assembled from the same matrix as the Newton Jacobian, so the eigenvalue
diagnostics measure the discrete system the solver actually solved: a
monotone discrete layer is a critical point of the discrete energy, which is
what makes the nonnegativity of lambda_1 a sharp, testable statement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import ConstTail, GridFn, ball_mask, node_measure
from .kernels import QuadratureTable
from .operators import (OperatorHandle, OperatorError, apply_generator, apply_L,
                        dirichlet_form, _grad_pair_sum, _pair_form, operator_matrix)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Nonlinearity:
    """Reaction term f with derivative, the double-well F (antiderivative of -f),
    and the well constants where F vanishes."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    fprime: Callable[[np.ndarray], np.ndarray]
    F: Callable[[np.ndarray], np.ndarray]
    wells: tuple[float, float]

    def validate(self, samples: Optional[np.ndarray] = None) -> None:
        """Check F' = -f by central differences and F(wells) = 0."""
        if samples is None:
            samples = np.linspace(-1.5, 1.5, 11)
        eps = 1e-6
        dF = (self.F(samples + eps) - self.F(samples - eps)) / (2 * eps)
        err = np.max(np.abs(dF + self.f(samples)))
        if err > 1e-7 * max(1.0, float(np.max(np.abs(self.f(samples))))):
            raise SolverError(f"F is not an antiderivative of -f (defect {err:g})")
        for w in self.wells:
            if abs(float(self.F(np.asarray(w)))) > 1e-12:
                raise SolverError(f"F({w}) = {float(self.F(np.asarray(w))):g} != 0")


def allen_cahn() -> Nonlinearity:
    """f(u) = u - u^3 with F(u) = (1 - u^2)^2 / 4 and wells at +-1."""
    nl = Nonlinearity(
        name="allen_cahn",
        f=lambda u: u - u**3,
        fprime=lambda u: 1.0 - 3.0 * u**2,
        F=lambda u: 0.25 * (1.0 - u**2) ** 2,
        wells=(-1.0, 1.0),
    )
    nl.validate()
    return nl


def ground_state() -> Nonlinearity:
    """f(u) = u^3 - u with F(u) = u^2/2 - u^4/4; single well at 0 (radial
    bubble solutions decaying to 0)."""
    nl = Nonlinearity(
        name="ground_state",
        f=lambda u: u**3 - u,
        fprime=lambda u: 3.0 * u**2 - 1.0,
        F=lambda u: 0.5 * u**2 - 0.25 * u**4,
        wells=(0.0, 0.0),
    )
    nl.validate()
    return nl


NONLINEARITIES = {"allen_cahn": allen_cahn, "ground_state": ground_state}


@dataclass
class SolveReport:
    solution: GridFn
    newton_iterations: int
    final_residual: float
    monotone: bool
    converged: bool


def equation_residual(u: GridFn, op: OperatorHandle, nl: Nonlinearity) -> np.ndarray:
    """G(u) = Delta u + c L[u] + f(u) (generator plus reaction)."""
    return apply_generator(u, op).values + nl.f(u.values)


def _monotone_flag(u: GridFn) -> bool:
    m_tol = 1e-10 * max(1.0, float(np.max(np.abs(u.values))))
    if u.ndim == 1:
        d = np.diff(u.values)
        return bool(np.all(d > -m_tol) or np.all(d < m_tol))
    for axis in (0, 1):
        d = np.diff(u.values, axis=axis)
        if np.all(d > -m_tol) or np.all(d < m_tol):
            return True
    return False


def solve_layer(op: OperatorHandle, nl: Nonlinearity, init: GridFn,
                tol: float = 1e-10, max_iter: int = 50) -> SolveReport:
    """Damped Newton iteration on G(u) = Delta u + cL[u] + f(u).

    Dense factorization for coupled nonlocal Jacobians, sparse for the purely
    local case; the step is halved up to 8 times when the max-norm residual
    does not decrease.  A singular Jacobian gets one Tikhonov-shifted retry.
    """
    if tol <= 0:
        raise SolverError("tolerance must be positive")
    grid = init.grid
    u = init.values.copy()
    tails = init.tails
    G = equation_residual(GridFn(grid, u, tails), op, nl)
    res = float(np.max(np.abs(G)))
    if res <= tol:
        fn = GridFn(grid, u, tails)
        return SolveReport(fn, 0, res, _monotone_flag(fn), True)

    M = operator_matrix(op, grid, tails if grid.ndim == 2 else None)
    use_sparse = op.c == 0.0 and grid.ndim == 2
    if not use_sparse:
        M_dense = M.toarray()

    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        fp = nl.fprime(u).ravel()
        try:
            if use_sparse:
                J = M + sp.diags(fp)
                delta = spla.spsolve(J.tocsc(), -G.ravel())
            else:
                J = M_dense + np.diag(fp)
                delta = _dense_solve(J, -G.ravel())
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SolverError(f"Jacobian solve failed: {exc}") from exc
        delta = delta.reshape(u.shape)
        step = 1.0
        best = None
        for _ in range(9):
            cand = u + step * delta
            Gc = equation_residual(GridFn(grid, cand, tails), op, nl)
            rc = float(np.max(np.abs(Gc)))
            if best is None or rc < best[0]:
                best = (rc, cand, Gc)
            if rc < res:
                break
            step *= 0.5
        res, u, G = best
        if res <= tol:
            converged = True
            break
    fn = GridFn(grid, u, tails)
    return SolveReport(fn, it, res, _monotone_flag(fn), converged)


def _dense_solve(J: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(J, rhs)
    except np.linalg.LinAlgError:
        # single Tikhonov-shifted retry before giving up
        shifted = J + 1e-10 * np.eye(J.shape[0])
        return np.linalg.solve(shifted, rhs)


# ---------------------------------------------------------------------------
# linearized eigenvalue diagnostics
# ---------------------------------------------------------------------------

@dataclass
class StabilityReport:
    R: float
    lambda1: float
    eigenfunction: GridFn
    eigen_residual: float
    method: str


def restricted_linearized_matrix(op: OperatorHandle, nl: Nonlinearity, u: GridFn,
                                 R: float) -> tuple[np.ndarray, np.ndarray]:
    """A = T - f'(u) restricted to the nodes of B_R with zero exterior data.

    Dropping exterior columns while keeping the full-mass diagonal is exactly
    the zero-exterior condition for the nonlocal part.
    """
    mask = ball_mask(u.grid, R)
    idx = np.flatnonzero(mask.ravel())
    M = operator_matrix(op, u.grid, u.tails if u.ndim == 2 else None)
    A = -M[idx][:, idx].toarray()
    A -= np.diag(nl.fprime(u.values.ravel()[idx]))
    asym = float(np.max(np.abs(A - A.T)))
    if asym > 1e-10 * max(1.0, float(np.max(np.abs(A)))):
        raise OperatorError("restricted linearized operator is not symmetric")
    A = 0.5 * (A + A.T)
    return A, idx


def _smallest_eig_inverse_iteration(A: np.ndarray):
    """Smallest eigenpair by shifted inverse iteration with a Rayleigh update.

    The final minimality certificate is a Cholesky check of A - (lam - eps) I;
    stagnation or a failed certificate falls back to a dense symmetric solve.
    """
    n = A.shape[0]
    d = np.diag(A)
    radius = np.sum(np.abs(A), axis=1) - np.abs(d)
    sigma = float(np.min(d - radius)) - 1.0
    scale = float(np.max(np.abs(A))) + 1.0
    v = np.ones(n) / np.sqrt(n)
    lam = None
    for it in range(100):
        try:
            lu, piv = sla.lu_factor(A - sigma * np.eye(n))
            w = sla.lu_solve((lu, piv), v)
        except (np.linalg.LinAlgError, ValueError):
            return None
        nw = np.linalg.norm(w)
        if not np.isfinite(nw) or nw == 0.0:
            return None
        w /= nw
        lam_new = float(w @ (A @ w))
        resid = float(np.linalg.norm(A @ w - lam_new * w))
        if resid < 1e-11 * scale:
            eps = max(10 * resid, 1e-12 * scale)
            try:
                np.linalg.cholesky(A - (lam_new - eps) * np.eye(n))
            except np.linalg.LinAlgError:
                return None  # not certified smallest
            return lam_new, w, resid
        if lam is not None and abs(lam_new - lam) < 1e-14 * scale and it > 20:
            return None  # stagnation
        lam = lam_new
        # move the shift toward (but strictly below) the current estimate
        sigma = lam_new - max(resid, 1e-8 * scale)
        v = w
    return None


def linearized_eigen(op: OperatorHandle, nl: Nonlinearity, u: GridFn,
                     R: float) -> StabilityReport:
    """Ground state of T - f'(u) on B_R with zero exterior condition."""
    A, idx = restricted_linearized_matrix(op, nl, u, R)
    out = _smallest_eig_inverse_iteration(A)
    if out is not None:
        lam, w, resid = out
        method = "inverse_iteration"
    else:
        vals, vecs = sla.eigh(A, subset_by_index=[0, 0])
        lam, w = float(vals[0]), vecs[:, 0]
        resid = float(np.linalg.norm(A @ w - lam * w))
        method = "dense_eigh"
    if float(np.sum(w)) < 0:
        w = -w
    meas = node_measure(u.grid)
    w = w / (np.linalg.norm(w) * np.sqrt(meas))
    full = np.zeros(u.values.size)
    full[idx] = w
    if u.ndim == 1:
        efn = GridFn(u.grid, full, ConstTail(0.0, 0.0))
    else:
        efn = GridFn(u.grid, full.reshape(u.values.shape),
                     (ConstTail(0.0, 0.0), ConstTail(0.0, 0.0)))
    return StabilityReport(R=R, lambda1=lam, eigenfunction=efn,
                           eigen_residual=resid, method=method)


def stability_quadratic_form(op: OperatorHandle, nl: Nonlinearity, u: GridFn,
                             zeta: GridFn) -> float:
    """Second-variation gap at u tested with zeta:
    (1/2) int |grad zeta|^2 + (c/2) pair term - int f'(u) zeta^2.
    Nonnegative for every compactly supported zeta iff u is stable."""
    total = 0.0
    if op.has_local_part:
        total += 0.5 * _grad_pair_sum(zeta, zeta)
    total += 0.5 * op.c * _pair_form(zeta, zeta, op.quadrature)
    meas = node_measure(u.grid)
    total -= float(np.sum(nl.fprime(u.values) * zeta.values**2)) * meas
    return total


# ---------------------------------------------------------------------------
# quotient equation (linearized-equation ratio)
# ---------------------------------------------------------------------------

def quotient_residual(phi: GridFn, psi: GridFn, q: QuadratureTable,
                      c: float = 1.0, interior_margin: float | None = None) -> float:
    """Max-norm residual of
      div(phi^2 grad sigma) + c phi(x) int (sigma(y)-sigma(x)) phi(y) J dy = 0
    for sigma = psi / phi, with the nonlocal term evaluated through
    phi (L[psi] - sigma L[phi]), which is the same sum rearranged.

    Evaluated on nodes at least ``interior_margin`` from the boundary
    (default: the kernel support radius plus two cells).
    """
    if phi.grid != psi.grid:
        raise OperatorError("grid mismatch")
    if float(np.min(np.abs(phi.values))) < 1e-12:
        raise SolverError("phi vanishes (below 1e-12) somewhere on the grid")
    sigma = psi.values / phi.values

    Lpsi = apply_L(psi, q).values
    Lphi = apply_L(phi, q).values
    nonlocal_term = phi.values * (Lpsi - sigma * Lphi)

    local_term = _div_phi2_grad(phi, sigma)
    resid = local_term + c * nonlocal_term

    if interior_margin is None:
        from .kernels import segments
        import math
        support = max((s.hi for s in segments(q.spec) if s.hi < math.inf),
                      default=q.K * q.h)
        interior_margin = support + 2.0 * q.h
    if phi.ndim == 1:
        x = phi.grid.nodes()
        keep = np.abs(x) <= phi.grid.half_width - interior_margin
    else:
        x1, x2 = phi.grid.meshgrid()
        keep = ((np.abs(x1) <= phi.grid.half_widths[0] - interior_margin)
                & (np.abs(x2) <= phi.grid.half_widths[1] - interior_margin))
    if not np.any(keep):
        raise SolverError("interior margin leaves no evaluation nodes")
    return float(np.max(np.abs(resid[keep])))


def _div_phi2_grad(phi: GridFn, sigma: np.ndarray) -> np.ndarray:
    """Conservative div(phi^2 grad sigma) with edge-replicated ghosts."""
    p2 = phi.values**2
    if phi.ndim == 1:
        h = phi.grid.h
        p2p = np.pad(p2, 1, mode="edge")
        sp_ = np.pad(sigma, 1, mode="edge")
        mu = 0.5 * (p2p[1:] + p2p[:-1])
        flux = mu * np.diff(sp_) / h
        return np.diff(flux) / h
    out = np.zeros_like(sigma)
    for axis, h in zip((0, 1), phi.grid.spacings):
        pw = [(1, 1) if ax == axis else (0, 0) for ax in range(2)]
        p2p = np.pad(p2, pw, mode="edge")
        sp_ = np.pad(sigma, pw, mode="edge")
        mu = 0.5 * (p2p + np.roll(p2p, -1, axis=axis))
        flux = (np.roll(sp_, -1, axis=axis) - sp_) / h * mu
        dflux = (flux - np.roll(flux, 1, axis=axis)) / h
        sl = [slice(1, -1) if ax == axis else slice(None) for ax in range(2)]
        out += dflux[tuple(sl)]
    return out
