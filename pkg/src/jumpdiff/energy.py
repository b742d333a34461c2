"""Energy functional with its local/nonlocal/potential split, growth-exponent
fits, the logarithmic cutoff, the six-region pair decomposition with its
cutoff integrals, and the stability (Poincare-type) inequality evaluator.

Pair-domain convention: the energy's nonlocal part integrates over ordered
pairs with at least one point in the ball, so in-in pairs are counted from
both endpoints and in-out pairs are doubled.  The same bookkeeping is used in
the Poincare evaluator so both sides of the inequality share one quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grids import (ConstTail, GridFn, Grid1D, Grid2D, GridError, ReplicateTail,
                    ball_mask, centered_gradient, node_measure, sz_geometry,
                    default_g_tol)
from .kernels import (KernelSpec, QuadratureTable, Segment, dimension_of,
                      mass_beyond, second_moment_within, segments)
from .operators import OperatorHandle, OperatorError
from .solver import Nonlinearity


# ---------------------------------------------------------------------------
# energy split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyReport:
    R: float
    sob_local: float
    sob_nonlocal: float
    pot: float

    @property
    def total(self) -> float:
        return self.sob_local + self.sob_nonlocal + self.pot


def _tails_pair(u: GridFn):
    if u.ndim == 1:
        return u.tails.left, u.tails.right
    raise OperatorError("1D tails requested from a 2D function")


def energy(u: GridFn, op: OperatorHandle, nl: Nonlinearity, R: float) -> EnergyReport:
    """Energy over B_R: (1/2) int_{B_R} |grad u|^2 (when the operator has a
    local part) + (c/2) * pair energy over pairs meeting B_R + int_{B_R} F(u).

    Pairs with one endpoint outside the grid use the tail constants; mass
    beyond the quadrature range enters through the closed-form tail masses.
    """
    mask = ball_mask(u.grid, R)
    meas = node_measure(u.grid)
    q = op.quadrature

    pot = float(np.sum(nl.F(u.values)[mask])) * meas

    sob_local = 0.0
    if op.has_local_part:
        grads = centered_gradient(u)
        gsq = sum(g**2 for g in grads)
        sob_local = 0.5 * float(np.sum(gsq[mask])) * meas

    sob_nonlocal = 0.5 * op.c * _pair_energy_in_ball(u, q, mask) * meas
    return EnergyReport(R=R, sob_local=sob_local, sob_nonlocal=sob_nonlocal, pot=pot)


def _pair_energy_in_ball(u: GridFn, q: QuadratureTable, mask: np.ndarray) -> float:
    """sum over ordered pairs (x, y) with x in B and any y of w |u(x)-u(y)|^2,
    doubling pairs whose partner leaves the ball or the grid."""
    if q.ndim == 1:
        K = q.K
        n = u.grid.n_points
        up = u.padded(K)
        uu = u.values
        total = 0.0
        idx = np.arange(n)
        for k in range(1, K + 1):
            w = q.w_eff[k - 1]
            if w == 0.0:
                continue
            for sgn in (1, -1):
                du2 = (uu - up[K + sgn * k:K + sgn * k + n]) ** 2
                j = idx + sgn * k
                partner_in = (j >= 0) & (j < n)
                partner_in_ball = np.zeros(n, dtype=bool)
                partner_in_ball[partner_in] = mask[np.clip(j, 0, n - 1)][partner_in]
                wvec = np.where(partner_in_ball, 1.0, 2.0)
                total += w * float(np.sum((du2 * wvec)[mask]))
        # near-origin pairs: (u')^2 * int_{|z|<h/2} z^2 J, both endpoints in B
        du = np.gradient(u.values, q.h)
        total += 2.0 * q.near_origin_coeff * float(np.sum((du**2)[mask]))
        aL, aR = _tails_pair(u)
        total += 2.0 * 0.5 * q.tail_mass * float(
            np.sum(((uu - aR) ** 2 + (uu - aL) ** 2)[mask]))
        return total
    # 2D
    K = q.K
    n1, n2 = u.values.shape
    up = u.padded(K)
    total = 0.0
    i1, i2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    for (k1, k2), w in zip(q.offsets, q.w):
        if w == 0.0:
            continue
        du2 = (u.values - up[K + k1:K + k1 + n1, K + k2:K + k2 + n2]) ** 2
        j1 = np.clip(i1 + k1, 0, n1 - 1)
        j2 = np.clip(i2 + k2, 0, n2 - 1)
        partner_in = ((i1 + k1 >= 0) & (i1 + k1 < n1)
                      & (i2 + k2 >= 0) & (i2 + k2 < n2))
        partner_in_ball = partner_in & mask[j1, j2]
        wvec = np.where(partner_in_ball, 1.0, 2.0)
        total += w * float(np.sum((du2 * wvec)[mask]))
    g1, g2 = centered_gradient(u)
    total += 2.0 * q.near_origin_coeff * float(np.sum((g1**2 + g2**2)[mask])) / 2.0 * 2.0 / 2.0
    if q.tail_mass > 0.0:
        from .operators import _tail_constant_2d
        a = _tail_constant_2d(u)
        if a is None:
            raise OperatorError("2D tail energy needs equal constant tails")
        total += 2.0 * q.tail_mass * float(np.sum(((u.values - a) ** 2)[mask]))
    return total


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares fit of log(total energy) against log R."""

    exponent: float
    intercept: float
    rms_residual: float
    radii: tuple[float, ...]
    totals: tuple[float, ...]
    log_deflated: tuple[float, ...]   # total / (R^{n-1} log R), for order-one orders

    def deflated_ratio(self) -> float:
        lo, hi = min(self.log_deflated), max(self.log_deflated)
        return hi / lo if lo > 0 else math.inf


def energy_scan(u: GridFn, op: OperatorHandle, nl: Nonlinearity,
                radii) -> SlopeFit:
    radii = sorted(float(r) for r in radii)
    if len(radii) < 4:
        raise GridError("energy_scan needs at least 4 radii")
    totals = [energy(u, op, nl, R).total for R in radii]
    if min(totals) <= 0:
        raise GridError("nonpositive energy total; cannot fit a log-log slope")
    n = u.grid.ndim
    lr = np.log(radii)
    lt = np.log(totals)
    slope, intercept = np.polyfit(lr, lt, 1)
    resid = lt - (slope * lr + intercept)
    deflated = tuple(t / (R ** (n - 1) * math.log(R)) for t, R in zip(totals, radii))
    return SlopeFit(exponent=float(slope), intercept=float(intercept),
                    rms_residual=float(np.sqrt(np.mean(resid**2))),
                    radii=tuple(radii), totals=tuple(totals),
                    log_deflated=deflated)


# ---------------------------------------------------------------------------
# logarithmic cutoff and the pair-region decomposition
# ---------------------------------------------------------------------------

def log_cutoff_radial(r: np.ndarray, R: float) -> np.ndarray:
    """1/2 on r <= sqrt(R); (log R - log r)/log R on sqrt(R) < r < R; 0 beyond."""
    if R <= 1.0:
        raise GridError("log cutoff needs R > 1")
    r = np.asarray(r, dtype=float)
    rs = np.maximum(r, 1e-300)
    mid = (math.log(R) - np.log(rs)) / math.log(R)
    out = np.where(r <= math.sqrt(R), 0.5, np.where(r < R, mid, 0.0))
    return out


def log_cutoff(grid: Grid1D | Grid2D, R: float) -> GridFn:
    if grid.ndim == 1:
        vals = log_cutoff_radial(np.abs(grid.nodes()), R)
        return GridFn(grid, vals, ConstTail(0.0, 0.0))
    vals = log_cutoff_radial(grid.radii(), R)
    return GridFn(grid, vals, (ConstTail(0.0, 0.0), ConstTail(0.0, 0.0)))


@dataclass(frozen=True)
class GammaDecomposition:
    """Symmetric six-region partition of pair space by annular position.

    With B = ball(r_inner), S = shell, O = exterior of ball(r_outer), the
    regions (as unordered pair classes, so the union is all of R^n x R^n):
      1: B-S   2: S-S   3: O-S   4: B-O   5: B-B   6: O-O
    """

    r_inner: float
    r_outer: float

    def __post_init__(self):
        if not 0 < self.r_inner < self.r_outer:
            raise GridError("need 0 < r_inner < r_outer")

    def _zone(self, r: np.ndarray) -> np.ndarray:
        return np.where(r < self.r_inner, 0, np.where(r < self.r_outer, 1, 2))

    def region_index(self, x, y) -> np.ndarray:
        """1..6 for pairs of points (arrays with last dim = n, or scalars in 1D)."""
        rx = _norm(x)
        ry = _norm(y)
        zx, zy = self._zone(rx), self._zone(ry)
        lo = np.minimum(zx, zy)
        hi = np.maximum(zx, zy)
        table = {(0, 1): 1, (1, 1): 2, (1, 2): 3, (0, 2): 4, (0, 0): 5, (2, 2): 6}
        out = np.zeros(np.broadcast(lo, hi).shape, dtype=int)
        for (a, b), idx in table.items():
            out = np.where((lo == a) & (hi == b), idx, out)
        return out


def _norm(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim >= 1 and x.shape[-1] == 2:
        return np.hypot(x[..., 0], x[..., 1])
    return np.abs(x)


# -- Monte Carlo cutoff integrals -------------------------------------------

@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float
    exact: bool = False

    def upper3(self) -> float:
        return self.value + 3.0 * self.stderr

    def lower3(self) -> float:
        return self.value - 3.0 * self.stderr


@dataclass(frozen=True)
class CutoffIntegrals:
    """I_i(R) (short pairs, |x-y| <= delta0) and Ibar_i(R) (long pairs) for the
    log-cutoff tested against one kernel, regions i = 1..6."""

    R: float
    delta0: float
    short: dict
    long: dict


def _split_radius(spec: KernelSpec) -> float:
    radii = [seg.hi for seg in segments(spec) if seg.hi < math.inf]
    lo_starts = [seg.lo for seg in segments(spec) if seg.lo > 0.0]
    cands = radii + lo_starts
    if not cands:
        raise GridError("cutoff integrals need a kernel with a finite range scale")
    return min(cands)


class _RadialSampler:
    """Inverse-CDF sampler for piecewise power-law radial densities
    rho ~ amp * rho^p on [lo, hi) pieces."""

    def __init__(self, pieces: list[tuple[float, float, float, float]]):
        # pieces: (lo, hi, amp, p); hi may be inf if p < -1
        self.pieces = pieces
        self.masses = np.array([self._piece_mass(*pc) for pc in pieces])
        self.total = float(np.sum(self.masses))
        if self.total <= 0:
            raise GridError("empty radial proposal")

    @staticmethod
    def _piece_mass(lo, hi, amp, p):
        if p == -1.0:
            return amp * math.log(hi / lo)
        q = p + 1.0
        top = hi ** q if math.isfinite(hi) else (0.0 if q < 0 else math.inf)
        return amp * (top - lo ** q) / q

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        probs = self.masses / self.total
        idx = rng.choice(len(self.pieces), size=size, p=probs)
        u = rng.random(size)
        out = np.empty(size)
        for j, (lo, hi, amp, p) in enumerate(self.pieces):
            sel = idx == j
            if not np.any(sel):
                continue
            q = p + 1.0
            if p == -1.0:
                out[sel] = lo * (hi / lo) ** u[sel]
            else:
                top = hi ** q if math.isfinite(hi) else 0.0
                out[sel] = (lo ** q + u[sel] * (top - lo ** q)) ** (1.0 / q)
        return out


def _jump_proposal(spec: KernelSpec, band: str, delta0: float) -> tuple[_RadialSampler, float, str]:
    """Radial proposal for the jump length.

    Short band: density prop. to rho^2 * J * rho^{n-1} (second moment), weight
    [d eta]^2 / rho^2, normalization S2 = int_{|z|<=delta0} |z|^2 J.
    Long band: density prop. to J * rho^{n-1} (plain mass), weight [d eta]^2,
    normalization the mass beyond delta0.
    """
    n = dimension_of(spec)
    pieces = []
    for seg in segments(spec):
        if seg.callable_amp:
            raise GridError("Monte Carlo cutoff integrals need constant-profile kernels")
        extra = 2.0 if band == "short" else 0.0
        p = extra + n - 1 - n - seg.s  # rho-power of the density
        lo = max(seg.lo, 0.0 if band == "short" else delta0)
        hi = min(seg.hi, delta0 if band == "short" else math.inf)
        if hi > lo:
            pieces.append((lo, hi, seg.amp, p))
    sampler = _RadialSampler(pieces)
    surf = 2.0 * math.pi if n == 2 else 2.0
    norm = sampler.total * surf
    return sampler, norm, band


def _sample_annulus(rng, n_samples, a, b):
    rho = np.sqrt(a**2 + rng.random(n_samples) * (b**2 - a**2))
    th = rng.random(n_samples) * 2.0 * math.pi
    return np.stack([rho * np.cos(th), rho * np.sin(th)], axis=1)


def cutoff_pair_integrals(spec: KernelSpec, R: float, n_samples: int = 200_000,
                          seed: int = 0) -> CutoffIntegrals:
    """Monte Carlo values of the cutoff pair integrals over the six regions of
    the (sqrt R, R) decomposition, split at the kernel's range scale delta0.

    Regions 5 and 6 vanish identically (the cutoff difference is zero there)
    and are returned as exact zeros; region 4's short part is exactly zero
    once R - sqrt(R) > delta0 because the two factors are farther apart than
    the kernel range.
    """
    if dimension_of(spec) != 2:
        raise GridError("cutoff pair integrals are a 2D diagnostic")
    delta0 = _split_radius(spec)
    r_in = math.sqrt(R)
    r_out = R
    if not r_in > delta0:
        raise GridError("need sqrt(R) > delta0")
    rng = np.random.default_rng(seed)
    eta = lambda pts: log_cutoff_radial(np.hypot(pts[:, 0], pts[:, 1]), R)

    def area(a, b):
        return math.pi * (b**2 - a**2)

    def run(band: str, x_lo: float, x_hi: float, accept, double: bool) -> McEstimate:
        sampler, norm, _ = _jump_proposal(spec, band, delta0)
        if norm <= 0:
            return McEstimate(0.0, 0.0, exact=True)
        x = _sample_annulus(rng, n_samples, x_lo, x_hi)
        rho = sampler.sample(rng, n_samples)
        th = rng.random(n_samples) * 2.0 * math.pi
        z = np.stack([rho * np.cos(th), rho * np.sin(th)], axis=1)
        y = x + z
        ry = np.hypot(y[:, 0], y[:, 1])
        ind = accept(ry)
        deta2 = (eta(x) - eta(y)) ** 2
        g = np.where(ind, deta2, 0.0)
        if band == "short":
            g = g / rho**2
        pref = (2.0 if double else 1.0) * area(x_lo, x_hi) * norm
        vals = pref * g
        return McEstimate(float(np.mean(vals)),
                          float(np.std(vals) / math.sqrt(n_samples)))

    shell = lambda ry: (ry >= r_in) & (ry < r_out)
    outside = lambda ry: ry >= r_out

    short: dict[int, McEstimate] = {}
    long_: dict[int, McEstimate] = {}

    long_mass = mass_beyond(spec, delta0)

    # region 1: inner ball vs shell
    short[1] = run("short", max(r_in - delta0, 0.0), r_in, shell, double=True)
    # region 2: shell vs shell
    short[2] = run("short", r_in, r_out, shell, double=False)
    # region 3: exterior vs shell (flipped to shell vs exterior)
    short[3] = run("short", max(r_out - delta0, r_in), r_out, outside, double=True)
    # region 4: inner ball vs exterior
    if r_out - r_in > delta0:
        short[4] = McEstimate(0.0, 0.0, exact=True)
    else:
        short[4] = run("short", max(r_out - delta0, 0.0), r_in, outside, double=True)
    for i in (5, 6):
        short[i] = McEstimate(0.0, 0.0, exact=True)

    if long_mass <= 0.0:
        for i in range(1, 7):
            long_[i] = McEstimate(0.0, 0.0, exact=True)
    else:
        long_[1] = run("long", 0.0, r_in, shell, double=True)
        long_[2] = run("long", r_in, r_out, shell, double=False)
        long_[3] = run("long", r_in, r_out, outside, double=True)
        long_[4] = run("long", 0.0, r_in, outside, double=True)
        long_[5] = McEstimate(0.0, 0.0, exact=True)
        long_[6] = McEstimate(0.0, 0.0, exact=True)

    return CutoffIntegrals(R=R, delta0=delta0, short=short, long=long_)


def gamma_partition_holds(decomp: GammaDecomposition, n_pairs: int = 100_000,
                          seed: int = 0, box: float | None = None) -> bool:
    """Sampled check that exactly one region fires for every pair."""
    rng = np.random.default_rng(seed)
    box = box if box is not None else 3.0 * decomp.r_outer
    x = rng.uniform(-box, box, size=(n_pairs, 2))
    y = rng.uniform(-box, box, size=(n_pairs, 2))
    idx = decomp.region_index(x, y)
    return bool(np.all((idx >= 1) & (idx <= 6)))


# ---------------------------------------------------------------------------
# Poincare-type stability inequality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoincareReport:
    lhs_geometry: float     # curvature + tangential terms
    lhs_coupling: float     # A_y pair term
    rhs_gradient: float     # |grad u|^2 |grad eta|^2
    rhs_coupling: float     # B_y pair term
    g_tol: float

    @property
    def lhs(self) -> float:
        return self.lhs_geometry + self.lhs_coupling

    @property
    def rhs(self) -> float:
        return self.rhs_gradient + self.rhs_coupling

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def _padded_gradients(u: GridFn, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradient components extended K layers past the grid.

    Constant-tail directions zero the gradient beyond the grid (the function
    is constant there); replicate directions copy the edge value.
    """
    g1, g2 = centered_gradient(u)
    out = []
    for g in (g1, g2):
        arr = g
        for axis, tail in enumerate(u.tails):
            pw = [(K, K) if ax == axis else (0, 0) for ax in range(2)]
            mode = "edge" if isinstance(tail, ReplicateTail) else "constant"
            arr = np.pad(arr, pw, mode=mode)
        out.append(arr)
    return out[0], out[1]


def poincare_check(u: GridFn, op: OperatorHandle, eta: GridFn,
                   g_tol: float | None = None) -> PoincareReport:
    """Both sides of the stability inequality for a solution u and cutoff eta.

    lhs: Sternberg-Zumbrun geometry term on {|grad u| > g_tol} plus the
    gradient-misalignment pair term A_y weighted by eta^2(x) + eta^2(y);
    rhs: |grad u|^2 |grad eta|^2 plus the |grad u||grad u(y)| pair term
    weighted by the squared cutoff difference.  One shared quadrature table
    supplies every pair weight; near-origin pair mass is omitted from both
    sides (it is O(h^2) ring mass and enters both sides with the same sign).
    """
    if u.ndim != 2:
        raise GridError("poincare_check requires 2D data")
    if eta.grid != u.grid:
        raise GridError("cutoff must live on the solution grid")
    q = op.quadrature
    if g_tol is None:
        g_tol = default_g_tol(u)
    meas = node_measure(u.grid)
    K = q.K
    n1, n2 = u.values.shape

    geom = sz_geometry(u, g_tol)
    eta2 = eta.values**2
    lhs_geometry = float(np.sum(geom.sz_sum * eta2)) * meas

    deta = centered_gradient(eta)
    g1, g2 = centered_gradient(u)
    gsq = g1**2 + g2**2
    rhs_gradient = float(np.sum(gsq * (deta[0]**2 + deta[1]**2))) * meas

    g1p, g2p = _padded_gradients(u, K)
    mag = np.hypot(g1, g2)
    magp = np.hypot(g1p, g2p)
    etap = np.pad(eta.values, K, mode="constant")

    i1, i2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    lhs_pair = 0.0
    rhs_pair = 0.0
    for (k1, k2), w in zip(q.offsets, q.w):
        if w == 0.0:
            continue
        sl = (slice(K + k1, K + k1 + n1), slice(K + k2, K + k2 + n2))
        g1y, g2y, magy, etay = g1p[sl], g2p[sl], magp[sl], etap[sl]
        A = mag * magy - (g1 * g1y + g2 * g2y)
        B = mag * magy
        wA = A * (eta2 + etay**2)
        wB = B * (eta.values - etay) ** 2
        outside = ((i1 + k1 < 0) | (i1 + k1 >= n1) | (i2 + k2 < 0) | (i2 + k2 >= n2))
        lhs_pair += w * (float(np.sum(wA)) + float(np.sum(wA[outside])))
        rhs_pair += w * (float(np.sum(wB)) + float(np.sum(wB[outside])))
    lhs_coupling = 0.5 * op.c * lhs_pair * meas
    rhs_coupling = 0.5 * op.c * rhs_pair * meas
    return PoincareReport(lhs_geometry=lhs_geometry, lhs_coupling=lhs_coupling,
                          rhs_gradient=rhs_gradient, rhs_coupling=rhs_coupling,
                          g_tol=g_tol)
