"""Jump-kernel catalog, normalization constants, and singular quadrature.

Every supported kernel is radial and is represented internally as an additive
collection of power-law segments J(z) = amp * |z|^(-n-s) on radial intervals,
with ``amp`` either a constant or a bounded radial profile.  All masses,
moments, and quadrature weights reduce to closed-form radial integrals of the
segments (numeric only for callable profiles), so the principal-value
discretization stays accurate for every family, including orders close to 2.

The quadrature table stores two weight sets per offset cell:

* ``w_raw``  - exact kernel mass of the cell; these satisfy the bookkeeping
  identities (total mass, support, ring decay).
* ``w_eff``  - mass plus first/second exact cell moments transferred onto the
  neighbouring offsets through centered differences.  Applying a kernel by
  cell mass alone pairs the integrand with its cell-center value and leaves an
  O(h^(2-alpha)) defect that is far too large near alpha = 2; the moment
  transfer restores O(h^(3-alpha)) accuracy while keeping the plain
  "weights times second differences" operator shape and nonnegative weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import gamma as _gamma

from .grids import Grid1D, Grid2D, GridError


class KernelError(ValueError):
    pass


def normalization_constant(n: int, alpha: float) -> float:
    """C(n, alpha) = alpha 2^(alpha-1) pi^(-n/2) Gamma((n+alpha)/2) / Gamma(1-alpha/2)."""
    if not 0.0 < alpha < 2.0:
        raise KernelError(f"alpha must lie in (0, 2), got {alpha}")
    return (alpha * 2.0 ** (alpha - 1.0) * math.pi ** (-n / 2.0)
            * _gamma((n + alpha) / 2.0) / _gamma(1.0 - alpha / 2.0))


# ---------------------------------------------------------------------------
# kernel specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fractional:
    """J(z) = C(n, alpha) |z|^(-n-alpha), the fractional-Laplacian kernel."""

    n: int
    alpha: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise KernelError("dimension must be 1 or 2")
        if not 0.0 < self.alpha < 2.0:
            raise KernelError(f"alpha must lie in (0, 2), got {self.alpha}")


@dataclass(frozen=True)
class Truncated:
    """Finite-range kernel, represented by Lam |z|^(-n-alpha) on |z| <= delta0.

    The (lam, beta, delta1) fields carry the two-sided comparability band
    lam |z|^(-n-beta) <= J <= Lam |z|^(-n-alpha) on |z| <= delta1; the
    representative must sit inside the band, which is validated here.
    """

    n: int
    alpha: float
    beta: float
    lam: float
    Lam: float
    delta0: float
    delta1: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0 and 0.0 < self.beta < 2.0):
            raise KernelError("orders must lie in (0, 2)")
        if not (0.0 < self.lam <= self.Lam):
            raise KernelError("need 0 < lam <= Lam")
        if not (0.0 < self.delta1 <= self.delta0):
            raise KernelError("need 0 < delta1 <= delta0")
        # lower bound must hold for the representative on |z| <= delta1
        worst = self.lam * self.delta1 ** (self.alpha - self.beta)
        if worst > self.Lam * (1.0 + 1e-12):
            raise KernelError("two-sided band is empty: lam |z|^(-n-beta) exceeds "
                              "Lam |z|^(-n-alpha) at delta1")


@dataclass(frozen=True)
class Decay:
    """Kernel comparable to a fractional one up to delta0, algebraic decay beyond.

    Representative: Lam |z|^(-n-alpha) on |z| <= delta0, then lam' |z|^(-n-theta)
    with lam' chosen for continuity at delta0, so ring masses realize the decay
    rate D(r) = C r^(-theta) sharply.
    """

    n: int
    alpha: float
    beta: float
    lam: float
    Lam: float
    delta0: float
    theta: float
    C_D: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0 and 0.0 < self.beta < 2.0):
            raise KernelError("orders must lie in (0, 2)")
        if not (0.0 < self.lam <= self.Lam):
            raise KernelError("need 0 < lam <= Lam")
        if self.delta0 <= 0 or self.theta <= 0:
            raise KernelError("need delta0 > 0 and theta > 0")
        if self.C_D is None:
            object.__setattr__(self, "C_D", self.sharp_ring_constant())

    @property
    def outer_amp(self) -> float:
        return self.Lam * self.delta0 ** (self.theta - self.alpha)

    def sharp_ring_constant(self) -> float:
        """Smallest C with ring_mass(r) <= C r^(-theta) for all r > delta0."""
        surf = 2.0 if self.n == 1 else 2.0 * math.pi
        # ring mass of amp*r^(-n-theta) is amp*surf*int_r^{2r} t^(-1-theta) dt
        return self.outer_amp * surf * (1.0 - 2.0 ** (-self.theta)) / self.theta


@dataclass(frozen=True)
class Elliptic:
    """J(z) = c(|z|) |z|^(-n-alpha) with lam <= c <= Lam; default c = (lam+Lam)/2."""

    n: int
    alpha: float
    lam: float
    Lam: float
    profile: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise KernelError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not (0.0 < self.lam <= self.Lam):
            raise KernelError("need 0 < lam <= Lam")


@dataclass(frozen=True)
class SumKernel:
    first: "KernelSpec"
    second: "KernelSpec"

    def __post_init__(self):
        if dimension_of(self.first) != dimension_of(self.second):
            raise KernelError("summed kernels must share the ambient dimension")


KernelSpec = Union[Fractional, Truncated, Decay, Elliptic, SumKernel]


def dimension_of(spec: KernelSpec) -> int:
    if isinstance(spec, SumKernel):
        return dimension_of(spec.first)
    return spec.n


# ---------------------------------------------------------------------------
# radial segment representation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """One additive radial piece J(z) = amp(|z|) |z|^(-n-s) on [lo, hi)."""

    lo: float
    hi: float
    s: float
    amp: float | Callable[[np.ndarray], np.ndarray]

    @property
    def callable_amp(self) -> bool:
        return callable(self.amp)


def segments(spec: KernelSpec) -> list[Segment]:
    if isinstance(spec, Fractional):
        return [Segment(0.0, math.inf, spec.alpha, normalization_constant(spec.n, spec.alpha))]
    if isinstance(spec, Truncated):
        return [Segment(0.0, spec.delta0, spec.alpha, spec.Lam)]
    if isinstance(spec, Decay):
        return [Segment(0.0, spec.delta0, spec.alpha, spec.Lam),
                Segment(spec.delta0, math.inf, spec.theta, spec.outer_amp)]
    if isinstance(spec, Elliptic):
        amp = spec.profile if spec.profile is not None else 0.5 * (spec.lam + spec.Lam)
        return [Segment(0.0, math.inf, spec.alpha, amp)]
    if isinstance(spec, SumKernel):
        return segments(spec.first) + segments(spec.second)
    raise KernelError(f"unknown kernel spec {spec!r}")


def jump_radii(spec: KernelSpec) -> list[float]:
    """Radii where J itself is discontinuous (support edges)."""
    if isinstance(spec, Truncated):
        return [spec.delta0]
    if isinstance(spec, SumKernel):
        return sorted(set(jump_radii(spec.first) + jump_radii(spec.second)))
    return []


def kernel_value(spec: KernelSpec, z) -> np.ndarray | float:
    """Pointwise J(z); z is a scalar/array of displacements (1D) or (..., 2) vectors."""
    z = np.asarray(z, dtype=float)
    n = dimension_of(spec)
    if n == 2 and z.shape and z.shape[-1] == 2:
        r = np.hypot(z[..., 0], z[..., 1])
    else:
        r = np.abs(z)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    if np.any(r == 0.0):
        raise KernelError("kernel is singular at z = 0")
    out = np.zeros_like(r)
    for seg in segments(spec):
        sel = (r >= seg.lo) & (r < seg.hi)
        if not np.any(sel):
            continue
        amp = seg.amp(r[sel]) if seg.callable_amp else seg.amp
        out[sel] += amp * r[sel] ** (-n - seg.s)
    return float(out[0]) if scalar else out


# -- closed-form radial integrals -------------------------------------------

def _power_int(q: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """int_a^b r^q dr, elementwise, with the log branch at q = -1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    bad = b <= a
    with np.errstate(divide="ignore", invalid="ignore"):
        if abs(q + 1.0) < 1e-14:
            out = np.log(b / a)
        else:
            p = q + 1.0
            out = (b ** p - a ** p) / p
    return np.where(bad, 0.0, out)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _segment_radial_int(seg: Segment, q_extra: float, a, b, n: int) -> np.ndarray:
    """int over [a,b] cap [lo,hi) of amp(r) r^(q_extra - 1 - s) dr.

    q_extra bundles surface and moment powers so that all masses and moments
    share one helper.
    """
    a = np.maximum(np.asarray(a, dtype=float), seg.lo)
    b = np.minimum(np.asarray(b, dtype=float), seg.hi)
    q = q_extra - 1.0 - seg.s
    if not seg.callable_amp:
        return seg.amp * _power_int(q, a, b)
    # numeric fallback for profile kernels; integrand is r^q * amp(r)
    a = np.atleast_1d(a)
    b = np.atleast_1d(b)
    mid = 0.5 * (a + b)
    rad = 0.5 * (b - a)
    pts = mid[..., None] + rad[..., None] * _GL_NODES
    pts = np.maximum(pts, 1e-300)
    vals = seg.amp(pts) * pts ** q
    out = np.where(b > a, rad * np.sum(vals * _GL_WEIGHTS, axis=-1), 0.0)
    return out


def _surface(n: int) -> float:
    return 2.0 if n == 1 else 2.0 * math.pi


def mass_between(spec: KernelSpec, r1: float, r2: float) -> float:
    """int_{r1 < |z| < r2} J(z) dz."""
    n = dimension_of(spec)
    surf = _surface(n)
    return float(sum(surf * _segment_radial_int(seg, 0.0, r1, r2, n) for seg in segments(spec)))


def mass_beyond(spec: KernelSpec, rho: float) -> float:
    return mass_between(spec, rho, math.inf)


def ring_mass(spec: KernelSpec, r: float) -> float:
    """Mass of the annulus r < |z| < 2r."""
    if r <= 0:
        raise KernelError("ring radius must be positive")
    return mass_between(spec, r, 2.0 * r)


def second_moment_within(spec: KernelSpec, rho: float) -> float:
    """int_{|z| < rho} |z|^2 J(z) dz (finite since every inner order is < 2)."""
    n = dimension_of(spec)
    surf = _surface(n)
    total = 0.0
    for seg in segments(spec):
        if seg.lo == 0.0 and seg.s >= 2.0:
            raise KernelError("non-integrable second moment at the origin")
        total += surf * float(_segment_radial_int(seg, 2.0, 0.0, rho, n))
    return total


# ---------------------------------------------------------------------------
# quadrature tables
# ---------------------------------------------------------------------------

@dataclass
class QuadratureTable1D:
    """Discrete convolution data for the principal-value operator on a 1D grid.

    Weights are one-sided (index k = 1..K, cell centered at k*h); evenness is
    implicit.  ``near_origin_coeff`` multiplies the discrete second difference
    and carries int_0^{h/2} z^2 J dz; ``tail_mass`` is the full two-sided mass
    beyond the covered range (K + 1/2) h.
    """

    spec: KernelSpec
    h: float
    K: int
    w_raw: np.ndarray
    w_eff: np.ndarray
    near_origin_coeff: float
    tail_mass: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ndim(self) -> int:
        return 1

    def total_mass_weights(self) -> float:
        """Sum over both signs of the raw weights plus the tail (used by the
        mass-consistency contract against int_{|z| > h/2} J)."""
        return 2.0 * float(np.sum(self.w_raw)) + self.tail_mass


@dataclass
class QuadratureTable2D:
    """Cell-exact weights on the square offset range 0 < |k|_inf <= K."""

    spec: KernelSpec
    h: float
    K: int
    offsets: np.ndarray          # (M, 2) integer offsets
    w: np.ndarray                # (M,) cell masses
    near_origin_coeff: float
    tail_mass: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ndim(self) -> int:
        return 2

    @property
    def w_eff(self) -> np.ndarray:
        return self.w


QuadratureTable = Union[QuadratureTable1D, QuadratureTable2D]


def _cell_moments_1d(spec: KernelSpec, h: float, K: int):
    """Exact cell moments m0, m1, m2 about cell centers k*h, k = 1..K."""
    n = dimension_of(spec)
    k = np.arange(1, K + 1, dtype=float)
    c = k * h
    a = c - 0.5 * h
    b = c + 0.5 * h
    m0 = np.zeros(K)
    m1 = np.zeros(K)
    m2 = np.zeros(K)
    for seg in segments(spec):
        i0 = _segment_radial_int(seg, 0.0, a, b, n)
        i1 = _segment_radial_int(seg, 1.0, a, b, n)
        i2 = _segment_radial_int(seg, 2.0, a, b, n)
        m0 += i0
        m1 += i1 - c * i0
        m2 += i2 - 2.0 * c * i1 + c * c * i0
    return m0, m1, m2


def build_quadrature(spec: KernelSpec, grid: Grid1D | Grid2D,
                     K: int | None = None) -> QuadratureTable:
    """Quadrature table for the PV operator on ``grid``.

    1D weights carry the moment corrections described in the module docstring;
    2D weights are cell-exact masses (adequate for the truncated kernels the
    2D pipelines use).  K defaults to covering the whole grid from any node.
    """
    if isinstance(grid, Grid1D):
        return _build_1d(spec, grid, K)
    return _build_2d(spec, grid, K)


def _build_1d(spec: KernelSpec, grid: Grid1D, K: int | None) -> QuadratureTable1D:
    h = grid.h
    if K is None:
        K = grid.n_points - 1
    if K < 2:
        raise KernelError("need K >= 2 offsets")
    m0, m1, m2 = _cell_moments_1d(spec, h, K)

    # drop moment corrections on cells containing a kernel jump (support edge)
    # and on the outermost cell, so effective weights never leak past support
    for r_jump in jump_radii(spec):
        k_lo = math.ceil(r_jump / h - 0.5)
        k_hi = math.floor(r_jump / h + 0.5)
        for k in range(k_lo, k_hi + 1):
            if 1 <= k <= K:
                m1[k - 1] = 0.0
                m2[k - 1] = 0.0
    m1[K - 1] = 0.0
    m2[K - 1] = 0.0

    # offsets 0 and K+1 carry no moments
    m1p = np.concatenate([[0.0], m1, [0.0]])
    m2p = np.concatenate([[0.0], m2, [0.0]])
    j = np.arange(1, K + 1)
    w_eff = (m0
             + (m1p[j - 1] - m1p[j + 1]) / (2.0 * h)
             + (m2p[j - 1] - 2.0 * m2p[j] + m2p[j + 1]) / (2.0 * h * h))
    neg = w_eff < 0
    if np.any(neg):
        worst = float(w_eff[neg].min())
        if worst < -1e-9 * max(float(np.max(w_eff)), 1e-300):
            raise KernelError(f"moment-corrected weights went negative ({worst:g})")
        w_eff = np.maximum(w_eff, 0.0)

    noc = 0.5 * second_moment_within(spec, 0.5 * h)
    tail = mass_beyond(spec, (K + 0.5) * h)
    return QuadratureTable1D(spec=spec, h=h, K=K, w_raw=m0, w_eff=w_eff,
                             near_origin_coeff=noc, tail_mass=tail)


_GL4_NODES, _GL4_WEIGHTS = np.polynomial.legendre.leggauss(4)


def _cell_mass_2d(spec: KernelSpec, centers: np.ndarray, h: float,
                  refine: np.ndarray) -> np.ndarray:
    """Gauss mass of J over square cells; cells flagged in ``refine`` get a
    subdivided rule (used where the support boundary crosses the cell)."""
    out = np.zeros(len(centers))
    smooth = ~refine
    if np.any(smooth):
        cx = centers[smooth, 0][:, None, None]
        cy = centers[smooth, 1][:, None, None]
        gx = cx + 0.5 * h * _GL4_NODES[None, :, None]
        gy = cy + 0.5 * h * _GL4_NODES[None, None, :]
        r = np.hypot(gx, gy)
        vals = _radial_value(spec, r)
        wts = _GL4_WEIGHTS[None, :, None] * _GL4_WEIGHTS[None, None, :]
        out[smooth] = (0.5 * h) ** 2 * np.sum(vals * wts, axis=(1, 2))
    if np.any(refine):
        m = 8
        sub = (np.arange(m) + 0.5) / m - 0.5
        for i in np.nonzero(refine)[0]:
            cx, cy = centers[i]
            sx = cx + h * sub[:, None]
            sy = cy + h * sub[None, :]
            r = np.hypot(sx, sy)
            out[i] = (h / m) ** 2 * np.sum(_radial_value(spec, r))
    return out


def _radial_value(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    n = dimension_of(spec)
    out = np.zeros_like(r)
    for seg in segments(spec):
        sel = (r >= seg.lo) & (r < seg.hi)
        if np.any(sel):
            amp = seg.amp(r[sel]) if seg.callable_amp else seg.amp
            out[sel] += amp * r[sel] ** (-n - seg.s)
    return out


def _build_2d(spec: KernelSpec, grid: Grid2D, K: int | None) -> QuadratureTable2D:
    if dimension_of(spec) != 2:
        raise KernelError("2D grid requires a 2D kernel spec")
    h = grid.h  # raises for anisotropic grids
    if K is None:
        K = max(grid.n_points) - 1
    rng = np.arange(-K, K + 1)
    k1, k2 = np.meshgrid(rng, rng, indexing="ij")
    offsets = np.stack([k1.ravel(), k2.ravel()], axis=1)
    offsets = offsets[np.any(offsets != 0, axis=1)]
    centers = offsets * h

    # classify cells against the outermost support radius, if any
    support = max((seg.hi for seg in segments(spec) if seg.hi < math.inf), default=math.inf)
    cdist = np.hypot(np.abs(centers[:, 0]), np.abs(centers[:, 1]))
    inner = cdist - h / math.sqrt(2.0)
    outer = cdist + h / math.sqrt(2.0)
    fully_out = inner > support
    straddle = (~fully_out) & (outer > support) & np.isfinite(support)

    w = np.zeros(len(offsets))
    todo = ~fully_out
    w[todo] = _cell_mass_2d(spec, centers[todo], h, straddle[todo])

    # near-origin coefficient: (1/4) int_{cell0} |z|^2 J dz via polar closed forms
    theta = (np.arange(64) + 0.5) * (math.pi / 4.0) / 64
    rho = (0.5 * h) / np.cos(theta)
    noc = 0.0
    for seg in segments(spec):
        vals = _segment_radial_int(seg, 2.0, np.zeros_like(rho), rho, 2)
        noc += float(np.sum(vals)) * (math.pi / 4.0) / 64
    noc *= 8.0 / 4.0

    rho_in = (K + 0.5) * h
    tail = mass_beyond(spec, rho_in)
    if tail > 0.0:
        # remove the corner mass between the inscribed circle and the covered square
        rho_c = rho_in / np.cos(theta)
        corner = 0.0
        for seg in segments(spec):
            vals = _segment_radial_int(seg, 0.0, np.full_like(rho_c, rho_in), rho_c, 2)
            corner += float(np.sum(vals)) * (math.pi / 4.0) / 64
        tail = max(tail - 8.0 * corner, 0.0)
    return QuadratureTable2D(spec=spec, h=h, K=K, offsets=offsets, w=w,
                             near_origin_coeff=noc, tail_mass=tail)
