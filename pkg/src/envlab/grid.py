"""Structured grids on T^2 x [0,1] and the finite-difference operators on them.

The computational domain is the product of a flat 2-torus (periodic unit
square, complex coordinate z = x1 + i*x2) with the interval t in [0,1]
(Dirichlet ends), t being the log-radial coordinate of an annulus whose
angular direction has been quotiented out by S^1-invariance.  A scalar
potential u(x1, x2, t) therefore stands for an S^1-invariant function of
two complex variables, and its complex Hessian reduces to a 2x2 Hermitian
matrix per node:

    u_{z zbar} = (u_{x1 x1} + u_{x2 x2}) / 4
    u_{w wbar} = u_{t t} / 4                  (w = t - i*theta)
    u_{z wbar} = (u_{x1 t} + i u_{x2 t}) / 4

All second-difference stencils are centered and second order; at the two
t-boundaries one-sided second-order stencils are used where a full-grid
derivative is requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ProductGrid",
    "build_grid",
    "Field",
    "XField",
    "BaseForm",
    "HermitianFormField",
    "hermitian_hessian",
    "ma_density",
    "DerivativeStats",
    "derivative_stats",
]


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class ProductGrid:
    """Tensor grid: periodic x1, x2 on [0,1), Dirichlet t on [0,1].

    ``offset`` shifts the periodic nodes by half a cell, (k + 1/2)/n, so that
    lattice points of the torus (where the singular model weights blow up)
    never coincide with a node.
    """

    nx1: int
    nx2: int
    nt: int
    offset: bool = False

    @property
    def hx1(self) -> float:
        return 1.0 / self.nx1

    @property
    def hx2(self) -> float:
        return 1.0 / self.nx2

    @property
    def ht(self) -> float:
        return 1.0 / (self.nt - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx1, self.nx2, self.nt)

    @property
    def n_nodes(self) -> int:
        return self.nx1 * self.nx2 * self.nt

    @property
    def x1(self) -> np.ndarray:
        s = 0.5 if self.offset else 0.0
        return (np.arange(self.nx1) + s) * self.hx1

    @property
    def x2(self) -> np.ndarray:
        s = 0.5 if self.offset else 0.0
        return (np.arange(self.nx2) + s) * self.hx2

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.nt) * self.ht

    def meshgrid(self):
        return np.meshgrid(self.x1, self.x2, self.t, indexing="ij")

    def refine(self) -> "ProductGrid":
        """Halve every spacing (t keeps both endpoints)."""
        return ProductGrid(2 * self.nx1, 2 * self.nx2, 2 * (self.nt - 1) + 1, self.offset)

    def torus_distance(self, points: list[tuple[float, float]]) -> np.ndarray:
        """Per-node distance on the torus to the nearest of ``points`` (x-only)."""
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        d = np.full((self.nx1, self.nx2), np.inf)
        for (p1, p2) in points:
            d1 = np.abs(X1 - p1)
            d1 = np.minimum(d1, 1.0 - d1)
            d2 = np.abs(X2 - p2)
            d2 = np.minimum(d2, 1.0 - d2)
            d = np.minimum(d, np.hypot(d1, d2))
        return d


def build_grid(nx1: int, nx2: int, nt: int, offset: bool = False) -> ProductGrid:
    """Validated grid constructor.

    Periodic counts must be even and at least 8 (so centered stencils and
    half-cell offsets behave); nt must be at least 9 so one-sided boundary
    stencils have support.
    """
    for name, n in (("nx1", nx1), ("nx2", nx2)):
        if n < 8:
            raise ValueError(f"{name} = {n} below minimum 8")
        if n % 2 != 0:
            raise ValueError(f"{name} = {n} must be even")
    if nt < 9:
        raise ValueError(f"nt = {nt} below minimum 9")
    return ProductGrid(nx1, nx2, nt, offset)


# ---------------------------------------------------------------------------
# fields


class Field:
    """One real value per grid node, shape (nx1, nx2, nt).

    Solver unknowns must be finite everywhere; -inf is admitted only for
    evaluations of singular model weights (``allow_neg_inf=True``).  NaN is
    never allowed.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: ProductGrid, values: np.ndarray, allow_neg_inf: bool = False):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {grid.shape}")
        if np.isnan(values).any():
            raise ValueError("NaN in field values")
        if not allow_neg_inf and not np.isfinite(values).all():
            raise ValueError("non-finite field values (pass allow_neg_inf for model weights)")
        if allow_neg_inf and (values == np.inf).any():
            raise ValueError("+inf in field values")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: ProductGrid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def full(cls, grid: ProductGrid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: ProductGrid, fn, allow_neg_inf: bool = False) -> "Field":
        X1, X2, T = grid.meshgrid()
        return cls(grid, fn(X1, X2, T), allow_neg_inf=allow_neg_inf)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), allow_neg_inf=True)

    def require_finite(self) -> "Field":
        if not np.isfinite(self.values).all():
            raise ValueError("field has non-finite values where a solver unknown is required")
        return self


class XField:
    """One real value per torus node, shape (nx1, nx2); t-independent data."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: ProductGrid, values: np.ndarray, allow_neg_inf: bool = False):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.nx1, grid.nx2):
            raise ValueError(f"values shape {values.shape} != (nx1, nx2)")
        if np.isnan(values).any():
            raise ValueError("NaN in field values")
        if not allow_neg_inf and not np.isfinite(values).all():
            raise ValueError("non-finite values")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: ProductGrid) -> "XField":
        return cls(grid, np.zeros((grid.nx1, grid.nx2)))

    @classmethod
    def from_function(cls, grid: ProductGrid, fn, allow_neg_inf: bool = False) -> "XField":
        X1, X2 = np.meshgrid(grid.x1, grid.x2, indexing="ij")
        return cls(grid, fn(X1, X2), allow_neg_inf=allow_neg_inf)

    def copy(self) -> "XField":
        return XField(self.grid, self.values.copy(), allow_neg_inf=True)

    def lift(self) -> Field:
        """Pull back to the product grid (constant in t)."""
        v = np.repeat(self.values[:, :, None], self.grid.nt, axis=2)
        return Field(self.grid, v, allow_neg_inf=True)


@dataclass
class BaseForm:
    """Reference data for the forms alpha and omega on the product.

    ``a`` samples the torus coefficient of the semipositive form alpha
    (alpha_{z zbar} = a(x), no annulus component).  omega is normalized with
    omega_{z zbar} = 1; its annulus coefficient is kappa_A * exp(-2t) in the
    geometric ("euclidean") profile, or the constant kappa_A when
    ``flat_annulus`` is set (used by the closed-form obstacle tests).
    """

    grid: ProductGrid
    a: np.ndarray
    kappa_A: float = 1.0
    flat_annulus: bool = False
    eps_cap: float = 16.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.a.shape != (self.grid.nx1, self.grid.nx2):
            raise ValueError("a must be sampled on the torus grid")
        if (self.a < -1e-12).any():
            raise ValueError("a must be nonnegative (semipositive form)")
        if self.kappa_A <= 0:
            raise ValueError("kappa_A must be positive")

    @property
    def a_max(self) -> float:
        return float(self.a.max())

    def annulus_weight(self, t: np.ndarray) -> np.ndarray:
        """omega_{w wbar} at the given t values."""
        if self.flat_annulus:
            return np.full_like(np.asarray(t, dtype=float), self.kappa_A)
        return self.kappa_A * np.exp(-2.0 * np.asarray(t, dtype=float))

    def det_omega(self, t: np.ndarray) -> np.ndarray:
        """Determinant of omega in reduced coordinates (= annulus weight)."""
        return self.annulus_weight(t)

    def normalized(self) -> "BaseForm":
        """Rescale a to sup = 1, encoding alpha <= omega."""
        m = max(self.a_max, 1.0)
        return BaseForm(self.grid, self.a / m, self.kappa_A, self.flat_annulus, self.eps_cap)


# ---------------------------------------------------------------------------
# stencils (periodic in x, one-sided at t-boundaries where noted)


def _dx(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    return (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) / (2.0 * h)


def _dxx(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    return (np.roll(v, -1, axis=axis) - 2.0 * v + np.roll(v, 1, axis=axis)) / (h * h)


def _dt_full(v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(v)
    out[:, :, 1:-1] = (v[:, :, 2:] - v[:, :, :-2]) / (2.0 * h)
    out[:, :, 0] = (-3.0 * v[:, :, 0] + 4.0 * v[:, :, 1] - v[:, :, 2]) / (2.0 * h)
    out[:, :, -1] = (3.0 * v[:, :, -1] - 4.0 * v[:, :, -2] + v[:, :, -3]) / (2.0 * h)
    return out


def _dtt_full(v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(v)
    out[:, :, 1:-1] = (v[:, :, 2:] - 2.0 * v[:, :, 1:-1] + v[:, :, :-2]) / (h * h)
    out[:, :, 0] = (2.0 * v[:, :, 0] - 5.0 * v[:, :, 1] + 4.0 * v[:, :, 2] - v[:, :, 3]) / (h * h)
    out[:, :, -1] = (2.0 * v[:, :, -1] - 5.0 * v[:, :, -2] + 4.0 * v[:, :, -3] - v[:, :, -4]) / (h * h)
    return out


def _dt_interior(v: np.ndarray, h: float) -> np.ndarray:
    return (v[:, :, 2:] - v[:, :, :-2]) / (2.0 * h)


def _dtt_interior(v: np.ndarray, h: float) -> np.ndarray:
    return (v[:, :, 2:] - 2.0 * v[:, :, 1:-1] + v[:, :, :-2]) / (h * h)


# ---------------------------------------------------------------------------
# Hermitian form field and Monge-Ampere density


class HermitianFormField:
    """Per interior node, the 2x2 Hermitian matrix of alpha + eps*omega + i ddbar u.

    Entries have shape (nx1, nx2, nt-2); the t-index runs over interior
    levels 1 .. nt-2 of the parent grid.  gzw is complex.
    """

    __slots__ = ("grid", "gzz", "gww", "gzw")

    def __init__(self, grid: ProductGrid, gzz: np.ndarray, gww: np.ndarray, gzw: np.ndarray):
        m = grid.nt - 2
        for name, arr in (("gzz", gzz), ("gww", gww), ("gzw", gzw)):
            if arr.shape != (grid.nx1, grid.nx2, m):
                raise ValueError(f"{name} must have interior shape (nx1, nx2, nt-2)")
        self.grid = grid
        self.gzz = np.asarray(gzz, dtype=float)
        self.gww = np.asarray(gww, dtype=float)
        self.gzw = np.asarray(gzw, dtype=complex)

    def determinant(self) -> np.ndarray:
        return self.gzz * self.gww - (self.gzw.real ** 2 + self.gzw.imag ** 2)

    def min_eigenvalue(self) -> np.ndarray:
        # product form det / lambda_max: immune to the catastrophic
        # cancellation of (trace/2 - sqrt(...)) near the degenerate boundary
        half_sum = 0.5 * (self.gzz + self.gww)
        half_diff = 0.5 * (self.gzz - self.gww)
        lam_max = half_sum + np.sqrt(half_diff ** 2 + self.gzw.real ** 2 + self.gzw.imag ** 2)
        return np.where(lam_max > 0, self.determinant() / np.where(lam_max > 0, lam_max, 1.0),
                        half_sum - (lam_max - half_sum))

    def is_positive(self) -> bool:
        """Both leading minors strictly positive at every interior node."""
        return bool((self.gzz > 0).all() and (self.determinant() > 0).all())


def hermitian_hessian(u: Field, base: BaseForm, eps: float) -> HermitianFormField:
    """Sample alpha + eps*omega + i ddbar u at interior t-levels.

    The t-boundary rows of ``u`` act as Dirichlet closure for the centered
    stencils; they must be finite.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if u.grid is not base.grid and u.grid != base.grid:
        raise ValueError("field and base form live on different grids")
    if not np.isfinite(u.values).all():
        raise ValueError("Dirichlet closure missing: u has non-finite values")
    g = u.grid
    v = u.values
    lap_x = _dxx(v, g.hx1, 0) + _dxx(v, g.hx2, 1)
    gzz = base.a[:, :, None] + eps + lap_x[:, :, 1:-1] / 4.0
    w_int = base.annulus_weight(g.t[1:-1])
    gww = eps * w_int[None, None, :] + _dtt_interior(v, g.ht) / 4.0
    dt_c = _dt_interior(v, g.ht)
    gzw = (_dx(dt_c, g.hx1, 0) + 1j * _dx(dt_c, g.hx2, 1)) / 4.0
    return HermitianFormField(g, gzz, gww, gzw)


def ma_density(H: HermitianFormField) -> np.ndarray:
    """Pointwise determinant of the Hermitian form (interior t-levels)."""
    return H.determinant()


# ---------------------------------------------------------------------------
# derivative statistics


@dataclass
class DerivativeStats:
    grad: Field
    hess_norm: Field
    laplacian: Field


def derivative_stats(u: Field, region_mask: np.ndarray | None = None) -> DerivativeStats:
    """Gradient magnitude, real-Hessian Frobenius norm, and flat Laplacian.

    Conventions: the gradient and Hessian are taken with respect to the flat
    (x1, x2, t) coordinates; the Hessian norm is the Frobenius norm of the
    full symmetric 3x3 real Hessian; the Laplacian is u_x1x1 + u_x2x2 + u_tt,
    i.e. four times the trace of i ddbar u against the flat reference.
    t-boundary rows use one-sided second-order stencils.

    ``region_mask`` (boolean, grid shape) restricts where values are
    requested; the stencil neighborhood of the mask must be finite.
    """
    g = u.grid
    v = u.values
    if region_mask is not None:
        region_mask = np.asarray(region_mask, dtype=bool)
        if region_mask.shape != g.shape:
            raise ValueError("region_mask shape mismatch")
        support = _stencil_closure(region_mask)
        if not np.isfinite(v[support]).all():
            raise ValueError("mask touches nodes whose stencil support is not finite")
    elif not np.isfinite(v).all():
        raise ValueError("u must be finite (or pass a region_mask avoiding the poles)")

    ux1 = _dx(v, g.hx1, 0)
    ux2 = _dx(v, g.hx2, 1)
    ut = _dt_full(v, g.ht)
    ux1x1 = _dxx(v, g.hx1, 0)
    ux2x2 = _dxx(v, g.hx2, 1)
    utt = _dtt_full(v, g.ht)
    ux1x2 = _dx(_dx(v, g.hx2, 1), g.hx1, 0)
    ux1t = _dx(_dt_full(v, g.ht), g.hx1, 0)
    ux2t = _dx(_dt_full(v, g.ht), g.hx2, 1)

    grad = np.sqrt(ux1 ** 2 + ux2 ** 2 + ut ** 2)
    hess = np.sqrt(
        ux1x1 ** 2 + ux2x2 ** 2 + utt ** 2
        + 2.0 * (ux1x2 ** 2 + ux1t ** 2 + ux2t ** 2)
    )
    lap = ux1x1 + ux2x2 + utt

    mk = lambda a: Field(g, np.where(np.isfinite(a), a, 0.0) if region_mask is not None else a)
    return DerivativeStats(grad=mk(grad), hess_norm=mk(hess), laplacian=mk(lap))


def _stencil_closure(mask: np.ndarray) -> np.ndarray:
    """Nodes reachable by the widest stencil (3 cells in t, 1 in x) from mask."""
    out = mask.copy()
    for axis in (0, 1):
        out |= np.roll(mask, 1, axis=axis) | np.roll(mask, -1, axis=axis)
    grown = out.copy()
    # one-sided t stencils reach 3 rows from the boundary
    for shift in (1, 2, 3):
        sh = np.zeros_like(out)
        sh[:, :, shift:] |= out[:, :, :-shift]
        sh2 = np.zeros_like(out)
        sh2[:, :, :-shift] |= out[:, :, shift:]
        grown |= sh | sh2
    return grown
