"""Model inputs: base forms, singular weights, regularized maxima, boundary data.

Everything the continuation solver consumes is constructed here on the
torus-times-interval model: the semipositive base form a(x), the log-model
singular weight psi and its companions F and tilde-psi, the annulus
potential f, Demailly-style regularized maxima, and the eps-indexed family
of boundary potentials built from torus Kaehler potentials v_eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    BaseForm,
    Field,
    ProductGrid,
    XField,
    _dx,
    _dxx,
    derivative_stats,
    hermitian_hessian,
)

__all__ = [
    "make_degenerate_form",
    "SingularModel",
    "make_singular_model",
    "make_bounded_model",
    "annulus_potential",
    "annulus_potential_profile",
    "reg_max",
    "reg_max_values",
    "solve_kahler_potential",
    "KahlerSolveError",
    "EndpointPair",
    "BoundaryFamily",
    "build_boundary_family",
]


# ---------------------------------------------------------------------------
# base forms


def make_degenerate_form(
    lam: float,
    grid: ProductGrid,
    kappa_A: float = 1.0,
    flat_annulus: bool = False,
) -> BaseForm:
    """Semipositive torus form a(x) = 1 - (lam/8)(cos 2pi x1 + cos 2pi x2).

    lam = 0 is the Kaehler reference (a = 1); lam = 4 is the degenerate
    threshold where a vanishes exactly at the lattice point (0, 0).
    """
    if lam < 0 or lam > 4:
        raise ValueError(f"lam = {lam} outside [0, 4]: form not semipositive")
    X1, X2 = np.meshgrid(grid.x1, grid.x2, indexing="ij")
    a = 1.0 - (lam / 8.0) * (np.cos(2 * np.pi * X1) + np.cos(2 * np.pi * X2))
    a = np.maximum(a, 0.0)  # clip roundoff at the degeneracy point
    return BaseForm(grid, a, kappa_A=kappa_A, flat_annulus=flat_annulus)


# ---------------------------------------------------------------------------
# regularized maximum
#
# Kernel fixed once: theta(s) = (35/16) (1 - 4 s^2)^3 on [-1/2, 1/2];
# even, unit mass, C^2 across the support edges.  The smoothed maximum of
# a_1..a_k is  E[max_i (a_i + S_i)]  with S_i i.i.d. ~ theta, computed from
# the CDF product:
#
#   regmax(a) = m - 1/2 + int_{-1/2}^{1/2} (1 - prod_i Theta(m + s - a_i)) ds,
#   m = max(a),  Theta = CDF of theta.
#
# For two arguments the integral is a single polynomial of degree <= 15 in
# the gap d = |a - b| on [0, 1], stored as a Chebyshev series fitted once to
# machine precision; three active arguments fall back to a 64-point
# Gauss-Legendre rule.  Arguments lying >= 1 below the maximum never
# contribute (their CDF factor is 1 on the support), which makes the
# gap >= 1 equality cases exact by construction.


class _RegMaxKernel:
    def __init__(self):
        # theta(s) = (35/16)(1 - 4 s^2)^3 expanded in powers of s
        c = 35.0 / 16.0
        # (1 - 4 s^2)^3 = 1 - 12 s^2 + 48 s^4 - 64 s^6
        self.theta_coeffs = np.array([c, 0, -12 * c, 0, 48 * c, 0, -64 * c])
        # antiderivative, fixed so that Theta(-1/2) = 0
        anti = np.zeros(8)
        anti[1:] = self.theta_coeffs / np.arange(1, 8)
        anti0 = -np.polynomial.polynomial.polyval(-0.5, anti)
        anti[0] = anti0
        self.cdf_coeffs = anti
        # Gauss-Legendre rule on [-1/2, 1/2]
        x, w = np.polynomial.legendre.leggauss(64)
        self.gl_x = 0.5 * x
        self.gl_w = 0.5 * w
        # pair integral P(d) = int Theta(s) Theta(s + d) ds, d in [0, 1]
        nodes = np.cos(np.pi * (np.arange(64) + 0.5) / 64)  # Chebyshev on [-1,1]
        d_nodes = 0.5 * (nodes + 1.0)
        vals = np.array([self._pair_integral_exact(d) for d in d_nodes])
        self.pair_cheb = np.polynomial.chebyshev.chebfit(nodes, vals, 20)

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, -0.5, 0.5)
        out = np.polynomial.polynomial.polyval(xc, self.cdf_coeffs)
        return np.clip(out, 0.0, 1.0)

    def _pair_integral_exact(self, d: float) -> float:
        # piecewise-polynomial integrand: exact Gauss on each piece
        x, w = np.polynomial.legendre.leggauss(24)

        def gauss(lo, hi, fn):
            if hi <= lo:
                return 0.0
            mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
            s = mid + half * x
            return half * float(np.dot(w, fn(s)))

        split = 0.5 - d
        part1 = gauss(-0.5, split, lambda s: self.cdf(s) * self.cdf(s + d))
        part2 = gauss(max(split, -0.5), 0.5, lambda s: self.cdf(s))
        return part1 + part2

    def pair_integral(self, d: np.ndarray) -> np.ndarray:
        u = 2.0 * np.clip(d, 0.0, 1.0) - 1.0
        return np.polynomial.chebyshev.chebval(u, self.pair_cheb)

    def smooth_max(self, values: list[np.ndarray]) -> np.ndarray:
        stack = np.stack([np.asarray(v, dtype=float) for v in values])
        m = stack.max(axis=0)
        gaps = m - stack  # >= 0
        active = gaps < 1.0
        n_active = active.sum(axis=0)
        out = m.copy()

        two = n_active == 2
        if two.any():
            # with two active arguments the gaps are {0, d}
            d = np.where(active, gaps, 0.0).sum(axis=0)[two]
            out[two] = m[two] + 0.5 - self.pair_integral(d)

        many = n_active > 2
        if many.any():
            idx = np.nonzero(many)
            s = self.gl_x
            prod = np.ones((s.size,) + (idx[0].size,))
            for i in range(stack.shape[0]):
                gi = gaps[i][idx]
                ai = active[i][idx]
                factor = self.cdf(s[:, None] + gi[None, :])
                prod *= np.where(ai[None, :], factor, 1.0)
            integral = np.tensordot(self.gl_w, prod, axes=(0, 0))
            out[idx] = m[idx] + 0.5 - integral
        return np.maximum(out, m)


_KERNEL = _RegMaxKernel()


def reg_max_values(values: list[np.ndarray], spread: float = 0.5) -> np.ndarray:
    """Regularized maximum of 2 or 3 arrays with error bound ``spread``.

    Satisfies max <= out <= max + spread everywhere, with equality to max
    exactly where the top two inputs differ by at least 2*spread.
    """
    if len(values) not in (2, 3):
        raise ValueError("reg_max takes 2 or 3 inputs")
    if spread <= 0:
        raise ValueError("spread must be positive")
    s = 2.0 * spread
    scaled = [np.asarray(v, dtype=float) / s for v in values]
    return s * _KERNEL.smooth_max(scaled)


def reg_max(inputs: list[Field], spread: float = 0.5) -> Field:
    """Pointwise regularized maximum of 2 or 3 fields on one grid."""
    if len(inputs) not in (2, 3):
        raise ValueError("reg_max takes 2 or 3 fields")
    grid = inputs[0].grid
    for f in inputs[1:]:
        if f.grid != grid:
            raise ValueError("reg_max inputs live on different grids")
    return Field(grid, reg_max_values([f.values for f in inputs], spread=spread))


# ---------------------------------------------------------------------------
# annulus potential


def annulus_potential_profile(t: np.ndarray) -> np.ndarray:
    """f(t) = exp(-2t) - (exp(-2) - 1) t - 1: i ddbar f = Euclidean annulus form,
    f = 0 at both ends."""
    t = np.asarray(t, dtype=float)
    return np.exp(-2.0 * t) - (math.exp(-2.0) - 1.0) * t - 1.0


def annulus_potential(grid: ProductGrid) -> Field:
    """The rotationally symmetric annulus potential as a t-only field."""
    prof = annulus_potential_profile(grid.t)
    return Field(grid, np.broadcast_to(prof, grid.shape).copy())


# ---------------------------------------------------------------------------
# singular model


@dataclass
class SingularModel:
    """Log-model singular weight and companions on the torus factor.

    psi is normalized to sup = -1; F <= 0 is the degeneracy profile of the
    boundary forms (log of the Monge-Ampere density ratio on the torus);
    tilde_psi = psi + (delta / 2C) F with C the measured quasi-psh constant
    of F, and B0 = 2C/delta.
    """

    grid: ProductGrid
    c: float
    psi: XField
    F: XField
    tilde_psi: XField
    B0: float
    c_pos: float
    delta: float
    C_quasi: float
    singular_points: list[tuple[float, float]]
    mask_cells: int = 4

    def mask_x(self, radius_cells: int | None = None, grid: ProductGrid | None = None) -> np.ndarray:
        """Boolean torus mask: True at nodes within radius_cells of a pole."""
        g = grid or self.grid
        cells = self.mask_cells if radius_cells is None else radius_cells
        if not self.singular_points:
            return np.zeros((g.nx1, g.nx2), dtype=bool)
        radius = cells * max(g.hx1, g.hx2)
        return g.torus_distance(self.singular_points) <= radius

    def mask_product(self, radius_cells: int | None = None, grid: ProductGrid | None = None) -> np.ndarray:
        g = grid or self.grid
        return np.repeat(self.mask_x(radius_cells, g)[:, :, None], g.nt, axis=2)

    def psi_product(self) -> Field:
        return self.psi.lift()

    def tilde_psi_product(self) -> Field:
        return self.tilde_psi.lift()


def _log_model_values(grid: ProductGrid, c: float) -> np.ndarray:
    X1, X2 = np.meshgrid(grid.x1, grid.x2, indexing="ij")
    s = np.sin(np.pi * X1) ** 2 + np.sin(np.pi * X2) ** 2
    with np.errstate(divide="ignore"):
        return (c / 2.0) * np.log(s)


def log_model_raw(grid: ProductGrid, c: float) -> XField:
    """Unnormalized log-model weight (c/2) log(sin^2 pi x1 + sin^2 pi x2)."""
    return XField(grid, _log_model_values(grid, c), allow_neg_inf=True)


def _x_second_stats(v: np.ndarray, grid: ProductGrid) -> tuple[np.ndarray, np.ndarray]:
    """(gradient magnitude, Hessian Frobenius norm) of a torus array."""
    gx = _dx(v, grid.hx1, 0)
    gy = _dx(v, grid.hx2, 1)
    hxx = _dxx(v, grid.hx1, 0)
    hyy = _dxx(v, grid.hx2, 1)
    hxy = _dx(_dx(v, grid.hx2, 1), grid.hx1, 0)
    return np.hypot(gx, gy), np.sqrt(hxx ** 2 + hyy ** 2 + 2 * hxy ** 2)


def _endpoints(boundary) -> tuple[XField, XField]:
    if isinstance(boundary, (tuple, list)) and len(boundary) == 2:
        return boundary[0], boundary[1]
    return boundary.phi0, boundary.phi1


@dataclass
class EndpointPair:
    phi0: XField
    phi1: XField


def make_singular_model(
    c: float,
    base: BaseForm,
    boundary,
    delta: float,
    mask_cells: int = 4,
    normalize_f: bool = True,
) -> SingularModel:
    """Build the log-model weight, degeneracy profile F and tilde-psi.

    F is the log of the torus Monge-Ampere density a_phi = a + Delta_x phi/4,
    taken over both endpoints (pointwise minimum) and scaled so that F <= 0
    outside the singular mask.  The quasi-psh constant C of F is measured as
    the largest negative part of its discrete complex Hessian outside the
    mask (floored at 1), giving B0 = 2C/delta.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    if delta <= 0:
        raise ValueError("delta must be positive")
    grid = base.grid
    phi0, phi1 = _endpoints(boundary)
    if phi0.grid != grid or phi1.grid != grid:
        raise ValueError("base and boundary data live on different grids")

    raw = _log_model_values(grid, c)
    psi_vals = raw - (c / 2.0) * math.log(2.0) - 1.0  # sup over the torus = -1
    psi = XField(grid, psi_vals, allow_neg_inf=True)
    singular_points = [(0.0, 0.0)]
    model_stub = SingularModel(grid, c, psi, psi, psi, 1.0, 1.0, delta, 1.0,
                               singular_points, mask_cells)
    mask = model_stub.mask_x()
    free = ~mask

    a_phis = []
    for phi in (phi0, phi1):
        lap = _dxx(phi.values, grid.hx1, 0) + _dxx(phi.values, grid.hx2, 1)
        a_phis.append(base.a + lap / 4.0)
    a_phi = np.minimum(a_phis[0], a_phis[1])

    if (a_phi[free] <= 0).any():
        i, j = np.argwhere(free & (a_phi <= 0))[0]
        raise ValueError(
            f"torus Monge-Ampere density nonpositive outside the singular mask "
            f"at node ({i}, {j}): a_phi = {a_phi[i, j]:.3e}"
        )
    if normalize_f:
        scale = max(float(a_phi[free].max()), 1.0)
    else:
        scale = 1.0
        if float(a_phi[free].max()) > 1.0 + 1e-12:
            raise ValueError("F would be positive; pass normalize_f=True or rescale the data")
    with np.errstate(divide="ignore"):
        F_vals = np.where(a_phi > 0, np.log(np.maximum(a_phi, 1e-300)) - math.log(scale), -np.inf)
    F = XField(grid, F_vals, allow_neg_inf=True)

    # quasi-psh constant of F measured one cell inside the free region
    safe = free.copy()
    for axis in (0, 1):
        safe &= np.roll(free, 1, axis=axis) & np.roll(free, -1, axis=axis)
    F_zz = (_dxx(F_vals, grid.hx1, 0) + _dxx(F_vals, grid.hx2, 1)) / 4.0
    C_quasi = float(np.maximum(0.0, -F_zz[safe]).max()) if safe.any() else 0.0
    C = max(C_quasi, 1.0)

    tilde_vals = psi_vals + (delta / (2.0 * C)) * F_vals
    tilde = XField(grid, tilde_vals, allow_neg_inf=True)
    return SingularModel(
        grid=grid, c=c, psi=psi, F=F, tilde_psi=tilde,
        B0=2.0 * C / delta, c_pos=1.0, delta=delta, C_quasi=C_quasi,
        singular_points=singular_points, mask_cells=mask_cells,
    )


def make_bounded_model(base: BaseForm, level: float = -1.0, delta: float = 1.0) -> SingularModel:
    """Trivial model for smooth presets: constant psi, F = 0, no poles."""
    grid = base.grid
    if level > 0:
        raise ValueError("level must be <= 0")
    psi = XField(grid, np.full((grid.nx1, grid.nx2), float(level)))
    zero = XField.zeros(grid)
    return SingularModel(
        grid=grid, c=0.0, psi=psi, F=zero, tilde_psi=psi,
        B0=2.0 / delta, c_pos=1.0, delta=delta, C_quasi=0.0,
        singular_points=[], mask_cells=4,
    )


def smoothness_certificate(model: SingularModel, grid: ProductGrid | None = None,
                           B: float | None = None, radius_cells: int | None = None) -> float:
    """sup of (|grad psi| + |hess psi|) e^{B psi} outside the mask.

    With B = B0 this is the exponential-smoothness certificate constant;
    stability of the value under refinement is checked by rebuilding the
    model on the refined grid and comparing.
    """
    g = grid or model.grid
    if g == model.grid:
        psi = model.psi.values
    else:
        psi = _log_model_values(g, model.c) - (model.c / 2.0) * math.log(2.0) - 1.0
    B = model.B0 if B is None else B
    mask = model.mask_x(radius_cells, g)
    free = ~mask
    grad, hess = _x_second_stats(psi, g)
    vals = (grad + hess) * np.exp(B * psi)
    return float(vals[free].max())


# ---------------------------------------------------------------------------
# torus Kaehler potentials (complex dimension 1: semilinear equation)


class KahlerSolveError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


def _torus_laplacian(grid: ProductGrid) -> sp.csr_matrix:
    def lap1d(n, h):
        e = np.ones(n)
        L = sp.diags([e, -2 * e, e], [-1, 0, 1], shape=(n, n), format="lil")
        L[0, -1] = 1.0
        L[-1, 0] = 1.0
        return (L / (h * h)).tocsr()

    Lx = lap1d(grid.nx1, grid.hx1)
    Ly = lap1d(grid.nx2, grid.hx2)
    Ix = sp.eye(grid.nx1, format="csr")
    Iy = sp.eye(grid.nx2, format="csr")
    return (sp.kron(Lx, Iy) + sp.kron(Ix, Ly)).tocsr()


def solve_kahler_potential(
    base: BaseForm,
    eps: float,
    beta0: float,
    tol: float = 1e-11,
    max_iter: int = 60,
) -> XField:
    """Solve a + eps/2 + Delta_x v / 4 = exp(beta0 v) on the torus.

    Damped Newton; the exponential zeroth-order term makes the solution
    unique, and solutions decrease pointwise as eps decreases.
    """
    if beta0 <= 0:
        raise ValueError("beta0 must be positive")
    grid = base.grid
    rhs_base = base.a + eps / 2.0
    if rhs_base.max() <= 0:
        raise ValueError("a + eps/2 must be positive somewhere")

    L = _torus_laplacian(grid)
    n = grid.nx1 * grid.nx2
    v = np.full(n, math.log(max(float(rhs_base.mean()), 1e-8)) / beta0)
    flat_a = rhs_base.ravel()

    def residual(vv):
        return flat_a + (L @ vv) / 4.0 - np.exp(beta0 * vv)

    r = residual(v)
    history = [float(np.abs(r).max())]
    for _ in range(max_iter):
        if history[-1] <= tol:
            return XField(grid, v.reshape(grid.nx1, grid.nx2))
        J = L / 4.0 - sp.diags(beta0 * np.exp(beta0 * v))
        dv = spla.spsolve(J.tocsc(), -r)
        lam = 1.0
        while lam >= 2.0 ** -30:
            r_new = residual(v + lam * dv)
            m = float(np.abs(r_new).max())
            if np.isfinite(m) and m < history[-1]:
                v = v + lam * dv
                r = r_new
                history.append(m)
                break
            lam *= 0.5
        else:
            raise KahlerSolveError("damping underflow in torus potential solve", history)
    if history[-1] <= tol:
        return XField(grid, v.reshape(grid.nx1, grid.nx2))
    raise KahlerSolveError(
        f"torus potential solve stalled at residual {history[-1]:.3e}", history
    )


# ---------------------------------------------------------------------------
# boundary family


@dataclass
class BoundaryFamily:
    """Endpoint data and its eps-indexed smooth approximations.

    phi = regmax{phi0 - C t, phi1 - C(1-t)} + f(t); each phi_eps adds the
    branch v_eps - C_eps cutting in only where the data degenerates, with
    C_eps = -log(eps/2) + C + 2.  Endpoints are stored sup-normalized to 0;
    affine-in-t shifts are the caller's business.
    """

    grid: ProductGrid
    base: BaseForm
    model: SingularModel
    phi0: XField
    phi1: XField
    C_gap: float
    beta0: float
    v1_shift: float
    f: Field
    phi: Field
    eps_list: list[float]
    _phi_eps: dict[float, Field]
    _v_eps: dict[float, XField]
    records: dict = field(default_factory=dict)

    def C_eps(self, eps: float) -> float:
        return -math.log(eps / 2.0) + self.C_gap + 2.0

    def phi_eps(self, eps: float) -> Field:
        if eps not in self._phi_eps:
            raise KeyError(f"eps = {eps} not in family (have {sorted(self._phi_eps)})")
        return self._phi_eps[eps]

    def v_eps(self, eps: float) -> XField:
        return self._v_eps[eps]

    def boundary_values(self, eps: float) -> tuple[np.ndarray, np.ndarray]:
        pe = self.phi_eps(eps).values
        return pe[:, :, 0].copy(), pe[:, :, -1].copy()


def _branches(grid: ProductGrid, phi0: XField, phi1: XField, C: float):
    T = grid.t[None, None, :]
    b0 = phi0.values[:, :, None] - C * T
    b1 = phi1.values[:, :, None] - C * (1.0 - T)
    return b0, b1


def build_boundary_family(
    phi0: XField,
    phi1: XField,
    base: BaseForm,
    model: SingularModel,
    eps_list: list[float],
    beta0: float = 1.0,
    c_gap: float | None = None,
    verify_key: bool = True,
    key_tol_factor: float = 200.0,
) -> BoundaryFamily:
    """Assemble the boundary family and check the discrete key positivity.

    For each eps the Hermitian form of phi_eps must dominate e^{psi} times
    the product reference (torus part 1, annulus part e^{-2t}) at every
    non-masked interior node, up to an O(h^2) stencil tolerance.  Violations
    raise (naming the worst node) unless verify_key is False, in which case
    margins are only recorded.
    """
    grid = base.grid
    for name, phi in (("phi0", phi0), ("phi1", phi1)):
        if abs(float(phi.values.max())) > 1e-8:
            raise ValueError(f"{name} must be normalized with sup = 0")
    gap = float(np.abs(phi0.values - phi1.values).max())
    if not math.isfinite(gap):
        raise ValueError("endpoints do not have the same singularity type (unbounded gap)")
    C = c_gap if c_gap is not None else 1.0 + gap
    if C < 1.0 + gap - 1e-12:
        raise ValueError(f"c_gap = {C} too small for endpoint gap {gap}")

    eps_list = sorted(set(float(e) for e in eps_list), reverse=True)
    v_eps: dict[float, XField] = {}
    for eps in set(eps_list) | {1.0}:
        v_eps[eps] = solve_kahler_potential(base, eps, beta0)
    v1_shift = float(v_eps[1.0].values.max())
    for eps in list(v_eps):
        v_eps[eps] = XField(grid, v_eps[eps].values - v1_shift)

    f = annulus_potential(grid)
    b0, b1 = _branches(grid, phi0, phi1, C)
    phi = Field(grid, reg_max_values([b0, b1]) + f.values)

    mask3 = model.mask_product()
    interior = np.zeros(grid.shape, dtype=bool)
    interior[:, :, 1:-1] = True
    psi_x = model.psi.values
    w_eucl = np.exp(-2.0 * grid.t[1:-1])
    tol = key_tol_factor * (grid.hx1 ** 2 + grid.ht ** 2)

    phi_eps: dict[float, Field] = {}
    records: dict = {"per_eps": {}}
    for eps in eps_list:
        c_e = -math.log(eps / 2.0) + C + 2.0
        b2 = v_eps[eps].values[:, :, None] - c_e + np.zeros_like(b0)
        pe = Field(grid, reg_max_values([b0, b1, b2]) + f.values)
        phi_eps[eps] = pe

        H = hermitian_hessian(pe, base, eps)
        ref = np.exp(psi_x)[:, :, None]
        dzz = H.gzz - ref
        dww = H.gww - ref * w_eucl[None, None, :]
        half_sum = 0.5 * (dzz + dww)
        half_diff = 0.5 * (dzz - dww)
        lam_min = half_sum - np.sqrt(half_diff ** 2 + H.gzw.real ** 2 + H.gzw.imag ** 2)
        free = ~mask3[:, :, 1:-1]
        margin = float(lam_min[free].min()) if free.any() else math.inf
        if verify_key and margin < -tol:
            flat = np.where(free, lam_min, np.inf)
            i, j, k = np.unravel_index(int(np.argmin(flat)), flat.shape)
            raise ValueError(
                f"key positivity violated at node ({i}, {j}, {k + 1}) "
                f"[x1={grid.x1[i]:.4f}, x2={grid.x2[j]:.4f}, t={grid.t[k + 1]:.4f}]: "
                f"margin {margin:.3e} < -{tol:.3e} at eps={eps}"
            )

        stats = derivative_stats(pe, region_mask=~mask3 if mask3.any() else None)
        wgt = np.exp(model.B0 * psi_x)[:, :, None]
        comb = (stats.grad.values + stats.hess_norm.values) * wgt
        free3 = ~mask3
        band = np.zeros(grid.shape, dtype=bool)
        reach = min(4, grid.nt // 2)
        band[:, :, : reach + 1] = True
        band[:, :, -(reach + 1):] = True
        records["per_eps"][eps] = {
            "key_min_margin": margin,
            "key_tolerance": tol,
            "derivative_constant_global": float(comb[free3].max()),
            "derivative_constant_boundary": float(comb[free3 & band].max()),
            "C_eps": c_e,
        }

    return BoundaryFamily(
        grid=grid, base=base, model=model, phi0=phi0, phi1=phi1,
        C_gap=C, beta0=beta0, v1_shift=v1_shift, f=f, phi=phi,
        eps_list=eps_list, _phi_eps=phi_eps, _v_eps={e: v_eps[e] for e in eps_list},
        records=records,
    )
