"""Dirichlet problems for the reference Laplacian: obstacles and the barrier.

The complex Laplacian convention used everywhere is the trace against the
reference form:

    Lap_omega u = u_{z zbar} / omega_{z zbar} + u_{w wbar} / omega_{w wbar}
                = (u_x1x1 + u_x2x2) / 4 + u_tt / (4 * w_A(t)),

so the obstacle solves Lap_omega h = -4 (twice the complex dimension, with
the factor-two convention folded in once here) and the barrier solves
Lap_omega b = -1, both with Dirichlet data on the t-boundaries and periodic
x topology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import BaseForm, Field, ProductGrid, _dt_full, _dtt_full, _dx, _dxx, derivative_stats
from .models import BoundaryFamily, SingularModel

__all__ = [
    "ObstacleSolution",
    "solve_laplace_dirichlet",
    "solve_obstacle",
    "solve_barrier",
    "appendix_certificates",
]

OBSTACLE_RHS = -4.0  # Lap_omega h = -2n with n = 2
BARRIER_RHS = -1.0


@dataclass
class ObstacleSolution:
    h: Field
    eps: float | None
    boundary_source: BoundaryFamily | None
    residual_norm: float

    def above_data_margin(self) -> float | None:
        """min(h - phi_eps); nonnegative by the discrete maximum principle."""
        if self.boundary_source is None or self.eps is None:
            return None
        pe = self.boundary_source.phi_eps(self.eps)
        return float((self.h.values - pe.values).min())


_factor_cache: dict = {}


def _laplace_factor(grid: ProductGrid, base: BaseForm):
    key = (grid, base.kappa_A, base.flat_annulus)
    if key in _factor_cache:
        return _factor_cache[key]
    m = grid.nt - 2

    def lap1d_periodic(n, h):
        e = np.ones(n)
        L = sp.diags([e, -2 * e, e], [-1, 0, 1], shape=(n, n), format="lil")
        L[0, -1] = 1.0
        L[-1, 0] = 1.0
        return (L / (h * h)).tocsr()

    Lx = lap1d_periodic(grid.nx1, grid.hx1)
    Ly = lap1d_periodic(grid.nx2, grid.hx2)
    Ixy = sp.eye(grid.nx1 * grid.nx2, format="csr")
    Lxy = sp.kron(Lx, sp.eye(grid.nx2, format="csr")) + sp.kron(sp.eye(grid.nx1, format="csr"), Ly)

    e = np.ones(m)
    Lt = sp.diags([e, -2 * e, e], [-1, 0, 1], shape=(m, m), format="csr") / (grid.ht ** 2)
    w_int = base.annulus_weight(grid.t[1:-1])
    Winv = sp.diags(1.0 / w_int)

    A = sp.kron(Lxy, sp.eye(m, format="csr")) / 4.0 + sp.kron(Ixy, Winv @ Lt) / 4.0
    lu = spla.splu(A.tocsc())
    _factor_cache[key] = (A.tocsr(), lu, w_int)
    return _factor_cache[key]


def solve_laplace_dirichlet(
    grid: ProductGrid,
    base: BaseForm,
    data0: np.ndarray,
    data1: np.ndarray,
    rhs_const: float,
) -> tuple[Field, float]:
    """Solve Lap_omega h = rhs_const with h = data0 at t=0, data1 at t=1.

    Returns the field and the relative residual of the sparse solve.
    """
    A, lu, w_int = _laplace_factor(grid, base)
    m = grid.nt - 2
    rhs = np.full((grid.nx1, grid.nx2, m), float(rhs_const))
    rhs[:, :, 0] -= np.asarray(data0) / (4.0 * grid.ht ** 2 * w_int[0])
    rhs[:, :, -1] -= np.asarray(data1) / (4.0 * grid.ht ** 2 * w_int[-1])
    b = rhs.ravel()
    x = lu.solve(b)
    res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
    values = np.empty(grid.shape)
    values[:, :, 0] = data0
    values[:, :, -1] = data1
    values[:, :, 1:-1] = x.reshape(grid.nx1, grid.nx2, m)
    return Field(grid, values), res


def solve_obstacle(family: BoundaryFamily, eps: float) -> ObstacleSolution:
    """Obstacle h_eps: Lap_omega h = -4 with the family's eps boundary data."""
    data0, data1 = family.boundary_values(eps)
    h, res = solve_laplace_dirichlet(family.grid, family.base, data0, data1, OBSTACLE_RHS)
    if res > 1e-10:
        raise RuntimeError(f"obstacle linear solve residual {res:.3e} above contract 1e-10")
    return ObstacleSolution(h=h, eps=eps, boundary_source=family, residual_norm=res)


def solve_barrier(grid: ProductGrid, base: BaseForm | None = None) -> ObstacleSolution:
    """Barrier b: Lap_omega b = -1, zero boundary data.

    With the flat annulus profile and kappa_A = 1 the solution is the
    t-quadratic 2 t (1 - t).
    """
    if base is None:
        base = BaseForm(grid, np.ones((grid.nx1, grid.nx2)), kappa_A=1.0, flat_annulus=True)
    zero = np.zeros((grid.nx1, grid.nx2))
    b, res = solve_laplace_dirichlet(grid, base, zero, zero, BARRIER_RHS)
    if res > 1e-10:
        raise RuntimeError(f"barrier linear solve residual {res:.3e} above contract 1e-10")
    return ObstacleSolution(h=b, eps=None, boundary_source=None, residual_norm=res)


# ---------------------------------------------------------------------------
# weighted-derivative certificates


def _third_derivative_norm(u: Field) -> np.ndarray:
    """Frobenius norm of the symmetric third-derivative tensor (flat coords)."""
    g = u.grid
    v = u.values
    dx1 = lambda a: _dx(a, g.hx1, 0)
    dx2 = lambda a: _dx(a, g.hx2, 1)
    dt = lambda a: _dt_full(a, g.ht)
    dxx1 = lambda a: _dxx(a, g.hx1, 0)
    dxx2 = lambda a: _dxx(a, g.hx2, 1)
    dtt = lambda a: _dtt_full(a, g.ht)

    comps = {
        (3, 0, 0): dx1(dxx1(v)),
        (0, 3, 0): dx2(dxx2(v)),
        (0, 0, 3): dt(dtt(v)),
        (2, 1, 0): dx2(dxx1(v)),
        (2, 0, 1): dt(dxx1(v)),
        (1, 2, 0): dx1(dxx2(v)),
        (0, 2, 1): dt(dxx2(v)),
        (1, 0, 2): dx1(dtt(v)),
        (0, 1, 2): dx2(dtt(v)),
        (1, 1, 1): dx1(dx2(dt(v))),
    }
    total = np.zeros_like(v)
    for (i, j, k), c in comps.items():
        mult = math.factorial(3) // (math.factorial(i) * math.factorial(j) * math.factorial(k))
        total += mult * c ** 2
    return np.sqrt(total)


def _order_norms(u: Field) -> dict[int, np.ndarray]:
    stats = derivative_stats(u)
    return {
        1: stats.grad.values,
        2: stats.hess_norm.values,
        3: _third_derivative_norm(u),
    }


def _weighted_sup(vals: np.ndarray, psi_x: np.ndarray, B: float, free: np.ndarray) -> float:
    w = np.exp(B * psi_x)[:, :, None]
    return float((vals * w)[free].max())


def appendix_certificates(
    solution: ObstacleSolution,
    model: SingularModel,
    solution_fine: ObstacleSolution | None = None,
    model_fine: SingularModel | None = None,
    orders: int = 3,
    ladder: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0),
    stability_factor: float = 2.0,
) -> dict:
    """Scan the ladder for weighted-derivative certificates of the obstacle.

    For each derivative order j <= orders, reports the smallest ladder B for
    which sup over non-masked nodes of |grad^j h| e^{B psi} is stable (ratio
    at most ``stability_factor``) under one grid refinement; the refined
    solve and model must be supplied for the stability column.  Also checks
    the barrier domination  h_eps <= phi_eps + e^{-B psi} b  over the ladder.
    """
    grid = solution.h.grid
    free = ~model.mask_product()
    norms = _order_norms(solution.h)
    psi = model.psi.values

    fine = None
    if solution_fine is not None:
        if model_fine is None:
            raise ValueError("model_fine required with solution_fine")
        fine = (_order_norms(solution_fine.h), model_fine.psi.values,
                ~model_fine.mask_product())

    entries = []
    for order in range(1, orders + 1):
        chosen = None
        for B in ladder:
            sup_c = _weighted_sup(norms[order], psi, B, free)
            row = {"order": order, "B": B, "weighted_sup": sup_c, "refinement_ratio": None,
                   "stable": None}
            if fine is not None:
                sup_f = _weighted_sup(fine[0][order], fine[1], B, fine[2])
                ratio = sup_f / max(sup_c, 1e-300)
                row["refinement_ratio"] = ratio
                row["stable"] = bool(ratio <= stability_factor)
            entries.append(row)
            if chosen is None and (row["stable"] or fine is None):
                chosen = B
        entries.append({"order": order, "B": chosen, "weighted_sup": None,
                        "refinement_ratio": None, "stable": None, "selected": True})

    barrier_B = None
    if solution.boundary_source is not None and solution.eps is not None:
        fam = solution.boundary_source
        b = solve_barrier(grid, fam.base).h.values
        pe = fam.phi_eps(solution.eps).values
        h = solution.h.values
        for B in ladder:
            bound = pe + np.exp(-B * psi)[:, :, None] * b
            if float((h - bound)[free].max()) <= 1e-9:
                barrier_B = B
                break

    selected = {e["order"]: e["B"] for e in entries if e.get("selected")}
    return {
        "entries": [e for e in entries if not e.get("selected")],
        "selected_B": selected,
        "barrier_sandwich_B": barrier_B,
        "barrier_sandwich_ok": barrier_B is not None,
        "ladder": list(ladder),
    }
