"""Damped Newton with beta-continuation for the penalized Monge-Ampere path.

The equation solved at each (eps, beta) is, per interior node,

    det(alpha + eps*omega + i ddbar u) = exp(beta (u - h_eps) + 2 log(eps/4)) det(omega),

with Dirichlet data phi_eps on the t-boundaries and the positivity
constraint that the Hermitian form stays positive definite at every
accepted iterate.  Newton runs on the determinant-normalized residual

    R = det(g~)/det(omega) - exp(clip(beta (u - h_eps) + 2 log(eps/4)))

whose linearization tr(adj(g~) i ddbar du)/det(omega) - beta E du stays
bounded as the form degenerates.  The exponent is clamped below at -20:
beyond that the right-hand side is unresolvable against the float
cancellation noise of the discrete determinant, and clamping keeps the
Newton limit a strictly positive form instead of a sign-noise one, at the
price of an O(exp(-20)) perturbation of the density, orders of magnitude
below every tolerance in play.  The logarithmic residual of the unclamped
equation is exposed separately as `residual` for diagnostics and
subsolution checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Field, ProductGrid, hermitian_hessian, ma_density
from .models import BoundaryFamily
from .obstacle import ObstacleSolution

__all__ = [
    "NewtonParams",
    "ContinuationSchedule",
    "SolveReport",
    "ContinuationResult",
    "EnvelopeResult",
    "residual",
    "is_admissible",
    "solve_fixed",
    "continuation_solve",
    "extract_envelope",
]

EXPONENT_FLOOR = -20.0
EXPONENT_CAP = 500.0
SANDWICH_TOL = 1e-8
TRACE_TOL = 1e-6


@dataclass
class NewtonParams:
    max_iter: int = 60
    tol_residual_sup: float = 1e-9
    damping_min: float = 2.0 ** -20

    def __post_init__(self):
        if self.tol_residual_sup > 1e-8:
            raise ValueError("tol_residual_sup must be <= 1e-8")


@dataclass
class ContinuationSchedule:
    eps_list: list[float]
    beta_list: list[float]
    newton: NewtonParams = field(default_factory=NewtonParams)

    def __post_init__(self):
        if not self.eps_list or not self.beta_list:
            raise ValueError("empty schedule")
        if any(e <= 0 or e > 1 for e in self.eps_list):
            raise ValueError("eps_list must lie in (0, 1]")
        if list(self.eps_list) != sorted(self.eps_list, reverse=True):
            raise ValueError("eps_list must be decreasing")
        if list(self.beta_list) != sorted(self.beta_list):
            raise ValueError("beta_list must be increasing")

    @property
    def beta0(self) -> float:
        return self.beta_list[0]


@dataclass
class SolveReport:
    eps: float
    beta: float
    u: Field
    newton_iters: int
    residual_sup: float
    min_eigen_path: list[float]
    sandwich_ok: bool
    trace_bound_ok: bool
    converged: bool
    damping_underflow: bool = False
    merit_history: list[float] = field(default_factory=list)
    sandwich_lower_gap: float = 0.0   # min(u - phi_eps); violation if < -1e-8
    sandwich_upper_gap: float = 0.0   # min(h_eps - u); violation if < -1e-8
    trace_min: float = math.inf       # min of (eps/2) tr_{g~} omega

    def summary(self) -> dict:
        return {
            "eps": self.eps,
            "beta": self.beta,
            "newton_iters": self.newton_iters,
            "residual_sup": self.residual_sup,
            "converged": self.converged,
            "damping_underflow": self.damping_underflow,
            "sandwich_ok": self.sandwich_ok,
            "trace_bound_ok": self.trace_bound_ok,
            "sandwich_lower_gap": self.sandwich_lower_gap,
            "sandwich_upper_gap": self.sandwich_upper_gap,
            "trace_min": self.trace_min,
            "min_eigen_final": self.min_eigen_path[-1] if self.min_eigen_path else None,
        }


# ---------------------------------------------------------------------------
# diagnostics


def _obstacle_field(obstacle) -> Field:
    if isinstance(obstacle, ObstacleSolution):
        return obstacle.h
    if isinstance(obstacle, Field):
        return obstacle
    raise TypeError("obstacle must be an ObstacleSolution or a Field")


def residual(
    u: Field,
    family: BoundaryFamily,
    obstacle,
    eps: float,
    beta: float,
    enforce_boundary: bool = True,
) -> Field:
    """Logarithmic residual of the penalized equation (zero iff it holds).

    Per interior node: log det(g~) - log det(omega) - beta (u - h_eps)
    - 2 log(eps/4).  Boundary rows are reported as zero.  Raises if the
    density is nonpositive anywhere (outside the admissible cone).
    """
    g = u.grid
    h = _obstacle_field(obstacle)
    if enforce_boundary:
        pe = family.phi_eps(eps)
        gap = max(
            float(np.abs(u.values[:, :, 0] - pe.values[:, :, 0]).max()),
            float(np.abs(u.values[:, :, -1] - pe.values[:, :, -1]).max()),
        )
        if gap > 1e-9:
            raise ValueError(f"u does not match the eps={eps} Dirichlet data (gap {gap:.2e})")
    H = hermitian_hessian(u, family.base, eps)
    det = ma_density(H)
    if (H.gzz <= 0).any() or (det <= 0).any():
        raise ValueError("ma_density nonpositive: iterate outside the admissible cone")
    detw = family.base.det_omega(g.t[1:-1])[None, None, :]
    diff = (u.values - h.values)[:, :, 1:-1]
    r = np.log(det) - np.log(detw) - beta * diff - 2.0 * math.log(eps / 4.0)
    out = np.zeros(g.shape)
    out[:, :, 1:-1] = r
    return Field(g, out)


def is_admissible(u: Field, base, eps: float) -> bool:
    H = hermitian_hessian(u, base, eps)
    return H.is_positive()


# ---------------------------------------------------------------------------
# Newton machinery


class _StencilIndex:
    """Flat interior indices and periodic neighbor maps for one grid."""

    _cache: dict = {}

    def __new__(cls, grid: ProductGrid):
        if grid in cls._cache:
            return cls._cache[grid]
        self = super().__new__(cls)
        m = grid.nt - 2
        idx = np.arange(grid.nx1 * grid.nx2 * m).reshape(grid.nx1, grid.nx2, m)
        self.m = m
        self.idx = idx
        self.x1p = np.roll(idx, -1, axis=0)
        self.x1m = np.roll(idx, 1, axis=0)
        self.x2p = np.roll(idx, -1, axis=1)
        self.x2m = np.roll(idx, 1, axis=1)
        cls._cache[grid] = self
        return self


def _assemble_jacobian(grid: ProductGrid, H, detw: np.ndarray, betaE: np.ndarray) -> sp.csc_matrix:
    ix = _StencilIndex(grid)
    m = ix.m
    hx1, hx2, ht = grid.hx1, grid.hx2, grid.ht

    cx1 = H.gww / (4.0 * hx1 * hx1 * detw)
    cx2 = H.gww / (4.0 * hx2 * hx2 * detw)
    ct = H.gzz / (4.0 * ht * ht * detw)
    qr = H.gzw.real / detw
    qi = H.gzw.imag / detw

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    center = -2.0 * (cx1 + cx2 + ct) - betaE
    add(ix.idx, ix.idx, center)
    add(ix.idx, ix.x1p, cx1)
    add(ix.idx, ix.x1m, cx1)
    add(ix.idx, ix.x2p, cx2)
    add(ix.idx, ix.x2m, cx2)
    add(ix.idx[:, :, :-1], ix.idx[:, :, 1:], ct[:, :, :-1])
    add(ix.idx[:, :, 1:], ix.idx[:, :, :-1], ct[:, :, 1:])

    # mixed terms: -(qr d_x1t + qi d_x2t)/2 with centered corner stencils
    for q, xp, xm, hx in ((qr, ix.x1p, ix.x1m, hx1), (qi, ix.x2p, ix.x2m, hx2)):
        cc = q / (8.0 * hx * ht)
        add(ix.idx[:, :, :-1], xp[:, :, 1:], -cc[:, :, :-1])   # (+1, +1)
        add(ix.idx[:, :, 1:], xp[:, :, :-1], cc[:, :, 1:])     # (+1, -1)
        add(ix.idx[:, :, :-1], xm[:, :, 1:], cc[:, :, :-1])    # (-1, +1)
        add(ix.idx[:, :, 1:], xm[:, :, :-1], -cc[:, :, 1:])    # (-1, -1)

    n = grid.nx1 * grid.nx2 * m
    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return J.tocsr()


LINEAR_RESIDUAL_CONTRACT = 1e-10


class _NewtonLinearSolver:
    """AMG-preconditioned BiCGSTAB with hierarchy reuse and a direct fallback.

    The Jacobian drifts slowly between Newton steps, so one smoothed-
    aggregation hierarchy usually serves a whole solve; it is rebuilt when
    the Krylov iteration struggles, and SuperLU backstops everything.  Every
    returned direction satisfies the 1e-10 relative-residual contract.
    """

    def __init__(self):
        self._ml = None

    def _setup(self, J):
        self._ml = pyamg.smoothed_aggregation_solver(J, max_coarse=200,
                                                     symmetry="nonsymmetric")

    def solve(self, J, rhs) -> np.ndarray:
        rhs_norm = float(np.linalg.norm(rhs))
        if rhs_norm == 0.0:
            return np.zeros_like(rhs)
        for attempt in range(2):
            if self._ml is None or attempt:
                try:
                    self._setup(J)
                except Exception:
                    break
            M = self._ml.aspreconditioner(cycle="V")
            x, info = spla.bicgstab(J, rhs, M=M, rtol=1e-11, atol=0.0, maxiter=400)
            if info == 0:
                rel = float(np.linalg.norm(J @ x - rhs)) / rhs_norm
                if rel <= LINEAR_RESIDUAL_CONTRACT:
                    return x
        x = spla.splu(J.tocsc()).solve(rhs)
        return x


def _det_residual(u_vals, h_vals, base, eps, beta, grid):
    """(R, H, E, detw) for the determinant-normalized residual."""
    H = hermitian_hessian(Field(grid, u_vals), base, eps)
    detw = base.det_omega(grid.t[1:-1])[None, None, :]
    D = ma_density(H) / detw
    expo = beta * (u_vals - h_vals)[:, :, 1:-1] + 2.0 * math.log(eps / 4.0)
    E = np.exp(np.clip(expo, EXPONENT_FLOOR, EXPONENT_CAP))
    return D - E, H, E, detw


def _gate_ok(H) -> bool:
    return bool((H.gzz > 0).all() and (H.determinant() > 0).all())


def solve_fixed(
    family: BoundaryFamily,
    obstacle,
    eps: float,
    beta: float,
    init: Field,
    newton: NewtonParams | None = None,
    eps_form: float | None = None,
    allow_infeasible_start: bool = False,
    boundary_data: Field | None = None,
    density_floor: float = 0.0,
) -> SolveReport:
    """Damped Newton at fixed (eps, beta) from an admissible initial field.

    The t-boundary rows of the iterate are pinned to the family's phi_eps
    data.  Steps are accepted only if the Hermitian form stays positive at
    every interior node and the sup of the determinant residual decreases;
    the damping factor halving below ``damping_min`` is a failure, returned
    as a non-converged report carrying the last iterate.

    ``eps_form`` optionally inflates the form regularization only (used by
    the continuation bootstrap); data, obstacle and exponent stay at eps.
    ``allow_infeasible_start`` (bootstrap only) admits an initial field just
    outside the positivity cone: since the cone is convex and the Newton
    target lies strictly inside it, steps that raise the worst eigenvalue
    re-enter it, after which the strict gate applies.  ``boundary_data``
    overrides the pinned t-rows and ``density_floor`` adds a constant mu to
    the normalized right-hand density (both bootstrap devices; the
    production equation has mu = 0).
    """
    newton = newton or NewtonParams()
    grid = family.grid
    base = family.base
    h = _obstacle_field(obstacle)
    ef = eps if eps_form is None else eps_form
    if ef > base.eps_cap:
        raise ValueError(f"eps_form {ef} above base.eps_cap {base.eps_cap}")

    pe = family.phi_eps(eps) if boundary_data is None else boundary_data
    u = init.values.copy()
    u[:, :, 0] = pe.values[:, :, 0]
    u[:, :, -1] = pe.values[:, :, -1]

    def det_residual(uv):
        Hh = hermitian_hessian(Field(grid, uv), base, ef)
        detw = base.det_omega(grid.t[1:-1])[None, None, :]
        D = ma_density(Hh) / detw
        expo = beta * (uv - h.values)[:, :, 1:-1] + 2.0 * math.log(eps / 4.0)
        E = np.exp(np.clip(expo, EXPONENT_FLOOR, EXPONENT_CAP))
        return D - E - density_floor, Hh, E, detw

    R, H, E, detw = det_residual(u)
    in_cone = _gate_ok(H)
    if not in_cone and not allow_infeasible_start:
        raise ValueError("initial field is not strictly admissible for this eps")

    merit = float(np.abs(R).max())
    history = [merit]
    eig_path = [float(H.min_eigenvalue().min())]
    iters = 0
    underflow = False
    linsolve = _NewtonLinearSolver()

    while (merit > newton.tol_residual_sup or not in_cone) and iters < newton.max_iter:
        J = _assemble_jacobian(grid, H, detw, beta * E)
        du = linsolve.solve(J, -R.ravel()).reshape(R.shape)
        lam = 1.0
        accepted = False
        worst = float(H.min_eigenvalue().min())
        while lam >= newton.damping_min:
            trial = u.copy()
            trial[:, :, 1:-1] += lam * du
            R_new, H_new, E_new, _ = det_residual(trial)
            m_new = float(np.abs(R_new).max())
            if not np.isfinite(m_new):
                lam *= 0.5
                continue
            if in_cone:
                ok = _gate_ok(H_new) and (m_new < merit or m_new <= newton.tol_residual_sup)
            else:
                w_new = float(H_new.min_eigenvalue().min())
                ok = _gate_ok(H_new) or w_new > worst
            if ok:
                u, R, H, E = trial, R_new, H_new, E_new
                merit = m_new
                in_cone = in_cone or _gate_ok(H_new)
                accepted = True
                break
            lam *= 0.5
        iters += 1
        if not accepted:
            underflow = True
            break
        history.append(merit)
        eig_path.append(float(H.min_eigenvalue().min()))

    converged = merit <= newton.tol_residual_sup and in_cone and not underflow

    lower_gap = float((u - pe.values).min())
    upper_gap = float((h.values - u).min())
    det = H.determinant()
    w_int = base.annulus_weight(grid.t[1:-1])[None, None, :]
    trace = (H.gww * 1.0 + H.gzz * w_int) / det
    trace_min = float((0.5 * eps * trace).min())

    return SolveReport(
        eps=eps,
        beta=beta,
        u=Field(grid, u),
        newton_iters=iters,
        residual_sup=merit,
        min_eigen_path=eig_path,
        sandwich_ok=(lower_gap >= -SANDWICH_TOL and upper_gap >= -SANDWICH_TOL),
        trace_bound_ok=(trace_min >= 4.0 - TRACE_TOL),
        converged=converged,
        damping_underflow=underflow,
        merit_history=history,
        sandwich_lower_gap=lower_gap,
        sandwich_upper_gap=upper_gap,
        trace_min=trace_min,
    )


# ---------------------------------------------------------------------------
# continuation


@dataclass
class ContinuationResult:
    reports: list[SolveReport]
    beta_cauchy: dict[float, list[tuple[float, float]]]
    aborted: dict[float, str]

    def converged_reports(self) -> list[SolveReport]:
        return [r for r in self.reports if r.converged]


def _repin(u: Field, pe: Field) -> Field:
    v = u.values.copy()
    v[:, :, 0] = pe.values[:, :, 0]
    v[:, :, -1] = pe.values[:, :, -1]
    return Field(u.grid, v)


def _lift_off(u: Field, pe: Field, base, eps_form: float, max_tries: int = 60) -> Field | None:
    """Re-admit a warm start by adding a t(1-t) cushion.

    Converged iterates sit on the degenerate floor, so shrinking the form
    regularization leaves them infinitesimally outside the cone; subtracting
    c t(1-t) adds c/2 to the annulus diagonal without touching the boundary
    rows.  Returns None when no cushion fixes it (torus-direction deficit).
    """
    g = u.grid
    bump = (g.t * (1.0 - g.t))[None, None, :]
    v = _repin(u, pe).values
    total = 0.0
    cap = 1e4 * (1.0 + float(np.abs(pe.values).max()))
    for _ in range(max_tries):
        H = hermitian_hessian(Field(g, v), base, eps_form)
        if H.is_positive():
            return Field(g, v)
        deficit = -float(H.min_eigenvalue().min())
        c = 4.0 * max(deficit, 0.0) + 1e-9
        v = v - c * bump
        total += c
        if total > cap:
            return None
    H = hermitian_hessian(Field(g, v), base, eps_form)
    return Field(g, v) if H.is_positive() else None


def _admissible_start(family: BoundaryFamily, eps_form: float, warm: Field | None,
                      pe: Field) -> Field | None:
    if warm is not None:
        cand = _repin(warm, pe)
        if is_admissible(cand, family.base, eps_form):
            return cand
        cand = _lift_off(warm, pe, family.base, eps_form)
        if cand is not None:
            return cand
    if is_admissible(pe, family.base, eps_form):
        return pe
    return None


def _bootstrap(family: BoundaryFamily, obstacle, eps: float, beta0: float,
               newton: NewtonParams, warm: Field | None = None) -> Field:
    """Viscosity continuation in a density floor mu.

    With det/det(omega) = E + mu the equation is uniformly elliptic however
    degenerate the data; the boundary layer of non-psh data then sharpens
    gradually as mu anneals toward the exponent-clamp scale.  The starting
    field scales the interior of phi_eps into the positivity cone (the cone
    is convex and alpha + eps*omega is interior to it) and repairs the
    repinned rows with the t(1-t) cushion.
    """
    grid = family.grid
    pe = family.phi_eps(eps)

    u0 = None
    if warm is not None:
        u0 = _lift_off(warm, pe, family.base, eps)
    if u0 is None:
        s = 1.0
        while s > 2.0 ** -12:
            u0 = _lift_off(Field(grid, s * pe.values), pe, family.base, eps)
            if u0 is not None:
                break
            s *= 0.5
    if u0 is None:
        raise RuntimeError("no admissible starting field for the density continuation")

    boot = NewtonParams(max_iter=max(newton.max_iter, 100),
                        tol_residual_sup=newton.tol_residual_sup,
                        damping_min=newton.damping_min)
    u = u0
    mu = 0.25
    mu_prev = None
    stalls = 0
    while True:
        rep = solve_fixed(family, obstacle, eps, beta0, u, newton=boot, density_floor=mu)
        if rep.converged:
            u = rep.u
            if mu == 0.0:
                return u
            mu_prev = mu
            mu = 0.0 if mu <= 1e-10 else mu / 4.0
        else:
            stalls += 1
            if stalls > 24 or mu_prev is None:
                raise RuntimeError(
                    f"density continuation stalled at mu={mu:.3e} "
                    f"(residual {rep.residual_sup:.2e})"
                )
            mu = math.sqrt(mu * mu_prev) if mu > 0 else mu_prev / 2.0


def continuation_solve(
    schedule: ContinuationSchedule,
    family: BoundaryFamily,
    obstacles,
    progress=None,
) -> ContinuationResult:
    """Outer eps descent, inner ascending beta sweep with warm starts.

    ``obstacles`` maps eps to an ObstacleSolution (callable or dict).  A
    solve failure aborts the eps branch, preserving completed reports.  Per
    eps, the beta-Cauchy diagnostic sup|u_{2 beta} - u_beta| is recorded at
    the lower beta of each consecutive pair.
    """
    get_obstacle = obstacles if callable(obstacles) else obstacles.__getitem__
    reports: list[SolveReport] = []
    cauchy: dict[float, list[tuple[float, float]]] = {}
    aborted: dict[float, str] = {}
    prev_final: Field | None = None

    for eps in schedule.eps_list:
        h = get_obstacle(eps)
        pe = family.phi_eps(eps)
        u0 = _admissible_start(family, eps, prev_final, pe)
        if u0 is None:
            u0 = _bootstrap(family, h, eps, schedule.beta_list[0], schedule.newton,
                            warm=prev_final)

        cauchy[eps] = []
        prev_u = None
        prev_beta = None
        for beta in schedule.beta_list:
            rep = solve_fixed(family, h, eps, beta, u0, newton=schedule.newton)
            reports.append(rep)
            if progress is not None:
                progress(rep)
            if not rep.converged:
                aborted[eps] = (
                    f"beta={beta}: damping underflow" if rep.damping_underflow
                    else f"beta={beta}: residual {rep.residual_sup:.2e}"
                )
                break
            if prev_u is not None:
                d = float(np.abs(rep.u.values - prev_u.values).max())
                cauchy[eps].append((prev_beta, d))
            prev_u = rep.u
            prev_beta = beta
            u0 = rep.u
        if eps not in aborted and prev_u is not None:
            prev_final = prev_u

    return ContinuationResult(reports=reports, beta_cauchy=cauchy, aborted=aborted)


@dataclass
class EnvelopeResult:
    field: Field
    uncertainty: float
    eps: float
    beta: float
    degenerate: bool  # True when only one beta level was available


def extract_envelope(result: ContinuationResult | list[SolveReport]) -> EnvelopeResult:
    """Largest-beta iterate at the smallest eps, with beta-Cauchy uncertainty."""
    if isinstance(result, ContinuationResult):
        reports = result.converged_reports()
        cauchy = result.beta_cauchy
    else:
        reports = [r for r in result if r.converged]
        cauchy = {}
    if not reports:
        raise ValueError("no converged reports to extract from")
    eps_min = min(r.eps for r in reports)
    branch = sorted((r for r in reports if r.eps == eps_min), key=lambda r: r.beta)
    top = branch[-1]
    if len(branch) >= 2:
        unc = float(np.abs(branch[-1].u.values - branch[-2].u.values).max())
        degenerate = False
    else:
        diffs = cauchy.get(eps_min, [])
        unc = diffs[-1][1] if diffs else math.inf
        degenerate = not diffs
    return EnvelopeResult(field=top.u, uncertainty=unc, eps=eps_min, beta=top.beta,
                          degenerate=degenerate)
