"""Weighted-estimate scans, oracle comparison, and the C^{1,1} probe.

The scanned quantities per converged (eps, beta) report and ladder weight B:

* weighted_grad           sup  e^{B psi} |grad u|          (non-masked nodes)
* paper_Q                 sup  e^{H(u~)} |grad u|^2,  u~ = u - (1+delta) psi,
                          H(s) = -B s + 1/(s+1)
* weighted_hess_boundary  sup  e^{B (F + psi)} |hess u|    (t-boundary band)
* weighted_lap            sup  e^{B psi~} |lap u|
* weighted_hess           sup  e^{B psi~} |hess u|

A per-estimate verdict is UNIFORM when the sup varies by at most a factor
two across the top half of the beta schedule and the two smallest eps; the
fitted beta-growth exponent is reported otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, ProductGrid, derivative_stats
from .models import SingularModel

__all__ = [
    "EstimateReport",
    "ScanResult",
    "estimate_scan",
    "oracle_compare",
    "c11_probe",
    "unweighted_hess_near",
]


@dataclass
class EstimateReport:
    eps: float
    beta: float
    B_used: float
    delta_used: float
    mask_radius: int
    weighted_grad: float
    paper_Q: float
    weighted_hess_boundary: float
    weighted_lap: float
    weighted_hess: float

    def values(self) -> dict[str, float]:
        return {
            "weighted_grad": self.weighted_grad,
            "paper_Q": self.paper_Q,
            "weighted_hess_boundary": self.weighted_hess_boundary,
            "weighted_lap": self.weighted_lap,
            "weighted_hess": self.weighted_hess,
        }


@dataclass
class ScanResult:
    entries: list[EstimateReport]
    verdicts: dict[float, dict[str, dict]]
    b_ladder: list[float]

    def entry(self, eps: float, beta: float, B: float) -> EstimateReport:
        for e in self.entries:
            if e.eps == eps and e.beta == beta and e.B_used == B:
                return e
        raise KeyError((eps, beta, B))


_ESTIMATE_NAMES = ("weighted_grad", "paper_Q", "weighted_hess_boundary",
                   "weighted_lap", "weighted_hess")


def _boundary_band(grid: ProductGrid, rows: int = 2) -> np.ndarray:
    band = np.zeros(grid.shape, dtype=bool)
    band[:, :, :rows] = True
    band[:, :, -rows:] = True
    return band


def estimate_scan(
    reports,
    model: SingularModel,
    B_ladder=(1.0, 2.0, 4.0, 8.0),
    mask_radius: int = 4,
    delta: float | None = None,
    q_variant: str = "psi",
    require_flags: bool = True,
) -> ScanResult:
    """Weighted sups over the B ladder for every converged report.

    Reports must carry clean sandwich and trace flags; pass
    ``require_flags=False`` to scan flagged runs anyway (recorded as-is).
    """
    if mask_radius < 2:
        raise ValueError("mask_radius below 2 grid cells")
    if q_variant not in ("psi", "tilde"):
        raise ValueError("q_variant must be 'psi' or 'tilde'")
    reports = [r for r in reports if r.converged]
    if not reports:
        raise ValueError("no converged reports to scan")
    if require_flags:
        bad = [r for r in reports if not (r.sandwich_ok and r.trace_bound_ok)]
        if bad:
            r = bad[0]
            raise ValueError(
                f"report (eps={r.eps}, beta={r.beta}) violates sandwich/trace flags; "
                "fix the run or pass require_flags=False"
            )

    delta = model.delta if delta is None else delta
    grid = reports[0].u.grid
    free = ~model.mask_product(radius_cells=mask_radius, grid=grid)
    band = _boundary_band(grid) & free
    psi = model.psi.values[:, :, None]
    tilde = model.tilde_psi.values[:, :, None]
    fpsi = (model.F.values + model.psi.values)[:, :, None]

    entries: list[EstimateReport] = []
    for rep in reports:
        stats = derivative_stats(rep.u)
        grad = stats.grad.values
        hess = stats.hess_norm.values
        lap = np.abs(stats.laplacian.values)
        if q_variant == "psi":
            u_t = rep.u.values - (1.0 + delta) * psi
        else:
            u_t = rep.u.values - (1.0 + delta / 2.0) * tilde
        for B in B_ladder:
            wB = np.exp(B * psi)
            wT = np.exp(B * tilde)
            wF = np.exp(B * fpsi)
            H_ut = -B * u_t + 1.0 / (u_t + 1.0)
            q_vals = np.exp(H_ut) * grad ** 2
            entries.append(EstimateReport(
                eps=rep.eps, beta=rep.beta, B_used=float(B), delta_used=delta,
                mask_radius=mask_radius,
                weighted_grad=float((wB * grad)[free].max()),
                paper_Q=float(q_vals[free].max()),
                weighted_hess_boundary=float((wF * hess)[band].max()) if band.any() else 0.0,
                weighted_lap=float((wT * lap)[free].max()),
                weighted_hess=float((wT * hess)[free].max()),
            ))

    verdicts = _verdicts(entries, reports, B_ladder)
    return ScanResult(entries=entries, verdicts=verdicts, b_ladder=list(B_ladder))


def _verdicts(entries, reports, B_ladder) -> dict[float, dict[str, dict]]:
    betas = sorted({r.beta for r in reports})
    eps_all = sorted({r.eps for r in reports})
    top_betas = set(betas[len(betas) // 2:])
    small_eps = set(eps_all[: min(2, len(eps_all))])
    out: dict[float, dict[str, dict]] = {}
    for B in B_ladder:
        out[float(B)] = {}
        sel = [e for e in entries
               if e.B_used == B and e.beta in top_betas and e.eps in small_eps]
        for name in _ESTIMATE_NAMES:
            vals = np.array([getattr(e, name) for e in sel])
            vals = vals[np.isfinite(vals) & (vals > 0)]
            if vals.size == 0:
                out[float(B)][name] = {"verdict": "UNIFORM", "spread": 1.0, "exponent": 0.0}
                continue
            spread = float(vals.max() / vals.min())
            pairs = [(e.beta, getattr(e, name)) for e in sel if getattr(e, name) > 0]
            if len({b for b, _ in pairs}) >= 2:
                lb = np.log([b for b, _ in pairs])
                lv = np.log([v for _, v in pairs])
                exponent = float(np.polyfit(lb, lv, 1)[0])
            else:
                exponent = 0.0
            out[float(B)][name] = {
                "verdict": "UNIFORM" if spread <= 2.0 else "GROWS",
                "spread": spread,
                "exponent": exponent,
            }
    return out


def unweighted_hess_near(u: Field, model: SingularModel, radius: float,
                         mask_radius: int = 4) -> float:
    """Sup of the raw Hessian norm within ``radius`` of a pole, outside the mask."""
    grid = u.grid
    if not model.singular_points:
        raise ValueError("model has no singular points")
    dist = grid.torus_distance(model.singular_points)
    near = (dist <= radius)[:, :, None] & ~model.mask_product(mask_radius, grid)
    near = np.broadcast_to(near, grid.shape) if near.shape != grid.shape else near
    if not near.any():
        raise ValueError("near-region empty: radius too small for this grid/mask")
    hess = derivative_stats(u).hess_norm.values
    return float(hess[near].max())


# ---------------------------------------------------------------------------
# comparisons and probes


def oracle_compare(V_num: Field, V_oracle: Field, norms=("sup", "mean", "grad_sup")) -> dict:
    """Interior-node differences between two fields on one grid.

    "grad_sup" compares first differences (the C^1 level).  t-boundary rows
    are excluded: the numeric field carries raw Dirichlet data there while
    the envelope carries its relaxed boundary limit.
    """
    if V_num.grid != V_oracle.grid:
        raise ValueError("grid mismatch")
    g = V_num.grid
    d = V_num.values - V_oracle.values
    di = d[:, :, 1:-1]
    out: dict[str, float] = {}
    if "sup" in norms:
        out["sup"] = float(np.abs(di).max())
    if "mean" in norms:
        out["mean"] = float(np.abs(di).mean())
    if "grad_sup" in norms:
        gx = (np.roll(d, -1, axis=0) - np.roll(d, 1, axis=0)) / (2 * g.hx1)
        gy = (np.roll(d, -1, axis=1) - np.roll(d, 1, axis=1)) / (2 * g.hx2)
        gt = (d[:, :, 2:] - d[:, :, :-2]) / (2 * g.ht)
        out["grad_sup"] = float(max(
            np.abs(gx[:, :, 1:-1]).max(),
            np.abs(gy[:, :, 1:-1]).max(),
            np.abs(gt).max(),
        ))
    return out


def _hess_and_jump(u: Field, mask_free: np.ndarray | None = None) -> tuple[float, float]:
    hess = derivative_stats(u).hess_norm.values
    sel = np.ones(u.grid.shape, dtype=bool) if mask_free is None else mask_free
    sel = sel.copy()
    sel[:, :, 0] = False
    sel[:, :, -1] = False
    sup = float(hess[sel].max())
    jump = 0.0
    for axis in (0, 1, 2):
        dj = np.abs(np.diff(hess, axis=axis))
        pair_sel = sel.take(range(dj.shape[axis]), axis=axis) & \
            sel.take(range(1, dj.shape[axis] + 1), axis=axis)
        if pair_sel.any():
            jump = max(jump, float(dj[pair_sel].max()))
    return sup, jump


def c11_probe(V_coarse: Field, V_fine: Field, model: SingularModel | None = None,
              mask_radius: int = 4) -> dict:
    """Hessian boundedness vs. Hessian continuity across one refinement.

    Reports the ratio of Hessian sups between the two resolutions (near 1
    when the Hessian is bounded) and the ratio of the largest
    neighbor-to-neighbor jump of the Hessian (staying order one when the
    second derivative is genuinely discontinuous, decaying like h when it
    is continuous).  Diagnostic only; no pass/fail.
    """
    free_c = None if model is None else ~model.mask_product(mask_radius, V_coarse.grid)
    free_f = None if model is None else ~model.mask_product(mask_radius, V_fine.grid)
    sup_c, jump_c = _hess_and_jump(V_coarse, free_c)
    sup_f, jump_f = _hess_and_jump(V_fine, free_f)
    return {
        "hess_sup_coarse": sup_c,
        "hess_sup_fine": sup_f,
        "hess_sup_ratio": sup_f / max(sup_c, 1e-300),
        "hess_jump_coarse": jump_c,
        "hess_jump_fine": jump_f,
        "hess_jump_ratio": jump_f / max(jump_c, 1e-300),
    }
