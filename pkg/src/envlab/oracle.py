"""Independent ground truth for the torus-invariant reduction.

For data depending only on x1 (and S^1-invariant in the annulus angle), a
potential u is psh for the flat reference exactly when its lift
V(x) = 2 x^2 + u(x) is convex on the universal cover: the reduced complex
Monge-Ampere determinant is (1/16)[(4 + u_xx) u_tt - u_xt^2], so the
homogeneous equation becomes the real homogeneous Monge-Ampere equation
for the lift.  Two independent constructions of the same envelope are
provided:

* ``geodesic_by_duality``: Legendre conjugates of the lifted endpoints are
  interpolated linearly in t and transformed back.  Conjugation is carried
  out exactly on the piecewise-linear lower hulls (breakpoint arithmetic),
  so the result is the exact convex interpolant of the sampled data.

* ``convex_envelope_2d``: the lower convex hull in (x, t, value) of the
  boundary-line samples, evaluated as a maximum of supporting facet planes
  (qhull).

Both unroll the periodic data over an integer window (default 3 periods on
each side); the quadratic growth of the lift keeps all supporting slopes
for x in [0, 1] well inside the window.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .grid import Field, ProductGrid, XField

__all__ = [
    "ConvexLift",
    "discrete_legendre",
    "legendre_transform_samples",
    "geodesic_by_duality",
    "convex_envelope_2d",
    "geodesic_field",
    "envelope_field",
]

CONVEXITY_TOL = 1e-10
LIFT_COEFF = 2.0  # V(x) = 2 x^2 + u(x)


def _x1_profile(phi: XField) -> np.ndarray:
    vals = phi.values
    spread = float(np.abs(vals - vals[:, :1]).max())
    if spread > 1e-12:
        raise ValueError("oracle requires x1-only data (values vary along x2)")
    return vals[:, 0].copy()


@dataclass
class ConvexLift:
    """Samples of the lift V(x) = 2 x^2 + u(x) on an unrolled window.

    ``x`` is uniformly spaced over [-K, K+1); ``convex`` records whether the
    sampled second differences are nonnegative (within 1e-10).
    """

    x: np.ndarray
    V: np.ndarray
    K: int
    n_periodic: int
    convex: bool

    @classmethod
    def from_x_potential(cls, phi: XField, K: int = 3, strict: bool = True) -> "ConvexLift":
        if K < 2:
            raise ValueError("window K must be >= 2")
        prof = _x1_profile(phi)
        n = prof.size
        g = phi.grid
        base_x = g.x1
        xs, vs = [], []
        for shift in range(-K, K + 1):
            xs.append(base_x + shift)
            vs.append(prof)
        x = np.concatenate(xs)
        u = np.concatenate(vs)
        V = LIFT_COEFF * x * x + u
        d2 = V[2:] - 2 * V[1:-1] + V[:-2]
        convex = bool((d2 >= -CONVEXITY_TOL * max(1.0, np.abs(V).max())).all())
        if strict and not convex:
            raise ValueError("lift is not convex: endpoint is not psh for the flat reference")
        lift = cls(x=x, V=V, K=K, n_periodic=n, convex=convex)
        lift.check_quasi_periodicity()
        return lift

    def check_quasi_periodicity(self, tol: float = 1e-10) -> float:
        n = self.n_periodic
        lhs = self.V[n:] - self.V[:-n] - 4.0 * self.x[:-n] - 2.0
        worst = float(np.abs(lhs).max())
        if worst > tol * max(1.0, float(np.abs(self.V).max())):
            raise ValueError(f"quasi-periodicity violated by {worst:.2e}")
        return worst

    def slope_range(self) -> tuple[float, float]:
        s = np.diff(self.V) / np.diff(self.x)
        return float(s.min()), float(s.max())


def _lower_hull_indices(x: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Monotone-chain lower hull of the graph points (x ascending)."""
    keep: list[int] = []
    for i in range(x.size):
        while len(keep) >= 2:
            i0, i1 = keep[-2], keep[-1]
            # drop i1 if it lies on or above the chord i0 -> i
            cross = (x[i1] - x[i0]) * (V[i] - V[i0]) - (x[i] - x[i0]) * (V[i1] - V[i0])
            if cross >= 0.0:
                break
            keep.pop()
        keep.append(i)
    return np.asarray(keep, dtype=int)


def legendre_transform_samples(x: np.ndarray, V: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """V*(p) = max_i (p x_i - V_i) by a monotone linear-time scan.

    Assumes x ascending and slopes ascending; the argmax index is then
    nondecreasing, which is what makes the scan linear.
    """
    out = np.empty(slopes.size)
    j = 0
    n = x.size
    for k, p in enumerate(slopes):
        while j + 1 < n and p * x[j + 1] - V[j + 1] >= p * x[j] - V[j]:
            j += 1
        out[k] = p * x[j] - V[j]
    return out


def discrete_legendre(lift: ConvexLift, slopes: np.ndarray) -> np.ndarray:
    """Conjugate of a convex lift on a slope grid; warns outside the attained range."""
    if not lift.convex:
        raise ValueError("discrete_legendre requires a convex lift")
    slopes = np.asarray(slopes, dtype=float)
    if (np.diff(slopes) < 0).any():
        slopes = np.sort(slopes)
    lo, hi = lift.slope_range()
    if slopes.min() < lo or slopes.max() > hi:
        warnings.warn("slope grid exceeds the attained slope range; values are clamped "
                      "to the window's supporting lines", RuntimeWarning, stacklevel=2)
    return legendre_transform_samples(lift.x, lift.V, slopes)


def _dual_vertices(lift: ConvexLift) -> tuple[np.ndarray, np.ndarray]:
    """Hull vertices (x_h, V_h); the hull's edge slopes are the dual breakpoints."""
    idx = _lower_hull_indices(lift.x, lift.V)
    return lift.x[idx], lift.V[idx]


def geodesic_by_duality(
    phi0: XField,
    phi1: XField,
    t_levels: np.ndarray,
    K: int = 3,
    nonconvex: str = "reject",
) -> np.ndarray:
    """Exact reduced geodesic: linear interpolation of endpoint conjugates.

    Returns an array (nx1, len(t_levels)).  With ``nonconvex="reject"``
    (default) non-psh endpoints raise; ``"hull"`` replaces the data by its
    convex hull, which is what the envelope of the boundary data relaxes to.
    """
    if nonconvex not in ("reject", "hull"):
        raise ValueError("nonconvex must be 'reject' or 'hull'")
    strict = nonconvex == "reject"
    l0 = ConvexLift.from_x_potential(phi0, K=K, strict=strict)
    l1 = ConvexLift.from_x_potential(phi1, K=K, strict=strict)
    x0, V0 = _dual_vertices(l0)
    x1, V1 = _dual_vertices(l1)

    s0 = np.diff(V0) / np.diff(x0)
    s1 = np.diff(V1) / np.diff(x1)
    slopes = np.unique(np.concatenate([s0, s1]))

    c0 = legendre_transform_samples(x0, V0, slopes)
    c1 = legendre_transform_samples(x1, V1, slopes)

    g = phi0.grid
    xq = g.x1
    t_levels = np.asarray(t_levels, dtype=float)
    out = np.empty((xq.size, t_levels.size))
    for kt, t in enumerate(t_levels):
        ct = (1.0 - t) * c0 + t * c1
        # conjugate back: max over dual breakpoints, argmax monotone in x
        j = 0
        n = slopes.size
        for ii, xx in enumerate(xq):
            while j + 1 < n and slopes[j + 1] * xx - ct[j + 1] >= slopes[j] * xx - ct[j]:
                j += 1
            out[ii, kt] = slopes[j] * xx - ct[j] - LIFT_COEFF * xx * xx
    return out


def convex_envelope_2d(
    phi0: XField,
    phi1: XField,
    t_levels: np.ndarray,
    K: int = 3,
) -> np.ndarray:
    """Convex envelope in (x, t) of the two boundary lines of lifted data.

    Largest function convex on the unrolled slab lying below the lifted data
    at t = 0 and t = 1, computed as the maximum of the supporting planes of
    the lower hull facets.  Returns (nx1, len(t_levels)), unlifted.
    """
    p0 = _x1_profile(phi0)
    p1 = _x1_profile(phi1)
    g = phi0.grid
    base_x = g.x1
    pts = []
    for shift in range(-K, K + 1):
        x = base_x + shift
        pts.append(np.column_stack([x, np.zeros_like(x), LIFT_COEFF * x * x + p0]))
        pts.append(np.column_stack([x, np.ones_like(x), LIFT_COEFF * x * x + p1]))
    P = np.vstack(pts)
    hull = ConvexHull(P)
    eqs = hull.equations  # rows: (a, b, c, d) with a x + b t + c V + d <= 0 inside
    lower = eqs[eqs[:, 2] < -1e-12]
    # on a lower facet: V = -(a x + b t + d) / c
    a, b, c, d = lower[:, 0], lower[:, 1], lower[:, 2], lower[:, 3]

    t_levels = np.asarray(t_levels, dtype=float)
    xq = base_x
    out = np.full((xq.size, t_levels.size), -np.inf)
    X, T = np.meshgrid(xq, t_levels, indexing="ij")
    chunk = 256
    for s in range(0, a.size, chunk):
        sl = slice(s, s + chunk)
        planes = -(a[sl][:, None, None] * X[None] + b[sl][:, None, None] * T[None]
                   + d[sl][:, None, None]) / c[sl][:, None, None]
        out = np.maximum(out, planes.max(axis=0))
    return out - LIFT_COEFF * xq[:, None] ** 2


# ---------------------------------------------------------------------------
# field adapters


def _to_field(grid: ProductGrid, profile: np.ndarray) -> Field:
    vals = np.repeat(profile[:, None, :], grid.nx2, axis=1)
    return Field(grid, vals)


def geodesic_field(grid: ProductGrid, phi0: XField, phi1: XField,
                   K: int = 3, nonconvex: str = "reject") -> Field:
    return _to_field(grid, geodesic_by_duality(phi0, phi1, grid.t, K=K, nonconvex=nonconvex))


def envelope_field(grid: ProductGrid, phi0: XField, phi1: XField, K: int = 3) -> Field:
    return _to_field(grid, convex_envelope_2d(phi0, phi1, grid.t, K=K))
