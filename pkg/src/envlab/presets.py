"""Named model configurations wired end to end.

A preset fixes the base form, the singular model, raw endpoint potentials
(which get sup-normalized here; the affine-in-t shift that restores the raw
data is recorded and applied by ``restore_affine``), per-preset solver
safeguards, and whether the reduction oracle applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import BaseForm, Field, ProductGrid, XField, build_grid
from .models import (
    BoundaryFamily,
    build_boundary_family,
    make_bounded_model,
    make_degenerate_form,
    make_singular_model,
)

__all__ = ["PresetBundle", "PRESET_NAMES", "make_preset", "default_grid", "restore_affine"]


@dataclass
class PresetBundle:
    name: str
    grid: ProductGrid
    base: BaseForm
    model: object
    phi0: XField          # sup-normalized
    phi1: XField
    d0: float             # raw = normalized + d0 (1-t) + d1 t  ... affine restore
    d1: float
    x1_only: bool
    verify_key: bool
    hull_oracle: bool     # oracle needs nonconvex="hull" for this data

    def build_family(self, eps_list, beta0: float = 1.0, **kw) -> BoundaryFamily:
        kw.setdefault("verify_key", self.verify_key)
        return build_boundary_family(self.phi0, self.phi1, self.base, self.model,
                                     eps_list, beta0=beta0, **kw)


def restore_affine(bundle: PresetBundle, field: Field) -> Field:
    """Undo the endpoint normalization: add d0 (1 - t) + d1 t."""
    t = field.grid.t[None, None, :]
    return Field(field.grid, field.values + bundle.d0 * (1.0 - t) + bundle.d1 * t)


def _normalize(grid: ProductGrid, raw: np.ndarray) -> tuple[XField, float]:
    top = float(raw.max())
    return XField(grid, raw - top, allow_neg_inf=True), top


_DEFAULT_GRIDS = {
    "constants": (32, 32, 33),
    "smooth": (256, 8, 65),
    "cos-mild": (64, 8, 33),
    "degenerate-lambda4": (24, 24, 13),
    "log-singular-c1": (32, 32, 17),
    "flat-zero": (16, 16, 33),
}

PRESET_NAMES = tuple(_DEFAULT_GRIDS)


def default_grid(name: str) -> tuple[int, int, int]:
    return _DEFAULT_GRIDS[name]


def make_preset(name: str, grid: ProductGrid | None = None) -> PresetBundle:
    if name not in _DEFAULT_GRIDS:
        raise KeyError(f"unknown preset {name!r}; have {', '.join(PRESET_NAMES)}")
    if grid is None:
        nx1, nx2, nt = _DEFAULT_GRIDS[name]
        grid = build_grid(nx1, nx2, nt, offset=True)
    X1, _ = np.meshgrid(grid.x1, grid.x2, indexing="ij")

    if name == "constants":
        base = make_degenerate_form(0.0, grid)
        phi0, d0 = _normalize(grid, np.zeros_like(X1))
        phi1, d1 = _normalize(grid, np.ones_like(X1))
        model = make_bounded_model(base, level=-1.0)
        return PresetBundle(name, grid, base, model, phi0, phi1, d0, d1,
                            x1_only=True, verify_key=True, hull_oracle=False)

    if name == "smooth":
        # data amplitude exceeds the psh threshold 1/pi^2; the envelope then
        # relaxes to the hulled boundary values and phi_eps is not a
        # subsolution, so key verification is off and the oracle hulls.
        base = make_degenerate_form(0.0, grid)
        phi0, d0 = _normalize(grid, np.zeros_like(X1))
        phi1, d1 = _normalize(grid, 0.25 * np.cos(2 * np.pi * X1))
        model = make_bounded_model(base, level=-1.0)
        return PresetBundle(name, grid, base, model, phi0, phi1, d0, d1,
                            x1_only=True, verify_key=False, hull_oracle=True)

    if name == "cos-mild":
        base = make_degenerate_form(0.0, grid)
        phi0, d0 = _normalize(grid, np.zeros_like(X1))
        phi1, d1 = _normalize(grid, 0.08 * np.cos(2 * np.pi * X1))
        model = make_bounded_model(base, level=-2.0)
        return PresetBundle(name, grid, base, model, phi0, phi1, d0, d1,
                            x1_only=True, verify_key=True, hull_oracle=False)

    if name in ("degenerate-lambda4", "log-singular-c1"):
        if not grid.offset:
            raise ValueError(f"preset {name} needs an offset grid (log pole at a lattice point)")
        lam = 4.0 if name == "degenerate-lambda4" else 0.0
        base = make_degenerate_form(lam, grid)
        s, tau = 0.05, 0.02
        psi_shape = _log_psi_normalized(grid)
        phi0, d0 = _normalize(grid, s * psi_shape)
        phi1, d1 = _normalize(grid, s * psi_shape + tau * (np.cos(2 * np.pi * X1) - 1.0))
        model = make_singular_model(1.0, base, (phi0, phi1), delta=0.5)
        return PresetBundle(name, grid, base, model, phi0, phi1, d0, d1,
                            x1_only=False, verify_key=True, hull_oracle=False)

    if name == "flat-zero":
        base = BaseForm(grid, np.ones((grid.nx1, grid.nx2)), kappa_A=1.0, flat_annulus=True)
        phi0, d0 = _normalize(grid, np.zeros_like(X1))
        phi1, d1 = _normalize(grid, np.zeros_like(X1))
        model = make_bounded_model(base, level=-1.0)
        return PresetBundle(name, grid, base, model, phi0, phi1, d0, d1,
                            x1_only=True, verify_key=True, hull_oracle=False)

    raise AssertionError(name)


def _log_psi_normalized(grid: ProductGrid) -> np.ndarray:
    X1, X2 = np.meshgrid(grid.x1, grid.x2, indexing="ij")
    sval = np.sin(np.pi * X1) ** 2 + np.sin(np.pi * X2) ** 2
    with np.errstate(divide="ignore"):
        raw = 0.5 * np.log(sval)
    return raw - 0.5 * math.log(2.0) - 1.0
