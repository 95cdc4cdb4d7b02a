"""envlab: plurisubharmonic envelopes and Mabuchi geodesics on T^2 x [0,1]."""

__version__ = "0.1.0"

from .berman import (
    ContinuationSchedule,
    NewtonParams,
    SolveReport,
    continuation_solve,
    extract_envelope,
    residual,
    solve_fixed,
)
from .estimates import c11_probe, estimate_scan, oracle_compare
from .grid import (
    BaseForm,
    Field,
    HermitianFormField,
    ProductGrid,
    XField,
    build_grid,
    derivative_stats,
    hermitian_hessian,
    ma_density,
)
from .models import (
    BoundaryFamily,
    SingularModel,
    annulus_potential,
    build_boundary_family,
    make_bounded_model,
    make_degenerate_form,
    make_singular_model,
    reg_max,
    reg_max_values,
    solve_kahler_potential,
)
from .obstacle import ObstacleSolution, appendix_certificates, solve_barrier, solve_obstacle
from .oracle import ConvexLift, convex_envelope_2d, discrete_legendre, geodesic_by_duality
from .presets import PRESET_NAMES, make_preset, restore_affine
from .runner import RunConfig, run
