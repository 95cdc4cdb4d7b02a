import math

import numpy as np
import pytest
from scipy.integrate import dblquad

from envlab.grid import BaseForm, Field, XField, build_grid, hermitian_hessian
from envlab.models import (
    EndpointPair,
    KahlerSolveError,
    annulus_potential,
    annulus_potential_profile,
    build_boundary_family,
    log_model_raw,
    make_bounded_model,
    make_degenerate_form,
    make_singular_model,
    reg_max,
    reg_max_values,
    smoothness_certificate,
    solve_kahler_potential,
)


def kahler_base(grid, a=1.0):
    return BaseForm(grid, np.full((grid.nx1, grid.nx2), float(a)))


class TestDegenerateForm:
    def test_lambda_zero_is_reference(self):
        g = build_grid(16, 16, 9)
        assert np.allclose(make_degenerate_form(0.0, g).a, 1.0)

    def test_lambda_four_values(self):
        g = build_grid(16, 16, 9, offset=False)
        a = make_degenerate_form(4.0, g).a
        assert abs(a[0, 0]) < 1e-14            # vanishes at (0, 0)
        assert abs(a[8, 8] - 2.0) < 1e-14      # 1 - (1/2)(-1 - 1) at (1/2, 1/2)

    def test_rejects_above_threshold(self):
        g = build_grid(16, 16, 9)
        with pytest.raises(ValueError):
            make_degenerate_form(4.5, g)


class TestRegMax:
    def test_far_gap_exact(self):
        out = reg_max_values([np.array([3.0]), np.array([0.0])])
        assert out[0] == 3.0

    def test_equal_inputs_in_band(self):
        a = np.array([0.0, 1.5, -2.0])
        out = reg_max_values([a, a])
        assert ((out > a) & (out <= a + 0.5)).all()

    def test_zero_pair_matches_quadrature(self):
        theta = lambda s: np.where(np.abs(s) <= 0.5, (35 / 16) * (1 - 4 * s ** 2) ** 3, 0.0)
        ref, _ = dblquad(lambda y2, y1: max(y1, y2) * theta(y1) * theta(y2),
                         -0.5, 0.5, -0.5, 0.5, epsabs=1e-12)
        out = float(reg_max_values([np.array([0.0]), np.array([0.0])])[0])
        assert 0.0 < out <= 0.5
        assert abs(out - ref) < 1e-9

    def test_pair_contract_on_lattice(self):
        v = np.arange(-3.0, 3.0001, 0.01)
        A, B = np.meshgrid(v, v, indexing="ij")
        M = reg_max_values([A, B])
        mx = np.maximum(A, B)
        assert (M >= mx).all()
        assert (M <= mx + 0.5).all()
        band = np.abs(A - B) >= 1.0
        assert (M[band] == mx[band]).all()

    def test_translation_invariance(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(-2, 2, 50), rng.uniform(-2, 2, 50)
        m0 = reg_max_values([a, b])
        m1 = reg_max_values([a + 0.37, b + 0.37])
        assert np.allclose(m1, m0 + 0.37, atol=1e-12)

    def test_three_arguments_locality(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(-1, 1, 200), rng.uniform(-1, 1, 200)
        far = np.minimum(a, b) - 2.0
        assert np.array_equal(reg_max_values([a, b, far]), reg_max_values([a, b]))

    def test_three_arguments_contract(self):
        rng = np.random.default_rng(2)
        vals = [rng.uniform(-1, 1, 500) for _ in range(3)]
        M = reg_max_values(vals)
        mx = np.maximum.reduce(vals)
        assert (M >= mx).all() and (M <= mx + 0.5).all()

    def test_spread_scaling(self):
        a, b = np.array([0.0]), np.array([0.0])
        m_half = reg_max_values([a, b], spread=0.5)[0]
        m_quarter = reg_max_values([a, b], spread=0.25)[0]
        assert abs(m_quarter - 0.5 * m_half) < 1e-12

    def test_field_wrapper_grid_mismatch(self):
        g1, g2 = build_grid(8, 8, 9), build_grid(8, 8, 11)
        with pytest.raises(ValueError):
            reg_max([Field.zeros(g1), Field.zeros(g2)])

    def test_positivity_preservation(self):
        # reg_max of two mildly psh inputs stays psh up to O(h^2)
        g = build_grid(32, 8, 17, offset=True)
        base = kahler_base(g)
        b1 = Field.from_function(g, lambda x1, x2, t: 0.05 * np.cos(2 * np.pi * x1) - t)
        b2 = Field.from_function(g, lambda x1, x2, t: 0.05 * np.sin(2 * np.pi * x1) - (1 - t))
        c = 0.05 * 4 * np.pi ** 2 / 4  # worst negative torus Hessian of the inputs
        for b in (b1, b2):
            H = hermitian_hessian(b, base, 0.0)
            assert H.gzz.min() >= 1 - c - 1e-9
        M = reg_max([b1, b2])
        Hm = hermitian_hessian(M, base, 0.0)
        tol = 50 * (g.hx1 ** 2 + g.ht ** 2)
        assert Hm.gzz.min() >= 1 - c - tol


class TestAnnulusPotential:
    def test_boundary_and_midpoint(self):
        f = annulus_potential_profile(np.array([0.0, 1.0, 0.5]))
        assert f[0] == 0.0 and abs(f[1]) < 1e-15
        assert abs(f[2] - (-0.1997886)) < 1e-6

    def test_discrete_equation(self):
        g = build_grid(8, 8, 129)
        f = annulus_potential(g)
        ftt = (f.values[0, 0, 2:] - 2 * f.values[0, 0, 1:-1] + f.values[0, 0, :-2]) / g.ht ** 2
        target = 4.0 * np.exp(-2.0 * g.t[1:-1])
        assert np.abs(ftt / 4.0 - target / 4.0).max() < 4 * g.ht ** 2


class TestKahlerPotential:
    def test_constant_balances(self):
        g = build_grid(16, 16, 9)
        v = solve_kahler_potential(kahler_base(g), 0.0, 1.0)
        assert np.abs(v.values).max() < 1e-10
        v2 = solve_kahler_potential(kahler_base(g, a=2.0), 0.0, 3.0)
        assert np.abs(v2.values - math.log(2.0) / 3.0).max() < 1e-10

    def test_monotone_in_eps(self):
        g = build_grid(16, 16, 9, offset=True)
        base = BaseForm(g, make_degenerate_form(2.0, g).a)
        v_big = solve_kahler_potential(base, 0.5, 1.0)
        v_small = solve_kahler_potential(base, 0.25, 1.0)
        assert (v_small.values <= v_big.values + 1e-12).all()

    def test_richardson_convergence(self):
        # second-order convergence on the degenerate base, eps = 1/4
        sols = {}
        for n in (64, 128, 256):
            g = build_grid(n, n, 9, offset=False)
            base = BaseForm(g, make_degenerate_form(2.0, g).a)
            sols[n] = solve_kahler_potential(base, 0.25, 1.0).values
        d1 = np.abs(sols[128][::2, ::2] - sols[64]).max()
        d2 = np.abs(sols[256][::2, ::2] - sols[128]).max()
        assert 3.0 < d1 / d2 < 5.0
        # frozen fine-grid value at x = (0, 0): Richardson-extrapolated oracle
        extrap = sols[256][0, 0] + (sols[256][0, 0] - sols[128][0, 0]) / 3.0
        assert abs(sols[256][0, 0] - extrap) < 1e-5

    def test_requires_positive_somewhere(self):
        g = build_grid(8, 8, 9)
        base = BaseForm(g, np.zeros((8, 8)))
        with pytest.raises(ValueError):
            solve_kahler_potential(base, 0.0, 1.0)


class TestSingularModel:
    def test_log_model_closed_forms(self):
        g = build_grid(16, 16, 9, offset=False)
        raw = log_model_raw(g, 1.0).values
        assert abs(raw[8, 8] - 0.5 * math.log(2.0)) < 1e-12        # x = (1/2, 1/2)
        assert abs(raw[4, 0] - 0.5 * math.log(0.5)) < 1e-12        # x = (1/4, 0)

    def test_flat_density_gives_zero_F(self):
        g = build_grid(16, 16, 9, offset=True)
        base = kahler_base(g)
        zero = XField.zeros(g)
        model = make_singular_model(1.0, base, EndpointPair(zero, zero), delta=0.5)
        assert np.abs(model.F.values).max() < 1e-12
        assert np.allclose(model.tilde_psi.values, model.psi.values)

    def test_psi_normalized_and_ordering(self):
        g = build_grid(16, 16, 9, offset=True)
        model = make_singular_model(1.0, kahler_base(g), (XField.zeros(g), XField.zeros(g)),
                                    delta=0.5)
        # normalized against the continuum sup (attained at (1/2, 1/2), off-node here)
        assert model.psi.values.max() <= -1.0
        assert model.psi.values.max() > -1.02
        assert (model.tilde_psi.values <= model.psi.values + 1e-12).all()
        assert (model.F.values <= 1e-12).all()
        assert model.B0 > 0

    def test_rejects_nonpositive_density(self):
        g = build_grid(16, 16, 9, offset=True)
        phi = XField.from_function(g, lambda x1, x2: 0.2 * np.cos(2 * np.pi * x1))
        with pytest.raises(ValueError, match="nonpositive"):
            make_singular_model(1.0, kahler_base(g), (phi, phi), delta=0.5)

    def test_certificate_stable_under_refinement(self):
        g = build_grid(24, 24, 9, offset=True)
        model = make_singular_model(1.0, kahler_base(g), (XField.zeros(g), XField.zeros(g)),
                                    delta=0.5)
        c0 = smoothness_certificate(model)
        c1 = smoothness_certificate(model, grid=g.refine())
        assert c1 <= 2.0 * c0

    def test_bounded_model(self):
        g = build_grid(8, 8, 9)
        model = make_bounded_model(kahler_base(g), level=-1.0)
        assert not model.singular_points
        assert not model.mask_x().any()


class TestBoundaryFamily:
    def build(self, phi1_amp=0.0, eps_list=(0.5, 0.25), grid=None, **kw):
        g = grid or build_grid(16, 8, 17, offset=True)
        base = kahler_base(g)
        phi0 = XField.zeros(g)
        raw1 = phi1_amp * np.cos(2 * np.pi * g.x1)[:, None] * np.ones((1, g.nx2))
        phi1 = XField(g, raw1 - raw1.max())
        model = make_bounded_model(base, level=-2.0)
        return g, build_boundary_family(phi0, phi1, base, model, list(eps_list), **kw)

    def test_x_independent_sections(self):
        g, fam = self.build(0.0)
        eps = 0.5
        pe = fam.phi_eps(eps)
        spread = np.abs(pe.values - pe.values[:1, :1, :]).max()
        assert spread < 1e-12
        expect = reg_max_values([-fam.C_gap * g.t, -fam.C_gap * (1 - g.t)]) \
            + annulus_potential_profile(g.t)
        assert np.allclose(pe.values[0, 0], expect, atol=1e-9)

    def test_boundary_rows_equal_data_when_gap_large(self):
        g, fam = self.build(0.02)
        pe = fam.phi_eps(0.5)
        assert np.allclose(pe.values[:, :, 0], fam.phi0.values, atol=1e-12)
        assert np.allclose(pe.values[:, :, -1], fam.phi1.values, atol=1e-12)

    def test_monotone_in_eps(self):
        g, fam = self.build(0.02, eps_list=(0.5, 0.25, 0.125))
        p1 = fam.phi_eps(0.5).values
        p2 = fam.phi_eps(0.25).values
        p3 = fam.phi_eps(0.125).values
        assert (p2 <= p1 + 1e-10).all()
        assert (p3 <= p2 + 1e-10).all()

    def test_large_eps_branch_inactive(self):
        # v_eps - C_eps far below both branches: phi_eps = phi exactly
        g, fam = self.build(0.02)
        pe = fam.phi_eps(0.5)
        b2 = fam.v_eps(0.5).values[:, :, None] - fam.C_eps(0.5)
        b0 = fam.phi0.values[:, :, None] - fam.C_gap * g.t[None, None, :]
        assert (b2 <= b0 - 1.0).all()
        assert np.allclose(pe.values, fam.phi.values, atol=1e-12)

    def test_key_positivity_verification_raises_on_bad_data(self):
        g = build_grid(16, 8, 17, offset=True)
        base = kahler_base(g)
        phi0 = XField.zeros(g)
        raw1 = 0.25 * (np.cos(2 * np.pi * g.x1)[:, None] - 1.0) * np.ones((1, g.nx2))
        phi1 = XField(g, raw1)
        model = make_bounded_model(base, level=-1.0)
        with pytest.raises(ValueError, match="key positivity violated at node"):
            build_boundary_family(phi0, phi1, base, model, [0.25], verify_key=True)

    def test_requires_normalized_endpoints(self):
        g = build_grid(16, 8, 17, offset=True)
        base = kahler_base(g)
        with pytest.raises(ValueError, match="normalized"):
            build_boundary_family(XField(g, np.ones((g.nx1, g.nx2))), XField.zeros(g),
                                  base, make_bounded_model(base), [0.5])

    def test_records_constants(self):
        g, fam = self.build(0.02)
        rec = fam.records["per_eps"][0.5]
        assert rec["key_min_margin"] > -rec["key_tolerance"]
        assert rec["derivative_constant_global"] >= rec["derivative_constant_boundary"] > 0
