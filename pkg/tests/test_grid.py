import numpy as np
import pytest

from envlab.grid import (
    BaseForm,
    Field,
    HermitianFormField,
    ProductGrid,
    build_grid,
    derivative_stats,
    hermitian_hessian,
    ma_density,
)


def flat_base(grid, a=1.0, kappa=1.0):
    return BaseForm(grid, np.full((grid.nx1, grid.nx2), float(a)), kappa_A=kappa,
                    flat_annulus=True)


class TestBuildGrid:
    def test_node_count(self):
        g = build_grid(8, 8, 9)
        assert g.n_nodes == 8 * 8 * 9 == 576

    def test_offset_nodes(self):
        g = build_grid(8, 8, 9, offset=True)
        assert np.allclose(g.x1, (np.arange(8) + 0.5) / 8)
        assert 0.0 not in g.x1

    @pytest.mark.parametrize("bad", [(4, 8, 9), (8, 4, 9), (9, 8, 9), (8, 8, 5)])
    def test_rejects_bad_counts(self, bad):
        with pytest.raises(ValueError):
            build_grid(*bad)

    def test_t_boundaries_identifiable(self):
        g = build_grid(8, 8, 9)
        assert g.t[0] == 0.0 and g.t[-1] == 1.0
        assert (g.t[1:-1] > 0).all() and (g.t[1:-1] < 1).all()

    def test_refine_halves_spacings(self):
        g = build_grid(8, 8, 9)
        f = g.refine()
        assert f.hx1 == g.hx1 / 2 and f.ht == g.ht / 2


class TestField:
    def test_rejects_nan(self):
        g = build_grid(8, 8, 9)
        v = np.zeros(g.shape)
        v[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Field(g, v)

    def test_neg_inf_only_when_allowed(self):
        g = build_grid(8, 8, 9)
        v = np.zeros(g.shape)
        v[0, 0, 0] = -np.inf
        with pytest.raises(ValueError):
            Field(g, v)
        f = Field(g, v, allow_neg_inf=True)
        with pytest.raises(ValueError):
            f.require_finite()


class TestHermitianHessian:
    def test_zero_field_gives_base(self):
        g = build_grid(8, 8, 9)
        H = hermitian_hessian(Field.zeros(g), flat_base(g), 0.0)
        assert np.allclose(H.gzz, 1.0)
        assert np.allclose(H.gww, 0.0)
        assert np.allclose(H.gzw, 0.0)

    def test_t_linear_invisible(self):
        g = build_grid(8, 8, 9)
        u = Field.from_function(g, lambda x1, x2, t: -2.5 * t + 0.3)
        H = hermitian_hessian(u, flat_base(g), 0.0)
        assert np.abs(H.gww).max() < 1e-12
        assert np.abs(H.gzw).max() < 1e-12

    def test_t_squared(self):
        g = build_grid(8, 8, 9)
        u = Field.from_function(g, lambda x1, x2, t: t ** 2)
        H = hermitian_hessian(u, flat_base(g), 0.0)
        assert np.allclose(H.gzz, 1.0, atol=1e-12)
        assert np.allclose(H.gww, 0.5, atol=1e-12)

    def test_eps_term_uses_annulus_weight(self):
        g = build_grid(8, 8, 9)
        base = BaseForm(g, np.ones((8, 8)), kappa_A=2.0, flat_annulus=False)
        H = hermitian_hessian(Field.zeros(g), base, 0.5)
        expect = 0.5 * 2.0 * np.exp(-2 * g.t[1:-1])
        assert np.allclose(H.gww[0, 0], expect)

    def test_linearity_in_u(self):
        g = build_grid(8, 8, 9, offset=True)
        rng = np.random.default_rng(3)
        ua = Field(g, rng.standard_normal(g.shape))
        ub = Field(g, rng.standard_normal(g.shape))
        base = flat_base(g)
        Ha = hermitian_hessian(ua, base, 0.25)
        Hb = hermitian_hessian(ub, base, 0.25)
        Hs = hermitian_hessian(Field(g, ua.values + ub.values), base, 0.25)
        H0 = hermitian_hessian(Field.zeros(g), base, 0.25)
        assert np.allclose(Hs.gzz, Ha.gzz + Hb.gzz - H0.gzz, atol=1e-10)
        assert np.allclose(Hs.gww, Ha.gww + Hb.gww - H0.gww, atol=1e-10)
        assert np.allclose(Hs.gzw, Ha.gzw + Hb.gzw - H0.gzw, atol=1e-10)

    def test_rejects_nonfinite_closure(self):
        g = build_grid(8, 8, 9)
        v = np.zeros(g.shape)
        v[0, 0, 0] = -np.inf
        with pytest.raises(ValueError, match="Dirichlet|finite"):
            hermitian_hessian(Field(g, v, allow_neg_inf=True), flat_base(g), 0.0)


class TestMaDensity:
    def test_examples(self):
        g = build_grid(8, 8, 9)
        m = g.nt - 2
        shape = (8, 8, m)
        H = HermitianFormField(g, np.full(shape, 5.0), np.full(shape, 4.0),
                               np.zeros(shape, dtype=complex))
        assert np.allclose(ma_density(H), 20.0)
        H2 = HermitianFormField(g, np.full(shape, 2.0), np.full(shape, 2.0),
                                np.full(shape, 1 + 1j))
        assert np.allclose(ma_density(H2), 2.0)

    def test_min_eigenvalue_stable_near_degenerate(self):
        g = build_grid(8, 8, 9)
        m = g.nt - 2
        shape = (8, 8, m)
        H = HermitianFormField(g, np.full(shape, 1.0), np.full(shape, 1e-18),
                               np.zeros(shape, dtype=complex))
        lam = H.min_eigenvalue()
        assert (lam > 0).all()
        assert np.allclose(lam, 1e-18, rtol=1e-10)

    def test_affine_t_invariance_of_density(self):
        g = build_grid(8, 8, 9, offset=True)
        base = flat_base(g)
        rng = np.random.default_rng(5)
        u = rng.standard_normal(g.shape)
        d1 = ma_density(hermitian_hessian(Field(g, u), base, 0.0))
        shifted = u + 1.7 * g.t[None, None, :] - 0.4
        d2 = ma_density(hermitian_hessian(Field(g, shifted), base, 0.0))
        assert np.allclose(d1, d2, atol=1e-10)


class TestDerivativeStats:
    def test_constant(self):
        g = build_grid(8, 8, 9)
        st = derivative_stats(Field.full(g, 7.0))
        assert np.abs(st.grad.values).max() < 1e-12
        assert np.abs(st.hess_norm.values).max() < 1e-12

    def test_linear_t(self):
        g = build_grid(8, 8, 9)
        st = derivative_stats(Field.from_function(g, lambda x1, x2, t: t))
        assert np.allclose(st.grad.values, 1.0, atol=1e-12)
        assert np.abs(st.hess_norm.values).max() < 1e-10

    def test_sine_at_quarter(self):
        g = build_grid(32, 8, 9, offset=False)
        u = Field.from_function(g, lambda x1, x2, t: np.sin(2 * np.pi * x1))
        st = derivative_stats(u)
        i = 8  # x1 = 0.25
        h2 = g.hx1 ** 2
        assert abs(st.grad.values[i, 0, 4]) < 30 * h2
        assert abs(st.hess_norm.values[i, 0, 4] - 4 * np.pi ** 2) < 400 * h2

    @pytest.mark.parametrize("fn,lap", [
        (lambda x1, x2, t: 1 + 2 * t + 3 * t ** 2, 6.0),
        (lambda x1, x2, t: t * (1 - t), -2.0),
    ])
    def test_polynomial_exactness_including_boundary(self, fn, lap):
        g = build_grid(8, 8, 11)
        st = derivative_stats(Field.from_function(g, fn))
        assert np.abs(st.laplacian.values - lap).max() < 1e-10

    def test_periodic_shift_equivariance(self):
        g = build_grid(16, 8, 9, offset=True)
        rng = np.random.default_rng(11)
        u = rng.standard_normal(g.shape)
        st = derivative_stats(Field(g, u))
        st_rolled = derivative_stats(Field(g, np.roll(u, 3, axis=0)))
        assert np.allclose(np.roll(st.hess_norm.values, 3, axis=0),
                           st_rolled.hess_norm.values, atol=1e-12)

    def test_mask_rejects_missing_support(self):
        g = build_grid(8, 8, 9)
        v = np.zeros(g.shape)
        v[4, 4, 4] = -np.inf
        mask = np.zeros(g.shape, dtype=bool)
        mask[4, 4, 5] = True
        with pytest.raises(ValueError):
            derivative_stats(Field(g, v, allow_neg_inf=True), region_mask=mask)
