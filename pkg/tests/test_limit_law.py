import numpy as np
import pytest
from scipy.stats import chi2

from mlplr import (
    ConeOptSettings,
    ConeSpec,
    GramMatrix,
    HiddenUnit,
    MlpParams,
    Partition,
    RegressionSpec,
    ScoreBasis,
    check_h4,
    delta_feasible,
    enumerate_partitions,
    eval_score_basis,
    gram_matrix,
    gram_matrix_gh,
    normalize_score,
    simulate_limit,
)
from mlplr.limit_law import extended_grid, load_gram, save_gram


class TestPartitions:
    def test_forced_partition(self):
        parts = enumerate_partitions(1, 1)
        assert [p.t for p in parts] == [(0, 1)]

    def test_k2_k01(self):
        parts = enumerate_partitions(2, 1)
        assert [p.t for p in parts] == [(0, 1), (0, 2)]

    def test_k3_k02(self):
        parts = enumerate_partitions(3, 2)
        assert [p.t for p in parts] == [(0, 1, 2), (0, 1, 3), (0, 2, 3)]

    def test_counts_match_binomials(self):
        from math import comb

        for k in range(1, 6):
            for k0 in range(1, k + 1):
                assert len(enumerate_partitions(k, k0)) == comb(k, k0)

    def test_groups(self):
        p = Partition((0, 2, 5))
        assert list(p.group(1)) == [1, 2]
        assert list(p.group(2)) == [3, 4, 5]
        assert p.group_sizes() == (2, 3)
        assert p.group_of(4) == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            Partition((0, 2, 2))
        with pytest.raises(ValueError):
            Partition((1, 2))
        with pytest.raises(ValueError):
            enumerate_partitions(1, 2)


class TestScoreBasis:
    def test_dimension_formula(self):
        basis = ScoreBasis(k0=1, d=1)
        assert basis.dim == 7  # 1 + 1 + 2 + 3
        assert ScoreBasis(k0=2, d=3).dim == 1 + 2 + 2 * 4 + 2 * 10

    def test_index_maps_are_bijections(self):
        for k0, d in ((1, 1), (2, 3), (3, 2)):
            basis = ScoreBasis(k0=k0, d=d)
            seen = [basis.const_index()]
            seen += [basis.phi_index(i) for i in range(k0)]
            seen += [basis.dphi_index(i, l) for i in range(k0) for l in range(d + 1)]
            seen += [
                basis.ddphi_index(i, l, m)
                for i in range(k0)
                for l in range(d + 1)
                for m in range(l, d + 1)
            ]
            assert sorted(seen) == list(range(basis.dim))
            assert len(basis.labels()) == basis.dim

    def test_values_at_zero_weights(self):
        """phi(0)=1/2, phi'(0)=1/4, phi''(0)=0 show up in the right slots."""
        theta0 = MlpParams(0.0, [HiddenUnit(1.0, np.zeros(2))])
        spec = RegressionSpec(theta0, sigma2=1.0, input_dim=1)
        vec = eval_score_basis(spec, np.zeros(1))
        basis = ScoreBasis(1, 1)
        assert vec[basis.const_index()] == 1.0
        assert vec[basis.phi_index(0)] == 0.5
        assert vec[basis.dphi_index(0, 0)] == 0.25
        assert vec[basis.ddphi_index(0, 0, 0)] == 0.0

    def test_constant_component_always_one(self, desk_spec):
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert eval_score_basis(desk_spec, rng.standard_normal(1))[0] == 1.0


class TestGramMatrix:
    def test_constant_diagonal_exact(self, desk_spec):
        gram = gram_matrix(desk_spec, mc_draws=5000, seed=1)
        assert gram.x_gram[0, 0] == 1.0

    def test_sigma_scaling(self):
        theta0 = MlpParams(0.5, [HiddenUnit(1.0, np.array([0.5, 1.0]))])
        spec = RegressionSpec(theta0, sigma2=2.0, input_dim=1)
        gram = gram_matrix(spec, mc_draws=2000, seed=1)
        np.testing.assert_array_equal(gram.sigma, gram.x_gram / 2.0)
        assert gram.sigma[0, 0] == 0.5  # E[e^2] = 1/sigma2

    def test_symmetry_and_psd(self, desk_spec):
        gram = gram_matrix(desk_spec, mc_draws=20_000, seed=3)
        np.testing.assert_allclose(gram.sigma, gram.sigma.T, atol=1e-12)
        assert np.linalg.eigvalsh(gram.sigma).min() >= -1e-10

    def test_two_seeds_agree_within_mc_error(self, desk_spec):
        """Entrywise agreement within 4 Monte-Carlo standard errors."""
        n = 200_000
        g1 = gram_matrix(desk_spec, n, seed=101).x_gram
        g2 = gram_matrix(desk_spec, n, seed=202).x_gram
        # empirical entrywise sd of the products from a third stream
        from mlplr.limit_law import eval_score_basis_batch
        from mlplr.model import draw_inputs

        rng = np.random.default_rng(303)
        B = eval_score_basis_batch(desk_spec, draw_inputs(desk_spec, 50_000, rng))
        prod_sd = np.std(B[:, :, None] * B[:, None, :], axis=0)
        se_diff = prod_sd * np.sqrt(2.0 / n)
        assert np.all(np.abs(g1 - g2) <= 4 * se_diff + 1e-12)

    def test_gh_matches_mc(self, desk_spec):
        gh = gram_matrix_gh(desk_spec).x_gram
        mc = gram_matrix(desk_spec, 200_000, seed=7).x_gram
        np.testing.assert_allclose(mc, gh, atol=5e-3)

    def test_gh_requires_gaussian_1d(self):
        theta0 = MlpParams(0.0, [HiddenUnit(1.0, np.array([0.0, 1.0, 1.0]))])
        spec = RegressionSpec(theta0, sigma2=1.0, input_dim=2)
        with pytest.raises(ValueError):
            gram_matrix_gh(spec)

    def test_save_load_round_trip(self, desk_spec, tmp_path):
        gram = gram_matrix_gh(desk_spec)
        save_gram(gram, str(tmp_path / "gram"), desk_spec)
        back = load_gram(str(tmp_path / "gram"))
        np.testing.assert_array_equal(back.x_gram, gram.x_gram)
        np.testing.assert_array_equal(back.sigma, gram.sigma)
        assert back.method == "gauss_hermite"


class TestCheckH4:
    def test_identity_passes(self):
        basis = ScoreBasis(1, 1)
        eye = np.eye(basis.dim)
        gram = GramMatrix(eye, eye, 1, 0, basis)
        rep = check_h4(gram)
        assert rep.passed
        assert rep.min_eigenvalue == pytest.approx(1.0)

    def test_duplicated_column_fails(self, desk_spec):
        gram = gram_matrix_gh(desk_spec)
        xg = gram.x_gram.copy()
        xg[:, 1] = xg[:, 0]
        xg[1, :] = xg[0, :]
        xg[1, 1] = xg[0, 0]
        broken = GramMatrix(xg / desk_spec.sigma2, xg, gram.mc_draws, 0, gram.basis)
        rep = check_h4(broken)
        assert not rep.passed
        assert rep.min_eigenvalue <= 1e-12

    def test_desk_spec_certificate(self, desk_spec):
        """Both quadrature and Monte Carlo certify linear independence."""
        rep_gh = check_h4(gram_matrix_gh(desk_spec))
        rep_mc = check_h4(gram_matrix(desk_spec, 200_000, seed=5))
        assert rep_gh.passed and rep_mc.passed
        assert rep_gh.min_eigenvalue > 1e-8
        assert rep_mc.min_eigenvalue > 1e-8


class TestDeltaFeasible:
    def test_single_nonzero_vector(self):
        assert not delta_feasible([np.array([1.0, 0.5])])

    def test_all_zero(self):
        assert delta_feasible([np.zeros(2), np.zeros(2)])

    def test_antiparallel_pair(self):
        nu = np.array([0.3, -1.2])
        assert delta_feasible([nu, -2.0 * nu])

    def test_orthant_pair(self):
        assert not delta_feasible([np.array([1.0, 0.0]), np.array([0.0, 1.0])])

    def test_positively_spanning_triple(self):
        assert delta_feasible([np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([-1.0, -1.0])])


class TestNormalizeScore:
    def _identity_gram(self):
        basis = ScoreBasis(1, 1)
        eye = np.eye(basis.dim)
        return GramMatrix(eye, eye, 1, 0, basis)

    def test_rescales_to_unit_norm(self):
        gram = self._identity_gram()
        c = np.zeros(7)
        c[0] = 2.0  # c^T sigma c = 4
        np.testing.assert_allclose(normalize_score(c, gram), c / 2.0)

    def test_idempotent(self, desk_spec):
        gram = gram_matrix_gh(desk_spec)
        rng = np.random.default_rng(4)
        c = normalize_score(rng.standard_normal(7), gram)
        np.testing.assert_allclose(normalize_score(c, gram), c, atol=1e-12)

    def test_unit_quadratic_form(self, desk_spec):
        gram = gram_matrix_gh(desk_spec)
        rng = np.random.default_rng(5)
        for _ in range(20):
            c = normalize_score(rng.standard_normal(7), gram)
            assert abs(c @ gram.sigma @ c - 1.0) <= 1e-10

    def test_zero_vector_rejected(self, desk_spec):
        gram = gram_matrix_gh(desk_spec)
        with pytest.raises(ValueError):
            normalize_score(np.zeros(7), gram)


class TestConeSpec:
    def test_singleton_groups_forbid_quadratics(self, desk_spec):
        basis = ScoreBasis(1, 1)
        cone = ConeSpec(Partition((0, 1)), basis, np.array([1.0]))
        assert cone.rank_budget(1) == 0
        with pytest.raises(ValueError):
            cone.coefficient_vector(1.0, np.zeros(1), np.zeros((1, 2)), [np.eye(2)])
        c = cone.coefficient_vector(1.0, np.zeros(1), np.zeros((1, 2)), [None])
        assert c[basis.const_index()] == 1.0

    def test_rank_budget_enforced(self):
        basis = ScoreBasis(1, 1)
        cone = ConeSpec(Partition((0, 2)), basis, np.array([1.0]))
        assert cone.rank_budget(1) == 1
        u = np.array([1.0, 2.0])
        c = cone.coefficient_vector(0.0, np.zeros(1), np.zeros((1, 2)), [np.outer(u, u)])
        assert c[basis.ddphi_index(0, 0, 0)] == 1.0
        assert c[basis.ddphi_index(0, 0, 1)] == 4.0  # off-diagonal doubled
        assert c[basis.ddphi_index(0, 1, 1)] == 4.0
        with pytest.raises(ValueError):
            cone.coefficient_vector(0.0, np.zeros(1), np.zeros((1, 2)), [np.eye(2)])

    def test_psd_enforced(self):
        cone = ConeSpec(Partition((0, 3)), ScoreBasis(1, 1), np.array([1.0]))
        with pytest.raises(ValueError):
            cone.coefficient_vector(0.0, np.zeros(1), np.zeros((1, 2)), [np.diag([1.0, -1.0])])

    def test_rayleigh_scale_invariance(self, desk_spec):
        """The normalized score is what enters the supremum, so scaling a
        coefficient vector by any positive constant changes nothing."""
        gram = gram_matrix_gh(desk_spec)
        cone = ConeSpec(Partition((0, 2)), ScoreBasis(1, 1), np.array([1.0]))
        rng = np.random.default_rng(9)
        g = rng.standard_normal(7)
        u = rng.standard_normal(2)
        c = cone.coefficient_vector(0.4, rng.standard_normal(1), rng.standard_normal((1, 2)), [np.outer(u, u)])
        val = max(c @ g, 0.0) ** 2 / (c @ gram.sigma @ c)
        val_scaled = max(3.7 * c @ g, 0.0) ** 2 / (3.7 * c @ gram.sigma @ c * 3.7)
        np.testing.assert_allclose(val_scaled, val, rtol=1e-12)


class TestSimulateLimit:
    def test_regular_case_is_chi_square(self, desk_spec):
        """k = k0: all-singleton partition, symmetric linear span, chi^2
        with k0(d+2)+1 = 4 degrees of freedom."""
        gram = gram_matrix_gh(desk_spec)
        sample = simulate_limit(desk_spec, 1, gram, 4000, seed=17)
        vals = sample.values
        assert np.all(vals >= 0)
        assert abs(np.mean(vals) - 4.0) <= 0.07 * 4.0
        assert abs(np.quantile(vals, 0.95) - chi2.ppf(0.95, 4)) <= 0.07 * chi2.ppf(0.95, 4)

    def test_identity_sigma_linear_cone(self):
        """With sigma = I the linear-only draw is a sum of r squared
        standard normals."""
        theta0 = MlpParams(0.0, [HiddenUnit(1.0, np.array([0.0, 1.0]))])
        spec = RegressionSpec(theta0, sigma2=1.0, input_dim=1)
        basis = ScoreBasis(1, 1)
        eye = np.eye(basis.dim)
        gram = GramMatrix(eye, eye, 1, 0, basis)
        sample = simulate_limit(spec, 1, gram, 10_000, seed=23)
        r = basis.n_linear  # 4
        assert abs(np.mean(sample.values) - r) <= 0.05 * r

    def test_per_draw_monotone_in_k(self, desk_spec):
        """F^k grows with k, so on common Gaussian draws the supremum can
        only increase."""
        gram = gram_matrix_gh(desk_spec)
        s1 = simulate_limit(desk_spec, 1, gram, 400, seed=31)
        s2 = simulate_limit(desk_spec, 2, gram, 400, seed=31)
        s3 = simulate_limit(desk_spec, 3, gram, 400, seed=31)
        assert np.all(s2.values >= s1.values - 1e-8)
        assert np.all(s3.values >= s2.values - 1e-8)

    def test_values_nonnegative_and_diagnostics(self, desk_spec):
        gram = gram_matrix_gh(desk_spec)
        sample = simulate_limit(desk_spec, 2, gram, 200, seed=37)
        assert np.all(sample.values >= 0)
        assert len(sample.best_partition) == 200
        assert all(t in ((0, 1), (0, 2)) for t in sample.best_partition)

    def test_determinism(self, desk_spec):
        gram = gram_matrix_gh(desk_spec)
        a = simulate_limit(desk_spec, 2, gram, 100, seed=41)
        b = simulate_limit(desk_spec, 2, gram, 100, seed=41)
        np.testing.assert_array_equal(a.values, b.values)

    def test_rejects_k_below_k0(self, desk_spec):
        gram = gram_matrix_gh(desk_spec)
        with pytest.raises(ValueError):
            simulate_limit(desk_spec, 0, gram, 10, seed=1)

    def test_rejects_failed_certificate(self, desk_spec):
        gram = gram_matrix_gh(desk_spec)
        xg = gram.x_gram.copy()
        xg[:, 1] = xg[:, 0]
        xg[1, :] = xg[0, :]
        xg[1, 1] = xg[0, 0]
        broken = GramMatrix(xg, xg, gram.mc_draws, 0, gram.basis)
        with pytest.raises(ValueError):
            simulate_limit(desk_spec, 1, broken, 10, seed=1)

    def test_csv_output(self, desk_spec, tmp_path):
        gram = gram_matrix_gh(desk_spec)
        sample = simulate_limit(desk_spec, 2, gram, 50, seed=43)
        path = tmp_path / "limit.csv"
        sample.to_csv(path, header_comment="config_hash=xyz seed=43")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("#")
        assert lines[1] == "value,best_partition,restarts"
        assert len(lines) == 52

    def test_extended_index_set_dominates(self, desk_spec, desk_box):
        """The appendix-variant index set adds free-unit phi terms, so on
        common draws its supremum is at least the default one."""
        basis = ScoreBasis(1, 1, extended_grid(desk_box, 1, n_angles=6, radii=(1.0,)))
        gram_ext = gram_matrix_gh(desk_spec, basis=basis)
        gram_core = gram_matrix_gh(desk_spec)
        core = simulate_limit(desk_spec, 2, gram_core, 150, seed=47)
        ext = simulate_limit(desk_spec, 2, gram_ext, 150, seed=47, extended=True)
        assert ext.extended
        # slack covers the inner angle search, which may settle on a
        # different near-tied local maximum once extra columns change
        # floating-point rounding
        assert np.all(ext.values >= core.values - 1e-3)
        assert np.mean(ext.values > core.values + 1e-6) > 0.2
