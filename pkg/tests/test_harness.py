import numpy as np
import pytest

from mlplr import (
    ExperimentConfig,
    FitConfig,
    PenaltySchedule,
    expansion_decay,
    ks_distance,
    run_replicates,
    summarize,
)
from mlplr.harness import _cell_seed


def brute_force_ks(a, b):
    """Independent oracle: scan every step point of both samples."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    best = 0.0
    for t in np.concatenate([a, b]):
        fa = np.mean(a <= t)
        fb = np.mean(b <= t)
        best = max(best, abs(fa - fb))
    return best


class TestKsDistance:
    def test_identical_samples(self):
        x = np.array([0.3, 1.0, 2.5])
        assert ks_distance(x, x) == 0.0

    def test_disjoint_supports(self):
        assert ks_distance([1.0, 2.0], [5.0, 6.0, 7.0]) == 1.0

    def test_interleaved_thirds(self):
        np.testing.assert_allclose(ks_distance([1, 2, 3], [1.5, 2.5, 3.5]), 1 / 3)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            a = rng.standard_normal(rng.integers(1, 40))
            b = rng.standard_normal(rng.integers(1, 40)) + rng.uniform(-1, 1)
            np.testing.assert_allclose(ks_distance(a, b), brute_force_ks(a, b), atol=1e-12)

    def test_matches_scipy(self):
        from scipy.stats import ks_2samp

        rng = np.random.default_rng(1)
        a = rng.standard_normal(200)
        b = rng.standard_normal(150) * 1.3
        np.testing.assert_allclose(ks_distance(a, b), ks_2samp(a, b).statistic, atol=1e-12)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ks_distance([], [1.0])


class TestSummarize:
    def test_constant_sample(self):
        stats = summarize([1.0, 1.0, 1.0])
        assert (stats.q05, stats.q50, stats.q95) == (1.0, 1.0, 1.0)
        assert stats.variance == 0.0
        assert stats.count == 3

    def test_median_of_arithmetic_range(self):
        stats = summarize(np.arange(101.0))
        assert stats.q50 == 50.0

    def test_type7_quantiles(self):
        sample = np.array([0.0, 1.0, 2.0, 3.0])
        stats = summarize(sample)
        np.testing.assert_allclose(stats.q25, np.quantile(sample, 0.25))
        assert stats.q25 == 0.75  # linear interpolation convention

    def test_gaussian_moments(self):
        rng = np.random.default_rng(7)
        stats = summarize(rng.standard_normal(10_000))
        assert abs(stats.mean) <= 0.03
        assert abs(stats.variance - 1.0) <= 0.05

    def test_ks_against_reference(self):
        stats = summarize([1.0, 2.0, 3.0], reference=[1.5, 2.5, 3.5])
        np.testing.assert_allclose(stats.ks, 1 / 3)
        assert 0.0 <= stats.ks <= 1.0


class TestRunReplicates:
    def _config(self, desk_spec, desk_box, **kw):
        defaults = dict(
            spec=desk_spec,
            box=desk_box,
            fit=FitConfig(n_starts=3, seed=0),
            schedule=PenaltySchedule("bic_like", input_dim=1),
            n_grid=[100],
            k_grid=[1],
            replicates=1,
            base_seed=5,
        )
        defaults.update(kw)
        return ExperimentConfig(**defaults)

    def test_noiseless_cell_has_zero_lr(self, desk_spec, desk_box):
        """Perfect fit at the truth: the supremum equals the likelihood at
        the true parameters, so the single cell carries 2 lambda ~ 0."""
        config = self._config(
            desk_spec,
            desk_box,
            fit=FitConfig(n_starts=2, seed=0, warm_starts=[desk_spec.theta0]),
            noise_sigma2=0.0,
        )
        matrix = run_replicates(config)
        assert len(matrix.cells) == 1
        assert abs(matrix.cells[0].lr) <= 1e-6
        assert matrix.cells[0].k_hat == 1

    def test_determinism(self, desk_spec, desk_box):
        config = self._config(desk_spec, desk_box, replicates=2, k_grid=[1, 2])
        a = run_replicates(config)
        b = run_replicates(config)
        assert [(c.replicate, c.n, c.k, c.lr, c.k_hat) for c in a.cells] == [
            (c.replicate, c.n, c.k, c.lr, c.k_hat) for c in b.cells
        ]

    def test_threads_match_serial(self, desk_spec, desk_box):
        config = self._config(desk_spec, desk_box, replicates=2)
        serial = run_replicates(config, threads=1)
        parallel = run_replicates(config, threads=2)
        assert [c.lr for c in serial.cells] == [c.lr for c in parallel.cells]

    def test_matrix_accessors_and_csv(self, desk_spec, desk_box, tmp_path):
        config = self._config(desk_spec, desk_box, replicates=3, k_grid=[1, 2])
        matrix = run_replicates(config)
        assert matrix.lr_values(100, 1).shape == (3,)
        assert matrix.k_hat_values(100).shape == (3,)
        assert not matrix.failures()
        matrix.to_csv(tmp_path / "matrix.csv")
        lines = (tmp_path / "matrix.csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1].split(",")[:4] == ["replicate", "n", "k", "lr"]
        assert len(lines) == 2 + 6
        matrix.selection_csv(tmp_path / "selection.csv")
        sel = (tmp_path / "selection.csv").read_text().splitlines()
        assert sel[1] == "replicate,n,k_hat,T_1,T_2"
        assert len(sel) == 2 + 3

    def test_cell_seeds_are_distinct(self):
        seeds = {_cell_seed(1, r, ni) for r in range(50) for ni in range(3)}
        assert len(seeds) == 150

    def test_config_round_trip(self, desk_spec, desk_box):
        config = self._config(desk_spec, desk_box)
        back = ExperimentConfig.from_dict(config.to_dict())
        assert back.to_dict() == config.to_dict()
        assert back.hash() == config.hash()


class TestExpansionDecay:
    def test_cubic_decay_profile(self, desk_spec):
        rems = expansion_decay(desk_spec, k=2, scales=(1e-2, 5e-3, 2.5e-3), n_draws=60, seed=4)
        assert rems[0] / rems[1] == pytest.approx(8.0, rel=0.4)
        assert rems[1] / rems[2] == pytest.approx(8.0, rel=0.4)
