"""Block-MM solver: densities, closed-form updates, the objective, and the
full transduction loop, each checked against an independent oracle."""

import numpy as np
import pytest

from translabel.graph import AffinityGraph, build_graph
from translabel.prior import text_predictions
from translabel.solver import (
    SolverConfig,
    gaussian_log_density,
    gmm_update,
    objective,
    transduct,
    z_update,
)
from translabel.state import SIGMA_FLOOR, Assignments, FeatureMatrix, GmmState

from conftest import make_cluster_features, unit_rows
from oracles import (
    dense_objective,
    naive_gaussian_log_density,
    naive_gmm_update,
    pgd_entropy_linear,
    tempered_em,
)


def uniform_prior(n, m):
    return text_predictions(np.zeros((n, m)))


def random_prior(rng, n, m, scale=1.0):
    return text_predictions(scale * rng.standard_normal((n, m)))


class TestGaussianLogDensity:
    def test_zero_at_the_mean_with_unit_variance(self):
        f = FeatureMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        gmm = GmmState(mu=np.array([[1.0, 0.0], [0.3, 0.3]]), sigma2=np.ones(2))
        logp = gaussian_log_density(f, gmm)
        assert logp[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert np.argmax(logp[0]) == 0

    def test_one_dimensional_relative_density(self):
        # at f=0 with unit variance: being 1 away costs exactly 0.5
        f = FeatureMatrix(np.array([[0.0]]))
        gmm = GmmState(mu=np.array([[1.0], [0.0]]), sigma2=np.ones(1))
        logp = gaussian_log_density(f, gmm)
        assert logp[0, 0] - logp[0, 1] == pytest.approx(-0.5, abs=1e-12)

    def test_constant_dimension_variance_shifts_all_classes_equally(self, rng):
        f = unit_rows(rng, 6, 4)
        f[:, 0] = 0.5  # constant coordinate
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        # realign the constant coordinate after renormalization
        f[:, 0] = 0.5
        mu = unit_rows(rng, 3, 4)
        mu[:, 0] = 0.5
        s2 = np.ones(4)
        a = gaussian_log_density(FeatureMatrix(f), GmmState(mu, s2))
        s2b = s2.copy()
        s2b[0] = 2.0
        b = gaussian_log_density(FeatureMatrix(f), GmmState(mu, s2b))
        shift = b - a
        np.testing.assert_allclose(shift, shift[0, 0], atol=1e-12)
        assert np.array_equal(np.argmax(a, axis=1), np.argmax(b, axis=1))

    def test_matches_naive_loops(self, rng):
        f = unit_rows(rng, 8, 5)
        mu = rng.standard_normal((3, 5))
        s2 = rng.uniform(0.05, 2.0, size=5)
        got = gaussian_log_density(FeatureMatrix(f), GmmState(mu, s2))
        want = naive_gaussian_log_density(f, mu, s2)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_per_class_variance_matches_naive(self, rng):
        f = unit_rows(rng, 8, 5)
        mu = rng.standard_normal((3, 5))
        s2 = rng.uniform(0.05, 2.0, size=(3, 5))
        got = gaussian_log_density(FeatureMatrix(f), GmmState(mu, s2))
        want = naive_gaussian_log_density(f, mu, s2)
        np.testing.assert_allclose(got, want, atol=1e-10)


class TestGmmUpdate:
    def test_hard_assignment_gives_centroids(self):
        f = np.array([[1.0, 0.0], [0.8, 0.6], [-1.0, 0.0], [-0.6, -0.8]])
        z = Assignments(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]))
        gmm = gmm_update(FeatureMatrix(f), z)
        np.testing.assert_allclose(gmm.mu[0], f[:2].mean(axis=0), atol=1e-15)
        np.testing.assert_allclose(gmm.mu[1], f[2:].mean(axis=0), atol=1e-15)

    def test_uniform_z_collapses_to_global_mean(self, rng):
        f = unit_rows(rng, 10, 3)
        z = Assignments(np.full((10, 2), 0.5))
        gmm = gmm_update(FeatureMatrix(f), z)
        np.testing.assert_allclose(gmm.mu[0], f.mean(axis=0), atol=1e-14)
        np.testing.assert_allclose(gmm.mu[1], f.mean(axis=0), atol=1e-14)

    def test_matches_naive_loops(self, rng):
        f = unit_rows(rng, 10, 4)
        z = rng.dirichlet(np.ones(3), size=10)
        gmm = gmm_update(FeatureMatrix(f), Assignments(z))
        mu, s2 = naive_gmm_update(f, z)
        np.testing.assert_allclose(gmm.mu, mu, atol=1e-12)
        np.testing.assert_allclose(gmm.sigma2, s2, atol=1e-12)

    def test_per_class_variance_matches_naive(self, rng):
        f = unit_rows(rng, 10, 4)
        z = rng.dirichlet(np.ones(3), size=10)
        gmm = gmm_update(FeatureMatrix(f), Assignments(z), per_class_variance=True)
        mu, s2 = naive_gmm_update(f, z, per_class=True)
        assert gmm.per_class
        np.testing.assert_allclose(gmm.sigma2, s2, atol=1e-12)

    def test_empty_class_keeps_previous_mean_and_warns(self, rng):
        f = unit_rows(rng, 6, 3)
        z = np.zeros((6, 2))
        z[:, 0] = 1.0
        prev = GmmState(np.array([[0.1, 0.2, 0.3], [9.0, 9.0, 9.0]]), np.ones(3))
        with pytest.warns(RuntimeWarning, match="zero responsibility"):
            gmm = gmm_update(FeatureMatrix(f), Assignments(z), previous=prev)
        np.testing.assert_array_equal(gmm.mu[1], prev.mu[1])

    def test_variance_floor(self):
        f = FeatureMatrix(np.array([[1.0, 0.0], [1.0, 0.0]]))
        z = Assignments(np.array([[1.0], [1.0]]) @ np.ones((1, 1)))
        gmm = gmm_update(f, Assignments(np.ones((2, 1))))
        assert np.all(gmm.sigma2 >= SIGMA_FLOOR)


class TestZUpdate:
    def test_uniform_everything_gives_uniform_rows(self, rng):
        n, m, d = 5, 3, 4
        f = FeatureMatrix(unit_rows(rng, n, d))
        gmm = GmmState(np.tile(unit_rows(rng, 1, d), (m, 1)), np.ones(d))
        cfg = SolverConfig(lam=1e-12, inner_z_iters=1)
        z = z_update(f, gmm, uniform_prior(n, m), AffinityGraph.empty(n),
                     Assignments(np.full((n, m), 1 / m)), cfg)
        np.testing.assert_allclose(z.z, 1 / m, atol=1e-9)

    def test_single_row_matches_direct_formula(self, rng):
        f = FeatureMatrix(unit_rows(rng, 1, 4))
        gmm = GmmState(unit_rows(rng, 3, 4), np.full(4, 0.5))
        prior = random_prior(rng, 1, 3)
        cfg = SolverConfig(lam=0.7, inner_z_iters=1)
        z = z_update(f, gmm, prior, AffinityGraph.empty(1),
                     Assignments(prior.y_hat.copy()), cfg)
        logits = gaussian_log_density(f, gmm) + 0.7 * np.log(prior.y_hat)
        e = np.exp(logits - logits.max())
        np.testing.assert_allclose(z.z, e / e.sum(), atol=1e-12)

    def test_rows_match_projected_gradient_oracle(self, rng):
        n, m, d = 3, 3, 4
        f = FeatureMatrix(unit_rows(rng, n, d))
        gmm = GmmState(unit_rows(rng, m, d), rng.uniform(0.1, 1.0, d))
        prior = random_prior(rng, n, m)
        graph = build_graph(f, knn=2)
        z_old = Assignments(rng.dirichlet(np.ones(m), size=n))
        cfg = SolverConfig(lam=0.9, inner_z_iters=1)
        got = z_update(f, gmm, prior, graph, z_old, cfg)
        # the per-row surrogate: a = -(logp/N + lam*log y + 2 (W z_old))
        logits = (gaussian_log_density(f, gmm) / n
                  + 0.9 * np.log(prior.y_hat)
                  + 2.0 * graph.matrix.toarray() @ z_old.z)
        for i in range(n):
            want = pgd_entropy_linear(-logits[i])
            np.testing.assert_allclose(got.z[i], want, atol=1e-4)

    def test_simplex_preserved(self, rng):
        n, m, d = 12, 4, 6
        f = FeatureMatrix(unit_rows(rng, n, d))
        gmm = gmm_update(f, Assignments(rng.dirichlet(np.ones(m), size=n)))
        prior = random_prior(rng, n, m, scale=3.0)
        graph = build_graph(f, knn=3)
        z = Assignments(rng.dirichlet(np.ones(m), size=n))
        for _ in range(4):
            z = z_update(f, gmm, prior, graph, z, SolverConfig())
            np.testing.assert_allclose(z.z.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(z.z >= 0)

    def test_clamped_rows_untouched(self, rng):
        n, m, d = 6, 3, 4
        f = FeatureMatrix(unit_rows(rng, n, d))
        gmm = gmm_update(f, Assignments(rng.dirichlet(np.ones(m), size=n)))
        prior = random_prior(rng, n, m)
        graph = build_graph(f, knn=2)
        z0 = rng.dirichlet(np.ones(m), size=n)
        clamped = np.array([True, False, False, True, False, False])
        labels = np.array([2, 0, 0, 1, 0, 0])
        z0[0] = [0.0, 0.0, 1.0]
        z0[3] = [0.0, 1.0, 0.0]
        z = Assignments(z0, clamped, labels)
        z_new = z_update(f, gmm, prior, graph, z, SolverConfig())
        np.testing.assert_array_equal(z_new.z[0], [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(z_new.z[3], [0.0, 1.0, 0.0])


class TestObjective:
    def test_one_hot_rows_zero_entropy(self, rng):
        n, m, d = 4, 3, 4
        f = FeatureMatrix(unit_rows(rng, n, d))
        labels = rng.integers(0, m, n)
        z = np.zeros((n, m))
        z[np.arange(n), labels] = 1.0
        prior = random_prior(rng, n, m)
        gmm = gmm_update(f, Assignments(z))
        cfg = SolverConfig(lam=2.0)
        got = objective(f, Assignments(z), gmm, prior, AffinityGraph.empty(n), cfg)
        logp = gaussian_log_density(f, gmm)
        want = (-np.sum(logp[np.arange(n), labels]) / n
                - 2.0 * np.sum(np.log(prior.y_hat[np.arange(n), labels])))
        assert got == pytest.approx(want, abs=1e-10)

    def test_uniform_closed_form(self, rng):
        # empty graph, uniform z and prior: the prior/entropy part reduces
        # to N (lam - 1) log M and the fit term to the mean log density
        n, m, d = 6, 3, 4
        f = FeatureMatrix(unit_rows(rng, n, d))
        z = np.full((n, m), 1 / m)
        gmm = gmm_update(f, Assignments(z))
        lam = 1.7
        got = objective(f, Assignments(z), gmm, uniform_prior(n, m),
                        AffinityGraph.empty(n), SolverConfig(lam=lam))
        logp = gaussian_log_density(f, gmm)
        want = -np.sum(logp * (1 / m)) / n + n * (lam - 1) * np.log(m)
        assert got == pytest.approx(want, abs=1e-9)

    def test_matches_dense_triple_loop(self, rng):
        n, m, d = 30, 4, 5
        f = FeatureMatrix(unit_rows(rng, n, d))
        z = rng.dirichlet(np.ones(m), size=n)
        gmm = gmm_update(f, Assignments(z))
        prior = random_prior(rng, n, m)
        graph = build_graph(f, knn=3)
        cfg = SolverConfig(lam=1.3)
        got = objective(f, Assignments(z), gmm, prior, graph, cfg)
        want = dense_objective(f.data, z, gmm.mu, gmm.sigma2,
                               graph.matrix.toarray(), prior.y_hat,
                               lam=1.3, cluster_weight=1 / n)
        assert got == pytest.approx(want, abs=1e-9)

    def test_unnormalized_mode_drops_the_1_over_n(self, rng):
        n, m, d = 10, 3, 4
        f = FeatureMatrix(unit_rows(rng, n, d))
        z = rng.dirichlet(np.ones(m), size=n)
        gmm = gmm_update(f, Assignments(z))
        prior = random_prior(rng, n, m)
        graph = AffinityGraph.empty(n)
        a = objective(f, Assignments(z), gmm, prior, graph, SolverConfig())
        b = objective(f, Assignments(z), gmm, prior, graph,
                      SolverConfig(gmm_weight_mode="unnormalized"))
        logp = gaussian_log_density(f, gmm)
        assert b - a == pytest.approx(-(1 - 1 / n) * np.sum(z * logp), abs=1e-9)


def psd_cluster_instance(rng, n=60, m=3, d=8):
    """Cluster features with nonnegative coordinates: the dense self-loop
    graph is then the exact (PSD) Gram matrix."""
    centers = np.abs(unit_rows(rng, m, d))
    labels = rng.integers(0, m, n)
    pts = np.abs(centers[labels] + 0.12 * rng.standard_normal((n, d)))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return FeatureMatrix(pts), labels


class TestTransduct:
    def test_monotone_descent_on_psd_dense_graph(self, rng):
        f, _ = psd_cluster_instance(rng)
        graph = build_graph(f, knn=f.n - 1, include_self=True)
        prior = random_prior(rng, f.n, 3, scale=2.0)
        _z, _gmm, trace = transduct(f, None, graph, prior=prior,
                                    cfg=SolverConfig(max_outer_iters=15))
        vals = trace.objective_values
        increases = [vals[i + 1] - vals[i] for i in range(len(vals) - 1)]
        assert max(increases) <= 1e-7

    def test_empirical_descent_on_sparse_default_graph(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            f, labels, _ = make_cluster_features(r, 50, 8, 3)
            graph = build_graph(f, knn=3)
            prior = random_prior(r, f.n, 3, scale=2.0)
            _z, _gmm, trace = transduct(f, None, graph, prior=prior,
                                        cfg=SolverConfig(max_outer_iters=15))
            vals = trace.objective_values
            assert max(vals[i + 1] - vals[i] for i in range(len(vals) - 1)) <= 1e-7

    def test_two_separated_clusters_beat_the_prior(self):
        rng = np.random.default_rng(7)
        n, d = 200, 16
        centers = np.zeros((2, d))
        centers[0, 0] = 1.0
        centers[1, 1] = 1.0
        sep = np.linalg.norm(centers[0] - centers[1])
        sigma = sep / 10.0
        labels = rng.integers(0, 2, n)
        pts = centers[labels] + sigma * rng.standard_normal((n, d))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        f = FeatureMatrix(pts)

        y = np.where(labels[:, None] == np.arange(2)[None, :], 0.7, 0.3)
        flip = rng.random(n) < 0.3
        y[flip] = y[flip][:, ::-1]
        prior = text_predictions(np.log(y))
        prior_acc = np.mean(np.argmax(prior.y_hat, 1) == labels)

        graph = build_graph(f, knn=3)
        z, _gmm, _trace = transduct(f, None, graph, prior=prior, cfg=SolverConfig())
        final_acc = np.mean(z.labels() == labels)
        assert prior_acc == pytest.approx(0.7, abs=0.02)
        assert final_acc > prior_acc
        assert final_acc >= 0.95

    def test_huge_lam_pins_to_the_prior_argmax(self, rng):
        f = FeatureMatrix(unit_rows(rng, 30, 6))
        prior = random_prior(rng, 30, 4)
        graph = build_graph(f, knn=3)
        z, _gmm, _tr = transduct(f, None, graph, prior=prior,
                                 cfg=SolverConfig(lam=1e6, max_outer_iters=5))
        np.testing.assert_array_equal(z.labels(), np.argmax(prior.y_hat, axis=1))

    def test_clamped_rows_bit_identical(self, rng):
        f, labels, _ = make_cluster_features(rng, 30, 6, 3)
        prior = random_prior(rng, 30, 3)
        graph = build_graph(f, knn=3)
        clamped = np.zeros(30, dtype=bool)
        clamped[[2, 11, 19]] = True
        clamp_labels = np.zeros(30, dtype=np.int64)
        clamp_labels[[2, 11, 19]] = [0, 1, 2]
        z, _gmm, _tr = transduct(f, None, graph, clamps=(clamped, clamp_labels),
                                 prior=prior, cfg=SolverConfig(max_outer_iters=30))
        for i, j in [(2, 0), (11, 1), (19, 2)]:
            onehot = np.zeros(3)
            onehot[j] = 1.0
            assert np.array_equal(z.z[i], onehot)

    def test_reduces_to_tempered_em(self, rng):
        n, m, d = 40, 3, 4
        f, _, _ = make_cluster_features(rng, n, d, m, spread=0.3)
        prior = random_prior(rng, n, m)
        cfg = SolverConfig(lam=1e-8, inner_z_iters=1, max_outer_iters=6,
                           z_tol=1e-300, record_iterates=True)
        _z, _gmm, trace = transduct(f, None, AffinityGraph.empty(n),
                                    prior=prior, cfg=cfg)
        oracle = tempered_em(f.data, prior.y_hat, iters=6)
        assert len(trace.z_iterates) == 6
        for (z_o, mu_o, s2_o), z_s, mu_s, s2_s in zip(
                oracle, trace.z_iterates, trace.mu_iterates, trace.sigma2_iterates):
            np.testing.assert_allclose(z_s, z_o, atol=1e-6)
            np.testing.assert_allclose(mu_s, mu_o, atol=1e-6)
            np.testing.assert_allclose(s2_s, s2_o, atol=1e-6)

    def test_permutation_equivariance(self, rng):
        n, m, d = 25, 4, 5
        f, _, _ = make_cluster_features(rng, n, d, m)
        prior = random_prior(rng, n, m)
        graph = build_graph(f, knn=3)
        cfg = SolverConfig(max_outer_iters=8)
        z1, gmm1, _ = transduct(f, None, graph, prior=prior, cfg=cfg)
        perm = rng.permutation(m)
        prior_p = text_predictions(prior.s_bar[:, perm])
        z2, gmm2, _ = transduct(f, None, graph, prior=prior_p, cfg=cfg)
        np.testing.assert_allclose(z2.z, z1.z[:, perm], atol=1e-9)
        np.testing.assert_allclose(gmm2.mu, gmm1.mu[perm], atol=1e-9)

    def test_init_override_and_clamp_seed(self, rng):
        n, m = 10, 3
        f = FeatureMatrix(unit_rows(rng, n, 4))
        prior = random_prior(rng, n, m)
        init = Assignments(rng.dirichlet(np.ones(m), size=n))
        z, _gmm, _tr = transduct(f, None, AffinityGraph.empty(n), init=init,
                                 prior=prior, cfg=SolverConfig(max_outer_iters=1))
        assert z.n == n

    def test_requires_exactly_one_prior_source(self, rng):
        f = FeatureMatrix(unit_rows(rng, 4, 3))
        with pytest.raises(ValueError, match="exactly one"):
            transduct(f, None, AffinityGraph.empty(4))

    def test_solver_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(lam=0.0)
        with pytest.raises(ValueError):
            SolverConfig(z_tol=0.0)
        with pytest.raises(ValueError):
            SolverConfig(gmm_weight_mode="bogus")
