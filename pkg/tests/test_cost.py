import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import min_over_translations
from regalign.correspondence import CorrespondencePair, CorrespondenceSet
from regalign.cost import (build_cost, evaluate_ls_objective, gram_matrix, objective, pinv_psd,
                           recover_translations, stack_rotations)
from regalign.errors import DimensionMismatchError, DisconnectedGraphError, RegistrationError
from regalign.evaluation import generate_scene
from regalign.geometry import PointSet, RigidTransform, random_rotation
from regalign.solver import umeyama_fit
from support import TOY_OPTIMUM, index_pairs


def random_instance(seed, m=4, d=3, n=12, extra_edges=True):
    """Random point sets with chain (plus random extra) correspondences."""
    rng = np.random.default_rng(seed)
    sets = [PointSet(rng.normal(size=(n, d)), id=k) for k in range(m)]
    edges = {(i, i + 1) for i in range(m - 1)}
    if extra_edges:
        for _ in range(m):
            i, j = sorted(rng.choice(m, 2, replace=False))
            edges.add((int(i), int(j)))
    pairs = []
    for i, j in sorted(edges):
        k = int(rng.integers(d + 1, n + 1))
        pairs.append(CorrespondencePair(i, j, np.column_stack([rng.permutation(n)[:k], rng.permutation(n)[:k]])))
    rotations = [random_rotation(rng, d) for _ in range(m)]
    return sets, CorrespondenceSet(m, pairs), rotations


def consistent_instance(seed, m=4, d=3, n=30):
    """Sets whose correspondences satisfy R_i x + t_i = R_j y + t_j exactly."""
    rng = np.random.default_rng(seed)
    world = rng.normal(size=(n, d))
    truth = [RigidTransform(random_rotation(rng, d), rng.normal(size=d)) for _ in range(m)]
    sets = [PointSet(t.inverse().apply(world), id=k) for k, t in enumerate(truth)]
    corr = CorrespondenceSet(m, [CorrespondencePair(i, i + 1, index_pairs(n)) for i in range(m - 1)])
    return sets, corr, truth


class TestBuildCost:
    def test_two_set_laplacian(self):
        n = 7
        sets, corr, _ = consistent_instance(0, m=2, n=n)
        one = build_cost(sets, corr, symmetric=False)
        E = np.array([[1.0, -1.0], [-1.0, 1.0]])
        np.testing.assert_allclose(one.L, n * E)
        np.testing.assert_allclose(one.L_pinv, E / (4 * n), atol=1e-15)
        np.testing.assert_allclose(one.L @ one.L_pinv @ one.L, one.L, atol=1e-12)
        both = build_cost(sets, corr)
        np.testing.assert_allclose(both.L, 2 * one.L)
        np.testing.assert_allclose(both.C, 2 * one.C, atol=1e-12)

    def test_laplacian_structure(self):
        sets, corr, _ = random_instance(1, m=5)
        cm = build_cost(sets, corr, symmetric=False)
        np.testing.assert_allclose(cm.L.sum(axis=1), 0.0, atol=1e-12)
        for p in corr.pairs:
            assert cm.L[p.i, p.j] == -p.n

    def test_c_formula_and_symmetry(self):
        sets, corr, _ = random_instance(2)
        cm = build_cost(sets, corr)
        np.testing.assert_allclose(cm.C, cm.D - cm.B @ cm.L_pinv @ cm.B.T, atol=1e-9)
        np.testing.assert_array_equal(cm.C, cm.C.T)
        np.testing.assert_allclose(cm.D, cm.D.T, atol=1e-12)

    def test_c_psd_off_gauge_directions(self):
        sets, corr, _ = random_instance(3)
        cm = build_cost(sets, corr)
        d, m = cm.d, cm.m
        # block-constant vectors span the translation/rotation-invariant directions
        K = np.kron(np.ones((m, 1)), np.eye(d)) / np.sqrt(m)
        P = np.eye(cm.size) - K @ K.T
        assert np.linalg.eigvalsh(P @ cm.C @ P).min() >= -1e-8

    def test_moore_penrose_identities(self):
        sets, corr, _ = random_instance(4, m=6)
        L = build_cost(sets, corr).L
        Lp = pinv_psd(L)
        np.testing.assert_allclose(L @ Lp @ L, L, atol=1e-9)
        np.testing.assert_allclose(Lp @ L @ Lp, Lp, atol=1e-9)
        np.testing.assert_allclose((L @ Lp).T, L @ Lp, atol=1e-9)
        np.testing.assert_allclose((Lp @ L).T, Lp @ L, atol=1e-9)

    def test_blockwise_matches_dense_difference_vectors(self):
        sets, corr, _ = random_instance(5, m=3, d=2, n=6)
        d, m = 2, 3
        B = np.zeros((d * m, m))
        D = np.zeros((d * m, d * m))
        for p in corr.pairs:
            e = np.zeros(m)
            e[p.i], e[p.j] = 1.0, -1.0
            for a, b in p.matches:
                v = np.zeros(d * m)
                v[p.i * d:(p.i + 1) * d] = sets[p.i].points[a]
                v[p.j * d:(p.j + 1) * d] = -sets[p.j].points[b]
                B += np.outer(v, e)
                D += np.outer(v, v)
        cm = build_cost(sets, corr, symmetric=False)
        np.testing.assert_allclose(cm.B, B, atol=1e-12)
        np.testing.assert_allclose(cm.D, D, atol=1e-12)

    def test_consistent_data_zero(self):
        sets, corr, truth = consistent_instance(6)
        cm = build_cost(sets, corr)
        G = gram_matrix([t.rotation for t in truth])
        assert abs(objective(cm, G)) <= 1e-8 * np.linalg.norm(cm.C)

    def test_noiseless_scene_zero(self, cloud):
        scene = generate_scene(cloud, 6, 30.0, seed=2)
        cm = build_cost(scene.scans, scene.correspondences)
        G = gram_matrix(scene.true_rotations)
        assert abs(objective(cm, G)) <= 1e-8 * np.linalg.norm(cm.C)

    def test_toy_minimum(self, toy):
        sets, corr = toy
        cm = build_cost(sets, corr)
        theta = np.linspace(-np.pi, np.pi, 200001)
        # min over R_2 with R_1 = I covers all of SO(2) x SO(2) up to the gauge
        c, s = np.cos(theta), np.sin(theta)
        C12 = cm.block(0, 1)
        vals = (np.trace(cm.block(0, 0)) + np.trace(cm.block(1, 1))
                + 2 * ((C12[0, 0] + C12[1, 1]) * c + (C12[1, 0] - C12[0, 1]) * s))
        best = vals.min()
        assert best == pytest.approx(TOY_OPTIMUM, abs=5e-4)

    def test_errors(self):
        sets, corr, _ = random_instance(7, m=3)
        with pytest.raises(RegistrationError):
            build_cost(sets, CorrespondenceSet(3, []))
        with pytest.raises(DimensionMismatchError):
            build_cost(sets[:2], corr)
        disconnected = CorrespondenceSet(3, [CorrespondencePair(0, 1, index_pairs(4))])
        with pytest.raises(DisconnectedGraphError):
            build_cost(sets, disconnected)

    def test_normalize_divides_by_pair_size(self):
        sets, corr, _ = random_instance(8, m=3, extra_edges=False)
        plain = build_cost(sets, corr, symmetric=False)
        norm = build_cost(sets, corr, symmetric=False, normalize=True)
        for p in corr.pairs:
            assert norm.L[p.i, p.j] == pytest.approx(plain.L[p.i, p.j] / p.n)

    def test_large_chain_fast(self, cloud):
        scene = generate_scene(cloud, 64, 5.0, seed=0)
        t0 = time.perf_counter()
        build_cost(scene.scans, scene.correspondences)
        assert time.perf_counter() - t0 < 1.0


class TestObjective:
    def test_zero_gram(self):
        sets, corr, _ = random_instance(9)
        cm = build_cost(sets, corr)
        assert objective(cm, np.zeros_like(cm.C)) == 0.0

    def test_block_sum(self):
        sets, corr, rots = random_instance(10)
        cm = build_cost(sets, corr)
        G = gram_matrix(rots)
        d = cm.d
        total = sum(np.trace(cm.block(i, j).T @ G[i * d:(i + 1) * d, j * d:(j + 1) * d])
                    for i in range(cm.m) for j in range(cm.m))
        assert objective(cm, G) == pytest.approx(total, rel=1e-10)

    def test_shape_check(self):
        sets, corr, _ = random_instance(11)
        with pytest.raises(DimensionMismatchError):
            objective(build_cost(sets, corr), np.eye(3))


class TestTranslations:
    def test_consistent_reproduces_zero_residual(self):
        sets, corr, truth = consistent_instance(12)
        cm = build_cost(sets, corr)
        rots = [t.rotation for t in truth]
        T = recover_translations(cm, stack_rotations(rots))
        est = [RigidTransform(R, t) for R, t in zip(rots, T)]
        assert evaluate_ls_objective(sets, corr, est) == pytest.approx(0.0, abs=1e-10)

    def test_toy_value(self, toy):
        sets, corr = toy
        T = umeyama_fit(sets[0].points, sets[1].points)
        cm = build_cost(sets, corr)
        rots = [np.eye(2), T.rotation]
        trans = recover_translations(cm, rots)
        est = [RigidTransform(R, t) for R, t in zip(rots, trans)]
        assert evaluate_ls_objective(sets, corr, est) == pytest.approx(TOY_OPTIMUM, abs=1e-3)

    def test_perturbation_increases_cost(self):
        sets, corr, rots = random_instance(13)
        cm = build_cost(sets, corr)
        T = recover_translations(cm, rots)
        base = evaluate_ls_objective(sets, corr, [RigidTransform(R, t) for R, t in zip(rots, T)])
        rng = np.random.default_rng(0)
        for _ in range(2 * cm.size):
            dT = T + 1e-3 * rng.normal(size=T.shape)
            moved = evaluate_ls_objective(sets, corr, [RigidTransform(R, t) for R, t in zip(rots, dT)])
            assert moved > base

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_least_squares_oracle(self, seed):
        sets, corr, rots = random_instance(100 + seed)
        cm = build_cost(sets, corr)
        expected = min_over_translations(sets, corr, rots)
        assert objective(cm, gram_matrix(rots)) == pytest.approx(expected, rel=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 5), st.sampled_from([2, 3]))
    def test_elimination_identity(self, seed, m, d):
        sets, corr, rots = random_instance(seed, m=m, d=d)
        cm = build_cost(sets, corr)
        T = recover_translations(cm, rots)
        direct = evaluate_ls_objective(sets, corr, [RigidTransform(R, t) for R, t in zip(rots, T)])
        assert direct == pytest.approx(objective(cm, gram_matrix(rots)), rel=1e-8, abs=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_gauge_invariance(self, seed):
        sets, corr, rots = random_instance(seed)
        rng = np.random.default_rng(seed)
        ts = [RigidTransform(R, rng.normal(size=3)) for R in rots]
        Q = RigidTransform(random_rotation(rng, 3), rng.normal(size=3))
        moved = [Q.compose(t) for t in ts]
        assert evaluate_ls_objective(sets, corr, moved) == pytest.approx(
            evaluate_ls_objective(sets, corr, ts), rel=1e-10)

    def test_wrong_transform_count(self):
        sets, corr, rots = random_instance(14)
        with pytest.raises(DimensionMismatchError):
            evaluate_ls_objective(sets, corr, [RigidTransform(rots[0])])
