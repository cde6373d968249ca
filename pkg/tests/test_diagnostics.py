import itertools

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from sgflow.diagnostics import (
    DiagnosticsError,
    energy_error_series,
    extract_fields,
    extract_fields_2d,
    rmsv,
    sinkhorn_w2,
    w2_exact,
)
from sgflow.geometry import Domain, SeedCloud, WeightVector, build_diagram
from sgflow.otsolver import SolverSettings, solve_ot

UNIT_CUBE = Domain(lo=[-0.5, -0.5, -0.5], hi=[0.5, 0.5, 0.5])


class TestExtractFields:
    def test_fixed_point_gives_zero_velocity(self):
        g = np.array(np.meshgrid([-0.25, 0.25], [-0.25, 0.25], [-0.25, 0.25],
                                 indexing="ij")).reshape(3, -1).T
        sc = SeedCloud(g)
        d = build_diagram(sc, WeightVector.zeros(8), UNIT_CUBE)
        f = extract_fields(sc, d)
        assert np.max(np.abs(f.zvel)) == 0.0
        assert np.max(np.abs(f.mvel)) == 0.0
        assert np.max(np.abs(f.tvel)) == 0.0

    def test_single_seed_values(self):
        sc = SeedCloud(np.array([[0.1, 0.2, 0.3]]))
        d = build_diagram(sc, WeightVector.zeros(1), UNIT_CUBE)
        f = extract_fields(sc, d)
        assert f.zvel[0] == pytest.approx(-0.2, abs=1e-14)
        assert f.mvel[0] == pytest.approx(0.1, abs=1e-14)
        assert f.tvel[0] == pytest.approx(np.sqrt(0.05), abs=1e-14)
        assert f.temperature[0] == 0.3

    def test_total_dominates_zonal(self):
        rng = np.random.default_rng(0)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (20, 3)))
        d = build_diagram(sc, WeightVector.zeros(20), UNIT_CUBE)
        f = extract_fields(sc, d)
        assert np.all(f.tvel >= np.abs(f.zvel) - 1e-15)

    def test_2d_variant(self):
        pos2 = np.array([[0.4, -0.2]])
        cen2 = np.array([[0.1, 0.3]])
        v, theta = extract_fields_2d(pos2, cen2, c1=2.0, c2=3.0)
        assert v[0] == pytest.approx(2.0 * (0.4 - 0.1))
        assert theta[0] == pytest.approx(3.0 * -0.2)

    def test_measure_conservation(self):
        # cells carry their mass, so the volume-weighted temperature mean
        # equals the seed mean within the solve tolerance
        rng = np.random.default_rng(1)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (27, 3)))
        eta = 1e-6
        _w, d, _rep = solve_ot(sc, UNIT_CUBE, settings=SolverSettings(eta=eta))
        f = extract_fields(sc, d)
        lhs = np.sum(f.temperature * f.volume) / UNIT_CUBE.volume
        rhs = np.mean(sc.positions[:, 2])
        assert abs(lhs - rhs) <= eta * np.abs(sc.positions[:, 2]).max() + 1e-10


class TestRmsv:
    def test_constant_field(self):
        sc = SeedCloud(np.array([[0.0, 0.0, 0.0]]))
        d = build_diagram(sc, WeightVector.zeros(1), UNIT_CUBE)
        assert rmsv(np.array([2.0]), d) == pytest.approx(2.0, abs=1e-14)

    def test_zero_field(self):
        sc = SeedCloud(np.array([[0.0, 0.0, 0.0]]))
        d = build_diagram(sc, WeightVector.zeros(1), UNIT_CUBE)
        assert rmsv(np.array([0.0]), d) == 0.0

    def test_two_equal_cells(self):
        sc = SeedCloud(np.array([[-0.25, 0, 0], [0.25, 0, 0]]))
        d = build_diagram(sc, WeightVector.zeros(2), UNIT_CUBE)
        assert rmsv(np.array([0.0, 2.0]), d) == pytest.approx(np.sqrt(2.0))


class TestW2Exact:
    def test_identical_clouds(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(9, 3))
        assert w2_exact(a, a) == 0.0

    def test_offset_diracs(self):
        assert w2_exact(np.zeros((1, 3)), np.array([[1.0, 0, 0]])) == 1.0

    def test_size_mismatch_rejected(self):
        with pytest.raises(DiagnosticsError):
            w2_exact(np.zeros((2, 3)), np.zeros((3, 3)))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(8, 3))
        b = rng.normal(size=(8, 3))
        cost = cdist(a, b, "sqeuclidean")
        brute = min(
            np.mean([cost[i, p[i]] for i in range(8)])
            for p in itertools.permutations(range(8)))
        assert w2_exact(a, b) == pytest.approx(brute, abs=1e-12)

    def test_metric_properties(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            n = int(rng.integers(2, 17))
            a = rng.normal(size=(n, 3))
            b = rng.normal(size=(n, 3))
            c = rng.normal(size=(n, 3))
            assert w2_exact(a, b) == pytest.approx(w2_exact(b, a), abs=1e-12)
            da, db, dc = (np.sqrt(w2_exact(a, b)), np.sqrt(w2_exact(b, c)),
                          np.sqrt(w2_exact(a, c)))
            assert dc <= da + db + 1e-10
        perm = rng.permutation(10)
        a = rng.normal(size=(10, 3))
        assert w2_exact(a, a[perm]) == pytest.approx(0.0, abs=1e-12)


class TestSinkhorn:
    def test_identical_clouds(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(16, 3))
        assert abs(sinkhorn_w2(a, a, epsilon=1e-3)) < 1e-9

    def test_offset_diracs(self):
        val = sinkhorn_w2(np.zeros((1, 3)), np.array([[1.0, 0, 0]]),
                          epsilon=1e-3)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_close_to_exact_for_default_epsilon(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(64, 3))
        b = rng.normal(size=(64, 3))
        exact = w2_exact(a, b)
        approx = sinkhorn_w2(a, b)
        assert abs(approx - exact) / exact <= 0.05

    def test_gap_shrinks_with_epsilon(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(32, 3))
        b = rng.normal(size=(32, 3))
        exact = w2_exact(a, b)
        gaps = [abs(sinkhorn_w2(a, b, epsilon=e) - exact)
                for e in (1e-1, 1e-2, 1e-3)]
        assert gaps[0] > gaps[1] > gaps[2]

    def test_nonconvergence_raises(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(16, 3))
        b = rng.normal(size=(16, 3))
        with pytest.raises(DiagnosticsError):
            sinkhorn_w2(a, b, epsilon=1e-4, max_iter=2)

    def test_mismatched_sizes_supported(self):
        rng = np.random.default_rng(8)
        a = rng.uniform(size=(27, 3))
        b = rng.uniform(size=(64, 3))
        val = sinkhorn_w2(a, b)
        assert np.isfinite(val) and val > 0.0


class TestEnergyErrorSeries:
    def test_constant_log(self):
        errors, mx = energy_error_series(np.full(10, 3.3))
        assert np.max(np.abs(errors)) == 0.0 and mx == 0.0

    def test_hand_computed_example(self):
        errors, mx = energy_error_series([1.0, 1.0, 1.3])
        assert errors == pytest.approx([0.1 / 1.1, 0.1 / 1.1, -0.2 / 1.1])
        assert mx == pytest.approx(0.2 / 1.1)

    def test_scaling_invariance(self):
        e = np.array([1.0, 1.05, 0.98, 1.02])
        _, m1 = energy_error_series(e)
        _, m2 = energy_error_series(1e6 * e)
        assert m1 == pytest.approx(m2, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DiagnosticsError):
            energy_error_series([])
