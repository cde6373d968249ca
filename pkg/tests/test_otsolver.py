import numpy as np
import pytest

from sgflow.geometry import (
    DiagramBuilder,
    Domain,
    SeedCloud,
    WeightVector,
    build_diagram,
    monte_carlo_volumes,
)
from sgflow.otsolver import (
    ConvergenceError,
    SolverSettings,
    newton_step,
    ot_hessian,
    pullback_weights,
    rescale_for_solve,
    solve_ot,
)

UNIT_CUBE = Domain(lo=[-0.5, -0.5, -0.5], hi=[0.5, 0.5, 0.5])
CHANNEL = Domain(lo=[-3.66, -1.75, 0.0], hi=[3.66, 1.75, 0.45],
                 periodic=(True, False, False))


def subcube_centers():
    g = np.array(np.meshgrid([-0.25, 0.25], [-0.25, 0.25], [-0.25, 0.25],
                             indexing="ij")).reshape(3, -1).T
    return SeedCloud(g)


class TestSolve:
    def test_symmetric_fixed_point(self):
        w, d, rep = solve_ot(subcube_centers(), UNIT_CUBE)
        assert rep.converged and rep.iterations == 0
        assert np.all(w.w == 0.0)
        assert np.allclose(d.volumes, 0.125, atol=1e-14)

    def test_two_cells_with_unequal_targets(self):
        sc = SeedCloud(np.array([[-0.25, 0, 0], [0.25, 0, 0]]),
                       mass=np.array([0.6, 0.4]))
        w, d, rep = solve_ot(sc, UNIT_CUBE,
                             settings=SolverSettings(eta=1e-9))
        assert w.w[0] - w.w[1] == pytest.approx(0.1, abs=1e-9)
        assert np.allclose(d.volumes, [0.6, 0.4], atol=1e-9)

    def test_random_cloud_monte_carlo(self):
        rng = np.random.default_rng(12)
        sc = SeedCloud(rng.uniform(CHANNEL.lo, CHANNEL.hi, (27, 3)))
        w, d, rep = solve_ot(sc, CHANNEL, settings=SolverSettings(eta=1e-3))
        assert rep.converged
        targets = sc.mass * CHANNEL.volume
        assert np.max(np.abs(d.volumes - targets) / targets) <= 1e-3
        samples = 1_000_000
        mc = monte_carlo_volumes(sc, w, CHANNEL, samples,
                                 np.random.default_rng(99))
        p = d.volumes / CHANNEL.volume
        se = np.sqrt(p * (1 - p) / samples) * CHANNEL.volume
        assert np.all(np.abs(mc - d.volumes) <= 3.5 * se)

    def test_certificate_via_independent_build(self):
        rng = np.random.default_rng(13)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (32, 3)))
        w, d, rep = solve_ot(sc, UNIT_CUBE, settings=SolverSettings(eta=1e-4))
        d2 = build_diagram(sc, w, UNIT_CUBE)
        targets = sc.mass * UNIT_CUBE.volume
        assert np.max(np.abs(d2.volumes - targets) / targets) <= 1e-4

    def test_warm_start_idempotence(self):
        rng = np.random.default_rng(14)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (20, 3)))
        w, _, _ = solve_ot(sc, UNIT_CUBE, settings=SolverSettings(eta=1e-5))
        _, _, rep = solve_ot(sc, UNIT_CUBE, warm_start=w,
                             settings=SolverSettings(eta=1e-5))
        assert rep.iterations <= 1

    def test_gauge_invariance_of_warm_start(self):
        rng = np.random.default_rng(15)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (20, 3)))
        w0, _, _ = solve_ot(sc, UNIT_CUBE, settings=SolverSettings(eta=1e-5))
        w1, d1, _ = solve_ot(sc, UNIT_CUBE, warm_start=w0,
                             settings=SolverSettings(eta=1e-6))
        w2, d2, _ = solve_ot(sc, UNIT_CUBE,
                             warm_start=WeightVector(w0.w + 3.0),
                             settings=SolverSettings(eta=1e-6))
        assert np.allclose(w1.w, w2.w, atol=1e-12)
        assert np.allclose(d1.volumes, d2.volumes, atol=1e-13)

    def test_nonconvergence_carries_report(self):
        rng = np.random.default_rng(16)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (64, 3)))
        with pytest.raises(ConvergenceError) as err:
            solve_ot(sc, UNIT_CUBE,
                     settings=SolverSettings(eta=1e-12, max_iterations=1))
        assert err.value.report.iterations == 1
        assert not err.value.report.converged

    def test_monotone_damping(self):
        rng = np.random.default_rng(17)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (24, 3)))
        builder = DiagramBuilder(sc, UNIT_CUBE)
        targets = sc.mass * UNIT_CUBE.volume
        w = WeightVector.zeros(24)
        d = builder.build(w)
        floor = 0.5 * min(d.volumes.min(), targets.min())
        settings = SolverSettings(eta=1e-9)
        sups = [np.max(np.abs(d.volumes - targets))]
        for _ in range(8):
            r = d.volumes - targets
            if np.max(np.abs(r) / targets) <= settings.eta:
                break
            h = ot_hessian(d, sc)
            w, d, _tau, _hv = newton_step(w, r, h, d, builder=builder,
                                          volume_floor=floor, settings=settings)
            sups.append(np.max(np.abs(d.volumes - targets)))
        assert all(b < a for a, b in zip(sups, sups[1:]))


class TestHessian:
    def test_two_cell_matrix(self):
        # volume gradient: d vol_i / d w_i = +area/(2 dist), off-diagonal negative
        sc = SeedCloud(np.array([[-0.25, 0, 0], [0.25, 0, 0]]))
        d = build_diagram(sc, WeightVector.zeros(2), UNIT_CUBE)
        h = ot_hessian(d, sc).toarray()
        s = 1.0 / (2.0 * 0.5)
        assert np.allclose(h, [[s, -s], [-s, s]], atol=1e-12)

    def test_row_sums_vanish(self):
        rng = np.random.default_rng(18)
        sc = SeedCloud(rng.uniform(CHANNEL.lo, CHANNEL.hi, (30, 3)))
        d = build_diagram(sc, WeightVector.zeros(30), CHANNEL)
        h = ot_hessian(d, sc)
        assert np.max(np.abs(h.sum(axis=1))) < 1e-12

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_finite_difference(self, seed):
        rng = np.random.default_rng(40 + seed)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (10, 3)))
        w0 = WeightVector(rng.normal(0, 0.01, 10)).normalized()
        builder = DiagramBuilder(sc, UNIT_CUBE)
        h = ot_hessian(builder.build(w0), sc).toarray()
        delta = 1e-6
        fd = np.zeros((10, 10))
        for i in range(10):
            wp, wm = np.array(w0.w), np.array(w0.w)
            wp[i] += delta
            wm[i] -= delta
            fd[:, i] = (builder.build(WeightVector(wp)).volumes
                        - builder.build(WeightVector(wm)).volumes) / (2 * delta)
        scale = np.abs(h).max()
        assert np.abs(fd - h).max() <= 1e-4 * scale


class TestNewtonStep:
    def test_zero_residual_is_fixed_point(self):
        sc = subcube_centers()
        builder = DiagramBuilder(sc, UNIT_CUBE)
        w = WeightVector.zeros(8)
        d = builder.build(w)
        r = d.volumes - sc.mass * UNIT_CUBE.volume
        h = ot_hessian(d, sc)
        w2, _d2, tau, hv = newton_step(w, r, h, d, builder=builder,
                                       volume_floor=1e-6,
                                       settings=SolverSettings())
        assert np.array_equal(w2.w, w.w)
        assert tau == 1.0 and hv == 0

    def test_one_step_exact_for_affine_geometry(self):
        sc = SeedCloud(np.array([[-0.25, 0, 0], [0.25, 0, 0]]),
                       mass=np.array([0.6, 0.4]))
        builder = DiagramBuilder(sc, UNIT_CUBE)
        w = WeightVector.zeros(2)
        d = builder.build(w)
        targets = sc.mass * UNIT_CUBE.volume
        r = d.volumes - targets
        h = ot_hessian(d, sc)
        w2, d2, tau, _ = newton_step(w, r, h, d, builder=builder,
                                     volume_floor=0.5 * targets.min(),
                                     settings=SolverSettings())
        assert tau == 1.0
        assert w2.w[0] - w2.w[1] == pytest.approx(0.1, abs=1e-10)

    def test_accepted_step_strictly_decreases_residual(self):
        rng = np.random.default_rng(19)
        sc = SeedCloud(rng.uniform(-0.5, 0.5, (10, 3)))
        builder = DiagramBuilder(sc, UNIT_CUBE)
        targets = sc.mass * UNIT_CUBE.volume
        w = WeightVector.zeros(10)
        d = builder.build(w)
        floor = 0.5 * min(d.volumes.min(), targets.min())
        for _ in range(5):
            r = d.volumes - targets
            sup0 = np.max(np.abs(r))
            if sup0 < 1e-12:
                break
            h = ot_hessian(d, sc)
            w, d, _tau, _ = newton_step(w, r, h, d, builder=builder,
                                        volume_floor=floor,
                                        settings=SolverSettings())
            assert np.max(np.abs(d.volumes - targets)) < sup0


class TestRescale:
    def test_identity_for_interior_seeds(self):
        rng = np.random.default_rng(20)
        sc = SeedCloud(rng.uniform(-0.4, 0.4, (10, 3)))
        ts, tr = rescale_for_solve(sc, UNIT_CUBE)
        assert tr.scale == 1.0
        assert np.all(tr.offset == 0.0)
        assert np.array_equal(ts.positions, sc.positions)

    def test_half_scale_for_double_spread(self):
        pos = np.array([[-1.0, 0, 0], [1.0, 0, 0], [0.0, 0.3, 0.1]])
        ts, tr = rescale_for_solve(SeedCloud(pos), UNIT_CUBE)
        assert tr.scale == pytest.approx(0.5)
        assert np.all(ts.positions[:, 0] >= -0.5 - 1e-12)
        assert np.all(ts.positions[:, 0] <= 0.5 + 1e-12)

    def test_zero_diameter_cloud_translates(self):
        pos = np.tile([[7.0, 7.0, 7.0]], (1, 1))
        ts, tr = rescale_for_solve(SeedCloud(pos), UNIT_CUBE)
        assert tr.scale == 1.0
        assert np.allclose(ts.positions[0], UNIT_CUBE.center)

    def test_dual_path_equivalence(self):
        # solve with rescaled seeds, pull weights back, compare diagrams
        rng = np.random.default_rng(21)
        sc = SeedCloud(rng.uniform(-1.0, 1.0, (20, 3)))
        ts, tr = rescale_for_solve(sc, UNIT_CUBE)
        settings = SolverSettings(eta=1e-7)
        w_direct, d_direct, _ = solve_ot(sc, UNIT_CUBE, settings=settings)
        w_prime, _, _ = solve_ot(ts, UNIT_CUBE, settings=settings)
        w_back = pullback_weights(w_prime.w, sc, tr)
        d_back = build_diagram(sc, w_back, UNIT_CUBE)
        assert np.max(np.abs(d_direct.volumes - d_back.volumes)) <= 1e-10

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(22)
        pos = rng.uniform(-3, 3, (7, 3))
        _, tr = rescale_for_solve(SeedCloud(pos), UNIT_CUBE)
        assert np.allclose(tr.invert(tr.apply(pos)), pos, atol=1e-12)
        inv = tr.inverse
        assert np.allclose(inv.apply(tr.apply(pos)), pos, atol=1e-12)
