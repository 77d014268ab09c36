import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from helpers_geometry import segment_from_global, static_traj

from wfvar.core import ParticleParams, PiecewiseTrajectory, hermite_trajectory, polygonal_from_vertices, vec3
from wfvar.errors import CoverageError, DomainError
from wfvar.farfield import (
    FarFieldSample,
    SphereMesh,
    b_via_second_derivative,
    field_map,
    gah_residual,
    latlong_mesh,
    lw_far,
    poynting_flux,
    sphere_flux,
    wf_far,
    write_field_csv,
)
from wfvar.lightcone import Branch

POS = ParticleParams(mass=1.0, charge=1.0)
NEG = ParticleParams(mass=1.0, charge=-1.0)


def quadratic_charge(half_accel=1.0, span=0.4, particle=POS):
    # x(t) = half_accel * t^2 along x, so a = 2*half_accel and v(0) = 0
    return PiecewiseTrajectory(
        (segment_from_global(-span, span, [[0, 0, half_accel], [0], [0]]),), particle
    )


def cubic_charge(particle=POS):
    rows = 0.6 * np.array(
        [
            [0.1, 0.3, -0.2, 0.05],
            [-0.2, 0.1, 0.15, -0.08],
            [0.05, -0.25, 0.1, 0.02],
        ]
    )
    return PiecewiseTrajectory((segment_from_global(-1.0, 1.0, rows),), particle)


def circle_pair(omega=0.5, rho=0.4, span=10.0, dt=0.1):
    """Antipodal pair on a circle, sampled onto Hermite cells."""
    times = np.arange(-span, span + 0.5 * dt, dt)
    xs = np.stack(
        [rho * np.cos(omega * times), rho * np.sin(omega * times), 0 * times], axis=1
    )
    vs = np.stack(
        [
            -rho * omega * np.sin(omega * times),
            rho * omega * np.cos(omega * times),
            0 * times,
        ],
        axis=1,
    )
    traj1 = hermite_trajectory(times, xs, vs, POS)
    traj2 = hermite_trajectory(times, -xs, -vs, NEG)
    return traj1, traj2


def random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


class TestLwFar:
    def test_hand_value(self):
        traj = quadratic_charge()
        e, b = lw_far(traj, 10.0, [0, 0, 1], 10.0)
        assert_allclose(e, [-0.2, 0, 0], atol=1e-12)
        assert_allclose(b, [0, -0.2, 0], atol=1e-12)

    def test_static_charge_has_no_radiation(self):
        traj = static_traj([0.3, -0.1, 0.2], particle=POS)
        for branch in Branch:
            e, b = lw_far(traj, 50.0, [1, 0, 0], 40.0, branch)
            assert_allclose(e, 0.0, atol=1e-15)
            assert_allclose(b, 0.0, atol=1e-15)

    def test_polygonal_interior_has_no_radiation(self):
        traj = polygonal_from_vertices(
            [(-20.0, [0, 0, 0]), (0.0, [1, 2, 0]), (20.0, [0, 0, 1])], POS
        )
        e, b = lw_far(traj, 35.0, [0, 1, 0], 30.0)
        assert_allclose(e, 0.0, atol=1e-15)
        assert_allclose(b, 0.0, atol=1e-15)

    def test_advanced_hand_value(self):
        traj = quadratic_charge()
        e, b = lw_far(traj, -10.0, [0, 0, 1], 10.0, Branch.ADVANCED)
        assert_allclose(e, [-0.2, 0, 0], atol=1e-12)
        assert_allclose(b, [0, 0.2, 0], atol=1e-12)

    def test_rejects_bad_inputs(self):
        traj = quadratic_charge()
        with pytest.raises(DomainError):
            lw_far(traj, 10.0, [0, 0, 2], 10.0)
        with pytest.raises(DomainError):
            lw_far(traj, 10.0, [0, 0, 1], -1.0)


class TestSecondDerivativeRoute:
    def test_matches_lw_far_on_random_samples(self):
        # Small radius keeps both cone times inside the one-segment domain;
        # the two routes are algebraically identical at any R.
        traj = cubic_charge()
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = random_unit(rng)
            t = rng.uniform(-0.1, 0.1)
            for branch in Branch:
                _, b_lw = lw_far(traj, t, n, 0.45, branch)
                b_d2 = b_via_second_derivative(traj, t, n, 0.45, branch)
                assert np.linalg.norm(b_lw - b_d2) < 1e-10

    def test_uniform_motion_gives_zero(self):
        traj = PiecewiseTrajectory(
            (segment_from_global(-5.0, 5.0, [[0, 0.4], [1, 0], [0, -0.2]]),), POS
        )
        b = b_via_second_derivative(traj, 100.0, [0, 0, 1], 100.0)
        assert_allclose(b, 0.0, atol=1e-15)


class TestWfFar:
    def test_static_pair_all_zero(self):
        s1 = static_traj([0, 0, 0], particle=POS)
        s2 = static_traj([1, 0, 0], particle=NEG)
        sample = wf_far(s1, s2, 30.0, [0, 0, 1], 25.0)
        assert sample.defined
        for f in (sample.E_ret, sample.E_adv, sample.E, sample.B):
            assert_allclose(f, 0.0, atol=1e-15)

    def test_opposite_charges_on_one_trajectory_cancel(self):
        t1 = cubic_charge(POS)
        t2 = cubic_charge(NEG)
        sample = wf_far(t1, t2, 0.0, [0, 1, 0], 0.45)
        assert_allclose(sample.E_ret, 0.0, atol=1e-15)
        assert_allclose(sample.E_adv, 0.0, atol=1e-15)

    def test_transversality_and_reconstruction(self):
        traj1, traj2 = circle_pair()
        rng = np.random.default_rng(11)
        for _ in range(10):
            n = random_unit(rng)
            sample = wf_far(traj1, traj2, rng.uniform(-1, 1), n, 8.0)
            assert abs(n @ sample.E_ret) < 1e-10
            assert_allclose(sample.B_ret, np.cross(n, sample.E_ret), atol=1e-12)
            assert_allclose(sample.E_ret, -np.cross(n, sample.B_ret), atol=1e-10)

    def test_circular_pair_radiates(self):
        traj1, traj2 = circle_pair()
        n = vec3([0.3, -0.5, 0.8])
        n = n / np.linalg.norm(n)
        sample = wf_far(traj1, traj2, 0.2, n, 8.0)
        assert np.linalg.norm(sample.E_ret) > 1e-6

    def test_guard_band_monotonicity(self):
        traj1 = polygonal_from_vertices(
            [(-120.0, [-6, 0, 0]), (0.0, [0, 0, 0]), (120.0, [0, 6, 0])], POS
        )
        traj2 = static_traj([0, 2, 0], particle=NEG)
        # n orthogonal to both motions: the retarded cone time is exactly
        # t - R, which lands 0.03 after the vertex.
        args = (traj1, traj2, 50.03, [0, 0, 1], 50.0)
        tight = wf_far(*args, guard=1e-9)
        loose = wf_far(*args, guard=0.1)
        assert tight.defined and not loose.defined
        assert_allclose(loose.E, tight.E, atol=0)
        assert_allclose(loose.B_ret, tight.B_ret, atol=0)


class TestGahResidual:
    def test_polygonal_pair_vanishes_off_the_vertices(self):
        traj1 = polygonal_from_vertices(
            [(-30.0, [-2, 0, 0]), (-1.0, [0.4, 0.3, 0]), (1.0, [-0.2, 0.5, 0.1]),
             (2.0, [0, 0, 0]), (30.0, [1, -1, 0.5])], POS
        )
        traj2 = polygonal_from_vertices(
            [(-30.0, [0, -1, 2]), (0.5, [0.2, 0.4, 2.3]), (30.0, [-1, 0.5, 2])], NEG
        )
        res = gah_residual(traj1, traj2, 5.2, [0.6, 0.8, 0])
        assert res is not None
        assert np.linalg.norm(res) < 1e-10

    def test_identical_trajectories_cancel(self):
        res = gah_residual(cubic_charge(POS), cubic_charge(NEG), 0.3, [0, 0, 1])
        assert_allclose(res, 0.0, atol=1e-15)

    def test_vertex_cone_image_is_undefined(self):
        traj1 = polygonal_from_vertices(
            [(-20.0, [-4, 0, 0]), (2.0, [0.4, 0, 0]), (20.0, [0.4, 3.6, 0])], POS
        )
        traj2 = static_traj([0, 1, 0], particle=NEG)
        # motions lie in the z = 0 plane, so with n = z the sphere time is t
        assert gah_residual(traj1, traj2, 2.0, [0, 0, 1]) is None
        off = gah_residual(traj1, traj2, 2.5, [0, 0, 1])
        assert np.linalg.norm(off) < 1e-10

    def test_circular_pair_does_not_satisfy_gah(self):
        traj1, traj2 = circle_pair(omega=0.5, rho=0.4)
        # t picked between interpolation nodes, which are breaking times
        res = gah_residual(traj1, traj2, 0.043, [0, 0, 1])
        # antipodal accelerations add up; scale is 2 q omega^2 rho
        assert np.linalg.norm(res) > 0.01 * 0.5**2 * 0.4


class TestPoyntingFlux:
    def test_time_symmetric_cancels(self):
        assert poynting_flux([0.1, 0.2, 0], [0.2, -0.1, 0]) == 0.0

    def test_hand_values(self):
        assert abs(poynting_flux([0, 0, 0], [0.2, 0, 0]) + 0.01) < 1e-15
        assert abs(poynting_flux([0, 0.2, 0], [0, 0, 0]) - 0.01) < 1e-15


class TestSphereMesh:
    def test_weights_and_low_moments(self):
        mesh = latlong_mesh()
        assert len(mesh) == 17 * 35
        assert abs(mesh.weights.sum() - 1.0) < 1e-13
        mean_n = mesh.weights @ mesh.directions
        assert_allclose(mean_n, 0.0, atol=1e-14)
        mean_nz2 = mesh.weights @ mesh.directions[:, 2] ** 2
        assert abs(mean_nz2 - 1.0 / 3.0) < 1e-13

    def test_shape_validation(self):
        with pytest.raises(DomainError):
            SphereMesh(np.zeros((4, 2)), np.full(4, 0.25))


class TestSphereFlux:
    def test_static_pair_is_zero(self):
        s1 = static_traj([0, 0, 0], particle=POS)
        s2 = static_traj([1, 0, 0], particle=NEG)
        assert sphere_flux(s1, s2, 40.0, 30.0) == 0.0

    def test_polygonal_pair_is_zero_almost_everywhere(self):
        traj1 = polygonal_from_vertices(
            [(-150.0, [-2, 0, 0]), (-1.0, [0.4, 0.3, 0]), (1.0, [-0.2, 0.5, 0.1]),
             (2.0, [0, 0, 0]), (150.0, [1, -1, 0.5])], POS
        )
        traj2 = polygonal_from_vertices(
            [(-150.0, [0, -1, 2]), (0.5, [0.2, 0.4, 2.3]), (150.0, [-1, 0.5, 2])], NEG
        )
        for t in (-1.0, 0.0, 1.5):
            assert abs(sphere_flux(traj1, traj2, t, 50.0)) < 1e-8

    def test_retarded_only_matches_dipole_power(self):
        accel = 0.06
        traj = quadratic_charge(half_accel=accel / 2, span=0.45)
        flux = sphere_flux(traj, None, 100.0, 100.0, retarded_only=True)
        larmor = (2.0 / 3.0) * accel**2
        assert flux < 0
        assert abs(-flux - larmor) < 0.05 * larmor

    def test_guard_coverage_error(self):
        traj1 = polygonal_from_vertices(
            [(-120.0, [-6, 0, 0]), (0.0, [0, 0, 0]), (120.0, [0, 6, 0])], POS
        )
        traj2 = static_traj([0, 2, 0], particle=NEG)
        with pytest.raises(CoverageError):
            sphere_flux(traj1, traj2, 50.0, 49.0, guard=1e6)


class TestCsvExport:
    def test_round_trip(self, tmp_path):
        s1 = static_traj([0, 0, 0], particle=POS)
        s2 = static_traj([1, 0, 0], particle=NEG)
        samples = field_map(s1, s2, 30.0, 25.0, mesh=latlong_mesh(3, 4))
        path = tmp_path / "fields.csv"
        write_field_csv(samples, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "nx", "ny", "nz", "Ex", "Ey", "Ez", "Bx", "By", "Bz", "defined"]
        assert len(rows) == 1 + 12
        assert all(r[-1] == "1" for r in rows[1:])
        assert float(rows[1][0]) == 30.0
