import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from wfvar.core import (
    BoundaryData,
    ParticleParams,
    Perturbation,
    PiecewiseTrajectory,
    Segment,
    Side,
    add_perturbation,
    evaluate_state,
    hermite_trajectory,
    load_trajectory,
    polygonal_from_vertices,
    replace_window,
    save_trajectory,
    trajectory_from_dict,
    trajectory_to_dict,
    validate,
    vec3,
)
from wfvar.errors import ConfigError, ContractError, DomainError, SuperluminalError

ELECTRON = ParticleParams(mass=1.0, charge=-1.0)
PROTON = ParticleParams(mass=1836.0, charge=1.0)


def cubic_x3():
    # x(t) = (t^3, 0, 0) on [0, 0.5]
    coeffs = np.zeros((3, 4))
    coeffs[0, 3] = 1.0
    return PiecewiseTrajectory((Segment(0.0, 0.5, coeffs),), ELECTRON)


class TestSegment:
    def test_cubic_state(self):
        traj = cubic_x3()
        x, v, a = evaluate_state(traj, 0.5, Side.LEFT)
        assert_allclose(x, [0.125, 0.0, 0.0])
        assert_allclose(v, [0.75, 0.0, 0.0])
        assert_allclose(a, [3.0, 0.0, 0.0])

    def test_segment_rejects_superluminal(self):
        with pytest.raises(SuperluminalError):
            Segment(0.0, 1.0, np.array([[0.0, 1.5], [0, 0], [0, 0]]))

    def test_check_speed_off_allows_fast_polynomials(self):
        seg = Segment(0.0, 1.0, np.array([[0.0, 5.0], [0, 0], [0, 0]]),
                      check_speed=False)
        assert seg.max_speed() == 5.0

    def test_hermite_interpolates_endpoint_data(self):
        x0, v0 = vec3(0.1, -0.2, 0.0), vec3(0.3, 0.0, 0.1)
        x1, v1 = vec3(0.0, 0.4, -0.1), vec3(-0.2, 0.1, 0.0)
        seg = Segment.hermite(1.0, 3.0, x0, v0, x1, v1)
        assert_allclose(seg.position(1.0), x0, atol=1e-15)
        assert_allclose(seg.velocity(1.0), v0, atol=1e-15)
        assert_allclose(seg.position(3.0), x1, atol=1e-14)
        assert_allclose(seg.velocity(3.0), v1, atol=1e-14)

    def test_max_speed_finds_interior_peak(self):
        # v(t) = 3.6 t (1 - t) peaks at 0.9, between the sample points
        seg = Segment.hermite(0.0, 1.0, [0, 0, 0], [0, 0, 0], [0.6, 0, 0], [0, 0, 0])
        assert abs(seg.max_speed() - 0.9) < 1e-12

    def test_rebased_is_same_polynomial(self):
        seg = Segment(0.0, 2.0, np.array([[1.0, 0.2, -0.05], [0, 0.1, 0.0],
                                          [0.5, 0.0, 0.02]]))
        sub = seg.rebased(0.5, 1.5)
        for t in np.linspace(0.5, 1.5, 7):
            assert_allclose(sub.position(t), seg.position(t), atol=1e-14)
            assert_allclose(sub.velocity(t), seg.velocity(t), atol=1e-14)


class TestPolygonal:
    def test_one_sided_velocity_at_vertex(self):
        traj = polygonal_from_vertices(
            [(0.0, [0, 0, 0]), (1.0, [0.5, 0, 0]), (2.0, [0, 0, 0])], ELECTRON
        )
        assert_allclose(traj.velocity(1.0, Side.LEFT), [0.5, 0, 0])
        assert_allclose(traj.velocity(1.0, Side.RIGHT), [-0.5, 0, 0])
        # the default at a junction is the right limit
        assert_allclose(traj.velocity(1.0), [-0.5, 0, 0])

    def test_superluminal_chord_rejected(self):
        with pytest.raises(SuperluminalError):
            polygonal_from_vertices([(0.0, [0, 0, 0]), (1.0, [1.0, 0.5, 0])], ELECTRON)

    def test_nonmonotonic_times_rejected(self):
        with pytest.raises(DomainError):
            polygonal_from_vertices(
                [(0.0, [0, 0, 0]), (1.0, [0.1, 0, 0]), (1.0, [0.2, 0, 0])], ELECTRON
            )

    def test_outside_domain_raises(self):
        traj = polygonal_from_vertices([(0.0, [0, 0, 0]), (1.0, [0.5, 0, 0])], ELECTRON)
        with pytest.raises(DomainError):
            traj.position(2.0)

    @given(
        st.lists(
            st.tuples(
                st.floats(-0.28, 0.28), st.floats(-0.28, 0.28), st.floats(-0.28, 0.28)
            ),
            min_size=2,
            max_size=6,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_vertices_reproduced_and_subluminal(self, points):
        vertices = [(float(i), p) for i, p in enumerate(points)]
        traj = polygonal_from_vertices(vertices, ELECTRON)
        assert traj.max_speed() < 1.0
        for t, p in vertices[:-1]:
            assert_allclose(traj.position(t, Side.RIGHT), p, atol=1e-15)
        t_last, p_last = vertices[-1]
        assert_allclose(traj.position(t_last, Side.LEFT), p_last, atol=1e-13)
        report = validate(traj)
        assert report.ok


class TestValidation:
    def test_gap_rejected_by_strict_constructor(self):
        a = Segment.linear(0.0, 1.0, [0, 0, 0], [0.1, 0, 0])
        b = Segment.linear(1.0, 2.0, [0.1 + 1e-3, 0, 0], [0.2, 0, 0])
        with pytest.raises(DomainError):
            PiecewiseTrajectory((a, b), ELECTRON)

    def test_gap_reported_by_validate(self):
        a = Segment.linear(0.0, 1.0, [0, 0, 0], [0.1, 0, 0])
        b = Segment.linear(1.0, 2.0, [0.1 + 1e-3, 0, 0], [0.2, 0, 0])
        traj = PiecewiseTrajectory((a, b), ELECTRON, strict=False)
        report = validate(traj)
        assert not report.ok
        (t_junction, gap), = report.continuity_defects
        assert t_junction == 1.0
        assert abs(gap - 1e-3) < 1e-12

    def test_max_speed_matches_dense_sampling(self):
        traj = hermite_trajectory(
            [0.0, 0.7, 2.0],
            [vec3(0, 0, 0), vec3(0.2, -0.1, 0.05), vec3(-0.1, 0.3, 0.0)],
            [vec3(0.1, 0, 0), vec3(-0.3, 0.2, 0.1), vec3(0, 0, -0.2)],
            ELECTRON,
        )
        ts = np.linspace(0.0, 2.0, 200001)
        dense = np.sqrt((traj.velocity_many(ts) ** 2).sum(axis=0)).max()
        assert abs(validate(traj).max_speed - dense) < 1e-9


class TestParticleParams:
    def test_rejects_nonpositive_mass(self):
        with pytest.raises(DomainError):
            ParticleParams(mass=0.0, charge=1.0)

    def test_frozen(self):
        with pytest.raises(Exception):
            ELECTRON.mass = 2.0


class TestBoundaryData:
    def test_windows_default_to_shared_interval(self):
        bd = BoundaryData(start_time=-1.0, end_time=4.0, k2=0.25)
        assert bd.window(1) == (-1.0, 4.0)
        assert bd.window(2) == (-1.0, 4.0)

    def test_staggered_partner_window(self):
        bd = BoundaryData(0.0, 10.0, window2=(2.0, 8.0))
        assert bd.window(2) == (2.0, 8.0)

    def test_rejects_reversed_window(self):
        with pytest.raises(DomainError):
            BoundaryData(start_time=1.0, end_time=0.0)


class TestPerturbation:
    def test_tent_shape(self):
        b = Perturbation.tent(0.0, 1.0, 2.0, [0.0, 0.3, 0.0])
        assert_allclose(b.value(0.0), [0, 0, 0], atol=1e-15)
        assert_allclose(b.value(1.0), [0, 0.3, 0], atol=1e-15)
        assert_allclose(b.value(2.0, Side.LEFT), [0, 0, 0], atol=1e-15)
        assert_allclose(b.derivative(0.5), [0, 0.3, 0])
        assert_allclose(b.derivative(1.5), [0, -0.3, 0])

    def test_admissibility_contract(self):
        b = Perturbation.tent(0.0, 1.0, 2.0, [0.1, 0, 0])
        b.check_admissible(0.0, 2.0)
        # zero-extension outside the support is fine on a wider window
        b.check_admissible(-1.0, 3.0)
        with pytest.raises(ContractError):
            b.check_admissible(0.0, 1.5)  # b(1.5) != 0 at a window endpoint
        ragged = Perturbation.from_nodes(
            [0.0, 1.0], [vec3(0, 0, 0), vec3(0.2, 0, 0)]
        )
        with pytest.raises(ContractError):
            # nonzero at its own domain edge inside the window: the
            # zero-extension would tear the trajectory
            ragged.check_admissible(-1.0, 3.0)

    def test_from_nodes_reproduces_quadratic_derivatives(self):
        times = [0.0, 0.5, 1.25, 2.0]
        quad = lambda t: vec3(t * t, -0.5 * t * t + t, 0.0)
        dquad = lambda t: vec3(2 * t, -t + 1.0, 0.0)
        b = Perturbation.from_nodes(times, [quad(t) for t in times])
        for t in times:
            assert_allclose(b.value(t), quad(t), atol=1e-14)
        for t in [0.1, 0.6, 1.9]:
            assert_allclose(b.derivative(t), dquad(t), atol=1e-13)

    def test_add_perturbation_displaces_interior_only(self):
        traj = polygonal_from_vertices(
            [(0.0, [0, 0, 0]), (2.0, [0.4, 0, 0]), (4.0, [0, 0, 0])], ELECTRON
        )
        b = Perturbation.tent(1.0, 2.5, 3.0, [0, 0, 0.2])
        eps = 0.125
        moved = add_perturbation(traj, b, eps)
        assert_allclose(moved.position(0.5), traj.position(0.5), atol=1e-15)
        assert_allclose(moved.position(3.5), traj.position(3.5), atol=1e-15)
        assert_allclose(
            moved.position(2.5), traj.position(2.5) + eps * vec3(0, 0, 0.2),
            atol=1e-14,
        )
        # breakpoints of both the base and the bump survive in the mesh
        junctions = set(np.round(moved.junction_times(), 12))
        assert {1.0, 2.0, 2.5, 3.0} <= junctions


class TestWindowSplice:
    def test_replace_window_round_trip(self):
        traj = hermite_trajectory(
            [0.0, 1.0, 2.0, 3.0],
            [vec3(0, 0, 0), vec3(0.2, 0, 0), vec3(0.1, 0.1, 0), vec3(0, 0.2, 0)],
            [vec3(0.2, 0, 0)] * 4,
            ELECTRON,
        )
        inner = PiecewiseTrajectory(
            tuple(s for s in traj.segments if 1.0 <= s.t_start and s.t_end <= 2.0),
            ELECTRON,
        )
        back = replace_window(traj, inner, (1.0, 2.0))
        for t in np.linspace(0.0, 3.0, 17):
            assert_allclose(back.position(t), traj.position(t), atol=1e-14)

    def test_replace_window_rejects_discontinuous_splice(self):
        traj = polygonal_from_vertices([(0.0, [0, 0, 0]), (4.0, [0.4, 0, 0])], ELECTRON)
        bad = polygonal_from_vertices([(1.0, [1, 0, 0]), (2.0, [1.1, 0, 0])], ELECTRON)
        with pytest.raises(DomainError):
            replace_window(traj, bad, (1.0, 2.0))


class TestJsonExchange:
    def test_round_trip_is_exact(self, tmp_path):
        traj = hermite_trajectory(
            [0.0, 1.3, 2.0],
            [vec3(0, 0, 0), vec3(0.17, -0.3, 0.02), vec3(0.4, 0, 0)],
            [vec3(0.1, 0.05, 0), vec3(0.2, 0, 0), vec3(-0.1, 0.3, 0.01)],
            PROTON,
        )
        path = tmp_path / "traj.json"
        save_trajectory(traj, path)
        loaded = load_trajectory(path)
        assert loaded.particle == traj.particle
        assert len(loaded.segments) == len(traj.segments)
        for a, b in zip(loaded.segments, traj.segments):
            assert a.t_start == b.t_start and a.t_end == b.t_end
            assert np.array_equal(a.coeffs, b.coeffs)

    def test_malformed_record_raises_config_error(self):
        with pytest.raises(ConfigError):
            trajectory_from_dict({"particle": {"mass": 1.0}})
        good = trajectory_to_dict(
            polygonal_from_vertices([(0.0, [0, 0, 0]), (1.0, [0.1, 0, 0])], ELECTRON)
        )
        bad = json.loads(json.dumps(good))
        bad["segments"][0]["kind"] = "spline"
        with pytest.raises(ConfigError):
            trajectory_from_dict(bad)
