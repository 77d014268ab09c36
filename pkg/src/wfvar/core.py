"""Trajectory representation with breaking points and one-sided evaluation.

Positions are piecewise-polynomial maps from time to R^3 (natural units,
c = 1).  A trajectory is continuous everywhere; velocity and acceleration
may jump at the junctions between segments (breaking points).  Evaluation
at a junction is one-sided and defaults to the right limit.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import ConfigError, ContractError, DomainError, SuperluminalError

__all__ = [
    "Vec3",
    "vec3",
    "Side",
    "ParticleParams",
    "Segment",
    "PiecewiseTrajectory",
    "ValidationReport",
    "BoundaryData",
    "Perturbation",
    "evaluate_state",
    "polygonal_from_vertices",
    "hermite_trajectory",
    "validate",
    "add_perturbation",
    "replace_window",
    "trajectory_to_dict",
    "trajectory_from_dict",
    "save_trajectory",
    "load_trajectory",
]

# A Vec3 is a plain float64 numpy array of shape (3,).
Vec3 = np.ndarray

#: absolute slack, relative to max(1, |t|), accepted when a time sits on a
#: domain edge; cone roots are only accurate to ~1e-12 themselves.
_EDGE_SLACK = 1e-9


def vec3(x, y=None, z=None) -> Vec3:
    """Build a finite (3,) float vector from components or any 3-iterable."""
    if y is None and z is None:
        v = np.asarray(x, dtype=float).reshape(3)
    else:
        v = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError(f"non-finite vector components: {v}")
    return v


class Side(Enum):
    """Which one-sided limit to take at a breaking point."""

    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class ParticleParams:
    """Mass and charge of one particle (c = 1 units)."""

    mass: float
    charge: float

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass > 0):
            raise DomainError(f"mass must be positive and finite, got {self.mass}")
        if not math.isfinite(self.charge):
            raise DomainError(f"charge must be finite, got {self.charge}")


def _poly_shift(coeffs: np.ndarray, delta: float) -> np.ndarray:
    """Re-expand polynomial rows so that p(u) becomes p(w + delta).

    ``coeffs`` has shape (3, K), ascending powers.  Used to re-base a segment
    onto a different local time origin.
    """
    if delta == 0.0:
        return coeffs.copy()
    k = coeffs.shape[1]
    shift = np.polynomial.Polynomial([delta, 1.0])
    out = np.zeros_like(coeffs)
    for i in range(coeffs.shape[0]):
        c = np.polynomial.Polynomial(coeffs[i])(shift).coef
        out[i, : len(c)] = c
    return out


@dataclass(frozen=True)
class Segment:
    """One smooth polynomial piece of a trajectory.

    The position on [t_start, t_end] is ``sum_k coeffs[:, k] * (t - t_start)**k``.
    Speed must stay below 1 on the whole closed interval unless
    ``check_speed=False`` (used internally for perturbations, which are
    displacements rather than world lines).
    """

    t_start: float
    t_end: float
    coeffs: np.ndarray  # shape (3, K), ascending powers of (t - t_start)
    check_speed: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise DomainError("segment times must be finite")
        if not self.t_start < self.t_end:
            raise DomainError(
                f"segment needs t_start < t_end, got [{self.t_start}, {self.t_end}]"
            )
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[0] != 3 or c.shape[1] < 1:
            raise DomainError(f"segment coeffs must have shape (3, K>=1), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("segment coefficients must be finite")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.check_speed and self.max_speed() >= 1.0:
            raise SuperluminalError(
                f"segment [{self.t_start}, {self.t_end}] reaches speed "
                f"{self.max_speed():.6g} >= 1"
            )

    # -- construction helpers -------------------------------------------------

    @classmethod
    def linear(cls, t0: float, t1: float, x0, x1, check_speed: bool = True) -> "Segment":
        x0 = vec3(x0)
        x1 = vec3(x1)
        v = (x1 - x0) / (t1 - t0)
        return cls(t0, t1, np.column_stack([x0, v]), check_speed=check_speed)

    @classmethod
    def hermite(cls, t0: float, t1: float, x0, v0, x1, v1, check_speed: bool = True) -> "Segment":
        """Cubic interpolating endpoint positions and one-sided velocities."""
        x0, v0, x1, v1 = vec3(x0), vec3(v0), vec3(x1), vec3(v1)
        h = t1 - t0
        c2 = 3.0 * (x1 - x0) / h**2 - (2.0 * v0 + v1) / h
        c3 = 2.0 * (x0 - x1) / h**3 + (v0 + v1) / h**2
        return cls(t0, t1, np.column_stack([x0, v0, c2, c3]), check_speed=check_speed)

    # -- evaluation ------------------------------------------------------------

    def _u(self, t):
        return np.asarray(t, dtype=float) - self.t_start

    def position(self, t) -> np.ndarray:
        return npoly.polyval(self._u(t), self.coeffs.T)

    def velocity(self, t) -> np.ndarray:
        return npoly.polyval(self._u(t), npoly.polyder(self.coeffs.T))

    def acceleration(self, t) -> np.ndarray:
        return npoly.polyval(self._u(t), npoly.polyder(self.coeffs.T, 2))

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def max_speed(self, samples: int = 64) -> float:
        """Max |dx/dt| over the segment: dense samples plus extremum candidates."""
        dcoef = npoly.polyder(self.coeffs.T)  # (K-1, 3)
        if dcoef.shape[0] == 0:
            return 0.0
        h = self.t_end - self.t_start
        us = list(np.linspace(0.0, h, samples))
        # stationary points of |v|^2 are roots of its derivative polynomial
        s2 = np.zeros(1)
        for i in range(3):
            s2 = npoly.polyadd(s2, npoly.polymul(dcoef[:, i], dcoef[:, i]))
        ds2 = npoly.polyder(s2)
        if ds2.shape[0] > 1 or (ds2.shape[0] == 1 and ds2[0] != 0.0):
            for r in npoly.polyroots(ds2):
                if abs(r.imag) < 1e-12 and 0.0 <= r.real <= h:
                    us.append(r.real)
        vals = npoly.polyval(np.array(us), dcoef)  # (3, len(us))
        return float(np.sqrt((vals**2).sum(axis=0)).max())

    def rebased(self, a: float, b: float, check_speed: bool | None = None) -> "Segment":
        """The same polynomial restricted to [a, b] ⊆ [t_start, t_end]."""
        if a < self.t_start - 1e-12 or b > self.t_end + 1e-12:
            raise DomainError(f"[{a}, {b}] not inside segment [{self.t_start}, {self.t_end}]")
        cs = self.check_speed if check_speed is None else check_speed
        return Segment(a, b, _poly_shift(self.coeffs, a - self.t_start), check_speed=cs)


def _locate(junctions: Sequence[float], t_start: float, t_end: float, t: float,
            side: Side, nseg: int) -> int:
    """Index of the segment governing time t with the requested side."""
    slack = _EDGE_SLACK * max(1.0, abs(t))
    if t < t_start - slack or t > t_end + slack:
        raise DomainError(f"time {t} outside trajectory domain [{t_start}, {t_end}]")
    t = min(max(t, t_start), t_end)
    if side is Side.RIGHT:
        i = bisect.bisect_right(junctions, t)
    else:
        i = bisect.bisect_left(junctions, t)
    return min(max(i, 0), nseg - 1)


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """An ordered, abutting chain of segments plus the particle it describes."""

    segments: tuple
    particle: ParticleParams
    strict: bool = True

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise DomainError("trajectory needs at least one segment")
        object.__setattr__(self, "segments", segs)
        for a, b in zip(segs, segs[1:]):
            if b.t_start != a.t_end:
                raise DomainError(
                    f"segments must abut exactly: {a.t_end} != {b.t_start}"
                )
        if self.strict:
            scale = max(1.0, max(float(np.abs(s.coeffs[:, 0]).max()) for s in segs))
            for a, b in zip(segs, segs[1:]):
                gap = float(np.linalg.norm(a.position(a.t_end) - b.position(b.t_start)))
                if gap > 1e-9 * scale:
                    raise DomainError(
                        f"position gap {gap:.3g} at junction t={a.t_end}"
                    )
        object.__setattr__(self, "_junctions", [s.t_start for s in segs[1:]])

    # -- basic geometry ---------------------------------------------------------

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    def junction_times(self) -> list:
        """Interior junction times (candidate breaking points)."""
        return list(self._junctions)

    def segment_at(self, t: float, side: Side = Side.RIGHT) -> Segment:
        i = _locate(self._junctions, self.t_start, self.t_end, t, side, len(self.segments))
        return self.segments[i]

    def position(self, t: float, side: Side = Side.RIGHT) -> Vec3:
        return self.segment_at(t, side).position(t)

    def velocity(self, t: float, side: Side = Side.RIGHT) -> Vec3:
        return self.segment_at(t, side).velocity(t)

    def acceleration(self, t: float, side: Side = Side.RIGHT) -> Vec3:
        return self.segment_at(t, side).acceleration(t)

    def state(self, t: float, side: Side = Side.RIGHT):
        seg = self.segment_at(t, side)
        return seg.position(t), seg.velocity(t), seg.acceleration(t)

    # -- vectorized evaluation (interior points; right-sided at junctions) ------

    def _group_by_segment(self, ts: np.ndarray):
        idx = np.searchsorted(self._junctions, ts, side="right")
        idx = np.clip(idx, 0, len(self.segments) - 1)
        return idx

    def position_many(self, ts: np.ndarray) -> np.ndarray:
        """Positions at an array of times, shape (3, N)."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty((3, ts.size))
        idx = self._group_by_segment(ts.ravel())
        for i in np.unique(idx):
            m = idx == i
            out[:, m] = self.segments[i].position(ts.ravel()[m])
        return out

    def velocity_many(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        out = np.empty((3, ts.size))
        idx = self._group_by_segment(ts.ravel())
        for i in np.unique(idx):
            m = idx == i
            out[:, m] = self.segments[i].velocity(ts.ravel()[m])
        return out

    def max_speed(self) -> float:
        return max(s.max_speed() for s in self.segments)


def evaluate_state(traj: PiecewiseTrajectory, t: float, side: Side = Side.RIGHT):
    """One-sided (x, v, a) at time t.  Position is side-independent."""
    return traj.state(t, side)


def polygonal_from_vertices(vertices, particle: ParticleParams) -> PiecewiseTrajectory:
    """Piecewise-constant-velocity trajectory through (time, position) vertices.

    Raises SuperluminalError if any chord speed reaches 1 and DomainError for
    non-increasing times.
    """
    verts = [(float(t), vec3(x)) for t, x in vertices]
    if len(verts) < 2:
        raise DomainError("need at least two vertices")
    segs = []
    for (t0, x0), (t1, x1) in zip(verts, verts[1:]):
        if not t1 > t0:
            raise DomainError(f"vertex times must increase strictly: {t0} -> {t1}")
        speed = float(np.linalg.norm(x1 - x0)) / (t1 - t0)
        if speed >= 1.0:
            raise SuperluminalError(f"chord speed {speed:.6g} >= 1 on [{t0}, {t1}]")
        segs.append(Segment.linear(t0, t1, x0, x1))
    return PiecewiseTrajectory(tuple(segs), particle)


def hermite_trajectory(times, positions, velocities, particle: ParticleParams,
                       strict: bool = True) -> PiecewiseTrajectory:
    """C^1 cubic-Hermite trajectory through nodes with prescribed velocities."""
    times = [float(t) for t in times]
    segs = []
    for i in range(len(times) - 1):
        segs.append(
            Segment.hermite(times[i], times[i + 1], positions[i], velocities[i],
                            positions[i + 1], velocities[i + 1])
        )
    return PiecewiseTrajectory(tuple(segs), particle, strict=strict)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of trajectory validation; failures are reported, never raised."""

    max_speed: float
    continuity_defects: tuple  # of (junction time, |gap|)
    times_monotonic: bool
    continuity_tol: float = 1e-9

    @property
    def ok(self) -> bool:
        return (
            self.times_monotonic
            and self.max_speed < 1.0
            and all(g <= self.continuity_tol for _, g in self.continuity_defects)
        )


def validate(traj: PiecewiseTrajectory) -> ValidationReport:
    """Report max speed, per-junction continuity defects, and time ordering."""
    segs = traj.segments
    monotonic = all(s.t_start < s.t_end for s in segs) and all(
        b.t_start >= a.t_end for a, b in zip(segs, segs[1:])
    )
    defects = []
    for a, b in zip(segs, segs[1:]):
        gap = float(np.linalg.norm(a.position(a.t_end) - b.position(b.t_start)))
        defects.append((a.t_end, gap))
    return ValidationReport(
        max_speed=traj.max_speed(),
        continuity_defects=tuple(defects),
        times_monotonic=monotonic,
    )


@dataclass(frozen=True)
class BoundaryData:
    """Boundary set of the variational problem.

    ``start_time``/``end_time`` delimit the variable window of particle 1;
    ``window2`` is the (possibly cone-staggered) variable window of particle 2
    and defaults to the same interval.  ``history1``/``history2`` optionally
    carry the frozen continuation of each trajectory outside its window; they
    may be omitted when the trajectories passed around already cover every
    cone time touched by the windows.  ``k2`` is the additive action constant
    contributed by the frozen partner arc.
    """

    start_time: float
    end_time: float
    history1: PiecewiseTrajectory | None = None
    history2: PiecewiseTrajectory | None = None
    k2: float = 0.0
    window2: tuple | None = None

    def __post_init__(self):
        if not (math.isfinite(self.start_time) and math.isfinite(self.end_time)):
            raise DomainError("window times must be finite")
        if self.end_time < self.start_time:
            raise DomainError("end_time must be >= start_time")
        if not math.isfinite(self.k2):
            raise DomainError("K2 must be finite")
        if self.window2 is not None:
            a, b = self.window2
            if b < a:
                raise DomainError("window2 end must be >= start")
            object.__setattr__(self, "window2", (float(a), float(b)))

    def window(self, k: int) -> tuple:
        """Variable window of particle k (1 or 2)."""
        if k == 1 or self.window2 is None:
            return (self.start_time, self.end_time)
        return self.window2

    def history(self, k: int) -> PiecewiseTrajectory | None:
        return self.history1 if k == 1 else self.history2


@dataclass(frozen=True)
class Perturbation:
    """Piecewise-polynomial displacement field b(t) on a window.

    Admissible variations vanish at both window endpoints; that contract is
    checked where it matters (the directional derivative), not at
    construction, so general displacement fields remain expressible.
    """

    segments: tuple

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise DomainError("perturbation needs at least one segment")
        for a, b in zip(segs, segs[1:]):
            if b.t_start != a.t_end:
                raise DomainError("perturbation segments must abut exactly")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_junctions", [s.t_start for s in segs[1:]])

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    def junction_times(self) -> list:
        return list(self._junctions)

    def _segment_at(self, t: float, side: Side) -> Segment:
        i = _locate(self._junctions, self.t_start, self.t_end, t, side, len(self.segments))
        return self.segments[i]

    def value(self, t: float, side: Side = Side.RIGHT) -> Vec3:
        return self._segment_at(t, side).position(t)

    def derivative(self, t: float, side: Side = Side.RIGHT) -> Vec3:
        return self._segment_at(t, side).velocity(t)

    def check_admissible(self, t0: float, t1: float, tol: float = 1e-12) -> None:
        """Raise unless the zero-extension of b is continuous on [t0, t1] and
        vanishes at both window endpoints.

        b is treated as identically zero outside its own domain, so the
        displacement must also vanish at any domain edge interior to the
        window; otherwise the extension would tear the trajectory.
        """
        if self.t_start >= t1 or self.t_end <= t0:
            return  # zero on the whole window
        checkpoints = [t for t in (t0, t1) if self.t_start <= t <= self.t_end]
        checkpoints += [t for t in (self.t_start, self.t_end) if t0 < t < t1]
        for t in checkpoints:
            mag = float(np.linalg.norm(self.value(t)))
            if mag > tol:
                raise ContractError(f"perturbation must vanish at t={t}, |b|={mag:.3g}")

    @classmethod
    def tent(cls, t0: float, t_peak: float, t1: float, amplitude) -> "Perturbation":
        """Piecewise-linear bump: 0 at t0 and t1, `amplitude` at t_peak."""
        amp = vec3(amplitude)
        zero = np.zeros(3)
        return cls((
            Segment.linear(t0, t_peak, zero, amp, check_speed=False),
            Segment.linear(t_peak, t1, amp, zero, check_speed=False),
        ))

    @classmethod
    def from_nodes(cls, times, values, velocities=None) -> "Perturbation":
        """Cubic-Hermite displacement through nodes (velocities default to
        parabolic finite differences)."""
        times = [float(t) for t in times]
        vals = [vec3(v) for v in values]
        if velocities is None:
            velocities = _fd_node_velocities(times, vals)
        segs = []
        for i in range(len(times) - 1):
            segs.append(
                Segment.hermite(times[i], times[i + 1], vals[i], velocities[i],
                                vals[i + 1], velocities[i + 1], check_speed=False)
            )
        return cls(tuple(segs))


def _fd_node_velocities(times, values):
    """Node derivative estimates exact for quadratic data (3-point stencils)."""
    n = len(times)
    if n == 2:
        v = (values[1] - values[0]) / (times[1] - times[0])
        return [v, v]
    out = []
    for i in range(n):
        if i == 0:
            j = 0
        elif i == n - 1:
            j = n - 3
        else:
            j = i - 1
        t0, t1, t2 = times[j], times[j + 1], times[j + 2]
        y0, y1, y2 = values[j], values[j + 1], values[j + 2]
        t = times[i]
        # derivative of the parabola through the three nodes
        out.append(
            y0 * (2 * t - t1 - t2) / ((t0 - t1) * (t0 - t2))
            + y1 * (2 * t - t0 - t2) / ((t1 - t0) * (t1 - t2))
            + y2 * (2 * t - t0 - t1) / ((t2 - t0) * (t2 - t1))
        )
    return out


def _merged_breakpoints(traj: PiecewiseTrajectory, pert: Perturbation):
    pts = {traj.t_start, traj.t_end, pert.t_start, pert.t_end}
    pts.update(traj.junction_times())
    pts.update(pert.junction_times())
    lo, hi = traj.t_start, traj.t_end
    return sorted(p for p in pts if lo <= p <= hi)


def add_perturbation(traj: PiecewiseTrajectory, pert: Perturbation,
                     eps: float) -> PiecewiseTrajectory:
    """The trajectory displaced by eps * b(t) (b treated as 0 outside its domain)."""
    mesh = _merged_breakpoints(traj, pert)
    segs = []
    for a, b in zip(mesh, mesh[1:]):
        base = traj.segment_at(0.5 * (a + b)).rebased(a, b, check_speed=False)
        c = base.coeffs
        if pert.t_start <= a and b <= pert.t_end:
            ps = pert._segment_at(0.5 * (a + b), Side.RIGHT)
            pc = _poly_shift(ps.coeffs, a - ps.t_start)
            k = max(c.shape[1], pc.shape[1])
            cc = np.zeros((3, k))
            cc[:, : c.shape[1]] = c
            cc[:, : pc.shape[1]] += eps * pc
            c = cc
        segs.append(Segment(a, b, c))
    return PiecewiseTrajectory(tuple(segs), traj.particle)


def replace_window(full: PiecewiseTrajectory, window_part: PiecewiseTrajectory,
                   window: tuple) -> PiecewiseTrajectory:
    """Splice a re-solved window into a frozen trajectory.

    Keeps ``full`` outside [window[0], window[1]] and uses ``window_part``
    inside; position continuity at the seams is enforced by the trajectory
    constructor.
    """
    a, b = float(window[0]), float(window[1])
    if window_part.t_start != a or window_part.t_end != b:
        raise DomainError("window part must span the window exactly")
    segs = []
    for s in full.segments:
        if s.t_end <= a:
            segs.append(s)
        elif s.t_start < a:
            segs.append(s.rebased(s.t_start, a))
    segs.extend(window_part.segments)
    for s in full.segments:
        if s.t_start >= b:
            segs.append(s)
        elif s.t_end > b:
            segs.append(s.rebased(b, s.t_end))
    return PiecewiseTrajectory(tuple(segs), full.particle)


# -- JSON exchange format -----------------------------------------------------

def trajectory_to_dict(traj: PiecewiseTrajectory) -> dict:
    """Exchange form: coefficients ascending in the segment-local time t - t0."""
    return {
        "particle": {"mass": traj.particle.mass, "charge": traj.particle.charge},
        "segments": [
            {
                "t0": s.t_start,
                "t1": s.t_end,
                "kind": "polynomial",
                "coeffs": [list(map(float, row)) for row in s.coeffs],
            }
            for s in traj.segments
        ],
    }


def trajectory_from_dict(d: dict) -> PiecewiseTrajectory:
    try:
        particle = ParticleParams(float(d["particle"]["mass"]),
                                  float(d["particle"]["charge"]))
        segs = []
        for sd in d["segments"]:
            if sd.get("kind", "polynomial") != "polynomial":
                raise ConfigError(f"unsupported segment kind {sd.get('kind')!r}")
            segs.append(Segment(float(sd["t0"]), float(sd["t1"]),
                                np.asarray(sd["coeffs"], dtype=float)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed trajectory record: {exc}") from exc
    return PiecewiseTrajectory(tuple(segs), particle)


def save_trajectory(traj: PiecewiseTrajectory, path) -> None:
    with open(path, "w") as fh:
        json.dump(trajectory_to_dict(traj), fh, indent=1)
        fh.write("\n")


def load_trajectory(path) -> PiecewiseTrajectory:
    with open(path) as fh:
        return trajectory_from_dict(json.load(fh))
