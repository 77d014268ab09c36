"""Advanced/retarded light-cone conditions and their large-R limit.

For an event (t, x) and a world line x_k(.), the cone times solve

    t_k = t -/+ |x - x_k(t_k)|        (- retarded, + advanced)

which has exactly one root per branch when the world line is subluminal.
The far-field variant keeps the n.x_k term in the time relation while the
amplitude treats distances as the sphere radius R.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import PiecewiseTrajectory, Side, Vec3, vec3
from .errors import (
    CollisionError,
    ConvergenceError,
    DomainError,
    InsufficientHistoryError,
)

__all__ = ["Branch", "ConeSolution", "cone_time", "far_cone_time", "influence_interval"]

_MAX_ITER = 100
_EPS = np.finfo(float).eps


def _cone_tol(t: float, t_k: float, r: float) -> float:
    """Accepted residual: 1e-12 absolute (scaled by the event time) plus the
    floating-point noise floor of forming (t - t_k) - r at large separations."""
    return 1e-12 * max(1.0, abs(t)) + 100.0 * _EPS * (abs(t_k) + abs(r))


class Branch(Enum):
    RETARDED = "retarded"
    ADVANCED = "advanced"

    @property
    def sign(self) -> int:
        """+1 for retarded (t_k = t - r), -1 for advanced (t_k = t + r)."""
        return 1 if self is Branch.RETARDED else -1


@dataclass(frozen=True)
class ConeSolution:
    """Delayed (or advanced) partner data on one branch of the light cone."""

    t_k: float
    r: float
    n_hat: Vec3
    v: Vec3
    a: Vec3
    dilation: float
    side: Side
    branch: Branch

    @property
    def doppler(self) -> float:
        """1 -/+ n.v, the factor whose reciprocal is the dilation."""
        return 1.0 / self.dilation


def _cone_residual(traj, t: float, x: Vec3, sign: int, t_k: float) -> tuple:
    """g(t_k) = (t - t_k) - sign*r and the distance vector at t_k."""
    diff = x - traj.position(t_k)
    r = float(np.linalg.norm(diff))
    return (t - t_k) - sign * r, diff, r


def cone_time(traj: PiecewiseTrajectory, event, branch: Branch,
              side: Side = Side.RIGHT) -> ConeSolution:
    """Solve the light-cone condition of `event` onto `traj`.

    `event` is a (time, position) pair.  The root is bracketed by geometric
    expansion from the event time and then polished by Newton steps that fall
    back to bisection whenever they leave the bracket; g is strictly monotone
    for subluminal motion, so the bracket is guaranteed once the domain
    contains the root.  `side` picks the one-sided partner data when t_k
    lands exactly on a junction (Right unless a one-sided limit is wanted).
    """
    t, x = float(event[0]), vec3(event[1])
    sign = branch.sign
    lo_dom, hi_dom = traj.t_start, traj.t_end

    # g is strictly decreasing in t_k on both branches.  Grow a bracket
    # [a, b] with g(a) >= 0 >= g(b), clamped to the trajectory domain.
    c = min(max(t, lo_dom), hi_dom)
    gc, _, rc = _cone_residual(traj, t, x, sign, c)
    step = max(rc, 1e-3, 1e-3 * abs(t))
    if gc >= 0.0:
        a, ga = c, gc
        b = c
        while True:
            if b >= hi_dom:
                gb, _, rb = _cone_residual(traj, t, x, sign, hi_dom)
                if gb > _cone_tol(t, hi_dom, rb):
                    raise InsufficientHistoryError(
                        f"{branch.value} cone of event t={t} exits the domain "
                        f"[{lo_dom}, {hi_dom}] on the late side"
                    )
                b = hi_dom
                break
            b = min(b + step, hi_dom)
            gb, _, _ = _cone_residual(traj, t, x, sign, b)
            if gb <= 0.0:
                break
            a, ga = b, gb
            step *= 2.0
    else:
        b, gb = c, gc
        a = c
        while True:
            if a <= lo_dom:
                ga, _, ra = _cone_residual(traj, t, x, sign, lo_dom)
                if ga < -_cone_tol(t, lo_dom, ra):
                    raise InsufficientHistoryError(
                        f"{branch.value} cone of event t={t} exits the domain "
                        f"[{lo_dom}, {hi_dom}] on the early side"
                    )
                a = lo_dom
                break
            a = max(a - step, lo_dom)
            ga, _, _ = _cone_residual(traj, t, x, sign, a)
            if ga >= 0.0:
                break
            b, gb = a, ga
            step *= 2.0

    t_k = _refine_root(traj, t, x, sign, a, b)
    return _solution_at(traj, t, x, branch, t_k, side)


def _refine_root(traj, t, x, sign, a, b) -> float:
    """Bracketed Newton with bisection fallback on the monotone residual."""
    t_k = 0.5 * (a + b)
    for _ in range(_MAX_ITER):
        g, diff, r = _cone_residual(traj, t, x, sign, t_k)
        if abs(g) <= 1e-13 * max(1.0, abs(t)) + 25.0 * _EPS * (abs(t_k) + r):
            # One polishing step: the accepted residual divided by a small
            # slope (fast receding motion) can still move the root by more
            # than 1e-12, while a final Newton update leaves only evaluation
            # noise.  Keep the bracket as a safety net.
            if r > 0.0:
                v = traj.velocity(t_k)
                slope = -1.0 + sign * float((diff / r) @ v)
                polished = t_k - g / slope
                if a < polished < b:
                    return polished
            return t_k
        if g > 0.0:
            a = t_k
        else:
            b = t_k
        if r > 0.0:
            n = diff / r
            v = traj.velocity(t_k)
            slope = -1.0 + sign * float(n @ v)  # in (-2, 0)
            t_next = t_k - g / slope
        else:
            t_next = math.nan
        if not (a < t_next < b):
            t_next = 0.5 * (a + b)
        if t_next == t_k:
            return t_k
        t_k = t_next
    g, _, r = _cone_residual(traj, t, x, sign, t_k)
    if abs(g) <= _cone_tol(t, t_k, r):
        return t_k
    raise ConvergenceError(
        f"cone root did not converge: residual {g:.3g} after {_MAX_ITER} iterations"
    )


def _solution_at(traj, t, x, branch: Branch, t_k: float, side: Side) -> ConeSolution:
    sign = branch.sign
    # snap to an exact junction when the root lands on one (up to root noise),
    # so that one-sided evaluation through `side` is meaningful; keep the
    # converged root if the junction itself violates the residual contract
    junctions = traj.junction_times()
    if junctions:
        i = bisect.bisect_left(junctions, t_k)
        for j in junctions[max(0, i - 1): i + 1]:
            if j != t_k and abs(j - t_k) < 1e-9 * max(1.0, abs(t_k)):
                gj, _, rj = _cone_residual(traj, t, x, sign, j)
                if abs(gj) <= _cone_tol(t, j, rj):
                    t_k = j
                break
    g, diff, r = _cone_residual(traj, t, x, sign, t_k)
    if abs(g) > _cone_tol(t, t_k, r):
        raise ConvergenceError(f"cone residual {g:.3g} exceeds tolerance at t_k={t_k}")
    if r == 0.0:
        raise CollisionError(f"event at t={t} touches the trajectory (r = 0)")
    n_hat = diff / r
    _, v, a_vec = traj.state(t_k, side)
    doppler = 1.0 - sign * float(n_hat @ v)  # retarded: 1 - n.v, advanced: 1 + n.v
    return ConeSolution(
        t_k=t_k,
        r=r,
        n_hat=n_hat,
        v=v,
        a=a_vec,
        dilation=1.0 / doppler,
        side=side,
        branch=branch,
    )


def _bisect_increasing(g_fn, seed, scale):
    """Root of a strictly increasing residual, bracketing outward from seed."""
    lo = hi = seed
    step = max(1.0, 0.125 * scale)
    glo, _ = g_fn(lo)
    while glo > 0.0:
        lo -= step
        step *= 2.0
        if step > 1e18:
            raise ConvergenceError("no lower bracket for the far cone residual")
        glo, _ = g_fn(lo)
    step = max(1.0, 0.125 * scale)
    ghi, _ = g_fn(hi)
    while ghi < 0.0:
        hi += step
        step *= 2.0
        if step > 1e18:
            raise ConvergenceError("no upper bracket for the far cone residual")
        ghi, _ = g_fn(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if g_fn(mid)[0] < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def far_cone_time(traj: PiecewiseTrajectory, t: float, n, R: float,
                  branch: Branch = Branch.RETARDED) -> float:
    """Cone time in the large-R limit: t_k = t - R + n.x(t_k) (retarded).

    The advanced analog flips both signs, t_k = t + R - n.x(t_k).  R = 0 is
    allowed and turns `t` into the R-subtracted sphere time used for
    direction scans.  Newton iteration on a residual whose slope is bounded
    away from zero by subluminality; evaluation is clamped to the domain
    during iteration and the converged root must land inside it.
    """
    n = vec3(n)
    if abs(float(np.linalg.norm(n)) - 1.0) > 1e-9:
        raise DomainError(f"direction must be a unit vector, |n| = {np.linalg.norm(n)}")
    if R < 0.0:
        raise DomainError("R must be nonnegative")
    sign = branch.sign
    lo_dom, hi_dom = traj.t_start, traj.t_end

    def g_and_slope(t_k):
        # constant extension outside the domain keeps g monotone; a root that
        # needed the extension is rejected after convergence
        tc = min(max(t_k, lo_dom), hi_dom)
        g = t_k - t + sign * (R - float(n @ traj.position(tc)))
        slope = 1.0
        if lo_dom <= t_k <= hi_dom:
            slope -= sign * float(n @ traj.velocity(tc))
        return g, slope

    t_k = t - sign * R
    for _ in range(_MAX_ITER):
        g, slope = g_and_slope(t_k)
        if abs(g) <= 1e-13 * max(1.0, abs(t) + R):
            break
        t_k = t_k - g / slope
    g, _ = g_and_slope(t_k)
    if abs(g) > 1e-12 * max(1.0, abs(t) + R):
        # Newton can cycle across segment junctions; the residual is strictly
        # increasing, so a sign-change bracket plus bisection always lands.
        t_k = _bisect_increasing(g_and_slope, t - sign * R, max(1.0, abs(t) + R))
        g, _ = g_and_slope(t_k)
        if abs(g) > 1e-12 * max(1.0, abs(t) + R):
            raise ConvergenceError(f"far cone residual {g:.3g} at t_k={t_k}")
    slack = 1e-9 * max(1.0, abs(t_k))
    if t_k < lo_dom - slack or t_k > hi_dom + slack:
        raise InsufficientHistoryError(
            f"far cone time {t_k} outside trajectory domain [{lo_dom}, {hi_dom}]"
        )
    return float(min(max(t_k, lo_dom), hi_dom))


def influence_interval(traj1: PiecewiseTrajectory, traj2: PiecewiseTrajectory,
                       t2: float) -> tuple:
    """Times on trajectory 1 whose light cones touch the event t2 on trajectory 2.

    Returns (retarded cone time, advanced cone time) of (t2, x2(t2)) onto
    trajectory 1; every t1 in between interacts with the given partner point
    through neither cone, and the endpoints through exactly one.
    """
    event = (t2, traj2.position(t2))
    lo = cone_time(traj1, event, Branch.RETARDED).t_k
    hi = cone_time(traj1, event, Branch.ADVANCED).t_k
    return (lo, hi)
