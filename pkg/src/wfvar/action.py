"""Delayed action functional, its directional derivative, and EL residuals.

The interaction couples each point of trajectory 1 to the two points where
its light cones cross trajectory 2.  The integrand is

    L = -m1 sqrt(1 - v1^2)
        + kappa * [ (1 - v1.v2+) / (2 r+ (1 + n+.v2+))
                  + (1 - v1.v2-) / (2 r- (1 - n-.v2-)) ]

with kappa = -(q1 q2), so the attractive opposite-unit-charge case has
kappa = +1.  The quadrature mesh is split at every breaking point of the
integrated trajectory and at every pullback of a partner breaking point
through either cone map, which keeps the integrand smooth on each cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import BoundaryData, Perturbation, PiecewiseTrajectory, Side, replace_window
from .errors import CollisionError, ConvergenceError, DomainError
from .lightcone import Branch, ConeSolution, cone_time

__all__ = [
    "ActionWindow",
    "interaction_density",
    "action",
    "frechet_directional",
    "el_residual",
    "lagrangian_velocity_partial",
    "lagrangian_position_partial",
    "coupling",
    "pullback_mesh",
]

_COLLISION_R = 1e-9
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(15)


@dataclass(frozen=True)
class ActionWindow:
    """Integration window of the variable trajectory.

    A zero-length window is allowed and makes the integral empty by
    convention (the action reduces to the boundary constant).
    """

    t_start: float
    t_end: float

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise DomainError("window times must be finite")
        if self.t_end < self.t_start:
            raise DomainError(
                f"window must have t_start <= t_end, got [{self.t_start}, {self.t_end}]"
            )

    @property
    def length(self) -> float:
        return self.t_end - self.t_start


def coupling(traj1: PiecewiseTrajectory, traj2: PiecewiseTrajectory,
             kappa: float | None = None) -> float:
    """Interaction strength: -(q1 q2) unless overridden explicitly."""
    if kappa is not None:
        return float(kappa)
    return -traj1.particle.charge * traj2.particle.charge


def _checked_cones(partner: PiecewiseTrajectory, t: float, x, side: Side):
    adv = cone_time(partner, (t, x), Branch.ADVANCED, side=side)
    ret = cone_time(partner, (t, x), Branch.RETARDED, side=side)
    if adv.r < _COLLISION_R or ret.r < _COLLISION_R:
        raise CollisionError(f"cone distance below {_COLLISION_R} at t={t}")
    return adv, ret


def interaction_density(state1, cone_adv: ConeSolution, cone_ret: ConeSolution,
                        m1: float = 1.0, kappa: float = 1.0) -> float:
    """Integrand of the delayed action at one point of trajectory 1."""
    x1, v1 = state1[0], state1[1]
    v1 = np.asarray(v1, dtype=float)
    v1sq = float(v1 @ v1)
    if v1sq >= 1.0:
        raise DomainError(f"superluminal velocity |v1|^2 = {v1sq}")
    total = -m1 * math.sqrt(1.0 - v1sq)
    for sol in (cone_adv, cone_ret):
        if sol.r < _COLLISION_R:
            raise CollisionError(f"cone distance {sol.r} below collision cutoff")
        rho = 1.0 / sol.dilation  # 1 + n.v (advanced) or 1 - n.v (retarded)
        total += kappa * (1.0 - float(v1 @ sol.v)) / (2.0 * sol.r * rho)
    return total


def _branch_partials(v1, sol: ConeSolution):
    """One branch's contribution F and its gradients in (x1, v1) at fixed t1.

    The x1 dependence runs through the cone time t2(x1) as well as r and n;
    all three are eliminated with the implicit-function rule on the cone
    condition, which leaves polynomial expressions in the delayed data.
    """
    s = -sol.branch.sign  # +1 advanced, -1 retarded
    n, V, A, r = sol.n_hat, sol.v, sol.a, sol.r
    rho = 1.0 / sol.dilation  # = 1 + s n.V, positive
    N = 1.0 - float(v1 @ V)
    F = N / (2.0 * r * rho)
    grad_t2 = (s / rho) * n
    grad_r = n / rho
    grad_rho = (
        s * V / r
        - (float(V @ V) + s * float(n @ V)) * n / (rho * r)
        + float(n @ A) * n / rho
    )
    grad_N = -float(v1 @ A) * grad_t2
    dF_dx = grad_N / (2.0 * r * rho) - N * (rho * grad_r + r * grad_rho) / (
        2.0 * r * r * rho * rho
    )
    dF_dv = -V / (2.0 * r * rho)
    return F, dF_dx, dF_dv


def _density_and_partials(traj1, partner, t, side, kappa):
    x1, v1, _ = traj1.state(t, side)
    adv, ret = _checked_cones(partner, t, x1, side)
    v1sq = float(v1 @ v1)
    gamma = 1.0 / math.sqrt(1.0 - v1sq)
    density = -traj1.particle.mass / gamma
    d_dx = np.zeros(3)
    d_dv = traj1.particle.mass * gamma * v1
    for sol in (adv, ret):
        F, dF_dx, dF_dv = _branch_partials(v1, sol)
        density += kappa * F
        d_dx += kappa * dF_dx
        d_dv += kappa * dF_dv
    return density, d_dx, d_dv


def lagrangian_position_partial(traj1, partner, t: float, side: Side = Side.RIGHT,
                                kappa: float | None = None):
    """dL/dx1 with the implicit cone-time dependence included."""
    k = coupling(traj1, partner, kappa)
    return _density_and_partials(traj1, partner, t, side, k)[1]


def lagrangian_velocity_partial(traj1, partner, t: float, side: Side = Side.RIGHT,
                                kappa: float | None = None):
    """dL/dv1; the cone condition involves positions only, so this is exact."""
    k = coupling(traj1, partner, kappa)
    return _density_and_partials(traj1, partner, t, side, k)[2]


def _merge_history(traj: PiecewiseTrajectory,
                   history: PiecewiseTrajectory | None) -> PiecewiseTrajectory:
    """Extend a window trajectory with its frozen continuation, if any."""
    if history is None:
        return traj
    if history.t_start <= traj.t_start and traj.t_end <= history.t_end:
        return replace_window(history, traj, (traj.t_start, traj.t_end))
    if history.t_end == traj.t_start:
        return PiecewiseTrajectory(history.segments + traj.segments, traj.particle)
    if traj.t_end == history.t_start:
        return PiecewiseTrajectory(traj.segments + history.segments, traj.particle)
    raise DomainError(
        f"history [{history.t_start}, {history.t_end}] neither contains nor "
        f"abuts the trajectory [{traj.t_start}, {traj.t_end}]"
    )


def cone_crossings(traj1: PiecewiseTrajectory, partner: PiecewiseTrajectory,
                   a: float, b: float) -> list:
    """Times in (a, b) where a cone image of trajectory 1 crosses a partner
    junction, as (t1, tau, branch) triples.  Both cone maps are strictly
    increasing in t1, so each crossing is a simple bracketed root."""
    out = []
    partner_junctions = partner.junction_times()
    if not partner_junctions or b <= a:
        return out
    for branch in (Branch.RETARDED, Branch.ADVANCED):

        def image(t1, _br=branch):
            return cone_time(partner, (t1, traj1.position(t1)), _br).t_k

        lo2, hi2 = image(a), image(b)
        for tau in partner_junctions:
            if lo2 < tau < hi2:
                root = brentq(lambda t1: image(t1) - tau, a, b,
                              xtol=1e-13, rtol=8.9e-16)
                out.append((float(root), tau, branch))
    return out


def pullback_mesh(traj1: PiecewiseTrajectory, partner: PiecewiseTrajectory,
                  a: float, b: float, extra=(), crossings=None) -> list:
    """Smoothness mesh on [a, b]: trajectory-1 junctions plus the pullbacks
    of partner junctions through either cone map."""
    pts = {a, b}
    pts.update(j for j in traj1.junction_times() if a < j < b)
    pts.update(p for p in extra if a < p < b)
    if crossings is None:
        crossings = cone_crossings(traj1, partner, a, b)
    pts.update(t1 for t1, _, _ in crossings)
    mesh = sorted(pts)
    out = [mesh[0]]
    scale = max(1.0, abs(a), abs(b))
    for p in mesh[1:]:
        if p - out[-1] > 1e-12 * scale:
            out.append(p)
    out[-1] = b
    return out


def _adaptive_cell(f, a, b, tol, depth=0):
    """Gauss-Legendre 15 with interval halving until the halves agree."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    coarse = half * float(np.dot(_GL_WEIGHTS, [f(mid + half * u) for u in _GL_NODES]))
    qh = 0.25 * (b - a)
    left = qh * float(np.dot(_GL_WEIGHTS, [f(a + qh + qh * u) for u in _GL_NODES]))
    right = qh * float(np.dot(_GL_WEIGHTS, [f(mid + qh + qh * u) for u in _GL_NODES]))
    fine = left + right
    if abs(fine - coarse) <= tol or depth >= 30:
        if depth >= 30 and abs(fine - coarse) > 1000 * tol:
            raise ConvergenceError(
                f"quadrature stalled on [{a}, {b}]: gap {abs(fine - coarse):.3g}"
            )
        return fine
    return (
        _adaptive_cell(f, a, mid, 0.5 * tol, depth + 1)
        + _adaptive_cell(f, mid, b, 0.5 * tol, depth + 1)
    )


def _integrate(f, mesh, rel_target=1e-11):
    rough = 0.0
    for a, b in zip(mesh, mesh[1:]):
        mid = 0.5 * (a + b)
        rough += (b - a) * abs(f(mid))
    scale = max(rough, 1.0)
    width = mesh[-1] - mesh[0]
    total = 0.0
    for a, b in zip(mesh, mesh[1:]):
        tol = rel_target * scale * max((b - a) / width, 1e-3)
        total += _adaptive_cell(f, a, b, tol)
    return total


def action(traj1: PiecewiseTrajectory, traj2: PiecewiseTrajectory,
           window: ActionWindow, boundary: BoundaryData,
           kappa: float | None = None) -> float:
    """Boundary constant plus the delayed interaction integral over the window."""
    if window.length == 0.0:
        return boundary.k2
    partner = _merge_history(traj2, boundary.history2)
    k = coupling(traj1, traj2, kappa)
    m1 = traj1.particle.mass

    def density(t):
        x1, v1, _ = traj1.state(t)
        adv, ret = _checked_cones(partner, t, x1, Side.RIGHT)
        return interaction_density((x1, v1), adv, ret, m1=m1, kappa=k)

    mesh = pullback_mesh(traj1, partner, window.t_start, window.t_end)
    return boundary.k2 + _integrate(density, mesh)


def frechet_directional(traj1: PiecewiseTrajectory, traj2: PiecewiseTrajectory,
                        window: ActionWindow, boundary: BoundaryData,
                        b: Perturbation, kappa: float | None = None) -> float:
    """Directional derivative of the action along an admissible displacement."""
    b.check_admissible(window.t_start, window.t_end)
    lo = max(window.t_start, b.t_start)
    hi = min(window.t_end, b.t_end)
    if hi <= lo:
        return 0.0  # support does not meet the window
    partner = _merge_history(traj2, boundary.history2)
    k = coupling(traj1, traj2, kappa)

    def integrand(t):
        _, d_dx, d_dv = _density_and_partials(traj1, partner, t, Side.RIGHT, k)
        return float(d_dx @ b.value(t) + d_dv @ b.derivative(t))

    crossings = cone_crossings(traj1, partner, lo, hi)
    mesh = pullback_mesh(traj1, partner, lo, hi, extra=b.junction_times(),
                         crossings=crossings)
    total = _integrate(integrand, mesh)

    # Where a cone image crosses a partner breaking point, the delayed
    # velocity jumps and the integrand is discontinuous; perturbing the
    # trajectory moves that crossing, so the derivative picks up the jump
    # of the integrand times the crossing's rate of travel.
    m1 = traj1.particle.mass
    for t1, _tau, branch in crossings:
        x1, v1, _ = traj1.state(t1)
        dens = {}
        for edge in (Side.LEFT, Side.RIGHT):
            adv, ret = _checked_cones(partner, t1, x1, edge)
            dens[edge] = interaction_density((x1, v1), adv, ret, m1=m1, kappa=k)
        s = -branch.sign  # +1 advanced, -1 retarded
        n_hat = cone_time(partner, (t1, x1), branch).n_hat
        rho1 = 1.0 + s * float(n_hat @ v1)
        dcross = -s * float(n_hat @ b.value(t1)) / rho1
        total += (dens[Side.LEFT] - dens[Side.RIGHT]) * dcross
    return total


def _smooth_cell_around(traj1, partner, t, side):
    """An interval around t on which the momentum is smooth.

    Only a small neighborhood is scanned for pullback crossings: the finite
    difference stencil that consumes the cell reaches a few multiples of
    1e-4 segment lengths, and staying local keeps the cone solves near t
    instead of at far-away segment edges the partner may not cover.
    """
    seg = traj1.segment_at(t, side)
    reach = 64.0e-4 * (seg.t_end - seg.t_start)
    lo = max(seg.t_start, t - reach)
    hi = min(seg.t_end, t + reach)
    if hi <= lo:
        lo, hi = seg.t_start, seg.t_end
    mesh = pullback_mesh(traj1, partner, lo, hi)
    for a, c in zip(mesh, mesh[1:]):
        if (a < t < c) or (t == a and side is Side.RIGHT) or (t == c and side is Side.LEFT):
            return a, c, seg
    # t coincides with an interior mesh point; pick the side's cell
    i = int(np.searchsorted(mesh, t))
    if side is Side.RIGHT:
        i = min(i, len(mesh) - 2)
        return mesh[i], mesh[i + 1], seg
    i = max(i - 1, 0)
    return mesh[i], mesh[i + 1], seg


def el_residual(traj1: PiecewiseTrajectory, traj2: PiecewiseTrajectory,
                t: float, side: Side = Side.RIGHT,
                kappa: float | None = None):
    """d/dt (dL/dv1) - dL/dx1, one-sided, zero on exact piecewise solutions.

    The time derivative uses 4th-order finite differences of the analytic
    momentum with a step tied to the segment length; stencils stay inside
    the smooth cell around t, switching to one-sided weights near its edges.
    """
    k = coupling(traj1, traj2, kappa)
    a, c, seg = _smooth_cell_around(traj1, traj2, t, side)

    h = 1e-4 * (seg.t_end - seg.t_start)
    h = min(h, (c - a) / 8.0)
    if t - 2 * h >= a and t + 2 * h <= c:
        stencil = [(-2, 1.0 / 12), (-1, -8.0 / 12), (1, 8.0 / 12), (2, -1.0 / 12)]
    elif t + 4 * h <= c:
        # forward one-sided 4th order on nodes t, t+h, ..., t+4h
        stencil = [(0, -25.0 / 12), (1, 4.0), (2, -3.0), (3, 4.0 / 3), (4, -0.25)]
    else:
        stencil = [(0, 25.0 / 12), (-1, -4.0), (-2, 3.0), (-3, -4.0 / 3), (-4, 0.25)]

    def eval_side(tt):
        if tt == t:
            return side
        if tt >= c:
            return Side.LEFT
        return Side.RIGHT

    dmom = np.zeros(3)
    for off, w in stencil:
        tt = t + off * h
        dmom += w * _density_and_partials(traj1, traj2, tt, eval_side(tt), k)[2]
    dmom /= h
    d_dx = _density_and_partials(traj1, traj2, t, side, k)[1]
    return dmom - d_dx
