"""Discretized boundary-value minimization of the delayed two-body action.

A trajectory pair is encoded as node positions on a fixed time grid plus two
one-sided velocities per declared breaking point; window endpoints stay
pinned to the boundary set.  Decoding builds cubic Hermite cells whose node
velocities come from parabolic finite differences within each smooth run, so
the map from the flat coordinate vector to trajectories is affine and every
coordinate direction corresponds to an explicit displacement field.

Minimization alternates between the particles: each block performs damped
BFGS descent on that particle's one-sided action with the partner frozen,
with the directional derivatives evaluated by the exact first-variation
integral rather than differencing the objective.  A converged report means
both block gradients dropped below tolerance and the result passes the same
residual checks `verify` applies to any candidate pair: Euler-Lagrange
residuals on a per-segment Chebyshev grid, and momentum/energy continuity at
every velocity jump.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .action import ActionWindow, _merge_history, action, el_residual, frechet_directional
from .core import (
    BoundaryData,
    ParticleParams,
    Perturbation,
    PiecewiseTrajectory,
    Segment,
    Side,
    vec3,
)
from .core import _fd_node_velocities
from .errors import ConfigError, DomainError, SuperluminalError
from .momentum import BreakResidual, energy_current, momentum_current

_VELOCITY_JUMP_TOL = 1e-12


@dataclass(frozen=True)
class ParticleLayout:
    """Fixed node grid of one particle: times, break markers, pinned ends."""

    times: np.ndarray
    break_mask: np.ndarray  # bool per node; True only at interior breaks
    x_start: np.ndarray
    x_end: np.ndarray
    particle: ParticleParams

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        mask = np.asarray(self.break_mask, dtype=bool)
        if times.ndim != 1 or times.size < 2 or not np.all(np.diff(times) > 0):
            raise DomainError("node times must be strictly increasing, >= 2 nodes")
        if mask.shape != times.shape or mask[0] or mask[-1]:
            raise DomainError("break mask must match nodes and spare the endpoints")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "break_mask", mask)
        object.__setattr__(self, "x_start", vec3(self.x_start))
        object.__setattr__(self, "x_end", vec3(self.x_end))

    @property
    def n_interior(self) -> int:
        return self.times.size - 2

    @property
    def break_indices(self) -> np.ndarray:
        return np.flatnonzero(self.break_mask)

    def size(self, free_break_times: bool) -> int:
        nb = int(self.break_mask.sum())
        return 3 * self.n_interior + 6 * nb + (nb if free_break_times else 0)


@dataclass(frozen=True)
class DecisionVector:
    """Flat free coordinates of both particles over their node layouts.

    Per particle the block is: interior node positions in node order, then
    (v_minus, v_plus) per breaking point, then the breaking times themselves
    when those are freed.
    """

    layouts: tuple
    theta: np.ndarray
    free_break_times: bool = False

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        want = sum(lay.size(self.free_break_times) for lay in self.layouts)
        if theta.shape != (want,):
            raise DomainError(f"theta must have shape ({want},), got {theta.shape}")
        object.__setattr__(self, "theta", theta)

    def block_slice(self, k: int) -> slice:
        """Coordinate range of particle k (1 or 2)."""
        n1 = self.layouts[0].size(self.free_break_times)
        if k == 1:
            return slice(0, n1)
        return slice(n1, n1 + self.layouts[1].size(self.free_break_times))

    def with_theta(self, theta) -> "DecisionVector":
        return DecisionVector(self.layouts, theta, self.free_break_times)


def _unpack_block(layout: ParticleLayout, block: np.ndarray,
                  free_break_times: bool):
    n_int = layout.n_interior
    nb = int(layout.break_mask.sum())
    pos = block[: 3 * n_int].reshape(n_int, 3)
    vels = block[3 * n_int: 3 * n_int + 6 * nb].reshape(nb, 2, 3)
    times = layout.times.copy()
    if free_break_times and nb:
        times[layout.break_indices] = block[3 * n_int + 6 * nb:]
        if not np.all(np.diff(times) > 0):
            raise DomainError("freed breaking times must keep nodes ordered")
    positions = np.vstack([layout.x_start, pos, layout.x_end])
    return times, positions, vels


def _node_velocities(layout: ParticleLayout, times, positions, break_vels):
    """Two one-sided velocities per node; finite differences within runs."""
    n = times.size
    vel_l = np.empty((n, 3))
    vel_r = np.empty((n, 3))
    bounds = [0, *layout.break_indices.tolist(), n - 1]
    for a, b in zip(bounds, bounds[1:]):
        fd = _fd_node_velocities(list(times[a: b + 1]), list(positions[a: b + 1]))
        vel_l[a: b + 1] = fd
        vel_r[a: b + 1] = fd
    for j, idx in enumerate(layout.break_indices):
        vel_l[idx] = break_vels[j, 0]
        vel_r[idx] = break_vels[j, 1]
    return vel_l, vel_r


def _decode_particle(layout: ParticleLayout, block: np.ndarray,
                     free_break_times: bool) -> PiecewiseTrajectory:
    times, positions, break_vels = _unpack_block(layout, block, free_break_times)
    vel_l, vel_r = _node_velocities(layout, times, positions, break_vels)
    speeds = np.linalg.norm(np.vstack([vel_l, vel_r]), axis=1)
    if speeds.max() >= 1.0:
        raise SuperluminalError(
            f"encoded node velocity reaches speed {speeds.max():.6g} >= 1"
        )
    segs = tuple(
        Segment.hermite(times[i], times[i + 1], positions[i], vel_r[i],
                        positions[i + 1], vel_l[i + 1])
        for i in range(times.size - 1)
    )
    return PiecewiseTrajectory(segs, layout.particle)


def decode(dv: DecisionVector):
    """Trajectory pair encoded by the decision vector."""
    return tuple(
        _decode_particle(dv.layouts[i], dv.theta[dv.block_slice(i + 1)],
                         dv.free_break_times)
        for i in (0, 1)
    )


def _true_breaks(traj: PiecewiseTrajectory, tol: float = _VELOCITY_JUMP_TOL):
    """Junctions with an actual velocity jump, not mere segment seams."""
    out = []
    for tau in traj.junction_times():
        dv = traj.velocity(tau, Side.RIGHT) - traj.velocity(tau, Side.LEFT)
        if float(np.linalg.norm(dv)) > tol:
            out.append(tau)
    return out


def discretize(boundary: BoundaryData, trajs, n_nodes: int,
               break_times=None, free_break_times: bool = False) -> DecisionVector:
    """Encode a trajectory pair on per-segment uniform node grids.

    `n_nodes` is the node count per smooth segment (breaks delimit
    segments); `break_times` optionally pins the breaking points per
    particle, defaulting to the trajectories' own velocity jumps inside the
    open window.  The encoding is exact at nodes: decode reproduces node
    positions and one-sided break velocities bit-for-bit.
    """
    if int(n_nodes) < 2:
        raise ConfigError(f"need at least 2 nodes per segment, got {n_nodes}")
    n_nodes = int(n_nodes)
    layouts = []
    blocks = []
    for k in (1, 2):
        traj = trajs[k - 1]
        a, b = boundary.window(k)
        if break_times is None:
            breaks = [t for t in _true_breaks(traj) if a < t < b]
        else:
            breaks = sorted(float(t) for t in break_times[k - 1])
            if any(not a < t < b for t in breaks):
                raise DomainError("breaking times must lie inside the open window")
        edges = [a, *breaks, b]
        times = []
        for lo, hi in zip(edges, edges[1:]):
            times.extend(np.linspace(lo, hi, n_nodes)[:-1])
        times = np.array([*times, b])
        mask = np.isin(times, breaks)
        layout = ParticleLayout(times, mask, traj.position(a), traj.position(b),
                                traj.particle)
        pos = np.array([traj.position(t) for t in times[1:-1]])
        vels = np.array(
            [[traj.velocity(t, Side.LEFT), traj.velocity(t, Side.RIGHT)]
             for t in times[mask]]
        ).reshape(-1, 2, 3)
        chunks = [pos.ravel(), vels.ravel()]
        if free_break_times:
            chunks.append(times[mask])
        blocks.append(np.concatenate(chunks) if chunks else np.empty(0))
        layouts.append(layout)
    return DecisionVector(tuple(layouts), np.concatenate(blocks), free_break_times)


def _primary_view(boundary: BoundaryData, k: int):
    """Window and boundary data with particle k in the variable role."""
    a, b = boundary.window(k)
    if k == 1:
        return ActionWindow(a, b), boundary
    swapped = BoundaryData(a, b, history1=boundary.history2,
                           history2=boundary.history1, k2=0.0)
    return ActionWindow(a, b), swapped


def _basis_perturbations(layout: ParticleLayout, block: np.ndarray,
                         free_break_times: bool):
    """Displacement field of each position/velocity coordinate.

    The decode map is affine in the block, so differencing the node data at
    unit coordinate offsets yields exact basis fields; each is trimmed to
    the cells it actually moves.  Freed time coordinates are not included
    (their derivatives are formed by differencing the objective).
    """
    times, positions, break_vels = _unpack_block(layout, block, free_break_times)
    vel_l, vel_r = _node_velocities(layout, times, positions, break_vels)
    nb = int(layout.break_mask.sum())
    n_affine = 3 * layout.n_interior + 6 * nb
    out = []
    for j in range(n_affine):
        bumped = block.copy()
        bumped[j] += 1.0
        _, pos_b, vels_b = _unpack_block(layout, bumped, free_break_times)
        vl_b, vr_b = _node_velocities(layout, times, pos_b, vels_b)
        dpos = pos_b - positions
        dvl = vl_b - vel_l
        dvr = vr_b - vel_r
        moved = [
            i for i in range(times.size - 1)
            if np.any(dpos[i]) or np.any(dvr[i]) or np.any(dpos[i + 1]) or np.any(dvl[i + 1])
        ]
        lo, hi = moved[0], moved[-1]
        segs = tuple(
            Segment.hermite(times[i], times[i + 1], dpos[i], dvr[i],
                            dpos[i + 1], dvl[i + 1], check_speed=False)
            for i in range(lo, hi + 1)
        )
        out.append(Perturbation(segs))
    return out


@dataclass(frozen=True)
class MinimizerReport:
    """Residual diagnostics of a candidate or minimized trajectory pair."""

    action: float
    el_max1: tuple  # max |EL residual| per segment of particle 1
    el_max2: tuple
    break_residuals: tuple  # BreakResidual at velocity jumps, particle 1 then 2
    iterations: int
    converged: bool
    el_tol: float = 1e-6
    break_tol: float = 1e-8
    descent_log: tuple = ()  # (particle, action before, action after) per step

    @property
    def max_el(self) -> float:
        return max((*self.el_max1, *self.el_max2), default=0.0)

    @property
    def max_break(self) -> float:
        return max(
            (max(float(np.linalg.norm(r.dp)), abs(r.de)) for r in self.break_residuals),
            default=0.0,
        )

    @property
    def residuals_ok(self) -> bool:
        return self.max_el < self.el_tol and self.max_break < self.break_tol


def _chebyshev_points(a: float, b: float, n: int) -> np.ndarray:
    j = np.arange(n)
    return 0.5 * (a + b) + 0.5 * (b - a) * np.cos(np.pi * (2 * j + 1) / (2 * n))


def verify(traj1: PiecewiseTrajectory, traj2: PiecewiseTrajectory,
           boundary: BoundaryData, n_points: int = 9,
           el_tol: float = 1e-6, break_tol: float = 1e-8,
           kappa: float | None = None) -> MinimizerReport:
    """Residual check of both critical-point conditions over the windows.

    Euler-Lagrange residuals are sampled on a Chebyshev grid inside every
    segment overlapping the window; momentum and energy continuity is
    evaluated at every genuine velocity jump.  `converged` reports whether
    both maxima beat their tolerances.
    """
    partners = (_merge_history(traj2, boundary.history2),
                _merge_history(traj1, boundary.history1))
    el_max = ([], [])
    breaks = []
    for k, traj in ((1, traj1), (2, traj2)):
        partner = partners[k - 1]
        a, b = boundary.window(k)
        for seg in traj.segments:
            lo, hi = max(seg.t_start, a), min(seg.t_end, b)
            if hi - lo <= 1e-12 * max(1.0, abs(a), abs(b)):
                continue
            worst = max(
                float(np.linalg.norm(el_residual(traj, partner, float(t), kappa=kappa)))
                for t in _chebyshev_points(lo, hi, n_points)
            )
            el_max[k - 1].append(worst)
        for tau in _true_breaks(traj):
            if not a < tau < b:
                continue
            dp = (momentum_current(traj, partner, tau, Side.RIGHT, kappa=kappa)
                  - momentum_current(traj, partner, tau, Side.LEFT, kappa=kappa))
            de = (energy_current(traj, partner, tau, Side.RIGHT, kappa=kappa)
                  - energy_current(traj, partner, tau, Side.LEFT, kappa=kappa))
            breaks.append(BreakResidual(t=tau, dp=dp, de=float(de)))
    win1, bd1 = _primary_view(boundary, 1)
    win2, bd2 = _primary_view(boundary, 2)
    total = (action(traj1, traj2, win1, bd1, kappa=kappa)
             + action(traj2, traj1, win2, bd2, kappa=kappa))
    report = MinimizerReport(
        action=total,
        el_max1=tuple(el_max[0]),
        el_max2=tuple(el_max[1]),
        break_residuals=tuple(breaks),
        iterations=0,
        converged=False,
        el_tol=el_tol,
        break_tol=break_tol,
    )
    return replace(report, converged=report.residuals_ok)


@dataclass
class MinimizeOptions:
    gtol: float = 1e-8
    max_iter: int = 40
    free_break_times: bool = False
    nodes_per_segment: int = 6
    el_tol: float = 1e-6
    break_tol: float = 1e-8


def _normalize_options(opts) -> MinimizeOptions:
    if opts is None:
        return MinimizeOptions()
    if isinstance(opts, MinimizeOptions):
        return opts
    if isinstance(opts, dict):
        known = MinimizeOptions.__dataclass_fields__
        unknown = set(opts) - set(known)
        if unknown:
            raise ConfigError(f"unknown minimizer options: {sorted(unknown)}")
        return MinimizeOptions(**opts)
    raise ConfigError(f"options must be a dict or MinimizeOptions, got {type(opts)}")


class _BlockState:
    """BFGS bookkeeping of one particle's coordinate block."""

    def __init__(self, dim: int):
        self.h = np.eye(dim)
        self.prev_g = None
        self.prev_s = None

    def update(self, g: np.ndarray) -> None:
        if self.prev_g is None or self.prev_s is None:
            return
        y = g - self.prev_g
        s = self.prev_s
        ys = float(y @ s)
        if ys > 1e-10 * np.linalg.norm(y) * np.linalg.norm(s):
            rho = 1.0 / ys
            v = np.eye(len(g)) - rho * np.outer(s, y)
            self.h = v @ self.h @ v.T + rho * np.outer(s, s)

    def direction(self, g: np.ndarray) -> np.ndarray:
        p = -self.h @ g
        if float(p @ g) >= 0.0:  # lost curvature; fall back to steepest descent
            self.h = np.eye(len(g))
            p = -g
        return p


def _block_gradient(dv: DecisionVector, k: int, boundary: BoundaryData,
                    trajs, objective, kappa=None) -> np.ndarray:
    layout = dv.layouts[k - 1]
    block = dv.theta[dv.block_slice(k)]
    win, bd = _primary_view(boundary, k)
    basis = _basis_perturbations(layout, block, dv.free_break_times)
    g = np.empty(len(block))
    for j, b in enumerate(basis):
        g[j] = frechet_directional(trajs[k - 1], trajs[2 - k], win, bd, b,
                                   kappa=kappa)
    for j in range(len(basis), len(block)):  # freed breaking times
        h = 1e-6 * max(1.0, abs(block[j]))
        g[j] = 0.0
        for sign in (1.0, -1.0):
            trial = dv.theta.copy()
            trial[dv.block_slice(k)][j] += sign * h
            g[j] += sign * objective(dv.with_theta(trial), k) / (2.0 * h)
    return g


def minimize(boundary: BoundaryData, init: DecisionVector, opts=None,
             kappa: float | None = None):
    """Alternating per-particle descent to a critical point of the action.

    Each outer iteration takes one damped BFGS step per particle on that
    particle's one-sided action (partner frozen), using the exact first
    variation for the gradient.  Steps must pass an Armijo decrease test;
    superluminal trials are rejected by shrinking the step.  Convergence
    requires both block gradients below `gtol`; the returned report adds
    the standard residual verification of the final pair.
    """
    options = _normalize_options(opts)
    views = {k: _primary_view(boundary, k) for k in (1, 2)}

    def objective(vec: DecisionVector, k: int) -> float:
        trajs = decode(vec)
        win, bd = views[k]
        return action(trajs[k - 1], trajs[2 - k], win, bd, kappa=kappa)

    dv = init
    decode(dv)  # feasibility gate: raises on superluminal encoding
    states = {k: _BlockState(dv.block_slice(k).stop - dv.block_slice(k).start)
              for k in (1, 2)}
    log = []
    converged = False
    iterations = 0
    for iterations in range(1, options.max_iter + 1):
        grad_ok = True
        moved = False
        for k in (1, 2):
            sl = dv.block_slice(k)
            if sl.stop == sl.start:
                continue
            trajs = decode(dv)
            g = _block_gradient(dv, k, boundary, trajs, objective, kappa=kappa)
            state = states[k]
            state.update(g)
            gnorm = float(np.abs(g).max())
            if gnorm < options.gtol:
                state.prev_g, state.prev_s = g, None
                continue
            grad_ok = False
            p = state.direction(g)
            f0 = objective(dv, k)
            slope = float(g @ p)
            alpha = 1.0
            accepted = None
            for _ in range(30):
                trial_theta = dv.theta.copy()
                trial_theta[sl] += alpha * p
                trial = dv.with_theta(trial_theta)
                try:
                    f_trial = objective(trial, k)
                except SuperluminalError:
                    alpha *= 0.5  # infeasible iterate; shrink the step
                    continue
                if f_trial <= f0 + 1e-4 * alpha * slope:
                    accepted = (trial, f_trial, alpha)
                    break
                alpha *= 0.5
            if accepted is None:
                state.prev_g, state.prev_s = g, None
                continue  # line-search failure: report non-converged later
            trial, f_trial, alpha = accepted
            state.prev_g, state.prev_s = g, alpha * p
            dv = trial
            log.append((k, f0, f_trial))
            moved = True
        if grad_ok:
            converged = True
            break
        if not moved:
            break  # both line searches failed; stop with converged=False
    traj1, traj2 = decode(dv)
    report = verify(traj1, traj2, boundary, el_tol=options.el_tol,
                    break_tol=options.break_tol, kappa=kappa)
    report = replace(report, iterations=iterations,
                     converged=converged and report.residuals_ok,
                     descent_log=tuple(log))
    return traj1, traj2, report
