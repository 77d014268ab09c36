"""Families of non-radiating separations and partner-trajectory construction.

A pair has vanishing retarded far fields exactly when the cone-linked
separation x1(t1) - x2(t2), viewed as a function of the sphere time t and
direction n, is piecewise linear in t.  Each smoothness interval sigma then
carries two bounded direction maps: a transverse offset D_sigma(n) and a
rotation-like term L_sigma(n) whose nonzero value is what permits distinct
velocities at the two cone ends.  This module stores such families, checks
the rigidity obstruction that forces equal velocities when L = 0, walks
sewing chains of cone-linked breaking times, and reconstructs a partner
trajectory from one trajectory plus a family.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import lpmv

from .core import (
    ParticleParams,
    PiecewiseTrajectory,
    Vec3,
    _fd_node_velocities,
    hermite_trajectory,
    polygonal_from_vertices,
    vec3,
)
from .errors import (
    ConfigError,
    ContractError,
    ConvergenceError,
    DomainError,
    InconsistentParamsError,
    InsufficientHistoryError,
    InsufficientSamplingError,
    SuperluminalError,
)
from .lightcone import Branch, cone_time, far_cone_time

DEFAULT_LMAX = 4


def k12(v1, v2, n) -> float:
    """Dilation mismatch 1/(1 - n.v1) - 1/(1 - n.v2) between the cone ends."""
    v1 = vec3(v1)
    v2 = vec3(v2)
    n = vec3(n)
    return 1.0 / (1.0 - float(n @ v1)) - 1.0 / (1.0 - float(n @ v2))


def _project_transverse(vec: Vec3, n: Vec3) -> Vec3:
    return vec - float(n @ vec) * n


def _real_sph_basis(n: Vec3, lmax: int) -> np.ndarray:
    """Real spherical harmonics up to degree lmax, evaluated at unit n."""
    ct = float(np.clip(n[2], -1.0, 1.0))
    phi = math.atan2(float(n[1]), float(n[0]))
    vals = np.empty((lmax + 1) ** 2)
    i = 0
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            norm = math.sqrt(
                (2 * l + 1)
                / (4.0 * math.pi)
                * math.factorial(l - am)
                / math.factorial(l + am)
            )
            p = float(lpmv(am, l, ct))
            if m == 0:
                vals[i] = norm * p
            elif m > 0:
                vals[i] = math.sqrt(2.0) * norm * p * math.cos(m * phi)
            else:
                vals[i] = math.sqrt(2.0) * norm * p * math.sin(am * phi)
            i += 1
    return vals


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count)
    z = 1.0 - 2.0 * (i + 0.5) / count
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _linear_cone_time(p: Vec3, v: Vec3, t: float, n: Vec3) -> float:
    # sphere-time cone condition t_k = t + n.x(t_k) for x(t_k) = p + v t_k
    return (t + float(n @ p)) / (1.0 - float(n @ v))


@dataclass(frozen=True)
class SeparationFamilyParams:
    """Per-interval direction maps (D_sigma, L_sigma) over sphere-time edges.

    Construct through one of the classmethods; evaluation projects both maps
    transverse to n unless the family was built with project=False, in which
    case `validate` is the gate that rejects non-transverse maps.
    """

    kind: str
    t_edges: np.ndarray
    d_raw: tuple
    l_raw: tuple
    project: bool = True
    payload: dict | None = None

    def __post_init__(self):
        edges = np.asarray(self.t_edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2:
            raise DomainError("need at least two interval edges")
        if not np.all(np.diff(edges) > 0):
            raise DomainError("interval edges must be strictly increasing")
        if len(self.d_raw) != edges.size - 1 or len(self.l_raw) != edges.size - 1:
            raise DomainError("one D and one L map required per interval")
        object.__setattr__(self, "t_edges", edges)

    @classmethod
    def from_callables(cls, t_edges, d_funcs, l_funcs, project: bool = True):
        return cls("callable", np.asarray(t_edges, dtype=float),
                   tuple(d_funcs), tuple(l_funcs), project=project)

    @classmethod
    def from_harmonic_tables(cls, t_edges, d_tables, l_tables,
                             lmax: int = DEFAULT_LMAX):
        """Maps given as (3, (lmax+1)^2) real spherical-harmonic tables."""
        k = (lmax + 1) ** 2
        d_tables = tuple(np.asarray(tab, dtype=float) for tab in d_tables)
        l_tables = tuple(np.asarray(tab, dtype=float) for tab in l_tables)
        for tab in (*d_tables, *l_tables):
            if tab.shape != (3, k):
                raise DomainError(
                    f"harmonic tables must have shape (3, {k}), got {tab.shape}"
                )
        d_funcs = tuple(
            (lambda n, tab=tab: tab @ _real_sph_basis(n, lmax)) for tab in d_tables
        )
        l_funcs = tuple(
            (lambda n, tab=tab: tab @ _real_sph_basis(n, lmax)) for tab in l_tables
        )
        payload = {
            "lmax": lmax,
            "d_tables": [tab.tolist() for tab in d_tables],
            "l_tables": [tab.tolist() for tab in l_tables],
        }
        return cls("harmonic", np.asarray(t_edges, dtype=float),
                   d_funcs, l_funcs, payload=payload)

    @classmethod
    def from_linear_pieces(cls, t_edges, pieces):
        """Family generated by a pair of straight-line pieces per interval.

        Each piece is (p1, v1, p2, v2) with x_k(tau) = p_k + v_k tau on the
        interval; D and L then have closed forms and the family is exactly
        the one traced by a polygonal pair.
        """
        t_edges = np.asarray(t_edges, dtype=float)
        clean = []
        for piece in pieces:
            p1, v1, p2, v2 = (vec3(x) for x in piece)
            for v in (v1, v2):
                if float(v @ v) >= 1.0:
                    raise SuperluminalError("piece velocity must satisfy |v| < 1")
            clean.append((p1, v1, p2, v2))

        def d_func(n, edge, piece):
            p1, v1, p2, v2 = piece
            t1 = _linear_cone_time(p1, v1, edge, n)
            t2 = _linear_cone_time(p2, v2, edge, n)
            sep = (p1 + v1 * t1) - (p2 + v2 * t2)
            return sep - (t1 - t2) * n

        def l_func(n, piece):
            _, v1, _, v2 = piece
            lhs = v1 / (1.0 - float(n @ v1)) - v2 / (1.0 - float(n @ v2))
            return np.cross(n, lhs)

        d_funcs = tuple(
            (lambda n, e=t_edges[i], pc=pc: d_func(n, e, pc))
            for i, pc in enumerate(clean)
        )
        l_funcs = tuple((lambda n, pc=pc: l_func(n, pc)) for pc in clean)
        payload = {
            "pieces": [
                {
                    "p1": p1.tolist(), "v1": v1.tolist(),
                    "p2": p2.tolist(), "v2": v2.tolist(),
                }
                for p1, v1, p2, v2 in clean
            ]
        }
        return cls("linear", t_edges, d_funcs, l_funcs, payload=payload)

    @property
    def n_intervals(self) -> int:
        return self.t_edges.size - 1

    def interval_index(self, t: float) -> int:
        edges = self.t_edges
        if t < edges[0] or t > edges[-1]:
            raise DomainError(
                f"t={t} outside the family domain [{edges[0]}, {edges[-1]}]"
            )
        idx = int(np.searchsorted(edges, t, side="right")) - 1
        return min(idx, self.n_intervals - 1)

    def d_sigma(self, sigma: int, n) -> Vec3:
        n = vec3(n)
        raw = vec3(self.d_raw[sigma](n))
        return _project_transverse(raw, n) if self.project else raw

    def l_sigma(self, sigma: int, n) -> Vec3:
        n = vec3(n)
        raw = vec3(self.l_raw[sigma](n))
        return _project_transverse(raw, n) if self.project else raw

    def validate(self, samples: int = 32, tol: float = 1e-12) -> None:
        """Check transversality and boundedness on a direction sample."""
        for n in _fibonacci_sphere(samples):
            for sigma in range(self.n_intervals):
                for name, val in (("D", self.d_sigma(sigma, n)),
                                  ("L", self.l_sigma(sigma, n))):
                    if not np.all(np.isfinite(val)):
                        raise ContractError(
                            f"{name}_{sigma} not finite at n={n.tolist()}"
                        )
                    if abs(float(n @ val)) > tol:
                        raise ContractError(
                            f"n.{name}_{sigma} = {float(n @ val):.3g} violates "
                            f"transversality at n={n.tolist()}"
                        )


def separation_family(params: SeparationFamilyParams, t: float, n,
                      dt12: float) -> Vec3:
    """Required separation x1(t1) - x2(t2) at sphere time t and direction n."""
    n = vec3(n)
    sigma = params.interval_index(t)
    d = params.d_sigma(sigma, n)
    l_vec = params.l_sigma(sigma, n)
    return d + dt12 * n - (t - params.t_edges[sigma]) * np.cross(n, l_vec)


def enforce_continuity(params: SeparationFamilyParams) -> SeparationFamilyParams:
    """Shift each D_sigma so the family is continuous across interval edges.

    At fixed n and fixed dt12 the separation jumps at an edge by the
    accumulated rotation term of the interval ending there; replacing each
    later offset with the end state of the previous interval removes the
    jump, and stays admissible because n x L is itself transverse.  D_0 is
    kept; every later D_sigma is overridden.
    """
    widths = np.diff(params.t_edges)

    def shifted_d(sigma):
        def func(n):
            n = vec3(n)
            total = params.d_sigma(0, n)
            for j in range(sigma):
                total = total - widths[j] * np.cross(n, params.l_sigma(j, n))
            return total

        return func

    d_funcs = tuple(shifted_d(s) for s in range(params.n_intervals))
    l_funcs = tuple(
        (lambda n, s=s: params.l_sigma(s, vec3(n)))
        for s in range(params.n_intervals)
    )
    return SeparationFamilyParams.from_callables(params.t_edges, d_funcs, l_funcs)


def params_to_dict(params: SeparationFamilyParams) -> dict:
    if params.payload is None:
        raise ConfigError(f"{params.kind} families are not serializable")
    edges = params.t_edges
    out = {"kind": params.kind, "t_start": float(edges[0]), "intervals": []}
    if params.kind == "harmonic":
        out["lmax"] = params.payload["lmax"]
        for i in range(params.n_intervals):
            out["intervals"].append(
                {
                    "t_edge": float(edges[i + 1]),
                    "D_coeffs": params.payload["d_tables"][i],
                    "L_coeffs": params.payload["l_tables"][i],
                }
            )
    elif params.kind == "linear":
        for i, piece in enumerate(params.payload["pieces"]):
            out["intervals"].append({"t_edge": float(edges[i + 1]), **piece})
    else:
        raise ConfigError(f"unknown family kind {params.kind!r}")
    return out


def params_from_dict(data: dict) -> SeparationFamilyParams:
    try:
        kind = data["kind"]
        t_start = float(data["t_start"])
        intervals = data["intervals"]
        if not isinstance(intervals, list) or not intervals:
            raise ConfigError("intervals must be a non-empty list")
        edges = [t_start] + [float(iv["t_edge"]) for iv in intervals]
        if kind == "harmonic":
            lmax = int(data.get("lmax", DEFAULT_LMAX))
            d_tables = [np.asarray(iv["D_coeffs"], dtype=float) for iv in intervals]
            l_tables = [np.asarray(iv["L_coeffs"], dtype=float) for iv in intervals]
            return SeparationFamilyParams.from_harmonic_tables(
                edges, d_tables, l_tables, lmax=lmax
            )
        if kind == "linear":
            pieces = [
                (iv["p1"], iv["v1"], iv["p2"], iv["v2"]) for iv in intervals
            ]
            return SeparationFamilyParams.from_linear_pieces(edges, pieces)
        raise ConfigError(f"unknown family kind {kind!r}")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, DomainError) as exc:
        raise ConfigError(f"malformed family parameters: {exc}") from exc


def save_family(params: SeparationFamilyParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh, indent=2)


def load_family(path) -> SeparationFamilyParams:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"family file is not valid JSON: {exc}") from exc
    return params_from_dict(data)


@dataclass(frozen=True)
class RigidityReport:
    max_violation: float
    violations: np.ndarray
    k_values: np.ndarray


def _require_spanning(directions: np.ndarray) -> None:
    if directions.shape[0] < 3 or np.linalg.matrix_rank(directions, tol=1e-9) < 3:
        raise InsufficientSamplingError(
            "need at least 3 non-coplanar direction samples"
        )


def rigidity_check(v1, v2, n_samples) -> RigidityReport:
    """Obstruction to a velocity-relation solution with no rotation term.

    With L = 0 the velocity relation forces the dilated velocity difference
    to be parallel to n for every direction at once, which pins v1 = v2.
    The report carries, per direction, the best-fit multiple of n and the
    norm of the transverse remainder.
    """
    v1 = vec3(v1)
    v2 = vec3(v2)
    ns = np.asarray([vec3(n) for n in n_samples], dtype=float)
    _require_spanning(ns)
    violations = np.empty(ns.shape[0])
    k_values = np.empty(ns.shape[0])
    for i, n in enumerate(ns):
        lhs = v1 / (1.0 - float(n @ v1)) - v2 / (1.0 - float(n @ v2))
        k_values[i] = float(n @ lhs)
        violations[i] = float(np.linalg.norm(lhs - k_values[i] * n))
    return RigidityReport(
        max_violation=float(violations.max()),
        violations=violations,
        k_values=k_values,
    )


@dataclass(frozen=True)
class SewingChain:
    """Cone-linked breaking times alternating between the two particles."""

    entries: tuple  # ((particle, time), ...)
    direction: str
    truncated: bool

    def times(self) -> list:
        return [t for _, t in self.entries]


def sewing_chain(traj1: PiecewiseTrajectory, traj2: PiecewiseTrajectory,
                 seed, direction: str, count: int) -> SewingChain:
    """Iterate the advanced (forward) or retarded (backward) cone map.

    The seed (particle index, time) is not included in the result.  If a
    cone step exits a trajectory domain the chain is truncated and flagged.
    """
    if direction not in ("forward", "backward"):
        raise ConfigError(f"direction must be 'forward' or 'backward', got {direction!r}")
    branch = Branch.ADVANCED if direction == "forward" else Branch.RETARDED
    particle, t = seed
    if particle not in (1, 2):
        raise DomainError("seed particle index must be 1 or 2")
    trajs = {1: traj1, 2: traj2}
    entries = []
    truncated = False
    for _ in range(int(count)):
        event = (float(t), trajs[particle].position(float(t)))
        other = 3 - particle
        try:
            sol = cone_time(trajs[other], event, branch)
        except InsufficientHistoryError:
            truncated = True
            break
        particle, t = other, sol.t_k
        entries.append((particle, float(t)))
    return SewingChain(tuple(entries), direction, truncated)


@dataclass(frozen=True)
class ConsistencyReport:
    """Direction spread of the reconstructed positions, per grid time."""

    t1_grid: np.ndarray
    positions: np.ndarray  # (T, 3) direction-mean positions
    spreads: np.ndarray  # (T,)
    max_spread: float


def _candidate(traj2, params, n, t1, x1):
    """One direction's reconstruction of x1(t1) given a trial position."""
    t = t1 - float(n @ x1)
    t2 = far_cone_time(traj2, t, n, 0.0, Branch.RETARDED)
    x2 = traj2.position(t2)
    return x2 + separation_family(params, t, n, t1 - t2), t, t2


def _solve_position(traj2, params, n_grid, t1, x0):
    """Least-squares position from the stacked per-direction relations."""
    x = vec3(x0).copy()
    m = n_grid.shape[0]
    res = np.empty(3 * m)
    jac = np.empty((3 * m, 3))
    for _ in range(60):
        for i, n in enumerate(n_grid):
            cand, t, t2 = _candidate(traj2, params, n, t1, x)
            v2 = traj2.velocity(t2)
            sigma = params.interval_index(t)
            l_vec = params.l_sigma(sigma, n)
            drhs_dt = (v2 - n) / (1.0 - float(n @ v2)) - np.cross(n, l_vec)
            res[3 * i:3 * i + 3] = x - cand
            jac[3 * i:3 * i + 3, :] = np.eye(3) + np.outer(drhs_dt, n)
        delta, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        x = x + delta
        scale = max(1.0, float(np.linalg.norm(x)))
        if float(np.linalg.norm(delta)) < 1e-13 * scale:
            return x
    raise ConvergenceError(f"partner position solve stalled at t1={t1}")


def construct_partner(traj2: PiecewiseTrajectory, params: SeparationFamilyParams,
                      n_grid, t1_grid, spread_tol: float = 1e-6,
                      particle: ParticleParams | None = None,
                      fit: str = "auto"):
    """Partner trajectory whose cone-linked separation realizes the family.

    For each grid time the stacked per-direction system is solved for one
    position; the per-direction candidates anchored at that position must
    then agree among themselves, and their spread is the consistency
    measure.  Exceeding `spread_tol` raises with the report attached.
    """
    params.validate()
    n_grid = np.asarray([vec3(n) / np.linalg.norm(vec3(n)) for n in n_grid])
    _require_spanning(n_grid)
    t1s = np.asarray(t1_grid, dtype=float)
    if t1s.ndim != 1 or t1s.size < 2 or not np.all(np.diff(t1s) > 0):
        raise DomainError("t1_grid must be strictly increasing with >= 2 times")
    if fit not in ("auto", "polygonal", "hermite"):
        raise ConfigError(f"unknown fit mode {fit!r}")

    positions = np.empty((t1s.size, 3))
    spreads = np.empty(t1s.size)
    x_guess = traj2.position(t1s[0])
    for i, t1 in enumerate(t1s):
        x = _solve_position(traj2, params, n_grid, t1, x_guess)
        cands = np.stack(
            [_candidate(traj2, params, n, t1, x)[0] for n in n_grid]
        )
        mean = cands.mean(axis=0)
        positions[i] = mean
        spreads[i] = float(np.linalg.norm(cands - mean, axis=1).max())
        x_guess = x
    report = ConsistencyReport(
        t1_grid=t1s,
        positions=positions,
        spreads=spreads,
        max_spread=float(spreads.max()),
    )
    if report.max_spread > spread_tol:
        raise InconsistentParamsError(
            f"reconstructed positions spread {report.max_spread:.3g} over "
            f"directions (tolerance {spread_tol:.3g})",
            report=report,
        )
    if particle is None:
        particle = ParticleParams(mass=1.0, charge=-traj2.particle.charge)
    use_polygonal = fit == "polygonal" or (fit == "auto" and params.kind == "linear")
    if use_polygonal:
        traj1 = polygonal_from_vertices(list(zip(t1s, positions)), particle)
    else:
        vels = _fd_node_velocities(t1s, positions)
        traj1 = hermite_trajectory(t1s, positions, vels, particle)
    return traj1, report
