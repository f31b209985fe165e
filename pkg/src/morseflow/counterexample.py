"""Gradient flow on R^3 whose perturbation defeats any cell structure.

The potential f(x, y, z) = z * exp(8 / (x^2 + y^2 + z^2 + 3)) drives the
flow of -grad f.  It has exactly four equilibria, all on the z-axis, and
the round sphere |x| = 3 is invariant.  Seeds on that sphere's equator at
longitudes 1/k converge to (3, 0, 0); planting tiny inward bumps on the
even-k orbits makes the omega-limit alternate along the sequence between
the interior sink (0, 0, -1) and the on-sphere saddle (0, 0, -3).  The
potential evaluated at the omega-limit then has no continuous extension
to the seed limit, which is exactly what a continuous parametrization of
the closed unstable set of the top equilibrium would provide.

Two closed-form certificates keep the claims checkable at tolerance
rather than by eye: the (r, z) profile gradient factors through an
explicit polynomial pair, locating the equilibria exactly, and
g(x) = r (|x|^2 - 9) / (|x|^2 - 1) is a first integral away from the
unit sphere, pinning untouched orbits to the invariant sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from . import expressions as ex
from .flow import FlowSystem, flow_map, integrate_trajectory

__all__ = [
    "PerturbationSpec",
    "LimitRow",
    "PerturbationError",
    "SupportOverlapError",
    "LyapunovViolation",
    "SingularSetError",
    "UnresolvedOrbitError",
    "F_SOURCE",
    "build_f3d",
    "axis_equilibria",
    "axis_hessian_rz",
    "factorization_residual",
    "g_invariance_drift",
    "equator_probe",
    "bump_profile",
    "build_perturbed",
    "alternating_limits",
    "noncell_witness",
]

F_SOURCE = "z*exp(8/(x^2 + y^2 + z^2 + 3))"

_Q = "(x^2 + y^2 + z^2 + 3)"
FIELD_SOURCE = (
    f"16*x*z*exp(8/{_Q})/{_Q}^2",
    f"16*y*z*exp(8/{_Q})/{_Q}^2",
    f"(16*z^2 - {_Q}^2)*exp(8/{_Q})/{_Q}^2",
)

SPHERE_RADIUS = 3.0

# proximity at which an orbit sample is pinned to an equilibrium; the
# sphere poles are saddles, so terminal convergence detection never fires
# for orbits shadowing the sphere and closest approach decides instead
_SNAP = 5e-6
_RESOLVE = 1e-3


class PerturbationError(ValueError):
    """Bump layout or amplitude breaks a build-time certificate."""


class SupportOverlapError(PerturbationError):
    """Bump supports collide with each other or with an untouched orbit."""


class LyapunovViolation(PerturbationError):
    """The perturbed field fails to decrease the potential somewhere."""


class SingularSetError(ValueError):
    """Path enters the collar of the unit sphere where g blows up."""


class UnresolvedOrbitError(RuntimeError):
    """An orbit came nowhere near any equilibrium within the horizon."""


@dataclass(frozen=True)
class PerturbationSpec:
    """Layout of the inward bumps: sites sit on the orbits of the equator
    seeds with even index k <= k_max, one time unit downstream."""
    k_max: int = 8
    epsilon: float = 0.05
    delta: float = 0.02


@dataclass(frozen=True)
class LimitRow:
    """Measured limit data for the orbit through one equator seed."""
    k: int
    omega: np.ndarray
    f_omega: float
    target: np.ndarray
    omega_err: float
    alpha: np.ndarray
    alpha_target: np.ndarray
    alpha_err: float


@lru_cache(maxsize=1)
def _compiled():
    f = ex.parse_expression(F_SOURCE, 3)
    return f, ex.compile_scalar(f, 3), ex.compile_field_jacobian([f], 3)


def build_f3d() -> tuple[ex.Expression, FlowSystem]:
    """The potential and the flow system of its negative gradient."""
    f, _, _ = _compiled()
    return f, FlowSystem(3, list(FIELD_SOURCE))


def axis_equilibria() -> np.ndarray:
    """The four field zeros; q = x^2+y^2+z^2+3 equals 4|z| exactly there."""
    return np.array([[0.0, 0.0, -3.0], [0.0, 0.0, -1.0],
                     [0.0, 0.0, 1.0], [0.0, 0.0, 3.0]])


def axis_hessian_rz(z: float) -> np.ndarray:
    """Hessian of the axisymmetric profile at the axis point (r, z) = (0, z).

    The ambient Hessian at (0, 0, z) is diag(a, a, c) by symmetry; a is the
    radial curvature, so the profile Hessian is [[a, 0], [0, c]].
    """
    f, _, _ = _compiled()
    H = ex.hessian(f, [0.0, 0.0, float(z)])
    return np.array([[H[0, 0], H[0, 2]], [H[2, 0], H[2, 2]]])


def factorization_residual(point) -> float:
    """Residual of the closed-form factorization of the profile gradient.

    With u = r^2 + z^2 + 3, the (r, z) profile of the potential has
    gradient rho * F for rho = exp(8/u) / u^2 and
    F = (-16 r z, (u + 4z)(u - 4z)).  The left side is evaluated
    independently by differentiating the ambient potential at (r, 0, z),
    so the residual measures the identity, not a tautology.
    """
    r, z = (float(c) for c in point)
    _, _, f_jac = _compiled()
    _, g = f_jac(np.array([r, 0.0, z]))
    lhs = np.array([g[0][0], g[0][2]])
    u = r * r + z * z + 3.0
    rho = math.exp(8.0 / u) / (u * u)
    rhs = rho * np.array([-16.0 * r * z, (u + 4.0 * z) * (u - 4.0 * z)])
    return float(np.linalg.norm(lhs - rhs))


def g_invariance_drift(trajectory) -> float:
    """Largest excursion of the conserved quantity g along a path.

    g(x) = r (|x|^2 - 9) / (|x|^2 - 1), r the cylindrical radius, is
    constant along unperturbed orbits; it is singular on the unit sphere,
    so paths entering a 0.1 collar of that sphere are rejected.  Accepts a
    Trajectory or a bare (n, 3) array of states.
    """
    states = np.asarray(getattr(trajectory, "states", trajectory), float)
    n = np.linalg.norm(states, axis=1)
    if np.min(np.abs(n - 1.0)) < 0.1:
        raise SingularSetError(
            "path enters the unit-sphere collar where g is singular")
    r = np.hypot(states[:, 0], states[:, 1])
    g = r * (n * n - 9.0) / (n * n - 1.0)
    return float(np.max(np.abs(g - g[0])))


def equator_probe(k: int) -> np.ndarray:
    """Seed on the invariant sphere's equator at longitude 1/k."""
    if k < 1:
        raise ValueError("probe index must be a positive integer")
    return np.array([SPHERE_RADIUS * math.cos(1.0 / k),
                     SPHERE_RADIUS * math.sin(1.0 / k), 0.0])


def bump_profile(s, delta: float):
    """Radial bump (1 - (s/delta)^2)^3 on s < delta, zero outside; C^2."""
    t = np.square(np.asarray(s, float) / delta)
    return np.where(t < 1.0, (1.0 - np.minimum(t, 1.0)) ** 3, 0.0)


def _meridian_distance(center: np.ndarray, theta: float) -> float:
    """Distance from a point to the sphere meridian at longitude theta.

    The meridian is the closure of an untouched equator orbit; latitude is
    scanned coarsely, then the bracket is polished.
    """
    cs, sn = math.cos(theta), math.sin(theta)

    def gap(mu: float) -> float:
        c = SPHERE_RADIUS * math.cos(mu)
        m = np.array([c * cs, c * sn, -SPHERE_RADIUS * math.sin(mu)])
        return float(np.linalg.norm(m - center))

    mus = np.linspace(-0.5 * math.pi, 0.5 * math.pi, 121)
    vals = [gap(mu) for mu in mus]
    i = int(np.argmin(vals))
    lo, hi = mus[max(i - 1, 0)], mus[min(i + 1, len(mus) - 1)]
    res = minimize_scalar(gap, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return min(float(res.fun), vals[i])


def _assemble(spec: PerturbationSpec):
    """Perturbed field, its Jacobian, and the verified layout margins.

    Raises SupportOverlapError when bump balls collide pairwise or come
    within 2*delta of an odd-index orbit, LyapunovViolation when the
    potential stops decreasing somewhere off the equilibria.
    """
    _, sys0 = build_f3d()
    _, _, f_jac = _compiled()
    evens = range(2, spec.k_max + 1, 2)
    centers = np.array([flow_map(sys0, equator_probe(k), 1.0) for k in evens]
                       ).reshape(-1, 3)
    norms = np.linalg.norm(centers, axis=1)
    directions = -centers / norms[:, None] if len(centers) else centers

    gap_c = math.inf
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            gap_c = min(gap_c, float(np.linalg.norm(centers[i] - centers[j])))
    if gap_c <= 2.0 * spec.delta:
        raise SupportOverlapError(
            f"bump centers only {gap_c:.4f} apart for radius {spec.delta}")

    gap_t = math.inf
    for k in range(1, spec.k_max + 1, 2):
        for q in centers:
            gap_t = min(gap_t, _meridian_distance(q, 1.0 / k))
    if gap_t <= 2.0 * spec.delta:
        raise SupportOverlapError(
            f"bump support within {gap_t:.4f} of an odd-index orbit")

    eps, d2 = spec.epsilon, spec.delta ** 2

    def field(x):
        v = sys0.eval_raw(x)
        if eps == 0.0:
            return v
        for q, u in zip(centers, directions):
            dx = x - q
            s2 = dx @ dx
            if s2 < d2:
                v = v + eps * (1.0 - s2 / d2) ** 3 * u
        return v

    def jac(x):
        _, J = sys0.eval_field_jac(x)
        if eps == 0.0:
            return J
        for q, u in zip(centers, directions):
            dx = x - q
            s2 = dx @ dx
            if 0.0 < s2 < d2:
                w = 1.0 - s2 / d2
                J = J + (-6.0 * eps * w * w / d2) * np.outer(u, dx)
        return J

    rng = np.random.default_rng(7)
    dirs = rng.standard_normal((1000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.cbrt(rng.random(1000))
    samples = 5.0 * dirs * radii[:, None]
    for i in range(300):
        if len(centers):
            q = centers[i % len(centers)]
            samples[700 + i] = q + spec.delta * dirs[700 + i] * radii[700 + i]
    eq = axis_equilibria()
    worst = -math.inf
    for p in samples:
        if np.min(np.linalg.norm(eq - p, axis=1)) < 1e-6:
            continue
        _, g = f_jac(p)
        worst = max(worst, float(g[0] @ field(p)))
    if worst >= 0.0:
        raise LyapunovViolation(
            f"d f along the perturbed field reaches {worst:.3e}")

    margins = {"center_gap": gap_c, "tube_gap": gap_t,
               "lyapunov_max": worst, "support_radius": spec.delta}
    return field, jac, {"centers": centers, "directions": directions,
                        "margins": margins}


def build_perturbed(spec: PerturbationSpec) -> FlowSystem:
    """Negative gradient flow plus inward bumps at the even-index sites."""
    field, jac, _ = _assemble(spec)
    return FlowSystem(3, field, jac=jac)


def _closest_approach(states: np.ndarray, targets: np.ndarray):
    """Pin a recorded orbit to the equilibrium it approaches.

    Rule: the first target approached within _SNAP wins; failing that, the
    globally closest (state, target) pair.  The reported state is the
    path's closest approach to the winning target.
    """
    d = np.linalg.norm(states[:, None, :] - targets[None, :, :], axis=2)
    steps, cols = np.nonzero(d < _SNAP)
    j = int(cols[0]) if steps.size else int(np.unravel_index(
        np.argmin(d), d.shape)[1])
    i = int(np.argmin(d[:, j]))
    return states[i], targets[j], float(d[i, j])


def alternating_limits(spec: PerturbationSpec,
                       horizon: float = 25.0) -> list[LimitRow]:
    """Limit table for the equator orbits under the perturbed flow.

    Integrates forward and backward from every seed p_k, k = 1..k_max,
    and records the equilibrium each leg resolves, the closest-approach
    state, and the potential there.  Bumped (even) orbits leave the
    sphere and land at the interior sink; untouched (odd) orbits stay on
    it and head to the lower pole, while every backward leg climbs to the
    upper pole.
    """
    field, jac, _ = _assemble(spec)
    sysp = FlowSystem(3, field, jac=jac, rtol=1e-12, atol=1e-14,
                      max_step=0.25, t_guard=8.0 * horizon)
    targets = axis_equilibria()
    _, f_val, _ = _compiled()
    rows = []
    for k in range(1, spec.k_max + 1):
        p = equator_probe(k)
        fwd = integrate_trajectory(sysp, p, horizon)
        bwd = integrate_trajectory(sysp, p, -horizon)
        omega, tgt, err = _closest_approach(fwd.states, targets)
        alpha, atgt, aerr = _closest_approach(bwd.states, targets)
        if err > _RESOLVE or aerr > _RESOLVE:
            raise UnresolvedOrbitError(
                f"orbit through longitude 1/{k} resolved no equilibrium "
                f"(closest approach {max(err, aerr):.2e})")
        rows.append(LimitRow(k=k, omega=omega, f_omega=float(f_val(omega)),
                             target=tgt, omega_err=err, alpha=alpha,
                             alpha_target=atgt, alpha_err=aerr))
    return rows


def _row_dicts(rows: list[LimitRow]) -> list[dict]:
    return [{"k": r.k, "omega": [float(c) for c in r.omega],
             "f_omega": r.f_omega, "omega_err": r.omega_err,
             "target_z": float(r.target[2]),
             "alpha_target_z": float(r.alpha_target[2]),
             "alpha_err": r.alpha_err} for r in rows]


def _parity_targets(rows: list[LimitRow], parity: int) -> set:
    return {round(float(r.target[2]), 9) for r in rows if r.k % 2 == parity}


def noncell_witness(spec: PerturbationSpec | None = None) -> dict:
    """Discontinuity certificate for the perturbed basin boundary.

    The seeds p_k accumulate at (3, 0, 0) while f at their omega-limits
    alternates between two values an explicit gap apart, so no continuous
    map can realize k -> f(omega(p_k)) at the limit.  A control run with
    the bumps switched off shows a single limit value, isolating the
    perturbation as the cause.  Returns a JSON-ready report.
    """
    spec = PerturbationSpec() if spec is None else spec
    _, _, info = _assemble(spec)
    rows = alternating_limits(spec)
    control = alternating_limits(replace(spec, epsilon=0.0))

    even_f = [r.f_omega for r in rows if r.k % 2 == 0]
    odd_f = [r.f_omega for r in rows if r.k % 2 == 1]
    alternating = (_parity_targets(rows, 0) == {-1.0}
                   and _parity_targets(rows, 1) == {-3.0})
    ctrl_f = [r.f_omega for r in control]
    ctrl_alternating = (_parity_targets(control, 0) == {-1.0}
                        and _parity_targets(control, 1) == {-3.0})

    limit_point = np.array([SPHERE_RADIUS, 0.0, 0.0])
    probe_err = float(np.linalg.norm(equator_probe(10 ** 7) - limit_point))
    accumulation = sorted([float(np.mean(even_f)), float(np.mean(odd_f))])
    return {
        "spec": {"k_max": spec.k_max, "epsilon": spec.epsilon,
                 "delta": spec.delta},
        "rows": _row_dicts(rows),
        "accumulation_values": accumulation,
        "value_gap": float(accumulation[1] - accumulation[0]),
        "alternating": bool(alternating),
        "backward_uniform": bool(all(
            abs(float(r.alpha_target[2]) - 3.0) < 1e-12 for r in rows)),
        "limit_point": [float(c) for c in limit_point],
        "limit_probe_error": probe_err,
        "margins": info["margins"],
        "control": {
            "rows": _row_dicts(control),
            "alternating": bool(ctrl_alternating),
            "f_spread": float(np.max(ctrl_f) - np.min(ctrl_f)),
            "f_value": float(np.mean(ctrl_f)),
        },
    }
