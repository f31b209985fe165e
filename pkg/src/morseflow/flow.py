"""Flow maps for autonomous fields.

Integration uses an adaptive explicit Runge-Kutta pair of order 5 with an
embedded order-4 error estimate (Dormand-Prince coefficients) and cubic
Hermite dense output on accepted steps.  Variational equations ride along
with the state when Jacobians of the flow are requested.  Surface systems
replace the field by its tangential projection and re-project the state
onto the level set after every accepted step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from . import expressions as ex

__all__ = [
    "FlowSystem",
    "Trajectory",
    "FlowError",
    "StepFailure",
    "GuardExceeded",
    "EventNotFound",
    "flow_map",
    "flow_jacobian",
    "integrate_trajectory",
    "hit_time",
]


class FlowError(RuntimeError):
    pass


class StepFailure(FlowError):
    """Step size underflow while keeping the error estimate in tolerance."""


class GuardExceeded(FlowError):
    """Integration exceeded the time guard without meeting its goal."""


class EventNotFound(FlowError):
    """No matching sign change of the event function within the horizon."""


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_ERR = _B5 - _B4

# Detection thresholds sit above the rtol error floor (the state hovers
# O(rtol) from a sink, so the field bottoms out near 4*rtol); the endpoint
# is Newton-polished onto the exact zero afterwards.
_CONV_FIELD_TOL = 1e-8
_CONV_STEP_TOL = 1e-9
_CONV_RUN = 4
_DIVERGENCE_BOUND = 1e8


class FlowSystem:
    """An autonomous field on R^n, or on a level set {level = 0}.

    Parameters
    ----------
    dimension : ambient dimension n.
    field : list of Expression (or plain callables x -> ndarray; a callable
        field may bring a `jac` callable for the variational equations).
    level : optional Expression whose zero set carries the flow (surface
        mode); the effective field is the tangential projection of `field`.
    """

    def __init__(self, dimension: int, field, level=None, jac: Callable | None = None,
                 rtol: float = 1e-10, atol: float = 1e-12, max_step: float = math.inf,
                 t_guard: float = 1e3):
        self.dimension = int(dimension)
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.t_guard = t_guard
        self.level = level
        self._callable_jac = jac
        if callable(field):
            self.expressions = None
            self._raw = field
            self._raw_jac = None
        else:
            self.expressions = [ex.parse_expression(f, self.dimension)
                                if isinstance(f, str) else f for f in field]
            if len(self.expressions) != self.dimension:
                raise ValueError("field length must equal dimension")
            self._raw = ex.compile_field(self.expressions, self.dimension)
            self._raw_jac = ex.compile_field_jacobian(self.expressions, self.dimension)
        if isinstance(level, str):
            level = ex.parse_expression(level, self.dimension)
            self.level = level
        if level is not None:
            self._level_fn = ex.compile_scalar(level, self.dimension)
            self._level_grad_fn = ex.compile_field_jacobian([level], self.dimension)
        else:
            self._level_fn = None

    # -- field evaluation -------------------------------------------------

    def eval_raw(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._raw(x), dtype=float)

    def eval_field(self, x: np.ndarray) -> np.ndarray:
        v = self.eval_raw(x)
        if self.level is None:
            return v
        _, g = self._level_grad_fn(x)
        w = g[0]
        nrm2 = w @ w
        if nrm2 == 0.0:
            raise FlowError("level-set gradient vanished on the surface")
        return v - (w @ v) / nrm2 * w

    def eval_field_jac(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Effective field and its Jacobian (for variational equations)."""
        if self.expressions is not None:
            v, J = self._raw_jac(x)
        else:
            v = self.eval_raw(x)
            if self._callable_jac is not None:
                J = np.asarray(self._callable_jac(x), dtype=float)
            else:
                J = _fd_jacobian(self.eval_raw, x)
        if self.level is None:
            return v, J
        w = ex.gradient(self.level, x)
        H = ex.hessian(self.level, x)
        nrm = math.sqrt(w @ w)
        nu = w / nrm
        P = np.eye(self.dimension) - np.outer(nu, nu)
        Dnu = P @ H / nrm
        g = v - nu * (nu @ v)
        Jg = P @ J - np.outer(nu, v @ Dnu) - Dnu * (nu @ v)
        return g, Jg

    def level_value(self, x: np.ndarray) -> float:
        return 0.0 if self._level_fn is None else float(self._level_fn(x))

    def project_to_level(self, x: np.ndarray, tol: float = 1e-13) -> np.ndarray:
        """Newton correction along the level gradient."""
        if self._level_fn is None:
            return x
        y = np.array(x, dtype=float)
        for _ in range(8):
            val = float(self._level_fn(y))
            if abs(val) < tol:
                return y
            _, g = self._level_grad_fn(y)
            w = g[0]
            nrm2 = w @ w
            if nrm2 < 1e-30:
                raise FlowError("level-set gradient vanished during projection")
            y = y - val / nrm2 * w
        return y


def _fd_jacobian(f: Callable, x: np.ndarray, h: float = 1e-7) -> np.ndarray:
    n = len(x)
    J = np.empty((n, n))
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = h * max(1.0, abs(x[j]))
        J[:, j] = (f(x + dx) - f(x - dx)) / (2 * dx[j])
    return J


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    termination: str  # reached_t | event_hit | converged_to_point | guard_exceeded | diverged
    event_time: float | None = None
    segments: list = dc_field(default_factory=list, repr=False)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def x_end(self) -> np.ndarray:
        return self.states[-1]


def _hermite(t0, x0, f0, t1, x1, f1, t):
    """Cubic Hermite interpolant on one accepted step."""
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1


def _initial_step(f0, x0, direction, rtol, atol, max_step):
    scale = atol + rtol * np.abs(x0)
    d0 = math.sqrt(np.mean((x0 / scale) ** 2)) if x0.size else 1.0
    d1 = math.sqrt(np.mean((f0 / scale) ** 2))
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return direction * min(h, max_step, 1.0)


def _integrate(rhs, x0: np.ndarray, t_target: float | None, *,
               rtol: float, atol: float, max_step: float, t_guard: float,
               post_step: Callable | None = None,
               stop: Callable | None = None,
               record: bool = False,
               direction: float | None = None,
               convergence_field: Callable | None = None):
    """Shared adaptive stepper.

    rhs(x) -> dx/dt.  If `t_target` is None the integration runs until
    `stop`/convergence fires or the guard is exceeded (direction gives the
    time sense).  `post_step` may replace the accepted state (projections).
    Returns (times, states, segments, termination, extra) where segments
    hold (t0, x0, f0, t1, x1, f1) for dense output and extra is whatever a
    firing `stop` returned.
    """
    t = 0.0
    x = np.array(x0, dtype=float)
    if t_target is not None:
        if t_target == 0.0:
            return [0.0], [x], [], "reached_t", None
        direction = 1.0 if t_target > 0 else -1.0
    assert direction is not None
    f = rhs(x)
    h = _initial_step(f, x, direction, rtol, atol, max_step)
    times, states, segments = [0.0], [np.array(x)], []
    conv_run = 0
    termination = None
    extra = None
    min_h = 1e-14
    while True:
        if t_target is not None:
            remaining = t_target - t
            # snap within a few ulps so a clamped last step cannot strand
            # a sub-min_h remainder
            if direction * remaining <= 0 or (
                    abs(remaining) <= 4e-16 * max(abs(t), abs(t_target))):
                termination = "reached_t"
                break
            if abs(h) > abs(remaining):
                h = remaining
        if abs(t) > t_guard:
            termination = "guard_exceeded"
            break
        if np.linalg.norm(x) > _DIVERGENCE_BOUND:
            termination = "diverged"
            break
        if abs(h) < min_h * max(1.0, abs(t)):
            termination = "step_failure"
            break
        # one attempted step
        k = np.empty((7, x.size))
        k[0] = f
        failed_eval = False
        try:
            for i in range(1, 7):
                xi = x + h * (_A[i] @ k[:i])
                k[i] = rhs(xi)
        except (ex.DomainError, ZeroDivisionError, OverflowError):
            failed_eval = True
        if failed_eval:
            h *= 0.5
            continue
        x_new = x + h * (_A[6] @ k[:6])
        # k[6] is evaluated at x_new (FSAL)
        err_vec = h * (_ERR @ k)
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
        err = math.sqrt(np.mean((err_vec / scale) ** 2))
        if not math.isfinite(err):
            h *= 0.5
            continue
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            continue
        # accepted
        t_new = t + h
        f_new = k[6]
        if post_step is not None:
            adjusted = post_step(x_new)
            if adjusted is not None and adjusted is not x_new:
                x_new = adjusted
                f_new = rhs(x_new)
        segments.append((t, x.copy(), f.copy(), t_new, x_new.copy(), f_new.copy()))
        if record:
            times.append(t_new)
            states.append(np.array(x_new))
        if stop is not None:
            outcome = stop(t, x, f, t_new, x_new, f_new)
            if outcome is not None:
                termination, extra = outcome
                t, x, f = t_new, x_new, f_new
                break
        near_rest = False
        if convergence_field is not None:
            fn = np.linalg.norm(convergence_field(x_new))
            near_rest = fn < 10 * _CONV_FIELD_TOL
            dx = np.linalg.norm(x_new - x)
            if fn < _CONV_FIELD_TOL and dx < _CONV_STEP_TOL * max(1.0, np.linalg.norm(x_new)):
                conv_run += 1
                if conv_run >= _CONV_RUN:
                    t, x, f = t_new, x_new, f_new
                    termination = "converged_to_point"
                    break
            else:
                conv_run = 0
        t, x, f = t_new, x_new, f_new
        growth = max(0.2, min(5.0, 0.9 * err ** -0.2 if err > 0 else 5.0))
        h_cap = max_step if not near_rest else min(max_step, 1.0)
        h = direction * min(abs(h) * growth, h_cap)
    if not record or times[-1] != t:
        times.append(t)
        states.append(np.array(x))
    return times, states, segments, termination, extra


def _make_rhs(sys: FlowSystem):
    if sys.level is None:
        return sys.eval_raw
    return sys.eval_field


def _make_post(sys: FlowSystem):
    if sys.level is None:
        return None
    return lambda x: sys.project_to_level(x)


def refine_equilibrium(sys: FlowSystem, x0: Sequence[float], tol: float = 1e-13,
                       max_iter: int = 30, max_move: float = math.inf) -> np.ndarray:
    """Newton-polish a near-stationary point onto the exact field zero.

    Uses least squares, so zero sets of deficient rank (surface mode, or
    fields vanishing on a submanifold) are handled: the step is minimal-norm.
    Raises FlowError if the iterate drifts more than `max_move` from x0.
    """
    start = np.asarray(x0, float)
    x = sys.project_to_level(start) if sys.level is not None else start.copy()
    for _ in range(max_iter):
        v, J = sys.eval_field_jac(x)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(J))):
            raise FlowError("field evaluation produced non-finite values")
        if np.linalg.norm(v) < tol:
            break
        step, *_ = np.linalg.lstsq(J, -v, rcond=None)
        nrm = np.linalg.norm(step)
        if nrm > 0.5:
            step *= 0.5 / nrm
        x = x + step
        if sys.level is not None:
            x = sys.project_to_level(x)
        if np.linalg.norm(x - start) > max_move:
            raise FlowError("equilibrium refinement left its trust region")
    return x


def flow_map(sys: FlowSystem, x0: Sequence[float], t: float,
             rtol: float | None = None, atol: float | None = None) -> np.ndarray:
    """phi^t(x0)."""
    times, states, _, term, _ = _integrate(
        _make_rhs(sys), np.asarray(x0, float), t,
        rtol=rtol or sys.rtol, atol=atol or sys.atol,
        max_step=sys.max_step, t_guard=max(sys.t_guard, abs(t) * 1.01),
        post_step=_make_post(sys))
    if term != "reached_t":
        raise StepFailure(f"flow_map terminated with {term} at t={times[-1]}")
    return states[-1]


def integrate_trajectory(sys: FlowSystem, x0: Sequence[float], t: float | None,
                         rtol: float | None = None, atol: float | None = None,
                         t_guard: float | None = None,
                         observer: Callable | None = None,
                         detect_convergence: bool = True,
                         backward: bool = False) -> Trajectory:
    """Integrate recording every accepted step.

    With t=None, runs forward (or backward) until convergence to a
    stationary point or the guard; termination is reported on the
    Trajectory, not raised.
    """

    stop = None
    if observer is not None:
        def stop(_t0, _x0, _f0, t1, x1, _f1):
            return observer(t1, x1)

    rhs = _make_rhs(sys)
    times, states, segments, term, extra = _integrate(
        rhs, np.asarray(x0, float), t,
        rtol=rtol or sys.rtol, atol=atol or sys.atol,
        max_step=sys.max_step,
        t_guard=t_guard if t_guard is not None else sys.t_guard,
        post_step=_make_post(sys), record=True,
        direction=(-1.0 if backward else 1.0) if t is None else None,
        stop=stop,
        convergence_field=rhs if detect_convergence else None)
    if term == "step_failure":
        raise StepFailure("integration step size underflow")
    if term == "converged_to_point":
        try:
            x_star = refine_equilibrium(sys, states[-1], max_move=1e-3)
            if np.linalg.norm(rhs(x_star)) <= np.linalg.norm(rhs(states[-1])):
                states[-1] = x_star
        except (FlowError, np.linalg.LinAlgError):
            pass
    traj = Trajectory(np.array(times), np.array(states), term, segments=segments)
    if extra is not None:
        traj.event_time = extra if isinstance(extra, float) else None
    return traj


def flow_jacobian(sys: FlowSystem, x0: Sequence[float], t: float,
                  rtol: float | None = None, atol: float | None = None
                  ) -> tuple[np.ndarray, np.ndarray]:
    """(phi^t(x0), D phi^t(x0)) via jointly integrated variational equations."""
    n = sys.dimension
    x0 = np.asarray(x0, float)

    def rhs(y):
        x = y[:n]
        J = y[n:].reshape(n, n)
        v, A = sys.eval_field_jac(x)
        return np.concatenate([v, (A @ J).ravel()])

    y0 = np.concatenate([x0, np.eye(n).ravel()])
    post = None
    if sys.level is not None:
        def post(y):
            x = sys.project_to_level(y[:n])
            return np.concatenate([x, y[n:]])

    times, states, _, term, _ = _integrate(
        rhs, y0, t, rtol=rtol or sys.rtol, atol=atol or sys.atol,
        max_step=sys.max_step, t_guard=max(sys.t_guard, abs(t) * 1.01),
        post_step=post)
    if term != "reached_t":
        raise StepFailure(f"flow_jacobian terminated with {term}")
    y = states[-1]
    return y[:n], y[n:].reshape(n, n)


def hit_time(sys: FlowSystem, x0: Sequence[float], event, direction: int = 0,
             t_max: float = 100.0, event_tol: float = 1e-12,
             rtol: float | None = None, atol: float | None = None
             ) -> tuple[float, np.ndarray]:
    """First time the scalar `event` crosses zero in the requested direction.

    direction +1 detects crossings from negative to positive, -1 the
    opposite, 0 either.  Refinement: bisection on the dense output followed
    by Newton in time on re-integrated states.
    """
    if isinstance(event, str):
        event = ex.parse_expression(event, sys.dimension)
    if isinstance(event, ex.Const | ex.Var | ex.Unary | ex.Binary):
        g_fn = ex.compile_scalar(event, sys.dimension)
    else:
        g_fn = event
    rhs = _make_rhs(sys)
    hit: dict = {}

    def stop(t0, xa, fa, t1, xb, fb):
        ga, gb = g_fn(xa), g_fn(xb)
        if ga == 0.0 and t0 == 0.0:
            return None  # starting on the section does not count
        if direction > 0:
            crossed = ga < 0.0 <= gb
        elif direction < 0:
            crossed = ga > 0.0 >= gb
        else:
            crossed = ga * gb <= 0.0 and ga != 0.0
        if not crossed:
            return None
        hit.update(t0=t0, x0=xa, f0=fa, t1=t1, x1=xb, f1=fb)
        return ("event_hit", t1)

    sign = 1.0 if t_max > 0 else -1.0
    _times, _states, _segs, term, _ = _integrate(
        rhs, np.asarray(x0, float), None,
        rtol=rtol or sys.rtol, atol=atol or sys.atol, max_step=sys.max_step,
        t_guard=abs(t_max), post_step=_make_post(sys), stop=stop,
        direction=sign, convergence_field=None)
    if term != "event_hit":
        raise EventNotFound(f"no event crossing within horizon ({term})")

    t0, xa, fa, t1, xb, fb = (hit[k] for k in ("t0", "x0", "f0", "t1", "x1", "f1"))
    ga, gb = g_fn(xa), g_fn(xb)
    lo, hi = t0, t1
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        gm = g_fn(_hermite(t0, xa, fa, t1, xb, fb, mid))
        if gm == 0.0:
            lo = hi = mid
            break
        if (ga < 0) == (gm < 0):
            lo, ga = mid, gm
        else:
            hi = mid
        if abs(hi - lo) < 1e-15 * max(1.0, abs(t1)):
            break
    t_star = 0.5 * (lo + hi)
    state = flow_map(sys, xa, t_star - t0, rtol=rtol, atol=atol) if t_star != t0 else np.array(xa)
    # Newton polish in time
    for _ in range(3):
        g = g_fn(state)
        if abs(g) < event_tol:
            break
        grad = _fd_scalar_grad(g_fn, state)
        gdot = grad @ rhs(state)
        if gdot == 0.0:
            break
        dt = -g / gdot
        state = flow_map(sys, state, dt, rtol=rtol, atol=atol)
        t_star += dt
    if sys.level is not None:
        state = sys.project_to_level(state)
    return t_star, state


def _fd_scalar_grad(g_fn: Callable, x: np.ndarray, h: float = 1e-7) -> np.ndarray:
    out = np.empty(len(x))
    for j in range(len(x)):
        dx = np.zeros(len(x))
        dx[j] = h * max(1.0, abs(x[j]))
        out[j] = (g_fn(x + dx) - g_fn(x - dx)) / (2 * dx[j])
    return out
