"""Boundary flow on the unstable manifold of a rest point.

From the stable-foliation charts of the lower-index rest points this
module assembles the inward field Y = sum chi_i Y_i on W^u(x) minus x,
integrates its flow theta with per-step leaf re-projection, and computes
the limit map omega_theta onto the lower-index unstable manifolds.

Each Y_i is the leafwise gradient descent of the chart radius rho_i,
normalized so d rho_i [Y_i] = -rho_i; the cutoffs chi blend the classes
so that on cl{rho_i <= 1} the radius obeys d/dt rho_i = -chi_i rho_i
exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .equilibria import CriticalPoint, _tangent_basis, classify

__all__ = [
    "ChartDefect", "ThetaDomainError", "OmegaFailure",
    "BoundaryFlowAssembly", "assembly_for", "smoothstep", "y_field",
    "chi_partition", "boundary_field", "theta_flow", "omega_theta",
]


class ChartDefect(Exception):
    """A chart violates the radial-function requirements (degenerate
    leafwise gradient)."""


class ThetaDomainError(Exception):
    """The theta orbit left the charted part of W^u(x)."""


class OmegaFailure(Exception):
    """omega_theta did not converge before the time guard."""


def smoothstep(rho: float, t_on: float, t_off: float) -> float:
    """C^2 cutoff: 1 at rho <= t_on, 0 at rho >= t_off, quintic ramp."""
    if not rho < t_off:  # catches +inf and nan
        return 0.0
    if rho <= t_on:
        return 1.0
    s = (t_off - rho) / (t_off - t_on)
    return s ** 3 * (10.0 + s * (6.0 * s - 15.0))


@dataclass(frozen=True)
class BoundaryFlowAssembly:
    """Foliation data of the lower-index rest points, restricted to
    W^u(target).

    classes[i] lists the charts of all index-i rest points; their domains
    are pairwise disjoint, so rho_i(p) is the value of the unique chart
    containing p and +inf outside all of them.  Only full-dimensional
    unstable manifolds are handled: the ambient space itself, or the
    level surface in surface mode.
    """
    sys: object
    target: CriticalPoint
    classes: tuple
    t_on: float = 1.0
    t_off: float = 1.5

    @property
    def k(self) -> int:
        return self.target.index

    def chart_at(self, i: int, point):
        for ch in self.classes[i]:
            if ch.in_domain(point):
                return ch
        return None

    def rho_class(self, i: int, point) -> float:
        ch = self.chart_at(i, point)
        return math.inf if ch is None else float(ch.rho(point))

    def rho_table(self, point) -> np.ndarray:
        return np.array([self.rho_class(i, point) for i in range(self.k)])

    def wu_tangent(self, point) -> np.ndarray:
        """Orthonormal basis of T_point W^u(target)."""
        if self.sys.level is not None:
            return _tangent_basis(self.sys, np.asarray(point, float))
        return np.eye(self.sys.dimension)


def assembly_for(ref, x_point, t_on: float = 1.0, t_off: float = 1.5
                 ) -> BoundaryFlowAssembly:
    """Build the assembly for a ReferenceSystem around the target rest
    point, collecting its analytic charts by index class."""
    sys = ref.flow
    target = classify(sys, np.asarray(x_point, float))
    intrinsic = target.dimension
    if target.index != intrinsic:
        raise ValueError(
            "boundary flow needs a full-dimensional unstable manifold; "
            f"target has index {target.index} in dimension {intrinsic}")
    classes = [[] for _ in range(target.index)]
    for ch in ref.charts.values():
        if ch.cp.index < target.index:
            classes[ch.cp.index].append(ch)
    return BoundaryFlowAssembly(sys=sys, target=target,
                                classes=tuple(tuple(c) for c in classes),
                                t_on=t_on, t_off=t_off)


def _rho_grad(ch, point) -> np.ndarray:
    if ch.rho_grad is not None:
        return np.asarray(ch.rho_grad(point), float)
    return _fd_rho_grad(ch, point)


def _pi_jac(ch, point) -> np.ndarray:
    if ch.pi_u_jac is not None:
        return np.asarray(ch.pi_u_jac(point), float)
    return _fd_pi_jac(ch, point)


def _fd_rho_grad(ch, point, h: float = 1e-6) -> np.ndarray:
    """Ambient finite-difference gradient of the chart radius, one-sided
    where the neighbor falls off the chart."""
    point = np.asarray(point, float)
    d = point.size
    g = np.empty(d)
    r0 = None
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        rp = ch.rho(point + e) if ch.in_domain(point + e) else math.inf
        rm = ch.rho(point - e) if ch.in_domain(point - e) else math.inf
        if math.isfinite(rp) and math.isfinite(rm):
            g[j] = (rp - rm) / (2 * h)
            continue
        if r0 is None:
            r0 = float(ch.rho(point))
        if math.isfinite(rp):
            g[j] = (rp - r0) / h
        elif math.isfinite(rm):
            g[j] = (r0 - rm) / h
        else:
            raise ChartDefect("radius not finite on either side of the "
                              f"difference stencil at {point}")
    return g


def _fd_pi_jac(ch, point, h: float = 1e-6) -> np.ndarray:
    point = np.asarray(point, float)
    d = point.size
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (ch.pi_u(point + e) - ch.pi_u(point - e)) / (2 * h)
    return J


def _leaf_basis(ch, point, Tw: np.ndarray) -> np.ndarray:
    """Orthonormal basis (in Tw coordinates) of the leaf tangent
    ker d pi_u restricted to T W^u(target)."""
    Jt = _pi_jac(ch, point) @ Tw
    u, s, vh = np.linalg.svd(Jt)
    rank = int(np.sum(s > 1e-7 * max(1.0, s[0] if s.size else 0.0)))
    return vh[rank:].T


def y_field(asm: BoundaryFlowAssembly, i: int, point) -> np.ndarray:
    """Leafwise gradient descent of rho_i, scaled so that the derivative
    of rho_i along the output is -rho_i."""
    point = np.asarray(point, float)
    ch = asm.chart_at(i, point)
    if ch is None:
        raise ThetaDomainError(f"point {point} is not in any class-{i} chart")
    r = float(ch.rho(point))
    if r < 1e-14:
        return np.zeros(point.size)
    Tw = asm.wu_tangent(point)
    L = _leaf_basis(ch, point, Tw)
    g = L.T @ (Tw.T @ _rho_grad(ch, point))
    n2 = float(g @ g)
    if n2 < 1e-20:
        raise ChartDefect(
            f"degenerate leafwise gradient of rho_{i} at {point}")
    return Tw @ (L @ (-r / n2 * g))


def chi_partition(asm: BoundaryFlowAssembly, point) -> np.ndarray:
    """Cutoff weights chi_i = psi_i prod_{j>i} (1 - psi_j)."""
    rhos = asm.rho_table(point)
    psi = np.array([smoothstep(r, asm.t_on, asm.t_off) for r in rhos])
    chi = psi.copy()
    tail = 1.0
    for i in range(asm.k - 1, -1, -1):
        chi[i] = psi[i] * tail
        tail *= 1.0 - psi[i]
    return chi


def boundary_field(asm: BoundaryFlowAssembly, point) -> np.ndarray:
    point = np.asarray(point, float)
    chi = chi_partition(asm, point)
    out = np.zeros(point.size)
    for i, c in enumerate(chi):
        if c > 0.0:
            out += c * y_field(asm, i, point)
    return out


def _reproject_leaf(asm, state, base_chart, base_value) -> np.ndarray:
    """Gauss-Newton restore of pi_u(state) = base_value within
    T W^u(target); a no-op for charts with constant pi_u."""
    for _ in range(3):
        res = base_value - base_chart.pi_u(state)
        if np.max(np.abs(res)) < 1e-12:
            break
        Tw = asm.wu_tangent(state)
        Jt = _pi_jac(base_chart, state) @ Tw
        step, *_ = np.linalg.lstsq(Jt, res, rcond=1e-8)
        state = state + Tw @ step
        if asm.sys.level is not None:
            state = asm.sys.project_to_level(state)
    return state


def _active_leaf(asm, state):
    """Chart whose leaf currently confines the orbit: highest index with
    rho_i <= t_on (there the field is purely leafwise)."""
    for i in range(asm.k - 1, -1, -1):
        ch = asm.chart_at(i, state)
        if ch is not None and ch.rho(state) <= asm.t_on:
            return ch
    return None


def theta_flow(asm: BoundaryFlowAssembly, p, t: float, h: float = 0.01,
               with_path: bool = False):
    """Flow of the boundary field by classical RK4 with leaf re-projection
    after every step.

    Negative t integrates backward while the orbit stays charted."""
    state = np.asarray(p, float).copy()
    sign = 1.0 if t >= 0 else -1.0
    remaining = abs(float(t))
    path_t, path_x = [0.0], [state.copy()]

    def f(x):
        v = boundary_field(asm, x)
        return sign * v

    while remaining > 1e-12:
        step = min(h, remaining)
        ch = _active_leaf(asm, state)
        base = ch.pi_u(state) if ch is not None else None
        k1 = f(state)
        k2 = f(state + 0.5 * step * k1)
        k3 = f(state + 0.5 * step * k2)
        k4 = f(state + step * k3)
        state = state + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise ThetaDomainError("theta step produced a non-finite state")
        if asm.sys.level is not None:
            state = asm.sys.project_to_level(state)
        if ch is not None and ch.in_domain(state):
            state = _reproject_leaf(asm, state, ch, base)
        if sign < 0 and not np.any(np.isfinite(asm.rho_table(state))):
            raise ThetaDomainError(
                "backward theta orbit left the charted region")
        remaining -= step
        if with_path:
            path_t.append(sign * (abs(t) - remaining))
            path_x.append(state.copy())
    if with_path:
        return np.array(path_t), np.array(path_x)
    return state


@dataclass
class OmegaResult:
    point: np.ndarray
    class_index: int
    chart: object
    time: float
    rho: float


def omega_theta(asm: BoundaryFlowAssembly, p, tol: float = 1e-3,
                t_guard: float = 200.0, h: float = 0.01) -> OmegaResult:
    """Forward limit of theta: the base of the leaf the orbit settles in,
    a point of a lower-index unstable manifold.

    The default tol reflects what float evaluation of rho can resolve
    near its zero set; the returned base is far more accurate than rho
    itself because pi_u is constant along each theta orbit."""
    state = np.asarray(p, float).copy()
    chunk = 0.5
    t = 0.0
    prev_base, prev_chart = None, None
    while t < t_guard:
        state = theta_flow(asm, state, chunk, h=h)
        t += chunk
        rhos = asm.rho_table(state)
        i = int(np.argmin(rhos))
        if not math.isfinite(rhos[i]):
            raise OmegaFailure(f"orbit left all charts at t={t}")
        ch = asm.chart_at(i, state)
        base = ch.pi_u(state)
        if prev_base is not None and prev_chart is ch:
            drift = np.max(np.abs(base - prev_base)) / chunk
            if rhos[i] < tol and drift < tol / 10.0:
                return OmegaResult(point=base, class_index=i, chart=ch,
                                   time=t, rho=float(rhos[i]))
        prev_base, prev_chart = base, ch
    raise OmegaFailure(
        f"no convergence before t={t_guard}: rho={asm.rho_table(state)}, "
        f"state={state}")
