"""Graph transform on discretized Lipschitz graphs.

A graph sigma: D^u(r) -> E^s in adapted coordinates is stored on a tensor
grid with multilinear interpolation.  The transform carries graph(sigma)
with the time-t flow and re-reads it as a graph: each target node u is
matched by inverting the unstable projection of the flowed graph with
damped Newton (seeded from the backward flow), and the stable projection
at the solution becomes the new value.  Iterating the transform from
sigma = 0 converges to the local unstable manifold.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .equilibria import AdaptedFrame
from .flow import FlowSystem, StepFailure, flow_jacobian, flow_map
from . import expressions as ex

__all__ = [
    "CoverageFailure", "InversionFailure", "NoConvergence", "LipGraph",
    "IterationLog", "build_initial_graph", "graph_transform",
    "unstable_manifold_local", "stable_manifold_local", "reversed_system",
    "tangent_space_at", "semigroup_residual", "tangential_consistency",
    "serve_check",
]


class CoverageFailure(Exception):
    """A grid node has no preimage inside the graph domain: the radius is
    too large for this flow time."""


class InversionFailure(Exception):
    """Newton failed to invert the unstable projection at some node."""


class NoConvergence(Exception):
    """Fixed-point iteration did not settle within the iteration cap."""


@dataclass
class IterationLog:
    radius: float = 0.0
    c0_deltas: list = field(default_factory=list)
    c1_deltas: list = field(default_factory=list)
    value_history: list = field(default_factory=list)


@dataclass
class LipGraph:
    """Discretized graph over the unstable disk in adapted coordinates.

    values has shape (m,)*k + (d-k,); axes are the per-axis node vectors.
    """
    frame: AdaptedFrame
    radius: float
    axes: tuple
    values: np.ndarray
    log: IterationLog | None = None

    def __post_init__(self):
        if self.k and self.values.shape[:self.k] != tuple(len(a) for a in self.axes):
            raise ValueError("value grid does not match axes")
        self._interp = None
        self.ell = self.lipschitz()

    @property
    def k(self) -> int:
        return len(self.axes)

    @property
    def n_stable(self) -> int:
        return self.values.shape[-1]

    def _interpolator(self):
        if self._interp is None:
            self._interp = RegularGridInterpolator(
                self.axes, self.values, method="linear",
                bounds_error=False, fill_value=None)
        return self._interp

    def __call__(self, xi) -> np.ndarray:
        if self.k == 0:
            return self.values.copy()
        return self._interpolator()(np.atleast_2d(xi))[0]

    def derivative(self, xi) -> np.ndarray:
        """d sigma at xi, shape (d-k, k), central differences of the
        interpolant at half the grid spacing."""
        xi = np.atleast_1d(np.asarray(xi, float))
        out = np.empty((self.n_stable, self.k))
        for j in range(self.k):
            h = 0.5 * (self.axes[j][1] - self.axes[j][0])
            lo, hi = self.axes[j][0], self.axes[j][-1]
            a, b = xi.copy(), xi.copy()
            a[j] = max(lo, xi[j] - h)
            b[j] = min(hi, xi[j] + h)
            out[:, j] = (self(b) - self(a)) / (b[j] - a[j])
        return out

    def node_iter(self):
        for idx in np.ndindex(*(len(a) for a in self.axes)):
            yield idx, np.array([a[i] for a, i in zip(self.axes, idx)])

    def lipschitz(self) -> float:
        """Largest value difference over grid spacing between neighbors."""
        best = 0.0
        for j in range(self.k):
            h = self.axes[j][1] - self.axes[j][0]
            d = np.diff(self.values, axis=j)
            if d.size:
                best = max(best, float(np.max(np.linalg.norm(d, axis=-1))) / h)
        return best

    def max_value_norm(self) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(
            self.values.reshape(-1, self.n_stable), axis=1)))

    def copy_with(self, values: np.ndarray) -> "LipGraph":
        return LipGraph(self.frame, self.radius, self.axes, values, log=self.log)

    def to_rows(self):
        """(node coordinates..., value components...) rows for export."""
        rows = []
        for idx, u in self.node_iter():
            rows.append(list(u) + list(np.atleast_1d(self.values[idx])))
        return rows


def build_initial_graph(frame: AdaptedFrame, r: float, m: int = 65) -> LipGraph:
    """sigma identically 0 on the cube [-r, r]^k."""
    k, d = frame.k, frame.d
    axes = tuple(np.linspace(-r, r, m) for _ in range(k))
    values = np.zeros((m,) * k + (d - k,))
    return LipGraph(frame, r, axes, values)


def reversed_system(sys: FlowSystem) -> FlowSystem:
    """The same phase space with the field negated."""
    if sys.expressions is not None:
        neg = [ex.Unary("neg", e) for e in sys.expressions]
        return FlowSystem(sys.dimension, neg, level=sys.level, rtol=sys.rtol,
                          atol=sys.atol, max_step=sys.max_step,
                          t_guard=sys.t_guard)
    raw = sys._raw
    jac = sys._callable_jac
    return FlowSystem(sys.dimension, lambda x: -raw(x), level=sys.level,
                      jac=(None if jac is None else (lambda x: -np.asarray(jac(x)))),
                      rtol=sys.rtol, atol=sys.atol, max_step=sys.max_step,
                      t_guard=sys.t_guard)


def _graph_point(frame, sigma, w):
    return frame.from_adapted(w, sigma(w))


def _invert_node(sys, frame, sigma, t, u, warm, tol):
    """Solve xi(flow^t(graph point at w)) = u for w; returns (w, eta, dF).

    Chord Newton: the Jacobian is computed once (or reused from the last
    sweep via `warm`) and refreshed only when the iteration stalls.
    """
    k = frame.k
    Dfrom, Dto = frame.displacement_jacobians()

    def F(w):
        img = flow_map(sys, _graph_point(frame, sigma, w), t)
        xi, eta = frame.to_adapted(img)
        return xi - u, eta

    if warm is not None:
        w, dF = warm
        w = w.copy()
    else:
        back = flow_map(sys, _graph_point(frame, sigma, u), -t)
        w = frame.to_adapted(back)[0]
        w = np.clip(w, -sigma.radius, sigma.radius)
        dF = None

    def jac(w):
        x = _graph_point(frame, sigma, w)
        _, J = flow_jacobian(sys, x, t)
        # tangent map of w -> graph point: columns (I; d sigma)
        G = Dfrom[:, :k] + Dfrom[:, k:] @ sigma.derivative(w)
        return (Dto @ J @ G)[:k]

    res, eta = F(w)
    best = np.linalg.norm(res)
    for _ in range(40):
        if best < tol:
            if np.any(np.abs(w) > sigma.radius * (1 + 1e-9) + 1e-12):
                raise CoverageFailure(
                    f"preimage {w} escapes the domain of radius {sigma.radius}")
            return w, eta, dF
        if dF is None:
            dF = jac(w)
        try:
            step = np.linalg.solve(dF, -res)
        except np.linalg.LinAlgError:
            raise InversionFailure("singular Jacobian in node inversion")
        for lam in (1.0, 0.5, 0.25, 0.125, 0.0625):
            w_try = w + lam * step
            res_try, eta_try = F(w_try)
            n_try = np.linalg.norm(res_try)
            if n_try < best * (1.0 - 0.25 * lam):
                w, res, eta, best = w_try, res_try, eta_try, n_try
                break
        else:
            if dF is not None and warm is not None:
                # stale chord matrix: refresh once and keep going
                dF, warm = jac(w), None
                continue
            dF_new = jac(w)
            if np.allclose(dF_new, dF):
                raise InversionFailure(
                    f"Newton stalled at node {u}, residual {best:.3e}")
            dF = dF_new
    raise InversionFailure(f"no convergence at node {u}, residual {best:.3e}")


def graph_transform(sys, frame: AdaptedFrame, sigma: LipGraph, t: float,
                    cache: dict | None = None, tol: float = 1e-11) -> LipGraph:
    """One application of the time-t graph transform.

    cache maps node index -> (w, dF) from a previous sweep; it is updated
    in place so fixed-point iterations amortize the Jacobian work.
    """
    if t < 0:
        raise ValueError("graph transform requires t >= 0")
    if t == 0:
        return sigma.copy_with(sigma.values.copy())
    if sigma.k == 0 or sigma.n_stable == 0:
        return sigma.copy_with(sigma.values.copy())
    new_values = np.empty_like(sigma.values)
    for idx, u in sigma.node_iter():
        warm = None if cache is None else cache.get(idx)
        try:
            w, eta, dF = _invert_node(sys, frame, sigma, t, u, warm, tol)
        except (CoverageFailure, InversionFailure):
            if warm is None:
                raise
            w, eta, dF = _invert_node(sys, frame, sigma, t, u, None, tol)
        new_values[idx] = eta
        if cache is not None:
            cache[idx] = (w, dF)
    return sigma.copy_with(new_values)


def _c1_distance(a: LipGraph, b: LipGraph) -> float:
    """Max derivative discrepancy over interior nodes."""
    if a.n_stable == 0 or a.k == 0:
        return 0.0
    worst = 0.0
    for idx, u in a.node_iter():
        if any(i == 0 or i == len(ax) - 1 for i, ax in zip(idx, a.axes)):
            continue
        worst = max(worst, float(np.max(np.abs(a.derivative(u) - b.derivative(u)))))
    return worst


def unstable_manifold_local(sys, frame: AdaptedFrame, r: float,
                            step_t: float | None = None, tol_c0: float = 1e-8,
                            tol_c1: float = 1e-6, m: int = 65,
                            max_iter: int = 200, max_halvings: int = 8) -> LipGraph:
    """Fixed point of the graph transform: the local unstable manifold.

    Iterates from sigma = 0 until both the sup-norm change and the
    finite-difference derivative change drop below the tolerances.  On
    CoverageFailure / InversionFailure / NoConvergence the radius is
    halved and the iteration restarted; the working radius is recorded on
    the returned graph's log.
    """
    if step_t is None:
        step_t = 0.5 / frame.norm.lam
    err: Exception | None = None
    for _ in range(max_halvings + 1):
        try:
            return _iterate_to_fixed_point(sys, frame, r, step_t, tol_c0,
                                           tol_c1, m, max_iter)
        except (CoverageFailure, InversionFailure, NoConvergence, StepFailure) as e:
            err = e
            r *= 0.5
    raise err if err is not None else NoConvergence("radius search exhausted")


def _iterate_to_fixed_point(sys, frame, r, step_t, tol_c0, tol_c1, m, max_iter):
    sigma = build_initial_graph(frame, r, m)
    log = IterationLog(radius=r)
    sigma.log = log
    if sigma.k == 0 or sigma.n_stable == 0:
        # index 0: the graph is the single point; full index: whole disk
        return sigma
    cache: dict = {}
    prev = sigma
    for _ in range(max_iter):
        nxt = graph_transform(sys, frame, prev, step_t, cache=cache)
        nxt.log = log
        c0 = float(np.max(np.abs(nxt.values - prev.values)))
        c1 = _c1_distance(nxt, prev)
        log.c0_deltas.append(c0)
        log.c1_deltas.append(c1)
        log.value_history.append(nxt.values.copy())
        if nxt.max_value_norm() > r * np.sqrt(max(1, nxt.n_stable)) * 1.5:
            raise NoConvergence("values escaped the stable disk")
        prev = nxt
        if c0 < tol_c0 and c1 < tol_c1:
            return prev
    raise NoConvergence(f"no C0/C1 settling after {max_iter} sweeps at r={r}")


def stable_manifold_local(sys, frame: AdaptedFrame, r: float, **kw) -> LipGraph:
    """Local stable manifold: the unstable manifold of the reversed flow.

    The returned graph lives over the reversed frame (whose unstable block
    is this system's stable block)."""
    rev = reversed_system(sys)
    frame_rev = AdaptedFrame.at(rev, frame.cp.point)
    return unstable_manifold_local(rev, frame_rev, r, **kw)


def tangent_space_at(sigma: LipGraph, xi):
    """Tangent space of graph(sigma) at the graph point over xi, as an
    ambient-coordinates Subspace."""
    from .transversality import Subspace
    xi = np.atleast_1d(np.asarray(xi, float))
    if sigma.k == 0:
        raise ValueError("point graph has no tangent directions")
    for j, ax in enumerate(sigma.axes):
        # the half-spacing central stencil must fit inside the grid
        h = 0.5 * (ax[1] - ax[0])
        if xi[j] < ax[0] + h * (1 - 1e-9) or xi[j] > ax[-1] - h * (1 - 1e-9):
            raise ValueError("query point too close to the graph boundary "
                             "for the difference stencil")
    D = sigma.derivative(xi)
    Dfrom, _ = sigma.frame.displacement_jacobians()
    cols = Dfrom[:, :sigma.k] + Dfrom[:, sigma.k:] @ D
    q, _ = np.linalg.qr(cols)
    return Subspace(q)


def semigroup_residual(sys, frame: AdaptedFrame, sigma: LipGraph,
                       s: float, t: float) -> float:
    """sup-norm of Gamma(s+t, sigma) - Gamma(s, Gamma(t, sigma))."""
    lhs = graph_transform(sys, frame, sigma, s + t)
    rhs = graph_transform(sys, frame, graph_transform(sys, frame, sigma, t), s)
    if lhs.values.size == 0:
        return 0.0
    return float(np.max(np.abs(lhs.values - rhs.values)))


def tangential_consistency(sys, frame: AdaptedFrame, sigma: LipGraph,
                           t: float) -> float:
    """Max angle between the evolved graph tangents and the grid-derivative
    tangents of the transformed graph, over interior nodes.

    The tangent functor commutes with the transform, so both computations
    target the same plane; the return value is the observed discrepancy.
    """
    from .transversality import Subspace, principal_angles
    out = graph_transform(sys, frame, sigma, t)
    cache: dict = {}
    worst = 0.0
    Dfrom, Dto = frame.displacement_jacobians()
    k = frame.k
    for idx, u in out.node_iter():
        if any(i == 0 or i == len(ax) - 1 for i, ax in zip(idx, out.axes)):
            continue
        w, _, _ = _invert_node(sys, frame, sigma, t, u, cache.get(idx), 1e-11)
        x = _graph_point(frame, sigma, w)
        _, J = flow_jacobian(sys, x, t)
        cols = J @ (Dfrom[:, :k] + Dfrom[:, k:] @ sigma.derivative(w))
        evolved = Subspace(np.linalg.qr(cols)[0])
        direct = tangent_space_at(out, u)
        ang = principal_angles(evolved, direct)
        worst = max(worst, float(ang[-1]) if ang.size else 0.0)
    return worst


def _clip_interior(sigma: LipGraph, xi):
    xi = np.atleast_1d(np.asarray(xi, float)).copy()
    for j, ax in enumerate(sigma.axes):
        h = ax[1] - ax[0]
        xi[j] = min(max(xi[j], ax[0] + h), ax[-1] - h)
    return xi


def serve_check(sys, frame_x: AdaptedFrame, frame_y: AdaptedFrame,
                sequence, sigma_x: LipGraph | None = None,
                seed_radius: float = 1e-4, t_guard: float = 200.0):
    """Convergence of unstable tangent spaces along a sequence approaching
    a lower-index unstable manifold.

    For each p_h, T_{p_h} W^u(x) is the graph tangent carried from the
    first backward-orbit point inside the local chart of x (or within
    seed_radius when no graph is supplied); returns for each h the largest
    of the first ind(y) principal angles against T_p W^u(y), where p is
    the limit of the sequence resolved on W^u(y).
    """
    from .transversality import Subspace, principal_angles, _approach
    sequence = [np.asarray(p, float) for p in sequence]
    p_lim = sequence[-1]
    # tangent of W^u(y) at the limit point
    if frame_y.k == 0 or np.linalg.norm(p_lim - frame_y.cp.point) < 1e-9:
        Ty = Subspace(frame_y.cp.unstable)
    else:
        xi_lim, _ = frame_y.to_adapted(p_lim)
        sigma_y = unstable_manifold_local(
            sys, frame_y, max(2.0 * float(np.max(np.abs(xi_lim))), 1e-3))
        Ty = tangent_space_at(sigma_y, _clip_interior(sigma_y, xi_lim))
    angles = []
    radius = sigma_x.radius if sigma_x is not None else seed_radius
    for p in sequence:
        back = _approach(sys, p, frame_x.cp.point,
                         radius, t_guard, backward=True)
        if back is None:
            raise InversionFailure(f"sequence point {p} does not resolve to "
                                   f"an orbit from {frame_x.cp.point}")
        near, elapsed = back
        if sigma_x is not None:
            xi0, _ = frame_x.to_adapted(near)
            V = tangent_space_at(sigma_x, _clip_interior(sigma_x, xi0)).basis
        else:
            V = frame_x.cp.unstable
        _, J = flow_jacobian(sys, near, elapsed)
        Vh = Subspace(np.linalg.qr(J @ V)[0])
        ang = principal_angles(Vh, Ty)
        m = min(frame_y.k, ang.size)
        angles.append(float(ang[m - 1]) if m else 0.0)
    return np.array(angles)
