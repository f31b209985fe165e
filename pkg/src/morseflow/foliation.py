"""Stable foliations around hyperbolic rest points.

A chart holds the leaf projection pi^u onto the unstable manifold, the
radial function rho (zero exactly on W^u, scaling as e^{-t} along the
flow, coercive at the domain boundary) and the tau^s-based sphere
parameter.  The product structure [p, q] realizes points of an invariant
neighborhood as intersections of one unstable-like and one stable-like
leaf; the time functions tau^u / tau^s are extended reals, infinite at
the rest point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .flow import flow_map, hit_time
from .graphtransform import LipGraph, graph_transform, unstable_manifold_local
from .xreal import NEG_INF, POS_INF, XReal, finite

__all__ = [
    "FoliationDomainError", "StableFoliationChart", "ProductStructure",
    "LeafFamily", "default_bump", "leaf_intersection", "inverse_product",
    "tau_u", "tau_s", "rho", "sphere_leaf", "invariant_neighborhood",
    "extend_foliation_over_unstable", "cubic_foliation",
]


class FoliationDomainError(Exception):
    """Point outside the domain of a chart / product structure."""


def default_bump(s: float) -> float:
    """((1-s)+)^3 / s: diverges at 0+, vanishes for s >= 1, C^2 at 1."""
    if s <= 0.0:
        return math.inf
    if s >= 1.0:
        return 0.0
    return (1.0 - s) ** 3 / s


@dataclass(frozen=True)
class StableFoliationChart:
    """Foliation data of one rest point y.

    pi_u maps a domain point to the base of its stable leaf on W^u(y);
    rho is the coercive radial function (Prop.-style: zero exactly on
    W^u, e^{-t}-scaling along the flow); sphere_a is the leaf parameter
    (constant on each sphere leaf, additive along the flow); leaf_dim is
    the stable-leaf dimension n - index(y).

    rho_grad and pi_u_jac, when present, are hand-derived ambient
    derivatives; consumers fall back to finite differences without them,
    which loses accuracy close to W^u(y) where rho has a |.|-type kink.
    """
    cp: object
    pi_u: Callable
    rho: Callable
    sphere_a: Callable
    leaf_dim: int
    in_domain: Callable
    provenance: str  # analytic | constructed
    rho_grad: Callable | None = None
    pi_u_jac: Callable | None = None


@dataclass
class ProductStructure:
    """Leaf-graph families over an adapted chart.

    sigma_u(q, u): stable coordinates of the unstable-like leaf based at
    q in D^s(r), evaluated over u in D^u(r); sigma_s(p, s) symmetric.
    Both are 1/2-Lipschitz in their evaluation argument and pass through
    their base: sigma_u(q, 0) = q.
    """
    frame: object
    radius: float
    sigma_u: Callable
    sigma_s: Callable
    lip_u: float = 0.5
    lip_s: float = 0.5

    @property
    def k(self) -> int:
        return self.frame.k


def leaf_intersection(ps: ProductStructure, p, q, tol: float = 1e-10,
                      max_iter: int = 200, with_history: bool = False):
    """[p, q]: the unique intersection of the unstable leaf based at q
    with the stable leaf based at p, in adapted (xi, eta) coordinates.

    Fixed-point iteration of the composed contraction (factor
    lip_u * lip_s <= 1/4)."""
    p = np.atleast_1d(np.asarray(p, float))
    q = np.atleast_1d(np.asarray(q, float))
    u = p.copy()
    history = []
    for _ in range(max_iter):
        s = np.atleast_1d(ps.sigma_u(q, u))
        u_new = np.atleast_1d(ps.sigma_s(p, s))
        step = float(np.linalg.norm(u_new - u))
        history.append(step)
        u = u_new
        if step < tol:
            break
    else:
        raise FoliationDomainError("leaf intersection did not converge")
    s = np.atleast_1d(ps.sigma_u(q, u))
    point = np.concatenate([u, s])
    if with_history:
        return point, history
    return point


def inverse_product(ps: ProductStructure, xi, eta, tol: float = 1e-10,
                    max_iter: int = 200):
    """Leaf bases (p, q) with [p, q] = (xi, eta), by alternating
    projections along the stored graphs."""
    xi = np.atleast_1d(np.asarray(xi, float))
    eta = np.atleast_1d(np.asarray(eta, float))
    p, q = xi.copy(), eta.copy()
    for _ in range(max_iter):
        q_new = q + (eta - np.atleast_1d(ps.sigma_u(q, xi)))
        p_new = p + (xi - np.atleast_1d(ps.sigma_s(p, eta)))
        move = max(np.max(np.abs(q_new - q)), np.max(np.abs(p_new - p)))
        p, q = p_new, q_new
        if move < tol:
            return p, q
    raise FoliationDomainError("inverse product structure did not converge")


def tau_u(sys, frame, p, r: float, t_max: float = 200.0) -> XReal:
    """Crossing time of the unstable disk boundary: 0 on the boundary,
    -inf at the rest point, additive along the flow."""
    xi, _ = frame.to_adapted(p)
    n = float(np.linalg.norm(xi))
    if n < 1e-12:
        return NEG_INF
    if abs(n - r) < 1e-10:
        return finite(0.0)

    def event(x):
        return float(np.linalg.norm(frame.to_adapted(x)[0]) ** 2 - r * r)

    if n < r:
        t, _ = hit_time(sys, p, event, direction=+1, t_max=t_max)
    else:
        t, _ = hit_time(sys, p, event, direction=-1, t_max=-t_max)
    return finite(-t)


def tau_s(sys, frame, q, r: float, t_max: float = 200.0) -> XReal:
    """Stable-side mirror of tau_u: 0 on the stable disk boundary, +inf
    at the rest point."""
    _, eta = frame.to_adapted(q)
    n = float(np.linalg.norm(eta))
    if n < 1e-12:
        return POS_INF
    if abs(n - r) < 1e-10:
        return finite(0.0)

    def event(x):
        return float(np.linalg.norm(frame.to_adapted(x)[1]) ** 2 - r * r)

    if n < r:
        t, _ = hit_time(sys, q, event, direction=+1, t_max=-t_max)
    else:
        t, _ = hit_time(sys, q, event, direction=-1, t_max=t_max)
    return finite(-t)


def rho(holder, point, bump: Callable = default_bump, r: float | None = None):
    """Coercive radial function exp(-tau^s(q) + bump(tau^s(q) - tau^u(p))).

    With a StableFoliationChart the stored (analytic) rho is evaluated
    directly; with a ProductStructure the point is resolved as [p, q]
    first and the time functions are computed from the flow."""
    if isinstance(holder, StableFoliationChart):
        return holder.rho(point)
    ps = holder
    frame = ps.frame
    r = ps.radius if r is None else r
    xi, eta = frame.to_adapted(point)
    p, q = inverse_product(ps, xi, eta)
    ts = tau_s(frame.sys, frame, frame.from_adapted(np.zeros(ps.k), q), r)
    if ts == POS_INF:
        return 0.0
    tu = tau_u(frame.sys, frame, frame.from_adapted(p, np.zeros(len(q))), r)
    ts_val = ts.finite_value()
    if tu == NEG_INF:
        return math.exp(-ts_val)
    margin = ts_val - tu.finite_value()
    if margin <= 0.0:
        raise FoliationDomainError(
            "point outside the invariant neighborhood (tau^s <= tau^u)")
    return math.exp(-ts_val + bump(margin))


def _stable_directions(m: int, n_samples: int, seed: int = 0) -> np.ndarray:
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        ang = 2 * np.pi * np.arange(n_samples) / n_samples
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_samples, m))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sphere_leaf(ps: ProductStructure, p, a: float, n_samples: int = 16
                ) -> np.ndarray:
    """Sampled sphere leaf S(p, a) = {[p, q] : tau^s(q) = a}, as ambient
    points.

    q samples are taken on the stable disk boundary (tau^s = 0 there)
    and flowed for time a."""
    frame = ps.frame
    k, d = frame.k, frame.d
    p = np.atleast_1d(np.asarray(p, float))
    p_amb = frame.from_adapted(p, np.zeros(d - k))
    tu = tau_u(frame.sys, frame, p_amb, ps.radius)
    if not tu < finite(a):
        raise FoliationDomainError(
            f"(p, a) outside the leaf domain: tau^u(p) = {tu} >= a = {a}")
    out = []
    for direction in _stable_directions(d - k, n_samples):
        q0 = frame.from_adapted(np.zeros(k), ps.radius * direction)
        q_amb = flow_map(frame.sys, q0, a)
        _, eta_q = frame.to_adapted(q_amb)
        z = leaf_intersection(ps, p, eta_q)
        out.append(frame.from_adapted(z[:k], z[k:]))
    return np.array(out)


def invariant_neighborhood(ps: ProductStructure, r_param: float) -> Callable:
    """Membership predicate of V(r) = {[p, q] : tau^u(p) < tau^s(q) + log r}.

    Nested in r; r = 1 recovers the full neighborhood V."""
    if not 0.0 < r_param <= 1.0:
        raise ValueError("r_param must lie in (0, 1]")
    log_r = math.log(r_param)
    frame = ps.frame

    def member(point) -> bool:
        xi, eta = frame.to_adapted(point)
        p, q = inverse_product(ps, xi, eta)
        tu = tau_u(frame.sys, frame, frame.from_adapted(p, np.zeros(len(q))),
                   ps.radius)
        ts = tau_s(frame.sys, frame, frame.from_adapted(np.zeros(len(p)), q),
                   ps.radius)
        return tu < ts.shift(log_r)

    return member


@dataclass
class LeafFamily:
    """Unstable-like leaves over the stable disk, from boundary data.

    leaf_at(q_eta) continues the boundary leaf through the backward orbit
    of q by the graph transform; the center leaf is sigma_inf."""
    frame: object
    radius: float
    boundary: list
    sigma_inf: LipGraph

    def __call__(self, q_eta) -> LipGraph:
        frame = self.frame
        q_eta = np.atleast_1d(np.asarray(q_eta, float))
        n = float(np.linalg.norm(q_eta))
        if n < 1e-12:
            return self.sigma_inf
        sys = frame.sys
        q_amb = frame.from_adapted(np.zeros(frame.k), q_eta)
        t_back = tau_s(sys, frame, q_amb, self.radius).finite_value()
        if t_back < 0:
            raise FoliationDomainError("base point outside the stable disk")
        q0 = flow_map(sys, q_amb, -t_back)
        _, eta0 = frame.to_adapted(q0)
        gaps = [np.linalg.norm(eta0 - b) for b, _ in self.boundary]
        _, leaf = self.boundary[int(np.argmin(gaps))]
        if t_back == 0.0:
            return leaf
        return graph_transform(sys, frame, leaf, t_back)


def extend_foliation_over_unstable(sys, frame, boundary_leaves,
                                   r: float | None = None) -> LeafFamily:
    """Continue 1/2-Lipschitz boundary leaves (graphs over the doubled
    unstable disk, based on the stable disk boundary) over the whole
    stable disk: sigma_q = Gamma(tau(q), sigma at the backward exit point).
    """
    boundary = [(np.atleast_1d(np.asarray(b, float)), leaf)
                for b, leaf in boundary_leaves]
    if r is None:
        r = float(np.linalg.norm(boundary[0][0]))
    for b, _ in boundary:
        if abs(np.linalg.norm(b) - r) > 1e-8:
            raise ValueError("boundary leaf bases must lie on the disk edge")
    dom = boundary[0][1].radius
    sigma_inf = unstable_manifold_local(sys, frame, dom)
    return LeafFamily(frame=frame, radius=r, boundary=boundary,
                      sigma_inf=sigma_inf)


def cubic_foliation():
    """Plane foliation by the cubics y = (x - x0)^3 and its unit tangent
    field.

    The field is continuous but not Lipschitz across y = 0, so orbits of
    the tangent field through (0, 0) are not unique: y = 0 and y = x^3
    both solve it.  Returns (tangent FlowSystem, leaf_through) where
    leaf_through(x0) is the leaf parametrization."""
    from .flow import FlowSystem

    def field(x):
        slope = 3.0 * np.cbrt(x[1]) ** 2
        nrm = math.sqrt(1.0 + slope * slope)
        return np.array([1.0 / nrm, slope / nrm])

    def leaf_through(x0):
        return lambda x: (x - x0) ** 3

    # tolerances loosened: the field is only continuous across y = 0
    return FlowSystem(2, field, rtol=1e-4, atol=1e-6), leaf_through
