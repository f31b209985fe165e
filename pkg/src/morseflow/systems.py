"""Ready-made example systems used by the reports, demos, and tests.

Each builder returns a ReferenceSystem: the FlowSystem itself, the known
critical points with their unstable dimensions, a closed-form flow where
one exists, and (for square4 and the sphere height flow) hand-derived
stable-foliation charts around the sinks and saddles.  Tests check the
numerics against these independent formulas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flow import FlowSystem

__all__ = [
    "ReferenceSystem", "linear_saddle", "quad_saddle", "square4",
    "sphere_height", "SQUARE4_POTENTIAL", "SQUARE4_CRITICAL",
    "square4_exact", "quad_saddle_exact", "QUAD_SADDLE_SIGMA",
]


@dataclass
class ReferenceSystem:
    """A named flow bundled with its independently known data.

    `critical` lists (point, unstable dimension) pairs; `exact` is the
    closed-form flow map when available; `charts` maps critical point
    tuples to analytic StableFoliationChart instances, built on first
    access (chart construction classifies the rest points, which needs
    the linearization machinery, so it stays lazy).
    """
    name: str
    flow: FlowSystem
    critical: tuple = ()
    exact: Callable | None = None
    chart_builder: Callable | None = field(default=None, repr=False)
    _charts: dict | None = field(default=None, init=False, repr=False)

    @property
    def charts(self) -> dict:
        if self._charts is None:
            if self.chart_builder is None:
                self._charts = {}
            else:
                self._charts = dict(self.chart_builder(self.flow))
        return self._charts


def linear_saddle(rates=(1.0, -1.0)) -> ReferenceSystem:
    """Diagonal linear field x_i' = rates[i] * x_i."""
    rates = tuple(float(r) for r in rates)
    fld = [f"{r!r}*x{i + 1}" for i, r in enumerate(rates)]
    k = sum(1 for r in rates if r > 0)

    def exact(x0, t):
        return np.asarray(x0, float) * np.exp(np.array(rates) * t)

    return ReferenceSystem(
        name="linear_saddle", flow=FlowSystem(len(rates), fld),
        critical=((tuple(0.0 for _ in rates), k),), exact=exact)


def quad_saddle() -> ReferenceSystem:
    """Planar saddle with a curved unstable manifold.

    x' = x, y' = -y + x^2; the unstable manifold through the origin is the
    graph y = x^2/3 and the stable manifold is the y-axis.
    """
    return ReferenceSystem(
        name="quad_saddle", flow=FlowSystem(2, ["x", "-y + x^2"]),
        critical=(((0.0, 0.0), 1),),
        exact=lambda x0, t: quad_saddle_exact(x0[0], x0[1], t))


def quad_saddle_exact(x0, y0, t):
    """Closed-form flow of quad_saddle."""
    x = x0 * math.exp(t)
    y = y0 * math.exp(-t) + x0 ** 2 * (math.exp(2 * t) - math.exp(-t)) / 3
    return np.array([x, y])


QUAD_SADDLE_SIGMA = "x^2/3"


SQUARE4_POTENTIAL = "-x^2 - y^2 + (x^4 + y^4)/2"

# (point, unstable dimension) for the negative gradient flow of the quartic
SQUARE4_CRITICAL = (
    [((sx, sy), 0) for sx in (-1.0, 1.0) for sy in (-1.0, 1.0)]
    + [((sx, 0.0), 1) for sx in (-1.0, 1.0)]
    + [((0.0, sy), 1) for sy in (-1.0, 1.0)]
    + [((0.0, 0.0), 2)]
)


def square4() -> ReferenceSystem:
    """Negative gradient flow of -x^2 - y^2 + (x^4+y^4)/2 on the plane.

    Nine critical points: four sinks (+-1, +-1), four saddles on the axes,
    one source at the origin.  The field decouples per coordinate.
    """
    return ReferenceSystem(
        name="square4", flow=FlowSystem(2, ["2*x*(1 - x^2)", "2*y*(1 - y^2)"]),
        critical=tuple(SQUARE4_CRITICAL),
        exact=lambda x0, t: square4_exact(x0, t),
        chart_builder=_square4_charts)


def square4_exact(x0, t):
    """Componentwise closed form: with u = x^2,
    u(t) = u0 e^{4t} / (1 - u0 + u0 e^{4t})."""
    x0 = np.asarray(x0, float)
    u0 = x0 ** 2
    e = np.exp(4 * t)
    u = u0 * e / (1 - u0 + u0 * e)
    return np.sign(x0) * np.sqrt(u)


def sphere_height() -> ReferenceSystem:
    """Downward height flow on the unit 2-sphere (surface mode).

    The raw field (0,0,-1) is projected onto the tangent planes; the height
    obeys z' = z^2 - 1, so z(t) = -tanh(t - atanh(z0)).  North pole is a
    source on the surface, south pole a sink.
    """
    def exact(x0, t):
        x0 = np.asarray(x0, float)
        z = -math.tanh(t - math.atanh(np.clip(x0[2], -1 + 1e-15, 1 - 1e-15)))
        r_old = math.hypot(x0[0], x0[1])
        r_new = math.sqrt(max(0.0, 1.0 - z * z))
        if r_old < 1e-300:
            return np.array([0.0, 0.0, math.copysign(1.0, x0[2])])
        return np.array([x0[0] * r_new / r_old, x0[1] * r_new / r_old, z])

    return ReferenceSystem(
        name="sphere_height",
        flow=FlowSystem(3, ["0", "0", "-1"], level="x^2 + y^2 + z^2 - 1"),
        critical=(((0.0, 0.0, 1.0), 2), ((0.0, 0.0, -1.0), 0)),
        exact=exact, chart_builder=_sphere_charts)


# ---------------------------------------------------------------------------
# analytic stable-foliation charts
#
# square4 decouples per coordinate, and with u = x^2 the quantity
# g(x) = |1 - x^2| / x^2 evolves exactly as g e^{-4t} on either side of the
# sink coordinate, so T(x) = -log(g)/4 is an additive time coordinate on
# each branch.  Every chart below is built from g and T alone.

_PINCH = 0.25  # saddle-chart wall; on the diagonal T(x)-T(y_b) = log(2)/4


def _g(x: float) -> float:
    x = float(x)
    return abs(1.0 - x * x) / (x * x)


def _T(x: float) -> float:
    x = float(x)
    if x * x == 1.0:
        return math.inf
    return 0.25 * math.log((x * x) / abs(1.0 - x * x))


def _bump(s: float) -> float:
    if s <= 0.0:
        return math.inf
    if s >= 1.0:
        return 0.0
    return (1.0 - s) ** 3 / s


def _dg(u: float) -> float:
    """d/du of g(|u|); odd-safe since g is even."""
    u = float(u)
    return 2.0 * math.copysign(1.0, u * u - 1.0) / u ** 3


def _dT(u: float) -> float:
    u = float(u)
    return -math.copysign(1.0, u * u - 1.0) / (2.0 * u * abs(1.0 - u * u))


def _dbump(s: float) -> float:
    if s >= 1.0:
        return 0.0
    return -(1.0 - s) ** 2 * (1.0 + 2.0 * s) / (s * s)


def _square4_sink_chart(sys, sx: float, sy: float):
    from .equilibria import classify
    from .foliation import StableFoliationChart

    cp = classify(sys, np.array([sx, sy]))

    def in_domain(pt):
        return pt[0] * sx > 0 and pt[1] * sy > 0

    def pi_u(pt):
        return np.array([sx, sy])

    def rho_fn(pt):
        return (_g(pt[0]) + _g(pt[1])) ** 0.25

    def sphere_a(pt):
        return -0.25 * math.log(_g(pt[0]) + _g(pt[1]))

    def rho_grad(pt):
        G = _g(pt[0]) + _g(pt[1])
        if G == 0.0:
            return np.zeros(2)
        c = 0.25 * G ** -0.75
        return np.array([c * _dg(pt[0]), c * _dg(pt[1])])

    return StableFoliationChart(cp=cp, pi_u=pi_u, rho=rho_fn,
                                sphere_a=sphere_a, leaf_dim=2,
                                in_domain=in_domain, provenance="analytic",
                                rho_grad=rho_grad,
                                pi_u_jac=lambda pt: np.zeros((2, 2)))


def _square4_saddle_chart(sys, s: float, axis: int):
    """Chart at the saddle on the given axis (axis 0: (s, 0), unstable
    along y; axis 1: (0, s), unstable along x).

    The stable leaf through a point is the arc of the adjacent sink's
    rho-sphere, so the leaf base on the unstable axis satisfies
    g(base) = g(x) + g(y).  The pinch margin T(stable) - T(base) equals
    log(2)/4 on the diagonals and the bump wall sits at 0.25, which keeps
    the four saddle domains disjoint.
    """
    from .equilibria import classify
    from .foliation import StableFoliationChart

    j, i = (1, 0) if axis == 0 else (0, 1)  # j: unstable coord, i: stable
    point = np.zeros(2)
    point[i] = s
    cp = classify(sys, point)

    def base(pt):
        if pt[j] == 0.0:
            return 0.0
        return math.copysign(1.0 / math.sqrt(1.0 + _g(pt[i]) + _g(pt[j])),
                             pt[j])

    def margin(pt):
        b = base(pt)
        if b == 0.0:
            return math.inf
        return _T(pt[i]) - _T(abs(b))

    def in_domain(pt):
        # outer clamp keeps the chart a bounded collar: past it the
        # field is backward-incomplete and rho stops being proper
        return (0.0 < pt[i] * s < 2.0 and abs(pt[j]) < 1
                and margin(pt) > _PINCH)

    def pi_u(pt):
        out = np.zeros(2)
        out[i] = s
        out[j] = base(pt)
        return out

    def rho_fn(pt):
        ex = -_T(pt[i]) + _bump(margin(pt) - _PINCH)
        if ex == -math.inf:
            return 0.0
        if ex > 700.0:
            return math.inf
        return math.exp(ex)

    def sphere_a(pt):
        return _T(pt[i])

    def rho_grad(pt):
        T = _T(pt[i])
        if not math.isfinite(T):
            return np.zeros(2)
        G = _g(pt[i]) + (math.inf if pt[j] == 0.0 else _g(pt[j]))
        r = rho_fn(pt)
        out = np.zeros(2)
        if pt[j] == 0.0:
            out[i] = -r * _dT(pt[i])
            return out
        sw = T + 0.25 * math.log(G) - _PINCH
        if sw <= 0.0:
            return np.full(2, math.inf)
        db = _dbump(sw)
        out[i] = r * (-_dT(pt[i]) + db * (_dT(pt[i]) + 0.25 * _dg(pt[i]) / G))
        out[j] = r * db * 0.25 * _dg(pt[j]) / G
        return out

    def pi_u_jac(pt):
        out = np.zeros((2, 2))
        if pt[j] == 0.0:
            out[j, j] = 1.0
            return out
        G = _g(pt[i]) + _g(pt[j])
        c = -0.5 * math.copysign((1.0 + G) ** -1.5, pt[j])
        out[j, i] = c * _dg(pt[i])
        out[j, j] = c * _dg(pt[j])
        return out

    return StableFoliationChart(cp=cp, pi_u=pi_u, rho=rho_fn,
                                sphere_a=sphere_a, leaf_dim=1,
                                in_domain=in_domain, provenance="analytic",
                                rho_grad=rho_grad, pi_u_jac=pi_u_jac)


def _square4_charts(sys):
    charts = {}
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            charts[(sx, sy)] = _square4_sink_chart(sys, sx, sy)
    for s in (-1.0, 1.0):
        charts[(s, 0.0)] = _square4_saddle_chart(sys, s, axis=0)
        charts[(0.0, s)] = _square4_saddle_chart(sys, s, axis=1)
    return charts


def _sphere_charts(sys):
    from .equilibria import classify
    from .foliation import StableFoliationChart

    cp = classify(sys, np.array([0.0, 0.0, -1.0]))
    south = np.array([0.0, 0.0, -1.0])

    def in_domain(pt):
        return pt[2] < 1.0 - 1e-12

    def rho_fn(pt):
        return math.sqrt((1.0 + pt[2]) / (1.0 - pt[2]))

    def sphere_a(pt):
        return -math.atanh(pt[2])

    def rho_grad(pt):
        z = float(pt[2])
        if z <= -1.0:
            return np.zeros(3)
        return np.array([0.0, 0.0, rho_fn(pt) / (1.0 - z * z)])

    return {(0.0, 0.0, -1.0): StableFoliationChart(
        cp=cp, pi_u=lambda pt: south.copy(), rho=rho_fn, sphere_a=sphere_a,
        leaf_dim=2, in_domain=in_domain, provenance="analytic",
        rho_grad=rho_grad, pi_u_jac=lambda pt: np.zeros((3, 3)))}
