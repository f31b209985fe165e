"""Juxtaposition of flows across an invariant region.

Glues a globally defined flow to a local flow supported near the closure
of an open set V: the juxtaposed evaluator follows the global flow until
the orbit enters V and hands over to the local flow from that moment on.
Entrance times are extended reals computed by orbit scanning plus
bisection, against the signed margin of V when one is supplied.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .xreal import NEG_INF, POS_INF, XReal, finite

_BAND = 1e-9


class EntranceTimeError(RuntimeError):
    """Orbit classification failed within the scan horizon."""


class PreconditionViolation(RuntimeError):
    """A juxtaposition hypothesis fails at a sampled point."""


class CompositionDomainError(RuntimeError):
    """A requested flow composition leaves the declared domain."""


def _always(t, x):
    return True


def _dist(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


@dataclass(frozen=True)
class SetPredicate:
    """Open subset of the state space.

    `contains` decides strict membership.  `margin`, when given, is a
    signed distance-like function, negative inside and zero on the
    boundary; entrance times bisect on its sign instead of bracketing a
    boolean.
    """
    contains: Callable
    margin: Callable | None = None
    name: str = ""

    @classmethod
    def from_margin(cls, margin, name: str = "") -> "SetPredicate":
        return cls(contains=lambda x: margin(x) < 0.0, margin=margin,
                   name=name)

    def side(self, x) -> int:
        """-1 inside, 0 within the boundary band, +1 outside.

        Without a margin function the band is invisible and only the
        strict sides are reported."""
        if self.margin is not None:
            m = self.margin(x)
            if math.isfinite(m) and abs(m) <= _BAND:
                return 0
            return -1 if m < 0.0 else 1
        return -1 if self.contains(x) else 1


def _inside(V: SetPredicate, p) -> bool:
    if V.margin is not None:
        return V.margin(p) < 0.0
    return bool(V.contains(p))


@dataclass(frozen=True)
class LocalFlow:
    """Evaluator (t, x) -> point with a time-domain predicate.

    `domain(t, x)` must be interval-shaped in t for every fixed x and
    contain t = 0.  The completeness tags describe those intervals,
    possibly relative to a set the orbit is allowed to stop in.
    Instances are immutable and evaluation is pure.
    """
    space: str
    evaluator: Callable
    domain: Callable = _always
    positively_complete: bool = True
    negatively_complete: bool = True
    relative_to: SetPredicate | None = None

    def __call__(self, t, x):
        return self.evaluator(t, x)


@dataclass(frozen=True)
class JuxtaposedFlow(LocalFlow):
    """Juxtaposition output; carries its entrance-time functions."""
    region: SetPredicate | None = None
    tau: Callable | None = None
    sigma: Callable | None = None


def _refine_crossing(flow, V, x, t_same, t_other, inside0,
                     iters: int = 80) -> float:
    """Bisect the boundary-crossing time between a time whose state is on
    the starting side and one on the other side."""
    for _ in range(iters):
        mid = 0.5 * (t_same + t_other)
        if mid == t_same or mid == t_other:
            break
        if _inside(V, flow(mid, x)) == inside0:
            t_same = mid
        else:
            t_other = mid
    return 0.5 * (t_same + t_other)


def entrance_time(flow: LocalFlow, V: SetPredicate, x,
                  horizon: float = 50.0) -> XReal:
    """First time the orbit of x meets the open set V.

    Negative on V, zero on the boundary band, positive outside.  V is
    assumed strictly positively invariant for the flow, so the orbit
    crosses the boundary at most once and a geometric scan cannot skip
    the crossing.  Interior orbits still interior at -horizon get -inf;
    exterior orbits parked at a stationary point get +inf.
    """
    if V.side(x) == 0:
        return finite(0.0)
    inside0 = _inside(V, x)
    sign = -1.0 if inside0 else 1.0
    a_prev, step = 0.0, 0.125
    while a_prev < horizon:
        a_next = min(a_prev + step, horizon)
        t_next = sign * a_next
        if not flow.domain(t_next, x):
            raise EntranceTimeError(
                f"flow domain exhausted at t={t_next} before the orbit of "
                f"{x} was classified against {V.name or 'V'}")
        if _inside(V, flow(t_next, x)) != inside0:
            return finite(_refine_crossing(flow, V, x, sign * a_prev,
                                           t_next, inside0))
        a_prev, step = a_next, min(2.0 * step, 4.0)
    if inside0:
        return NEG_INF
    drift = _dist(flow(sign * horizon, x), flow(sign * 0.5 * horizon, x))
    if drift < 1e-10:
        return POS_INF
    raise EntranceTimeError(
        f"orbit of {x} not classified against {V.name or 'V'} within "
        f"horizon {horizon}")


def strict_invariance_witness(flow: LocalFlow, V: SetPredicate, samples,
                              times=(0.25, 1.0, 4.0)):
    """First sampled violation of strict positive invariance, or None.

    Every sample in cl(V) must flow to the interior of V for each of the
    given positive times."""
    for x in samples:
        if V.side(x) > 0:
            continue
        for t in times:
            if not flow.domain(t, x):
                return {"point": x, "time": t, "image": None,
                        "reason": "orbit leaves the flow domain"}
            p = flow(t, x)
            if not _inside(V, p):
                return {"point": x, "time": t, "image": p,
                        "reason": "image not interior to V"}
    return None


def juxtapose(phi: LocalFlow, theta: LocalFlow, V: SetPredicate,
              check_samples=None, check_times=(0.25, 1.0, 4.0),
              horizon: float = 50.0) -> JuxtaposedFlow:
    """Flow that follows phi outside V and theta from the moment of entry.

    Requires V strictly positively invariant for both flows, theta
    positively complete near cl(V) and negatively complete relative to
    the complement; pass check_samples to spot-check invariance before
    the evaluator is built.  On the boundary of V both branch formulas
    reduce to the same composition, so the case split is continuous.
    """
    if check_samples is not None:
        for label, fl in (("phi", phi), ("theta", theta)):
            w = strict_invariance_witness(fl, V, check_samples, check_times)
            if w is not None:
                raise PreconditionViolation(
                    f"V is not strictly positively invariant for {label}: "
                    f"{w['reason']} at point {w['point']}, t={w['time']}")

    def tau(x) -> XReal:
        return entrance_time(phi, V, x, horizon)

    def sigma(x) -> XReal:
        return entrance_time(theta, V, x, horizon)

    def psi(t, x):
        t = float(t)
        if t == 0.0:
            return x
        if _inside(V, x):
            s = sigma(x)  # in [-inf, 0]
            if s == NEG_INF:
                return theta(t, x)
            sf = s.finite_value()
            y = theta(max(t, sf), x)
            back = min(t - sf, 0.0)
            return phi(back, y) if back < 0.0 else y
        r = tau(x)  # in [0, +inf]
        if r == POS_INF:
            return phi(t, x)
        rf = r.finite_value()
        y = phi(min(t, rf), x)
        fwd = max(t - rf, 0.0)
        return theta(fwd, y) if fwd > 0.0 else y

    return JuxtaposedFlow(
        space=phi.space, evaluator=psi, domain=_always,
        positively_complete=True, negatively_complete=True,
        region=V, tau=tau, sigma=sigma)


def group_law_residual(psi: LocalFlow, x, s, t) -> float:
    """Metric defect between psi^{s+t}(x) and psi^s(psi^t(x))."""
    if not (psi.domain(t, x) and psi.domain(s + t, x)):
        raise CompositionDomainError(
            f"times {t} or {s + t} outside the flow domain at {x}")
    y = psi(t, x)
    if not psi.domain(s, y):
        raise CompositionDomainError(
            f"time {s} outside the flow domain at the intermediate "
            f"point {y}")
    return _dist(psi(s + t, x), psi(s, y))
