import math

import numpy as np
import pytest
import scipy.optimize as so

from morseflow import systems
from morseflow.equilibria import AdaptedFrame
from morseflow.flow import flow_map
from morseflow.foliation import (FoliationDomainError, ProductStructure,
                                 cubic_foliation, default_bump,
                                 extend_foliation_over_unstable,
                                 invariant_neighborhood, inverse_product,
                                 leaf_intersection, rho, sphere_leaf, tau_s,
                                 tau_u)
from morseflow.graphtransform import LipGraph
from morseflow.xreal import NEG_INF, POS_INF, finite


@pytest.fixture(scope="module")
def lin():
    sys = systems.linear_saddle().flow
    return sys, AdaptedFrame.at(sys, [0.0, 0.0])


@pytest.fixture(scope="module")
def lin_ps(lin):
    sys, fr = lin
    # axis-aligned leaves: exact product structure of the linear saddle
    return ProductStructure(frame=fr, radius=1.0,
                            sigma_u=lambda q, u: q,
                            sigma_s=lambda p, s: p)


@pytest.fixture(scope="module")
def affine_ps(lin):
    _, fr = lin
    return ProductStructure(frame=fr, radius=1.0,
                            sigma_u=lambda q, u: q + 0.3 * u,
                            sigma_s=lambda p, s: p + 0.2 * s,
                            lip_u=0.3, lip_s=0.2)


def test_leaf_intersection_axis_leaves(lin_ps):
    z = leaf_intersection(lin_ps, [0.3], [0.7])
    assert np.allclose(z, [0.3, 0.7], atol=1e-14)


def test_leaf_intersection_affine_closed_form(affine_ps):
    p0, q0 = 0.4, -0.5
    z, hist = leaf_intersection(affine_ps, [p0], [q0], with_history=True)
    # u = p + 0.2(q + 0.3u)  =>  u = (p + 0.2 q) / 0.94
    u_exact = (p0 + 0.2 * q0) / 0.94
    assert abs(z[0] - u_exact) < 1e-10
    assert abs(z[1] - (q0 + 0.3 * z[0])) < 1e-12
    ratios = [hist[i + 1] / hist[i] for i in range(len(hist) - 2)
              if hist[i] > 1e-13]
    assert ratios and all(r <= 0.25 + 1e-9 for r in ratios)


def test_leaf_intersection_nonlinear_residual(lin):
    _, fr = lin
    ps = ProductStructure(frame=fr, radius=1.0,
                          sigma_u=lambda q, u: q + 0.3 * np.sin(u),
                          sigma_s=lambda p, s: p + 0.2 * np.sin(s),
                          lip_u=0.3, lip_s=0.2)
    rng = np.random.default_rng(11)
    for _ in range(20):
        p, q = rng.uniform(-0.8, 0.8, 2)
        z = leaf_intersection(ps, [p], [q])
        u, s = z[:1], z[1:]
        assert abs(s - (q + 0.3 * np.sin(u))) < 1e-10
        assert abs(u - (p + 0.2 * np.sin(s))) < 1e-10


def test_inverse_product_roundtrip(affine_ps):
    rng = np.random.default_rng(4)
    for _ in range(20):
        p0, q0 = rng.uniform(-0.7, 0.7, 2)
        z = leaf_intersection(affine_ps, [p0], [q0])
        p, q = inverse_product(affine_ps, z[:1], z[1:])
        assert abs(p[0] - p0) < 1e-9
        assert abs(q[0] - q0) < 1e-9


def test_tau_closed_forms_linear(lin):
    sys, fr = lin
    for p in (0.25, 0.9, 1.7):
        tu = tau_u(sys, fr, [p, 0.3], 1.0)
        assert abs(tu.finite_value() - math.log(p)) < 1e-9
        ts = tau_s(sys, fr, [0.3, p], 1.0)
        assert abs(ts.finite_value() + math.log(p)) < 1e-9
    assert tau_u(sys, fr, [1.0, 0.3], 1.0) == finite(0.0)
    assert tau_s(sys, fr, [0.5, 1.0], 1.0) == finite(0.0)
    assert tau_u(sys, fr, [0.0, 0.5], 1.0) == NEG_INF
    assert tau_s(sys, fr, [0.4, 0.0], 1.0) == POS_INF


def test_tau_additive_along_flow_quad():
    sys = systems.quad_saddle().flow
    fr = AdaptedFrame.at(sys, [0.0, 0.0])
    for x0, t in (((0.3, 0.2), 0.7), ((-0.4, 0.5), 0.4), ((0.2, -0.6), 1.1)):
        x0 = np.array(x0)
        x1 = flow_map(sys, x0, t)
        du = (tau_u(sys, fr, x1, 1.0).finite_value()
              - tau_u(sys, fr, x0, 1.0).finite_value())
        ds = (tau_s(sys, fr, x1, 1.0).finite_value()
              - tau_s(sys, fr, x0, 1.0).finite_value())
        assert abs(du - t) < 1e-6
        assert abs(ds - t) < 1e-6


def test_rho_product_structure_linear(lin_ps):
    # pure stable displacement: rho is the stable exit scale |y|/r
    assert abs(rho(lin_ps, [0.0, 0.2]) - 0.2) < 1e-9
    # vanishes exactly on the unstable manifold
    assert rho(lin_ps, [0.5, 0.0]) == 0.0
    # generic point: exp(-tau_s + bump(tau_s - tau_u))
    ts, tu = -math.log(0.8), math.log(0.55)
    want = math.exp(-ts + default_bump(ts - tu))
    assert abs(rho(lin_ps, [0.55, 0.8]) - want) < 1e-9
    with pytest.raises(FoliationDomainError):
        rho(lin_ps, [1.5, 1.2])


def test_rho_scales_exponentially(lin_ps):
    sys = lin_ps.frame.sys
    rng = np.random.default_rng(7)
    for _ in range(15):
        x0 = rng.uniform([0.05, 0.05], [0.6, 0.6])
        t = rng.uniform(0.2, 1.0)
        r0 = rho(lin_ps, x0)
        r1 = rho(lin_ps, flow_map(sys, x0, t))
        assert abs(r1 - math.exp(-t) * r0) < 1e-9


def test_default_bump_shape():
    assert default_bump(0.0) == math.inf
    assert default_bump(-2.0) == math.inf
    assert default_bump(1.0) == 0.0
    assert default_bump(3.0) == 0.0
    s = np.linspace(1e-3, 0.999, 200)
    v = np.array([default_bump(si) for si in s])
    assert np.all(np.diff(v) < 0)
    assert default_bump(1.0 - 1e-8) < 1e-22


def test_invariant_neighborhood_membership(lin_ps):
    mem = invariant_neighborhood(lin_ps, 1.0)
    assert mem([0.3, 0.4])
    assert not mem([1.5, 1.2])
    # r = e^{-1} trims the margin by one time unit
    mem_r = invariant_neighborhood(lin_ps, math.exp(-1.0))
    assert mem_r([0.3, 0.4])       # margin 2.12
    assert not mem_r([0.55, 0.8])  # margin 0.82
    with pytest.raises(ValueError):
        invariant_neighborhood(lin_ps, 0.0)
    with pytest.raises(ValueError):
        invariant_neighborhood(lin_ps, 1.2)


@pytest.fixture(scope="module")
def saddle3d():
    sys = systems.linear_saddle(rates=(1.0, -1.0, -1.0)).flow
    fr = AdaptedFrame.at(sys, [0.0, 0.0, 0.0])
    ps = ProductStructure(frame=fr, radius=1.0,
                          sigma_u=lambda q, u: q,
                          sigma_s=lambda p, s: p)
    return sys, fr, ps


def test_sphere_leaf_geometry(saddle3d):
    sys, fr, ps = saddle3d
    pts = sphere_leaf(ps, [0.2], 0.4, n_samples=12)
    assert pts.shape == (12, 3)
    for x in pts:
        xi, eta = fr.to_adapted(x)
        assert abs(xi[0] - 0.2) < 1e-9
        assert abs(np.linalg.norm(eta) - math.exp(-0.4)) < 1e-9
    vals = [rho(ps, x) for x in pts]
    assert max(vals) - min(vals) < 1e-6
    with pytest.raises(FoliationDomainError):
        sphere_leaf(ps, [0.2], -2.0)  # tau_u(p) = log 0.2 > -2


def test_sphere_leaf_flow_increment(saddle3d):
    sys, fr, ps = saddle3d
    p, a, dt = 0.15, 0.3, 0.45
    leaf0 = sphere_leaf(ps, [p], a, n_samples=10)
    leaf1 = sphere_leaf(ps, [p * math.exp(dt)], a + dt, n_samples=10)
    moved = np.array([flow_map(sys, x, dt) for x in leaf0])
    assert np.max(np.abs(moved - leaf1)) < 1e-6


def test_extend_foliation_linear_horizontal(lin):
    sys, fr = lin
    from morseflow.graphtransform import build_initial_graph
    base = build_initial_graph(fr, 1.0, m=33)
    hi = base.copy_with(np.full_like(base.values, 0.5))
    lo = base.copy_with(np.full_like(base.values, -0.5))
    fam = extend_foliation_over_unstable(sys, fr, [([0.5], hi), ([-0.5], lo)])
    for q in (0.3, 0.12, -0.4):
        lf = fam([q])
        assert np.max(np.abs(lf.values - q)) < 1e-9
    assert np.max(np.abs(fam([0.0]).values)) < 1e-10


@pytest.fixture(scope="module")
def quad_family():
    sys = systems.quad_saddle().flow
    fr = AdaptedFrame.at(sys, [0.0, 0.0])
    axes = (np.linspace(-1.0, 1.0, 65),)
    leaf = LipGraph(frame=fr, radius=1.0, axes=axes,
                    values=(0.5 + 0.4 * axes[0])[:, None])
    return sys, fr, extend_foliation_over_unstable(sys, fr, [([0.5], leaf)])


def test_extend_foliation_contracts_to_manifold(quad_family):
    _, _, fam = quad_family
    sig_inf = fam([0.0])
    xs = np.linspace(-0.9, 0.9, 37)
    for ts in (6.0, 9.0):
        q = 0.5 * math.exp(-ts)
        lf = fam([q])
        dev = max(abs(float(lf(np.array([x]))[0] - sig_inf(np.array([x]))[0]))
                  for x in xs)
        # the leaf passes through (0, q), so the gap scales like |q|
        assert dev < 1.05 * q + 1e-9


def test_extend_foliation_transversal_angle(quad_family):
    _, _, fam = quad_family
    sig_inf = fam([0.0])

    def angle_at_origin(lf):
        h = 1e-3
        m1 = float(lf(np.array([h]))[0] - lf(np.array([-h]))[0]) / (2 * h)
        m2 = float(sig_inf(np.array([h]))[0]
                   - sig_inf(np.array([-h]))[0]) / (2 * h)
        return abs(math.atan(m1) - math.atan(m2))

    angles = [angle_at_origin(fam([0.5 * math.exp(-ts)]))
              for ts in (0.5, 1.0, 2.0)]
    # evolved leaves stay transversal at moderate depth (tilt e^{-2 ts})
    assert angles[0] > 0.1
    assert angles[0] > angles[1] > angles[2]
    assert angles[0] == pytest.approx(0.4 * math.exp(-1.0), rel=0.05)


def test_extend_foliation_boundary_identity(quad_family):
    _, _, fam = quad_family
    lf = fam([0.5])
    assert np.max(np.abs(lf.values[:, 0] - (0.5 + 0.4 * lf.axes[0]))) < 1e-12
    with pytest.raises(ValueError):
        extend_foliation_over_unstable(
            fam.frame.sys, fam.frame, [([0.3], fam.boundary[0][1])], r=0.5)


# ---------------------------------------------------------------------------
# analytic charts of the reference systems


def _sample_domain(ch, rng, lo, hi, n, rho_cap=5.0):
    out = []
    while len(out) < n:
        pt = rng.uniform(lo, hi)
        if ch.in_domain(pt) and ch.rho(pt) < rho_cap:
            out.append(pt)
    return out


def _check_chart_invariances(sys, ch, samples, times=(0.4, 0.9), tol=1e-6):
    worst = 0.0
    for pt in samples:
        for t in times:
            ft = flow_map(sys, pt, t)
            assert ch.in_domain(ft)
            e_pi = np.max(np.abs(ch.pi_u(ft) - flow_map(sys, ch.pi_u(pt), t)))
            e_rho = abs(ch.rho(ft) - math.exp(-t) * ch.rho(pt))
            e_a = abs(ch.sphere_a(ft) - (ch.sphere_a(pt) + t))
            worst = max(worst, e_pi, e_rho, e_a)
    assert worst < tol


def test_square4_sink_chart():
    rs = systems.square4()
    ch = rs.charts[(1.0, 1.0)]
    assert ch.provenance == "analytic"
    assert ch.leaf_dim == 2
    assert ch.cp.index == 0
    rng = np.random.default_rng(5)
    samples = _sample_domain(ch, rng, [0.05, 0.05], [1.8, 1.8], 50)
    _check_chart_invariances(rs.flow, ch, samples)
    assert ch.rho(np.array([1.0, 1.0])) == 0.0
    assert np.allclose(ch.pi_u(np.array([0.3, 1.4])), [1.0, 1.0])
    assert not ch.in_domain(np.array([-0.1, 0.5]))
    # coercive toward the quadrant boundary
    assert ch.rho(np.array([1e-7, 0.5])) > 1e3


def test_square4_saddle_chart():
    rs = systems.square4()
    ch = rs.charts[(1.0, 0.0)]
    assert ch.leaf_dim == 1
    assert ch.cp.index == 1
    rng = np.random.default_rng(6)
    samples = _sample_domain(ch, rng, [0.05, -0.99], [1.9, 0.99], 50)
    _check_chart_invariances(rs.flow, ch, samples)
    # rho vanishes exactly on W^u = {x = 1}
    for y in (0.0, 0.5, -0.9):
        assert ch.rho(np.array([1.0, y])) == 0.0
    # on W^s the base degenerates to the saddle itself
    assert np.allclose(ch.pi_u(np.array([0.4, 0.0])), [1.0, 0.0])
    base = ch.pi_u(np.array([0.5, 0.3]))
    assert abs(base[0] - 1.0) < 1e-14 and 0 < base[1] < 1


def test_square4_saddle_wall_coercive():
    rs = systems.square4()
    ch = rs.charts[(1.0, 0.0)]
    x = 0.5

    # margin(x, y) = T(x) - T(y_b) decreases toward the diagonal; find the
    # wall where it hits 1/4 and check rho blows up just inside
    def margin(y):
        g = lambda u: abs(1 - u * u) / (u * u)
        T = lambda u: 0.25 * math.log(u * u / abs(1 - u * u))
        yb = 1.0 / math.sqrt(1.0 + g(x) + g(y))
        return T(x) - T(yb)

    ystar = so.brentq(lambda y: margin(y) - 0.25, 1e-9, x)
    assert ch.in_domain(np.array([x, ystar - 1e-4]))
    assert not ch.in_domain(np.array([x, ystar + 1e-4]))
    assert ch.rho(np.array([x, ystar - 1e-4])) > 1e3


def test_square4_saddle_domains_disjoint():
    charts = systems.square4().charts
    xs = np.linspace(0.01, 0.99, 60)
    hit_both = 0
    for x in xs:
        for y in xs:
            pt = np.array([x, y])
            a = charts[(1.0, 0.0)].in_domain(pt)
            b = charts[(0.0, 1.0)].in_domain(pt)
            if a and b:
                hit_both += 1
            if abs(x - y) < 1e-12:
                # the diagonal wedge belongs to no saddle chart
                assert not a and not b
    assert hit_both == 0


def test_square4_saddle_leaves_are_sink_spheres():
    # the stable leaf through a saddle-chart point is an arc of the
    # adjacent sink's sphere: the leaf base has the same sink parameter
    charts = systems.square4().charts
    saddle, sink = charts[(1.0, 0.0)], charts[(1.0, 1.0)]
    rng = np.random.default_rng(9)
    checked = 0
    for _ in range(80):
        pt = rng.uniform([0.1, 0.05], [1.8, 0.95])
        if not (saddle.in_domain(pt) and sink.in_domain(pt)):
            continue
        checked += 1
        base = saddle.pi_u(pt)
        assert abs(sink.sphere_a(base) - sink.sphere_a(pt)) < 1e-12
    assert checked >= 20


def test_sphere_south_chart():
    rs = systems.sphere_height()
    assert set(rs.charts) == {(0.0, 0.0, -1.0)}
    ch = rs.charts[(0.0, 0.0, -1.0)]
    assert ch.leaf_dim == 2 and ch.cp.index == 0
    rng = np.random.default_rng(12)
    samples = []
    while len(samples) < 40:
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        if v[2] < 0.9 and ch.rho(v) > 1e-3:
            samples.append(v)
    _check_chart_invariances(rs.flow, ch, samples)
    assert abs(ch.rho(np.array([1.0, 0.0, 0.0])) - 1.0) < 1e-15
    assert ch.rho(np.array([0.0, 0.0, -1.0])) == 0.0
    assert not ch.in_domain(np.array([0.0, 0.0, 1.0]))
    # coercive toward the removed north pole
    z = 1.0 - 1e-9
    assert ch.rho(np.array([math.sqrt(1 - z * z), 0.0, z])) > 1e3


def test_chart_rho_transverse_derivative():
    # moving along a stable leaf away from the unstable manifold changes
    # rho at a definite rate on the working annulus of each chart
    rs = systems.square4()
    sink = rs.charts[(1.0, 1.0)]
    saddle = rs.charts[(1.0, 0.0)]
    rng = np.random.default_rng(13)
    h = 1e-6
    for _ in range(50):
        pt = rng.uniform([0.2, 0.2], [0.9, 0.9])
        grad = np.array([
            (sink.rho(pt + [h, 0]) - sink.rho(pt - [h, 0])) / (2 * h),
            (sink.rho(pt + [0, h]) - sink.rho(pt - [0, h])) / (2 * h)])
        assert np.linalg.norm(grad) > 1e-4
    checked = 0
    for _ in range(200):
        pt = rng.uniform([0.2, 0.05], [0.9, 0.4])
        if not saddle.in_domain(pt) or not saddle.rho(pt) < 5.0:
            continue
        checked += 1
        # the saddle leaf is the sink-sphere arc; walk along its tangent
        grad_a = np.array([
            (sink.sphere_a(pt + [h, 0]) - sink.sphere_a(pt - [h, 0])),
            (sink.sphere_a(pt + [0, h]) - sink.sphere_a(pt - [0, h]))])
        tang = np.array([-grad_a[1], grad_a[0]])
        tang /= np.linalg.norm(tang)
        d = saddle.rho(pt + h * tang) - saddle.rho(pt - h * tang)
        assert abs(d) / (2 * h) > 1e-4
    assert checked >= 20
    sph = systems.sphere_height().charts[(0.0, 0.0, -1.0)]
    for z in np.linspace(-0.9, 0.9, 19):
        x = math.sqrt(1 - z * z)
        t = np.array([-z, 0.0, x])  # meridian tangent at (x, 0, z)
        p = np.array([x, 0.0, z])
        d = (sph.rho(p + h * t) - sph.rho(p - h * t)) / (2 * h)
        assert abs(d) > 1e-4


def test_cubic_foliation_nonuniqueness():
    sysc, leaf_through = cubic_foliation()
    # the tangent field follows the cubic leaves off the axis
    for x0 in (-0.5, 0.7):
        f = leaf_through(x0)
        x = x0 + 0.6
        v = sysc.eval_field(np.array([x, f(x)]))
        assert abs(v[1] / v[0] - 3 * (x - x0) ** 2) < 1e-12
    # two seeds 1e-12 apart follow different leaves: no unique integral
    # curve through the origin
    a = flow_map(sysc, [0.0, 0.0], 2.0)
    b = flow_map(sysc, [0.0, 1e-12], 2.0)
    assert abs(a[1]) < 1e-6
    assert b[1] > 1.0
    assert np.linalg.norm(a - b) > 1.0
