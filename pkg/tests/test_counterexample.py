"""The radially-weighted 3D gradient flow: closed-form certificates,
the bump perturbation, and the alternating-limit discontinuity witness."""

import json
import math

import numpy as np
import pytest

from morseflow import expressions as ex
from morseflow import graphtransform as gt
from morseflow.counterexample import (
    LyapunovViolation,
    PerturbationSpec,
    SingularSetError,
    SupportOverlapError,
    alternating_limits,
    axis_equilibria,
    axis_hessian_rz,
    build_f3d,
    build_perturbed,
    bump_profile,
    equator_probe,
    factorization_residual,
    g_invariance_drift,
    noncell_witness,
    _assemble,
)
from morseflow.equilibria import AdaptedFrame, classify, find_critical_points
from morseflow.flow import integrate_trajectory

E2 = math.e ** 2
E23 = 3.0 * math.exp(2.0 / 3.0)


@pytest.fixture(scope="module")
def f3d():
    return build_f3d()


@pytest.fixture(scope="module")
def rows_default():
    return alternating_limits(PerturbationSpec())


@pytest.fixture(scope="module")
def rows_control():
    return alternating_limits(PerturbationSpec(epsilon=0.0))


def test_field_is_negative_gradient(f3d):
    f, sys = f3d
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(-4.0, 4.0, 3)
        g = ex.gradient(f, x)
        err = np.linalg.norm(sys.eval_field(x) + g)
        assert err <= 1e-12 * max(1.0, np.linalg.norm(g))


def test_axis_values_and_oddness(f3d):
    f, _ = f3d
    assert ex.evaluate(f, [0.0, 0.0, 1.0]) == pytest.approx(E2, rel=1e-14)
    assert ex.evaluate(f, [0.0, 0.0, 3.0]) == pytest.approx(E23, rel=1e-14)
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, y, z = rng.uniform(-4.0, 4.0, 3)
        assert ex.evaluate(f, [x, y, -z]) == pytest.approx(
            -ex.evaluate(f, [x, y, z]), abs=1e-12)


def test_axis_equilibria_are_exact_zeros(f3d):
    _, sys = f3d
    for p in axis_equilibria():
        assert np.all(sys.eval_field(p) == 0.0)


def test_critical_table(f3d):
    _, sys = f3d
    pts = find_critical_points(sys, [(-1.5, 1.5), (-1.5, 1.5), (-4.0, 4.0)],
                               resolution=7)
    assert len(pts) == 4
    want = axis_equilibria()
    for p, q in zip(pts, want):
        assert np.linalg.norm(p - q) < 1e-8
    cps = [classify(sys, p) for p in pts]
    assert [cp.index for cp in cps] == [1, 0, 3, 2]
    assert all(cp.gap > 0.5 for cp in cps)


def test_restricted_hessian_certificates():
    a = math.exp(2.0 / 3.0) / 3.0
    assert np.max(np.abs(axis_hessian_rz(3.0) - np.diag([-a, a]))) < 1e-8
    assert np.max(np.abs(axis_hessian_rz(1.0) - np.diag([-E2, -E2]))) < 1e-8
    # oddness in z flips both curvatures
    assert np.max(np.abs(axis_hessian_rz(-3.0) - np.diag([a, -a]))) < 1e-8
    assert np.max(np.abs(axis_hessian_rz(-1.0) - np.diag([E2, E2]))) < 1e-8


def test_factorization_residual_in_ball():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r, z = rng.uniform(-5.0, 5.0, 2)
        if r * r + z * z > 25.0:
            r, z = 0.6 * r, 0.6 * z
        assert factorization_residual((r, z)) < 1e-10


def test_factorization_at_closed_form_sites(f3d):
    f, _ = f3d
    assert factorization_residual((1.0, 0.0)) < 1e-12
    # at (0, 3) both polynomial factors of the z-component vanish jointly
    u = 0.0 + 9.0 + 3.0
    assert (-16.0 * 0.0 * 3.0, u - 4.0 * 3.0) == (0.0, 0.0)
    assert factorization_residual((0.0, 3.0)) < 1e-12
    assert np.max(np.abs(ex.gradient(f, [0.0, 0.0, 3.0]))) < 1e-12


def test_g_conserved_along_orbits(f3d):
    _, sys = f3d
    rng = np.random.default_rng(11)
    kept = 0
    while kept < 20:
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        traj = integrate_trajectory(sys, u * rng.uniform(1.5, 4.5), 0.4)
        try:
            drift = g_invariance_drift(traj)
        except SingularSetError:
            continue
        assert drift < 1e-6
        kept += 1


def test_g_pins_orbit_to_invariant_sphere(f3d):
    _, sys = f3d
    start = np.array([3.0 * math.cos(0.7), 3.0 * math.sin(0.7), 0.0])
    traj = integrate_trajectory(sys, start, 3.0)
    radii = np.linalg.norm(traj.states, axis=1)
    assert np.max(np.abs(radii - 3.0)) < 1e-6
    assert g_invariance_drift(traj) < 1e-6


def test_g_stationary_and_collar_guard(f3d):
    _, sys = f3d
    traj = integrate_trajectory(sys, np.array([0.0, 0.0, 3.0]), 1.0)
    assert g_invariance_drift(traj) == 0.0
    assert np.all(traj.states == traj.states[0])
    with pytest.raises(SingularSetError):
        g_invariance_drift(np.array([[2.0, 0.0, 0.0], [1.05, 0.0, 0.0]]))


def test_bump_profile_shape():
    d = 0.02
    assert bump_profile(0.0, d) == 1.0
    assert bump_profile(d, d) == 0.0
    assert bump_profile(1.5 * d, d) == 0.0
    s = np.linspace(0.0, d, 200)
    vals = bump_profile(s, d)
    assert np.all(np.diff(vals) < 0.0)
    # C^1 at the support edge: one-sided slope vanishes
    assert bump_profile(d - 1e-5 * d, d) / (1e-5 * d) < 1e-3 / d


def test_probe_seeds_accumulate_on_equator_point():
    lim = np.array([3.0, 0.0, 0.0])
    dists = []
    for k in (1, 2, 3, 5, 8, 13):
        p = equator_probe(k)
        assert abs(np.linalg.norm(p) - 3.0) < 1e-14
        assert p[2] == 0.0
        dists.append(np.linalg.norm(p - lim))
    assert np.all(np.diff(dists) < 0.0)
    assert np.linalg.norm(equator_probe(10 ** 7) - lim) < 1e-6
    with pytest.raises(ValueError):
        equator_probe(0)


def test_zero_amplitude_recovers_base(f3d):
    _, sys = f3d
    pert = build_perturbed(PerturbationSpec(epsilon=0.0))
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.uniform(-4.0, 4.0, 3)
        assert np.array_equal(pert.eval_field(x), sys.eval_field(x))


def test_perturbation_is_compactly_supported(f3d):
    _, sys = f3d
    spec = PerturbationSpec()
    field, _, info = _assemble(spec)
    for q, u in zip(info["centers"], info["directions"]):
        diff = field(q) - sys.eval_field(q)
        assert np.linalg.norm(diff - spec.epsilon * u) < 1e-12
        just_out = q + 1.01 * spec.delta * np.array([0.0, 0.0, 1.0])
        assert np.array_equal(field(just_out), sys.eval_field(just_out))
    m = info["margins"]
    assert m["center_gap"] > 2.0 * spec.delta
    assert m["tube_gap"] > 2.0 * spec.delta
    assert m["lyapunov_max"] < 0.0


def test_support_overlap_rejected():
    with pytest.raises(SupportOverlapError):
        build_perturbed(PerturbationSpec(delta=0.06))


def test_runaway_amplitude_rejected():
    with pytest.raises(LyapunovViolation):
        build_perturbed(PerturbationSpec(epsilon=2000.0))


def test_alternating_limit_table(rows_default):
    assert [r.k for r in rows_default] == list(range(1, 9))
    sink = np.array([0.0, 0.0, -1.0])
    pole = np.array([0.0, 0.0, -3.0])
    top = np.array([0.0, 0.0, 3.0])
    for r in rows_default:
        want, f_want = (sink, -E2) if r.k % 2 == 0 else (pole, -E23)
        assert np.array_equal(r.target, want)
        assert r.omega_err < 1e-5
        assert np.linalg.norm(r.omega - want) < 1e-5
        assert abs(r.f_omega - f_want) < 1e-5
        assert np.array_equal(r.alpha_target, top)
        assert r.alpha_err < 1e-5


def test_control_run_has_single_limit(rows_control):
    pole = np.array([0.0, 0.0, -3.0])
    for r in rows_control:
        assert np.array_equal(r.target, pole)
        assert r.omega_err < 1e-5
        assert abs(r.f_omega + E23) < 1e-5


def test_noncell_witness_report():
    rep = noncell_witness()
    assert rep["alternating"] is True
    assert rep["backward_uniform"] is True
    acc = rep["accumulation_values"]
    assert abs(acc[0] + E2) < 1e-9
    assert abs(acc[1] + E23) < 1e-9
    assert abs(rep["value_gap"] - (E2 - E23)) < 1e-9
    assert rep["limit_point"] == [3.0, 0.0, 0.0]
    assert rep["limit_probe_error"] < 1e-6
    assert rep["control"]["alternating"] is False
    assert rep["control"]["f_spread"] < 1e-9
    assert abs(rep["control"]["f_value"] + E23) < 1e-9
    assert len(rep["rows"]) == 8 and len(rep["control"]["rows"]) == 8
    json.loads(json.dumps(rep))


def test_unstable_graph_of_top_saddle_lies_on_sphere(f3d):
    _, sys = f3d
    fr = AdaptedFrame.at(sys, [0.0, 0.0, 3.0])
    assert fr.k == 2
    sig = gt.unstable_manifold_local(sys, fr, 0.06, m=17)
    for idx, u in sig.node_iter():
        p = fr.from_adapted(u, sig.values[idx])
        assert abs(np.linalg.norm(p) - 3.0) < 1e-5


def test_unstable_graph_of_bottom_saddle_is_axis(f3d):
    _, sys = f3d
    fr = AdaptedFrame.at(sys, [0.0, 0.0, -3.0])
    assert fr.k == 1
    sig = gt.unstable_manifold_local(sys, fr, 0.3, m=17)
    for idx, u in sig.node_iter():
        p = fr.from_adapted(u, sig.values[idx])
        assert math.hypot(p[0], p[1]) < 1e-10


def test_axis_connections(f3d):
    _, sys = f3d
    for z0, z_end in ((0.5, -1.0), (2.0, 3.0), (-2.0, -1.0)):
        traj = integrate_trajectory(sys, np.array([0.0, 0.0, z0]), None)
        assert traj.termination == "converged_to_point"
        assert np.all(traj.states[:, :2] == 0.0)
        assert np.linalg.norm(traj.x_end - [0.0, 0.0, z_end]) < 1e-9
    # below the bottom saddle the axis runs off to -infinity
    traj = integrate_trajectory(sys, np.array([0.0, 0.0, -3.1]), None,
                                t_guard=50.0)
    assert traj.termination in ("guard_exceeded", "diverged")
    assert traj.x_end[2] < -20.0
