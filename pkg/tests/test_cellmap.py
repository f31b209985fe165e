"""Cell maps of top cells: the juxtaposed flow on W^u, its forward
limits, and the sampled closed-ball map with continuity diagnostics."""

import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from morseflow.boundaryflow import assembly_for
from morseflow.cellmap import (
    CHI_EPS,
    REGIME_BOUNDARY,
    REGIME_CENTER,
    REGIME_INTERIOR,
    build_psi,
    cell_map,
    chi,
    continuity_report,
    omega_psi,
    polar_mesh,
)
from morseflow.systems import sphere_height, square4


def _g(u):
    return abs(1.0 - u * u) / (u * u)


@pytest.fixture(scope="module")
def sq():
    ref = square4()
    asm = assembly_for(ref, [0.0, 0.0])
    psi = build_psi(ref.flow, asm.target, asm,
                    evaluator=lambda t, p: ref.exact(p, t))
    return ref, asm, psi


@pytest.fixture(scope="module")
def sph():
    ref = sphere_height()
    asm = assembly_for(ref, [0.0, 0.0, 1.0])
    psi = build_psi(ref.flow, asm.target, asm,
                    evaluator=lambda t, p: ref.exact(p, t))
    return ref, asm, psi


def _circle(radius):
    return lambda a: radius * np.array([math.cos(a), math.sin(a)])


def test_chi_profile():
    assert chi(0.5) == 0.0
    assert chi(0.25) == pytest.approx(-1.0, abs=1e-14)
    assert chi(0.75) == pytest.approx(1.0, abs=1e-14)
    rs = np.linspace(0.05, 0.95, 19)
    vals = [chi(r) for r in rs]
    assert np.all(np.diff(vals) > 0.0)
    # outside the clamp the formula saturates instead of blowing up
    assert chi(0.0) == chi(CHI_EPS) and math.isfinite(chi(0.0))
    assert chi(1.0) == chi(1.0 - CHI_EPS) and chi(1.0) > 1e5


def test_psi_backward_orbits_reach_the_source(sq):
    ref, asm, psi = sq
    for seed in ([0.5, 0.2], [-0.3, 0.4], [0.1, -0.6]):
        out = psi(-12.0, np.asarray(seed, float))
        assert np.linalg.norm(out) < 1e-6


def test_psi_is_phi_for_nonpositive_times_outside_v(sq):
    ref, asm, psi = sq
    p = np.array([0.5, 0.2])
    assert float(np.min(asm.rho_table(p))) > 1.5
    for t in (-5.0, -1.0, -0.2):
        assert np.max(np.abs(psi(t, p) - ref.exact(p, t))) < 1e-8


def test_build_psi_rejects_foreign_target(sq):
    ref, asm, psi = sq
    sink_cp = asm.classes[0][0].cp
    with pytest.raises(ValueError):
        build_psi(ref.flow, sink_cp, asm)


def test_omega_psi_axis_seed_hits_saddle(sq):
    ref, asm, psi = sq
    res = omega_psi(psi, asm, np.array([0.3, 0.0]))
    assert res.class_index == 1
    assert np.max(np.abs(res.point - [1.0, 0.0])) < 1e-9


def test_omega_psi_lands_on_open_edge(sq):
    ref, asm, psi = sq
    res = omega_psi(psi, asm, np.array([0.3, 0.1]))
    assert res.point[0] == pytest.approx(1.0, abs=1e-12)
    assert 0.0 < res.point[1] < 1.0


def test_omega_psi_deep_strip_matches_closed_form(sq):
    # entry through the saddle collar keeps the leaf base invariant:
    # rho_1 = e^{-T(x)} enters at T = 0, where G has decayed by the
    # fourth power of the entrance factor
    ref, asm, psi = sq
    x0, y0 = 0.3, 0.02
    G0 = _g(x0) + _g(y0)
    rho1 = math.exp(0.25 * math.log((1 - x0 * x0) / (x0 * x0)))
    ystar = 1.0 / math.sqrt(1.0 + G0 * rho1 ** -4.0)
    res = omega_psi(psi, asm, np.array([x0, y0]))
    assert res.class_index == 1
    assert abs(res.point[0] - 1.0) < 1e-9
    assert abs(res.point[1] - ystar) < 1e-6


def test_omega_psi_agrees_with_long_psi_runs(sq):
    ref, asm, psi = sq
    rng = np.random.default_rng(19)
    for _ in range(6):
        p = rng.uniform([-0.7, -0.7], [0.7, 0.7])
        if np.linalg.norm(p) < 0.05:
            continue
        res = omega_psi(psi, asm, p)
        direct = psi(20.0, p)
        assert np.max(np.abs(res.point - direct)) < 1e-4


def test_cell_map_grid_and_regimes(sq):
    ref, asm, psi = sq
    cm = cell_map(psi, asm, _circle(0.25), n_r=5, n_theta=16)
    assert cm.failures == []
    assert cm.images.shape == (5, 16, 2)
    assert np.all(cm.regimes[0] == REGIME_CENTER)
    assert np.all(cm.regimes[-1] == REGIME_BOUNDARY)
    assert np.all(cm.regimes[1:-1] == REGIME_INTERIOR)
    # center row is the stationary point exactly
    assert np.all(cm.images[0] == asm.target.point)
    # chi(1/2) = 0, so the middle ring is the transverse sphere itself
    assert np.max(np.abs(cm.images[2] - cm.sphere)) == 0.0


def test_cell_map_boundary_lies_on_the_square(sq):
    ref, asm, psi = sq
    cm = cell_map(psi, asm, _circle(0.25), n_r=5, n_theta=16)
    cheb = np.max(np.abs(cm.images[-1]), axis=1)
    assert np.max(np.abs(cheb - 1.0)) < 1e-6
    # axis angles park at the saddles, diagonal angles at the sinks
    for m, expect in ((0, [1, 0]), (4, [0, 1]), (8, [-1, 0]), (12, [0, -1]),
                      (2, [1, 1]), (6, [-1, 1]), (10, [-1, -1]),
                      (14, [1, -1])):
        assert np.max(np.abs(cm.images[-1, m] - expect)) < 1e-6


def test_cell_map_interior_injective_on_samples(sq):
    ref, asm, psi = sq
    cm = cell_map(psi, asm, _circle(0.25), n_r=5, n_theta=16)
    pts = cm.interior_samples()
    tree = cKDTree(pts)
    pairs = tree.query_pairs(1e-8)
    assert pairs == set()


def test_continuity_report_refinement(sq):
    ref, asm, psi = sq
    coarse = cell_map(psi, asm, _circle(0.25), n_r=4, n_theta=24)
    fine = cell_map(psi, asm, _circle(0.25), n_r=4, n_theta=48)
    rc = continuity_report(coarse)
    rf = continuity_report(fine)
    assert len(rc["bands"]) == 4
    assert rc["bands"][0]["max_jump"] == 0.0
    assert rc["n_failures"] == 0
    half = rc["boundary_max_jump"] / 2.0
    assert rf["boundary_max_jump"] <= 4.0 * half
    assert rf["boundary_max_jump"] >= half / 4.0


def test_sphere_cell_map_boundary_is_south(sph):
    ref, asm, psi = sph
    z0 = math.sqrt(1.0 - 0.09)

    def g(a):
        return np.array([0.3 * math.cos(a), 0.3 * math.sin(a), z0])

    cm = cell_map(psi, asm, g, n_r=5, n_theta=12, omega_tol=1e-6)
    assert cm.failures == []
    assert np.max(np.abs(cm.images[-1] - [0.0, 0.0, -1.0])) < 1e-6
    rep = continuity_report(cm)
    assert rep["boundary_max_jump"] < 1e-6
    assert np.all(cm.images[0] == asm.target.point)
    # interior rings sit at distinct latitudes: injective on samples
    pts = cm.interior_samples()
    tree = cKDTree(pts)
    assert tree.query_pairs(1e-8) == set()


def test_polar_mesh_shapes(sq):
    ref, asm, psi = sq
    cm = cell_map(psi, asm, _circle(0.25), n_r=5, n_theta=16)
    verts, faces = polar_mesh(cm)
    assert verts.shape == (1 + 4 * 16, 2)
    assert len(faces) == 16 + 3 * 2 * 16
    arr = np.array(faces)
    assert arr.min() == 0 and arr.max() == verts.shape[0] - 1
