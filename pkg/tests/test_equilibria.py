import numpy as np
import pytest
from scipy.linalg import expm

from morseflow import systems
from morseflow.equilibria import (NonHyperbolicError, adapted_norm, classify,
                                  connection_graph, find_critical_points)
from morseflow.flow import FlowSystem


@pytest.fixture(scope="module")
def square4_cps():
    sys = systems.square4().flow
    pts = find_critical_points(sys, [(-1.5, 1.5), (-1.5, 1.5)], resolution=7)
    return sys, [classify(sys, p) for p in pts]


def test_square4_critical_points(square4_cps):
    _, cps = square4_cps
    assert len(cps) == 9
    expected = {tuple(p): idx for p, idx in systems.SQUARE4_CRITICAL}
    for cp in cps:
        key = tuple(np.round(cp.point, 6))
        assert key in expected
        assert cp.index == expected[key]
        assert np.allclose(cp.point, key, rtol=0, atol=1e-10)


def test_square4_spectra(square4_cps):
    _, cps = square4_cps
    for cp in cps:
        if cp.index == 0:
            assert np.allclose(sorted(cp.eigenvalues.real), [-4, -4], atol=1e-9)
        elif cp.index == 1:
            assert np.allclose(sorted(cp.eigenvalues.real), [-4, 2], atol=1e-9)
        else:
            assert np.allclose(sorted(cp.eigenvalues.real), [2, 2], atol=1e-9)
        assert cp.gap == pytest.approx(2.0 if cp.index else 4.0, abs=1e-9)


def test_invariant_subspaces_of_coupled_saddle():
    # A = [[1, 5], [0, -2]]: unstable span (1,0), stable span (5,-3)
    sys = FlowSystem(2, ["x + 5*y", "-2*y"])
    cp = classify(sys, [0.0, 0.0])
    assert cp.index == 1
    u = cp.unstable[:, 0]
    s = cp.stable[:, 0]
    assert abs(abs(u @ [1, 0]) - 1) < 1e-12
    sdir = np.array([5.0, -3.0]) / np.linalg.norm([5.0, -3.0])
    assert abs(abs(s @ sdir) - 1) < 1e-12


def test_non_hyperbolic_raises():
    sys = FlowSystem(2, ["x^2", "-y"])
    with pytest.raises(NonHyperbolicError):
        classify(sys, [0.0, 0.0])


def test_sphere_classification():
    sys = systems.sphere_height().flow
    pts = find_critical_points(sys, [(-1.2, 1.2)] * 3, resolution=5)
    assert len(pts) == 2
    south = classify(sys, pts[0])
    north = classify(sys, pts[1])
    assert np.allclose(south.point, [0, 0, -1], atol=1e-10) and south.index == 0
    assert np.allclose(north.point, [0, 0, 1], atol=1e-10) and north.index == 2
    assert np.allclose(sorted(south.eigenvalues.real), [-1, -1], atol=1e-9)


def test_adapted_norm_contracts_non_normal_block():
    # Euclidean transient growth, adapted norm must decay monotonically
    sys = FlowSystem(2, ["-x + 10*y", "-1.5*y"])
    cp = classify(sys, [0.0, 0.0])
    nm = adapted_norm(cp)
    A = np.array([[-1.0, 10.0], [0.0, -1.5]])
    rng = np.random.default_rng(4)
    for _ in range(20):
        v = rng.normal(size=2)
        for t in (0.1, 0.5, 1.0, 2.0):
            assert nm(expm(A * t) @ v) <= np.exp(-nm.lam * t) * nm(v) * (1 + 1e-10)


def test_adapted_norm_saddle_blocks():
    sys = FlowSystem(2, ["x + 5*y", "-2*y"])
    cp = classify(sys, [0.0, 0.0])
    nm = adapted_norm(cp)
    A = np.array([[1.0, 5.0], [0.0, -2.0]])
    rng = np.random.default_rng(9)
    for _ in range(20):
        cu = rng.normal() * cp.unstable[:, 0]
        cs = rng.normal() * cp.stable[:, 0]
        for t in (0.25, 1.0):
            # stable vectors contract forward, unstable vectors backward
            assert nm(expm(A * t) @ cs) <= np.exp(-nm.lam * t) * nm(cs) * (1 + 1e-10)
            assert nm(expm(-A * t) @ cu) <= np.exp(-nm.lam * t) * nm(cu) * (1 + 1e-10)
    xi, eta = nm.coords(cp.unstable[:, 0])
    assert np.linalg.norm(eta) < 1e-12 and np.linalg.norm(xi) > 0


def test_connection_graph_square4(square4_cps):
    sys, cps = square4_cps
    graph = connection_graph(sys, cps, t_guard=100.0)
    assert not graph.unresolved
    assert not graph.index_violations()
    by_index = {i: cp.index for i, cp in enumerate(cps)}
    # every saddle feeds exactly its two adjacent sinks
    for i, cp in enumerate(cps):
        if cp.index != 1:
            continue
        targets = {j for (a, j) in graph.edges if a == i}
        assert len(targets) == 2
        assert all(by_index[j] == 0 for j in targets)
        assert all(np.linalg.norm(cps[j].point - cp.point) < 1.1 for j in targets)
    # source orbits end in sinks and shadow all four saddle connections
    src = next(i for i, cp in enumerate(cps) if cp.index == 2)
    src_edges = {j: c for (a, j), c in graph.edges.items() if a == src}
    assert sum(src_edges.values()) == 8
    assert all(by_index[j] == 0 for j in src_edges)
    visited = {j for (a, j) in graph.visits if a == src}
    assert {j for j in visited if by_index[j] == 1} == {
        i for i, cp in enumerate(cps) if cp.index == 1}
