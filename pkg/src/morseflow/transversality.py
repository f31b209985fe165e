"""Principal angles between linear subspaces and a quantitative
transversality measure.

The measure is the best worst-case angle over complementary subspace
pairs: positive exactly when the subspaces span the ambient space.  It is
evaluated in closed form by dropping the m = dim V + dim W - n smallest
principal angles; a sampling oracle in the test suite guards this shortcut.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import StepFailure, flow_jacobian, integrate_trajectory

__all__ = ["Subspace", "principal_angles", "transversality_measure",
           "transversality_scan", "ScanResult"]


@dataclass(frozen=True)
class Subspace:
    """Linear subspace given by an orthonormal column basis (n x d)."""
    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, float)
        if b.ndim != 2:
            raise ValueError("basis must be an n x d matrix")
        object.__setattr__(self, "basis", b)
        if b.shape[1] and not np.allclose(b.T @ b, np.eye(b.shape[1]),
                                          rtol=0, atol=1e-10):
            raise ValueError("basis columns must be orthonormal")

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @staticmethod
    def span(vectors, ambient: int | None = None, tol: float = 1e-12) -> "Subspace":
        """Orthonormalize spanning vectors (columns) into a Subspace."""
        A = np.asarray(vectors, float)
        if A.ndim == 1:
            A = A[:, None]
        if A.size == 0:
            return Subspace(np.zeros((ambient or A.shape[0], 0)))
        u, s, _ = np.linalg.svd(A, full_matrices=False)
        rank = int(np.sum(s > tol * max(1.0, s[0])))
        return Subspace(u[:, :rank])


def principal_angles(V: Subspace, W: Subspace) -> np.ndarray:
    """Ascending principal angles in [0, pi/2], count = min(dim V, dim W).

    Cosine SVD, refined through the sine-based singular values when the
    cosine exceeds 0.99 (arccos loses half the digits near zero angle).
    Arguments are ordered canonically first, so the result is bitwise
    symmetric in (V, W).
    """
    if V.n != W.n:
        raise ValueError("subspaces live in different ambient dimensions")
    if (W.dim, W.basis.tobytes()) < (V.dim, V.basis.tobytes()):
        V, W = W, V
    count = min(V.dim, W.dim)
    if count == 0:
        return np.zeros(0)
    M = V.basis.T @ W.basis
    cos = np.clip(np.linalg.svd(M, compute_uv=False), 0.0, 1.0)[:count]
    angles = np.arccos(cos)
    if cos[0] > 0.99:
        B = W.basis - V.basis @ M
        sin = np.sort(np.clip(np.linalg.svd(B, compute_uv=False), 0.0, 1.0))[:count]
        small = cos > 0.99
        angles[small] = np.arcsin(sin[small])
    return np.sort(angles)


def transversality_measure(V: Subspace, W: Subspace) -> float:
    """Max over complementary pairs V0 in V, W0 in W (dim V0 + dim W0 = n)
    of the minimum angle between nonzero vectors of V0 and W0."""
    if V.n != W.n:
        raise ValueError("subspaces live in different ambient dimensions")
    m = V.dim + W.dim - V.n
    if m < 0:
        raise ValueError("dim V + dim W < n: no complementary pair exists")
    angles = principal_angles(V, W)
    if m >= len(angles):
        return np.pi / 2
    return float(angles[m])


@dataclass
class ScanResult:
    """Sampled minimum of the transversality measure along orbits."""
    min_angle: float
    witness: np.ndarray | None
    table: list  # (point, alpha index, omega index, angle)
    unresolved: list


def _limit_index(point, cps, tol=1e-5):
    d = [np.linalg.norm(point - cp.point) for cp in cps]
    j = int(np.argmin(d))
    return j if d[j] <= tol else -1


def _approach(sys, p, target, radius, t_guard, backward):
    """Flow from p until within `radius` of target; (state, |elapsed|) or None."""
    def obs(t, x):
        if np.linalg.norm(x - target) < radius:
            return ("event_hit", t)
        return None

    traj = integrate_trajectory(sys, p, None, t_guard=t_guard, observer=obs,
                                detect_convergence=False, backward=backward)
    if traj.termination != "event_hit":
        return None
    return traj.x_end, abs(traj.t_end)


def _evolved_frame(sys, basis, from_point, t, forward: bool):
    """Push an orthonormal frame along the orbit and re-orthonormalize.

    Forward evolution of an unstable frame (and backward evolution of a
    stable frame) contracts the seeding error, so the result approximates
    the invariant tangent space at the arrival point."""
    _, J = flow_jacobian(sys, from_point, t if forward else -t)
    Q, _ = np.linalg.qr(J @ basis)
    return Q


def transversality_scan(sys, cps, points, n_samples: int | None = None,
                        pair: tuple[int, int] | None = None,
                        seed_radius: float = 1e-4, t_guard: float = 200.0,
                        match_tol: float = 1e-5) -> ScanResult:
    """Minimum transversality between unstable and stable tangent spaces
    over sampled points.

    Each point p is classified by the limits of its orbit: x backward, y
    forward (or taken from `pair` = (ix, iy) into cps when the pair is
    known a priori, e.g. on an invariant sphere).  T_p W^u(x) is the
    unstable eigenframe carried from the first orbit point within
    seed_radius of x back to p by the variational flow; T_p W^s(y)
    symmetrically, carried backward from near y.  Orbits without resolved
    limits are skipped and reported.
    """
    points = np.asarray(points, float)
    if n_samples is not None and len(points) > n_samples:
        step = max(1, len(points) // n_samples)
        points = points[::step][:n_samples]
    result = ScanResult(min_angle=np.pi / 2, witness=None, table=[], unresolved=[])
    for p in points:
        try:
            if pair is None:
                fwd = integrate_trajectory(sys, p, None, t_guard=t_guard)
                bwd = integrate_trajectory(sys, p, None, t_guard=t_guard,
                                           backward=True)
                if fwd.termination != "converged_to_point" or \
                        bwd.termination != "converged_to_point":
                    result.unresolved.append(p)
                    continue
                ix = _limit_index(bwd.x_end, cps, match_tol)
                iy = _limit_index(fwd.x_end, cps, match_tol)
                if ix < 0 or iy < 0:
                    result.unresolved.append(p)
                    continue
            else:
                ix, iy = pair
            x_cp, y_cp = cps[ix], cps[iy]
            back = _approach(sys, p, x_cp.point, seed_radius, t_guard,
                             backward=True)
            fore = _approach(sys, p, y_cp.point, seed_radius, t_guard,
                             backward=False)
            if back is None or fore is None:
                result.unresolved.append(p)
                continue
            Tu = _evolved_frame(sys, x_cp.unstable, back[0], back[1],
                                forward=True)
            Ts = _evolved_frame(sys, y_cp.stable, fore[0], fore[1],
                                forward=False)
        except StepFailure:
            result.unresolved.append(p)
            continue
        angle = transversality_measure(Subspace(Tu), Subspace(Ts))
        result.table.append((p, ix, iy, angle))
        if angle < result.min_angle:
            result.min_angle = angle
            result.witness = p
    if not result.table:
        result.min_angle = float("nan")
    return result
