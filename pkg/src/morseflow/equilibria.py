"""Critical points of a flow: location, hyperbolic classification,
adapted norms, and the connection graph sampled from unstable spheres."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, schur, solve_continuous_lyapunov

from .flow import FlowSystem, integrate_trajectory, refine_equilibrium

__all__ = [
    "NonHyperbolicError", "CriticalPoint", "AdaptedNorm", "AdaptedFrame",
    "ConnectionGraph", "find_critical_points", "classify", "adapted_norm",
    "connection_graph",
]


class NonHyperbolicError(Exception):
    """Raised when a linearization has an eigenvalue too close to the
    imaginary axis for a reliable stable/unstable splitting."""


@dataclass
class CriticalPoint:
    """A zero of the (effective) field together with its linearization.

    `index` is the dimension of the unstable subspace; `unstable` and
    `stable` are orthonormal bases of the invariant subspaces in ambient
    coordinates; `gap` is min |Re lambda|.  In surface mode the spectral
    data refers to the restriction to the tangent plane and `tangent`
    holds its orthonormal basis.
    """
    point: np.ndarray
    index: int
    eigenvalues: np.ndarray
    unstable: np.ndarray
    stable: np.ndarray
    gap: float
    jacobian: np.ndarray
    tangent: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        """Dimension of the phase space the spectrum refers to."""
        return self.jacobian.shape[0]


def _tangent_basis(sys: FlowSystem, p: np.ndarray) -> np.ndarray:
    _, g = sys._level_grad_fn(p)
    w = g[0]
    _, _, vh = np.linalg.svd(w.reshape(1, -1))
    return vh[1:].T


def find_critical_points(sys: FlowSystem, box, resolution: int = 6,
                         tol: float = 1e-10, dedup: float = 1e-6) -> list[np.ndarray]:
    """Newton search from a regular seed grid over `box`.

    box is a sequence of (lo, hi) per coordinate.  Returns deduplicated,
    lexicographically sorted zeros of the effective field with residual
    below tol.  In surface mode the seeds are projected onto the level set
    first and only seeds close enough to project reliably are used.
    """
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    seeds = np.stack([m.ravel() for m in mesh], axis=1)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    margin = 0.05 * (hi - lo)
    found: list[np.ndarray] = []
    for seed in seeds:
        try:
            x = refine_equilibrium(sys, seed, tol=tol * 1e-2,
                                   max_move=2.0 * np.linalg.norm(hi - lo))
        except Exception:
            continue
        if np.linalg.norm(sys.eval_field(x)) > tol:
            continue
        if np.any(x < lo - margin) or np.any(x > hi + margin):
            continue
        if any(np.linalg.norm(x - y) < dedup for y in found):
            continue
        found.append(x)
    found.sort(key=lambda p: tuple(np.round(p / dedup) * dedup))
    return found


def classify(sys: FlowSystem, point, hyperbolic_tol: float = 1e-6) -> CriticalPoint:
    """Spectral classification of a field zero.

    Splits the linearization into invariant unstable/stable subspaces with
    a sorted real Schur decomposition; raises NonHyperbolicError when some
    eigenvalue has |Re| < hyperbolic_tol.
    """
    p = np.asarray(point, float)
    _, J = sys.eval_field_jac(p)
    if sys.level is None:
        T = None
        A = J
    else:
        T = _tangent_basis(sys, p)
        A = T.T @ J @ T
    eigs = np.linalg.eigvals(A)
    gap = float(np.min(np.abs(eigs.real)))
    if gap < hyperbolic_tol:
        raise NonHyperbolicError(
            f"eigenvalue within {gap:.3e} of the imaginary axis at {p}")
    _, Zu, k = schur(A, output="real", sort="rhp")
    _, Zs, ks = schur(A, output="real", sort="lhp")
    unstable = Zu[:, :k]
    stable = Zs[:, :ks]
    assert k + ks == A.shape[0]
    if T is not None:
        unstable = T @ unstable
        stable = T @ stable
    # canonical column signs: spans are unchanged, output deterministic
    for B in (unstable, stable):
        for j in range(B.shape[1]):
            if B[np.argmax(np.abs(B[:, j])), j] < 0:
                B[:, j] = -B[:, j]
    order = np.lexsort((eigs.imag, -eigs.real))
    return CriticalPoint(point=p, index=int(k), eigenvalues=eigs[order],
                         unstable=unstable, stable=stable, gap=gap,
                         jacobian=A, tangent=T)


@dataclass
class AdaptedNorm:
    """Block norm max(|xi|, |eta|) in which the linear flow expands the
    unstable block and contracts the stable block at rate >= lam.

    P maps ambient displacement coordinates (tangent coordinates in surface
    mode) to adapted coordinates (xi, eta); split gives the block sizes.
    """
    cp: CriticalPoint
    lam: float
    P: np.ndarray
    P_inv: np.ndarray

    @property
    def split(self) -> int:
        return self.cp.index

    def coords(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = self.P @ v
        return c[:self.split], c[self.split:]

    def __call__(self, v: np.ndarray) -> float:
        xi, eta = self.coords(v)
        nu = np.linalg.norm(xi) if xi.size else 0.0
        ns = np.linalg.norm(eta) if eta.size else 0.0
        return max(nu, ns)


@dataclass
class AdaptedFrame:
    """A hyperbolic critical point with its adapted coordinate chart.

    Adapted coordinates c = (xi, eta) split into unstable (first k = index)
    and stable components along the Schur bases; x = point + M c, with the
    surface tangent basis interposed in surface mode.  The chart axes are
    unit ambient vectors (no Lyapunov weighting), so graph values read
    directly as displacements; `norm` carries the weighted block norm and
    the certified rate lam for the same splitting.
    """
    sys: object
    cp: CriticalPoint
    norm: AdaptedNorm
    M: np.ndarray
    M_inv: np.ndarray

    @staticmethod
    def at(sys, point, lam: float | None = None) -> "AdaptedFrame":
        cp = classify(sys, point)
        if cp.tangent is None:
            M = np.hstack([cp.unstable, cp.stable])
        else:
            M = np.hstack([cp.tangent.T @ cp.unstable,
                           cp.tangent.T @ cp.stable])
        return AdaptedFrame(sys=sys, cp=cp, norm=adapted_norm(cp, lam),
                            M=M, M_inv=np.linalg.inv(M))

    @property
    def k(self) -> int:
        return self.cp.index

    @property
    def d(self) -> int:
        return self.cp.dimension

    def to_adapted(self, x) -> tuple[np.ndarray, np.ndarray]:
        dx = np.asarray(x, float) - self.cp.point
        if self.cp.tangent is not None:
            dx = self.cp.tangent.T @ dx
        c = self.M_inv @ dx
        return c[:self.k], c[self.k:]

    def from_adapted(self, xi, eta) -> np.ndarray:
        c = np.concatenate([np.atleast_1d(xi), np.atleast_1d(eta)])
        dx = self.M @ c
        if self.cp.tangent is not None:
            dx = self.cp.tangent @ dx
        x = self.cp.point + dx
        if self.sys.level is not None:
            x = self.sys.project_to_level(x)
        return x

    def displacement_jacobians(self) -> tuple[np.ndarray, np.ndarray]:
        """(D from_adapted, D to_adapted) as ambient matrices (d of them)."""
        if self.cp.tangent is None:
            return self.M, self.M_inv
        return self.cp.tangent @ self.M, self.M_inv @ self.cp.tangent.T


def _lyapunov_weight(A: np.ndarray, lam: float) -> np.ndarray:
    """Cholesky factor W with |W e^{tA} c| <= e^{-lam t} |W c| whenever
    the spectrum of A lies in {Re < -lam}."""
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    B = A + lam * np.eye(A.shape[0])
    Q = solve_continuous_lyapunov(B.T, -np.eye(A.shape[0]))
    return cholesky(Q, lower=False)


def adapted_norm(cp: CriticalPoint, lam: float | None = None) -> AdaptedNorm:
    """Build an adapted norm for the linearization at cp.

    lam defaults to 0.9 * gap.  The construction is retried with lam/2 if
    the sampled contraction check fails (defensive; the Lyapunov identity
    guarantees it in exact arithmetic).
    """
    A = cp.jacobian
    d = A.shape[0]
    k = cp.index
    if cp.tangent is None:
        Bu, Bs = cp.unstable, cp.stable
    else:
        # subspaces in tangent coordinates
        Bu = cp.tangent.T @ cp.unstable
        Bs = cp.tangent.T @ cp.stable
    M = np.hstack([Bu, Bs])
    M_inv = np.linalg.inv(M)
    Au = Bu.T @ A @ Bu
    As = Bs.T @ A @ Bs
    lam = 0.9 * cp.gap if lam is None else lam
    for _ in range(8):
        Wu = _lyapunov_weight(-Au, lam)
        Ws = _lyapunov_weight(As, lam)
        W = np.zeros((d, d))
        W[:k, :k] = Wu
        W[k:, k:] = Ws
        P = W @ M_inv
        norm = AdaptedNorm(cp=cp, lam=lam, P=P, P_inv=np.linalg.inv(P))
        if _contraction_ok(Wu, Ws, Au, As, lam):
            return norm
        lam *= 0.5
    raise NonHyperbolicError("adapted norm construction failed to verify")


def _contraction_ok(Wu, Ws, Au, As, lam, n_draw: int = 16) -> bool:
    from scipy.linalg import expm
    rng = np.random.default_rng(0)
    k, ds = Au.shape[0], As.shape[0]
    for t in (0.25, 0.5, 1.0):
        if ds:
            Es = Ws @ expm(As * t) @ np.linalg.inv(Ws)
            for _ in range(n_draw):
                c = rng.normal(size=ds)
                if np.linalg.norm(Es @ c) > np.exp(-lam * t) * np.linalg.norm(c) * (1 + 1e-9):
                    return False
        if k:
            Eu = Wu @ expm(-Au * t) @ np.linalg.inv(Wu)
            for _ in range(n_draw):
                c = rng.normal(size=k)
                if np.linalg.norm(Eu @ c) > np.exp(-lam * t) * np.linalg.norm(c) * (1 + 1e-9):
                    return False
    return True


@dataclass
class ConnectionGraph:
    """Sampled heteroclinic structure.

    edges maps (i, j) index pairs into `points` to the number of sampled
    unstable-sphere orbits of points[i] that converged to points[j];
    visits records close passes (within visit_tol) that did not end there;
    unresolved lists (i, sample) orbits with no classified limit.
    """
    points: list[CriticalPoint]
    edges: dict = field(default_factory=dict)
    visits: dict = field(default_factory=dict)
    unresolved: list = field(default_factory=list)

    def index_violations(self) -> list[tuple[int, int]]:
        """Edges along which the unstable dimension fails to decrease."""
        return [e for e in self.edges
                if self.points[e[0]].index <= self.points[e[1]].index]


def _unstable_directions(k: int, n_samples: int) -> np.ndarray:
    if k == 0:
        return np.zeros((0, 0))
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        ang = 2 * np.pi * np.arange(n_samples) / n_samples
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dirs = []
    for j in range(k):
        for s in (1.0, -1.0):
            d = np.zeros(k)
            d[j] = s
            dirs.append(d)
    for signs in np.ndindex(*(2,) * k):
        d = np.array([1.0 if s == 0 else -1.0 for s in signs])
        dirs.append(d / np.linalg.norm(d))
    return np.array(dirs)


def connection_graph(sys: FlowSystem, cps: list[CriticalPoint],
                     n_samples: int = 8, offset: float = 1e-3,
                     t_guard: float = 200.0, match_tol: float = 1e-5,
                     visit_tol: float | None = None) -> ConnectionGraph:
    """Integrate orbits seeded on small unstable spheres and classify
    their forward limits against the given critical points."""
    visit_tol = 5 * offset if visit_tol is None else visit_tol
    graph = ConnectionGraph(points=list(cps))
    pts = np.array([cp.point for cp in cps])
    for i, cp in enumerate(cps):
        dirs = _unstable_directions(cp.index, n_samples)
        for s_idx, d in enumerate(dirs):
            seed = cp.point + offset * (cp.unstable @ d)
            if sys.level is not None:
                seed = sys.project_to_level(seed)
            traj = integrate_trajectory(sys, seed, None, t_guard=t_guard)
            j_end = -1
            if traj.termination == "converged_to_point":
                end_d = np.linalg.norm(pts - traj.x_end, axis=1)
                j = int(np.argmin(end_d))
                if end_d[j] <= match_tol:
                    j_end = j
                    graph.edges[(i, j)] = graph.edges.get((i, j), 0) + 1
            if j_end < 0:
                graph.unresolved.append((i, s_idx))
            # closest pass to critical points the orbit neither starts
            # nor ends at
            dists = np.linalg.norm(traj.states[:, None, :] - pts[None], axis=2)
            closest = dists.min(axis=0)
            for j in range(len(cps)):
                if j not in (i, j_end) and closest[j] < visit_tol:
                    graph.visits[(i, j)] = min(
                        graph.visits.get((i, j), np.inf), float(closest[j]))
    return graph
