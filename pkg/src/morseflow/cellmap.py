"""Characteristic maps of top cells.

Assembles the juxtaposed flow psi on the unstable manifold of a
full-index stationary point, computes its forward limits, and samples
the closed-ball map r u -> psi^{chi(r)}(g(u)) together with empirical
continuity diagnostics on the polar grid.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .boundaryflow import (BoundaryFlowAssembly, OmegaFailure,
                           ThetaDomainError, omega_theta, theta_flow)
from .flow import FlowError, FlowSystem, flow_map
from .juxtapose import (EntranceTimeError, JuxtaposedFlow, LocalFlow,
                        SetPredicate, juxtapose)
from .xreal import POS_INF

CHI_EPS = 1e-6

REGIME_CENTER = 0
REGIME_INTERIOR = 1
REGIME_BOUNDARY = 2


def chi(r: float, eps: float = CHI_EPS) -> float:
    """Radial reparametrization tan((2 pi r - pi)/2) of (0, 1) onto R.

    The argument is clamped to (eps, 1 - eps); the r = 0 and r = 1
    limits belong to the center / boundary regimes of the cell map, not
    to this formula."""
    r = min(max(float(r), eps), 1.0 - eps)
    return math.tan(math.pi * (r - 0.5))


def build_psi(sys: FlowSystem, x, assembly: BoundaryFlowAssembly,
              evaluator=None, theta_h: float = 0.05,
              horizon: float = 60.0) -> JuxtaposedFlow:
    """Juxtaposition of the flow restricted to W^u(x) with the boundary
    flow of the assembly, across V = union of the chart collars.

    `evaluator` may supply a closed-form (t, p) -> point flow map;
    otherwise the system is integrated numerically.  Near x the result
    follows the plain flow for all nonpositive times, so backward psi
    orbits converge to x."""
    target = np.asarray(x.point if hasattr(x, "point") else x, float)
    if np.max(np.abs(target - assembly.target.point)) > 1e-10:
        raise ValueError("assembly was built for a different target point")

    if evaluator is None:
        def evaluator(t, p):
            return flow_map(sys, p, t)

    phi = LocalFlow(space=f"W^u around {target.tolist()}",
                    evaluator=evaluator)

    def margin(p):
        return float(np.min(assembly.rho_table(p))) - 1.0

    V = SetPredicate.from_margin(margin, name="V")

    theta = LocalFlow(
        space=phi.space,
        evaluator=lambda t, p: theta_flow(assembly, p, t, h=theta_h),
        positively_complete=True,
        negatively_complete=False,
        relative_to=SetPredicate(contains=lambda p: not V.contains(p),
                                 name="V complement"))
    return juxtapose(phi, theta, V, horizon=horizon)


def omega_psi(psi: JuxtaposedFlow, assembly: BoundaryFlowAssembly, p,
              tol: float = 1e-3, h: float = 0.05, t_guard: float = 200.0):
    """Forward limit of psi: flow to the entrance locus when outside V,
    then take the boundary-flow limit.  Returns the OmegaResult of the
    final descent.

    The default step matches build_psi's theta step, so the result
    agrees with long psi runs to the discretization's own accuracy."""
    p = np.asarray(p, float)
    tau = psi.tau(p)
    if tau == POS_INF:
        raise OmegaFailure(f"orbit of {p} never reaches V")
    t_in = max(tau.finite_value(), 0.0)
    y = psi(t_in, p) if t_in > 0.0 else p
    return omega_theta(assembly, y, tol=tol, h=h, t_guard=t_guard)


@dataclass
class CellMap:
    """Sampled characteristic map of a top cell on a polar grid.

    images[j, m] is the image of the grid node at radius radii[j] and
    angle angles[m]; regimes uses the REGIME_* constants; failures
    lists (j, m, message) for samples whose evaluation raised."""
    k: int
    center: np.ndarray
    radii: np.ndarray
    angles: np.ndarray
    sphere: np.ndarray
    images: np.ndarray
    regimes: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def n_r(self) -> int:
        return self.radii.size

    @property
    def n_theta(self) -> int:
        return self.angles.size

    def interior_samples(self) -> np.ndarray:
        rows = [self.images[j] for j in range(self.n_r)
                if np.all(self.regimes[j] == REGIME_INTERIOR)]
        return np.concatenate(rows) if rows else np.empty((0, self.images.shape[-1]))


def cell_map(psi: JuxtaposedFlow, assembly: BoundaryFlowAssembly, g,
             n_r: int = 9, n_theta: int = 720, omega=None,
             omega_tol: float = 1e-3, omega_h: float = 0.05) -> CellMap:
    """Sample the map r u -> psi^{chi(r)}(g(u)) over cl(B^2).

    g parametrizes the transverse sphere by angle; the center row maps
    to the stationary point exactly and the r = 1 row through the
    forward-limit map (omega_psi by default; pass `omega` to study a
    different boundary rule)."""
    center = np.asarray(assembly.target.point, float)
    if omega is None:
        def omega(q):
            return omega_psi(psi, assembly, q, tol=omega_tol, h=omega_h).point

    radii = np.linspace(0.0, 1.0, n_r)
    angles = 2.0 * math.pi * np.arange(n_theta) / n_theta
    sphere = np.array([np.asarray(g(a), float) for a in angles])
    dim = center.size
    images = np.full((n_r, n_theta, dim), np.nan)
    regimes = np.full((n_r, n_theta), REGIME_INTERIOR, dtype=int)
    failures = []

    images[0] = center
    regimes[0] = REGIME_CENTER
    for j in range(1, n_r - 1):
        t_j = chi(radii[j])
        for m in range(n_theta):
            try:
                images[j, m] = psi(t_j, sphere[m])
            except (FlowError, ThetaDomainError, EntranceTimeError) as e:
                failures.append((j, m, str(e)))
    regimes[n_r - 1] = REGIME_BOUNDARY
    for m in range(n_theta):
        try:
            images[n_r - 1, m] = omega(sphere[m])
        except (FlowError, ThetaDomainError, OmegaFailure,
                EntranceTimeError) as e:
            failures.append((n_r - 1, m, str(e)))
    return CellMap(k=2, center=center, radii=radii, angles=angles,
                   sphere=sphere, images=images, regimes=regimes,
                   failures=failures)


def continuity_report(cm: CellMap) -> dict:
    """Empirical modulus of continuity on the polar grid.

    Per radius band: the largest image distance between neighboring
    angular samples (failures skipped).  `radial_max` is the largest
    jump between radially adjacent samples."""
    bands = []
    for j in range(cm.n_r):
        row = cm.images[j]
        gaps = np.linalg.norm(row - np.roll(row, -1, axis=0), axis=1)
        ok = np.isfinite(gaps)
        if not np.any(ok):
            bands.append({"r": float(cm.radii[j]), "max_jump": math.nan,
                          "argmax_angle": -1})
            continue
        worst = int(np.nanargmax(np.where(ok, gaps, -np.inf)))
        bands.append({"r": float(cm.radii[j]),
                      "max_jump": float(gaps[worst]),
                      "argmax_angle": worst})
    radial = np.linalg.norm(cm.images[1:] - cm.images[:-1], axis=2)
    radial_max = float(np.nanmax(radial)) if np.any(np.isfinite(radial)) \
        else math.nan
    return {"bands": bands, "radial_max": radial_max,
            "boundary_max_jump": bands[-1]["max_jump"],
            "n_failures": len(cm.failures)}


def polar_mesh(cm: CellMap):
    """Triangulation of the polar grid with the center collapsed to a
    single vertex; returns (vertices, faces) with 0-based face indices."""
    n_t = cm.n_theta
    vertices = [cm.center]
    for j in range(1, cm.n_r):
        vertices.extend(cm.images[j])

    def idx(j, m):
        return 1 + (j - 1) * n_t + (m % n_t)

    faces = []
    for m in range(n_t):
        faces.append((0, idx(1, m), idx(1, m + 1)))
    for j in range(1, cm.n_r - 1):
        for m in range(n_t):
            faces.append((idx(j, m), idx(j + 1, m), idx(j + 1, m + 1)))
            faces.append((idx(j, m), idx(j + 1, m + 1), idx(j, m + 1)))
    return np.array(vertices), faces
