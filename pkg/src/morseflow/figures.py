"""Figure rendering for the report path.

Everything draws on the Agg backend into SVG files.  A fixed hash salt
and a cleared creation date keep the output stable across runs; text is
left as text (fonttype none) so no glyph paths depend on the font
library build.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "morseflow"
matplotlib.rcParams["svg.fonttype"] = "none"

__all__ = ["save", "phase_portrait", "cell_map_portrait", "curve_plot",
           "meridian_portrait"]

_INDEX_MARKERS = {0: "o", 1: "s", 2: "^", 3: "D"}


def save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def phase_portrait(sys, box, path, critical=(), orbits=()):
    """Direction field of a planar system with rest points and orbits.

    critical is a list of (point, unstable dimension) pairs; the marker
    encodes the dimension.  orbits are (n, 2) polylines.
    """
    (x0, x1), (y0, y1) = box
    xs = np.linspace(x0, x1, 24)
    ys = np.linspace(y0, y1, 24)
    X, Y = np.meshgrid(xs, ys)
    U = np.zeros_like(X)
    V = np.zeros_like(Y)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            v = sys.eval_field(np.array([X[i, j], Y[i, j]]))
            n = np.hypot(v[0], v[1])
            if n > 1e-14:
                U[i, j], V[i, j] = v[0] / n, v[1] / n
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.quiver(X, Y, U, V, angles="xy", scale=40.0, width=2e-3,
              color="0.55")
    for orbit in orbits:
        orbit = np.asarray(orbit, float)
        ax.plot(orbit[:, 0], orbit[:, 1], lw=0.9, color="tab:blue")
    for point, k in critical:
        ax.plot([point[0]], [point[1]],
                marker=_INDEX_MARKERS.get(int(k), "x"), ms=7.0,
                mfc="tab:red", mec="black", ls="none")
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    save(fig, path)


def cell_map_portrait(cm, path):
    """Image curves of the polar grid of a planar cell map.

    One closed curve per radius band; the boundary band is emphasized.
    Bands with failed samples are drawn with gaps (NaN breaks the line).
    """
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    for j in range(1, cm.n_r):
        row = cm.images[j]
        closed = np.vstack([row, row[:1]])
        last = j == cm.n_r - 1
        ax.plot(closed[:, 0], closed[:, 1],
                lw=1.6 if last else 0.7,
                color="tab:red" if last else "tab:blue")
    ax.plot([cm.center[0]], [cm.center[1]], marker="o", ms=5.0,
            color="black")
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    save(fig, path)


def curve_plot(xs, curves, path, xlabel="", ylabel="", logy=False):
    """Plain labelled curves over a shared abscissa.

    curves maps legend labels to value arrays (same length as xs).
    """
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for label in sorted(curves):
        ax.plot(xs, curves[label], lw=1.2, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(curves) > 1:
        ax.legend(frameon=False, fontsize=8)
    save(fig, path)


def meridian_portrait(report, path):
    """Half-plane (r, z) view of an alternating-limit witness report.

    Shows the invariant sphere meridian, the axis rest points, and the
    forward limits of the probe orbits keyed by parity.
    """
    fig, ax = plt.subplots(figsize=(4.5, 5.0))
    lam = np.linspace(-np.pi / 2, np.pi / 2, 200)
    ax.plot(3.0 * np.cos(lam), 3.0 * np.sin(lam), color="0.6", lw=1.0)
    for z in (-3.0, -1.0, 1.0, 3.0):
        ax.plot([0.0], [z], marker="o", ms=5.0, mfc="white", mec="black",
                ls="none")
    for row in report["rows"]:
        x, y, z = row["omega"]
        r = float(np.hypot(x, y))
        even = row["k"] % 2 == 0
        ax.plot([r], [z], marker="^" if even else "v", ms=6.0,
                color="tab:blue" if even else "tab:red", ls="none")
    ax.set_xlim(-0.2, 3.4)
    ax.set_ylim(-3.6, 3.6)
    ax.set_xlabel("r")
    ax.set_ylabel("z")
    ax.set_aspect("equal")
    save(fig, path)
