"""Scalar descriptors of two-phase images: effective-medium estimates,
n-point statistics, morphology, and filter responses.

All functions take small 2D arrays (1D microstructures pass 1-row images).
Masks are boolean phase indicators; value images carry the conductivities.
Pixel units throughout.
"""

from __future__ import annotations

import warnings
from collections import deque

import numpy as np
import scipy.ndimage as ndi

from ..errors import ConfigError, NumericalError

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


# ---------------------------------------------------------------------------
# effective-medium estimates

def generalized_mean(values, q):
    v = np.asarray(values, dtype=float).ravel()
    if np.any(v <= 0.0):
        raise NumericalError("generalized mean needs positive values")
    if q == 0.0:
        return float(np.exp(np.mean(np.log(v))))
    return float(np.mean(v**q) ** (1.0 / q))


def self_consistent_approximation(v_hi, lam_lo, lam_hi):
    """Self-consistent (Bruggeman-type) effective conductivity of a 2D mix."""
    v_lo = 1.0 - v_hi
    alpha = lam_lo * (2.0 * v_lo - 1.0) + lam_hi * (2.0 * v_hi - 1.0)
    return 0.5 * (alpha + np.sqrt(alpha**2 + 4.0 * lam_hi * lam_lo))


def maxwell_garnett(lam_mat, v_inc, cap_factor=1e3):
    """Dilute-inclusion estimate lam_mat / (1 - 2 v_inc), as printed in its source.

    The formula has a pole at v_inc = 1/2 and goes negative past it; the
    magnitude is clamped to cap_factor * lam_mat (sign kept, positive at the
    pole itself) so downstream regression never sees infinities.
    """
    denom = 1.0 - 2.0 * v_inc
    cap = cap_factor * lam_mat
    if denom == 0.0:
        warnings.warn("Maxwell-Garnett pole at v_inc = 1/2, value clamped")
        return cap
    val = lam_mat / denom
    if abs(val) > cap:
        warnings.warn("Maxwell-Garnett value near pole clamped")
        return np.sign(val) * cap
    return val


def differential_effective_medium(lam_mat, lam_inc, v_inc, tol=1e-10):
    """Differential effective-medium conductivity, solved by bisection.

    Root of ((lam_inc - phi)/(lam_inc - lam_mat)) * sqrt(lam_mat/phi)
    = 1 - v_inc, bracketed between the two phase conductivities.
    """
    if lam_mat == lam_inc:
        return float(lam_mat)

    def resid(phi):
        return ((lam_inc - phi) / (lam_inc - lam_mat)) * np.sqrt(lam_mat / phi) \
            - (1.0 - v_inc)

    a, b = lam_mat, lam_inc  # resid(a) = v_inc >= 0, resid(b) = -(1-v_inc) <= 0
    fa = resid(a)
    for _ in range(200):
        mid = 0.5 * (a + b)
        fm = resid(mid)
        if fa * fm > 0.0:
            a, fa = mid, fm
        else:
            b = mid
        if abs(b - a) < tol * max(1.0, abs(a) + abs(b)):
            break
    else:
        raise NumericalError("differential effective medium bisection stalled")
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# n-point statistics

def _axis_pair_counts(mask, d):
    """Same-phase pair and position counts at offset d along both axes."""
    ny, nx = mask.shape
    hits = 0
    total = 0
    if nx > d:
        hits += int(np.count_nonzero(mask[:, :nx - d] & mask[:, d:]))
        total += ny * (nx - d)
    if ny > d:
        hits += int(np.count_nonzero(mask[:ny - d, :] & mask[d:, :]))
        total += (ny - d) * nx
    return hits, total


def two_point_corr(mask, d):
    """Fraction of in-bounds pixel pairs at axis-aligned offset d lying in the phase."""
    if d < 0:
        raise ConfigError("offset must be non-negative")
    if d == 0:
        return float(np.mean(mask))
    hits, total = _axis_pair_counts(mask, int(d))
    if total == 0:
        raise ConfigError(f"offset {d} exceeds the cell extent")
    return hits / total


def specific_surface(mask):
    """Interface density estimate -4 * (S2(1) - S2(0)) in pixel units."""
    return -4.0 * (two_point_corr(mask, 1) - two_point_corr(mask, 0))


def lineal_path(mask, d):
    """Fraction of axis-aligned segments joining pixels d apart lying wholly in
    the phase (both axes pooled); d = 0 reduces to the volume fraction."""
    if d < 0:
        raise ConfigError("distance must be non-negative")
    d = int(d)
    if d == 0:
        return float(np.mean(mask))
    ny, nx = mask.shape
    hits = 0
    total = 0
    m = mask.astype(np.int64)
    if nx > d:
        run = np.lib.stride_tricks.sliding_window_view(m, d + 1, axis=1)
        hits += int(np.count_nonzero(run.sum(axis=-1) == d + 1))
        total += ny * (nx - d)
    if ny > d:
        run = np.lib.stride_tricks.sliding_window_view(m, d + 1, axis=0)
        hits += int(np.count_nonzero(run.sum(axis=-1) == d + 1))
        total += (ny - d) * nx
    if total == 0:
        return 0.0
    return hits / total


def lineal_path_fit(mask, distances, floor=1e-12):
    """Least-squares fit of a * exp(-b d) to the lineal path function.

    Log-linear fit over the given distances; values are floored away from
    zero so empty runs stay finite.
    """
    distances = np.asarray(distances, dtype=float)
    L = np.array([max(lineal_path(mask, int(d)), floor) for d in distances])
    A = np.stack([np.ones_like(distances), -distances], axis=1)
    coeff, *_ = np.linalg.lstsq(A, np.log(L), rcond=None)
    return float(np.exp(coeff[0])), float(coeff[1])


# ---------------------------------------------------------------------------
# morphology

def blob_count(mask):
    """Number of 4-connected components of the phase."""
    _, n = ndi.label(mask, structure=FOUR_CONN)
    return float(n)


def pixel_cross_max(mask, axis):
    """Largest per-line phase pixel count; 'x' scans rows, 'y' scans columns."""
    if axis == "x":
        counts = mask.sum(axis=1)
    elif axis == "y":
        counts = mask.sum(axis=0)
    else:
        raise ConfigError(f"unknown axis {axis!r}")
    return float(counts.max()) if counts.size else 0.0


def max_extent(mask, axis):
    """Largest bounding-box extent of any blob along the given axis."""
    labels, n = ndi.label(mask, structure=FOUR_CONN)
    if n == 0:
        return 0.0
    best = 0
    for sl in ndi.find_objects(labels):
        span = sl[0] if axis == "y" else sl[1]
        best = max(best, span.stop - span.start)
    return float(best)


def convex_area_stats(mask, stat):
    """max / mean / var of blob convex hull pixel areas; zeros if no phase."""
    from skimage.morphology import convex_hull_image

    labels, n = ndi.label(mask, structure=FOUR_CONN)
    if n == 0:
        return 0.0
    areas = []
    for idx, sl in enumerate(ndi.find_objects(labels), start=1):
        blob = labels[sl] == idx
        if blob.sum() <= 2:
            areas.append(float(blob.sum()))
        else:
            areas.append(float(convex_hull_image(blob).sum()))
    areas = np.asarray(areas)
    if stat == "max":
        return float(areas.max())
    if stat == "mean":
        return float(areas.mean())
    if stat == "var":
        return float(areas.var())
    raise ConfigError(f"unknown stat {stat!r}")


def connected_path_invdist(mask, axis):
    """Inverse length of the shortest 4-connected phase path spanning the cell.

    'x' connects the left and right edges, 'y' bottom and top; 0.0 when no
    spanning path exists. Length counts pixels on the path.
    """
    if axis not in ("x", "y"):
        raise ConfigError(f"unknown axis {axis!r}")
    grid = mask if axis == "y" else mask.T  # rows become the crossing axis
    ny, nx = grid.shape
    dist = np.full(grid.shape, -1, dtype=int)
    queue = deque()
    for j in range(nx):
        if grid[0, j]:
            dist[0, j] = 1
            queue.append((0, j))
    while queue:
        i, j = queue.popleft()
        if i == ny - 1:
            return 1.0 / dist[i, j]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ii, jj = i + di, j + dj
            if 0 <= ii < ny and 0 <= jj < nx and grid[ii, jj] and dist[ii, jj] < 0:
                dist[ii, jj] = dist[i, j] + 1
                queue.append((ii, jj))
    return 0.0


def distance_stat(mask, metric, stat):
    """Statistic of the distance-to-phase map over the cell.

    Every pixel gets its distance to the nearest phase pixel (zero inside the
    phase). When the phase is absent the map is taken to be identically the
    cell diagonal, so mean/max return the sentinel and var returns 0.
    """
    ny, nx = mask.shape
    if not mask.any():
        dmap = np.full(mask.shape, float(np.hypot(ny, nx)))
    elif metric == "euclidean":
        dmap = ndi.distance_transform_edt(~mask)
    elif metric == "cityblock":
        dmap = ndi.distance_transform_cdt(~mask, metric="taxicab").astype(float)
    elif metric == "chessboard":
        dmap = ndi.distance_transform_cdt(~mask, metric="chessboard").astype(float)
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    if stat == "mean":
        return float(dmap.mean())
    if stat == "var":
        return float(dmap.var())
    if stat == "max":
        return float(dmap.max())
    raise ConfigError(f"unknown stat {stat!r}")


# ---------------------------------------------------------------------------
# filters and pixel statistics

def gauss_filter_mean(values, width_factor):
    """Isotropic-Gaussian weighted mean of the cell, variance width_factor * side.

    Weights are normalized to sum to one, so any constant image maps to that
    constant regardless of the width.
    """
    values = np.asarray(values, dtype=float)
    ny, nx = values.shape
    var = width_factor * max(ny, nx)
    ys = np.arange(ny) + 0.5 - ny / 2.0
    xs = np.arange(nx) + 0.5 - nx / 2.0
    w = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * var))
    return float((w * values).sum() / w.sum())


def population_std(values):
    return float(np.std(np.asarray(values, dtype=float)))


def log_std(values, eps=1e-5):
    return float(np.log(population_std(values) + eps))


def ising_energy(mask_hi):
    """Nearest-neighbour Ising energy with unit coupling, spins +1 (hi) / -1 (lo)."""
    s = np.where(mask_hi, 1.0, -1.0)
    e = 0.0
    if s.shape[1] > 1:
        e -= float((s[:, :-1] * s[:, 1:]).sum())
    if s.shape[0] > 1:
        e -= float((s[:-1, :] * s[1:, :]).sum())
    return e
