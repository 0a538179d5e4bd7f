"""Posterior corner-density heatmaps on the evaluation grid.

Renders, for one object, the Monte-Carlo density of box corner positions
under the label posterior, rasterized at the crop range's resolution. The
grid is indexed [ix, iy] with ix along +x (forward) and iy along +y (left);
the PGM export flips rows so +y appears at the top of the image.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import box_corners
from .kitti_io import CropRange
from .label_uncertainty import GaussianLabel

__all__ = [
    "grid_shape",
    "heatmap_grid",
    "corner_anisotropy",
    "encode_pgm",
    "heatmap_csv_lines",
]


def grid_shape(crop: CropRange):
    """(nx, ny) cell counts: range extents divided by the resolution."""
    nx = round((crop.x[1] - crop.x[0]) / crop.resolution)
    ny = round((crop.y[1] - crop.y[0]) / crop.resolution)
    return nx, ny


def heatmap_grid(post: GaussianLabel, crop: CropRange, n_samples: int = 4000, seed: int = 0):
    """Rasterized corner-position density for one posterior, as density per m^2.

    Boxes are sampled from the diagonal Gaussian posterior (extents floored
    at 0.1 m) and their four corners histogrammed over the crop window.
    Deterministic per seed via a counter-based generator.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.Generator(np.random.Philox(key=seed))
    mean = post.mean.as_vector()
    draws = mean + np.sqrt(post.var) * rng.standard_normal((n_samples, 5))
    draws[:, 2] = np.maximum(draws[:, 2], 0.1)
    draws[:, 3] = np.maximum(draws[:, 3], 0.1)

    c = np.cos(draws[:, 4])
    s = np.sin(draws[:, 4])
    hl = 0.5 * draws[:, 2]
    hw = 0.5 * draws[:, 3]
    signs = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    lx = signs[None, :, 0] * hl[:, None]
    ly = signs[None, :, 1] * hw[:, None]
    xs = draws[:, 0:1] + c[:, None] * lx - s[:, None] * ly
    ys = draws[:, 1:2] + s[:, None] * lx + c[:, None] * ly

    nx, ny = grid_shape(crop)
    counts, _, _ = np.histogram2d(
        xs.ravel(),
        ys.ravel(),
        bins=[nx, ny],
        range=[[crop.x[0], crop.x[1]], [crop.y[0], crop.y[1]]],
    )
    cell_area = crop.resolution**2
    return counts / (4.0 * n_samples * cell_area)


def corner_anisotropy(grid, crop: CropRange, post: GaussianLabel):
    """Density spread along vs across the box heading, averaged per corner.

    Grid cells are assigned to their nearest posterior-mean corner; each
    cluster's density-weighted second moments are projected on the heading
    direction and its perpendicular. Returns (var_along, var_across).
    """
    ix, iy = np.nonzero(grid)
    if ix.size == 0:
        raise ValueError("empty heatmap grid")
    weights = grid[ix, iy]
    x = crop.x[0] + (ix + 0.5) * crop.resolution
    y = crop.y[0] + (iy + 0.5) * crop.resolution
    pts = np.stack([x, y], axis=1)

    corners = box_corners(post.mean).vertices
    d2 = ((pts[:, None, :] - corners[None, :, :]) ** 2).sum(-1)
    nearest = np.argmin(d2, axis=1)

    heading = np.array([math.cos(post.mean.theta), math.sin(post.mean.theta)])
    perp = np.array([-heading[1], heading[0]])
    var_along = []
    var_across = []
    masses = []
    for k in range(4):
        sel = nearest == k
        if not np.any(sel):
            continue
        w = weights[sel]
        p = pts[sel]
        mass = w.sum()
        mu = (w[:, None] * p).sum(axis=0) / mass
        rel = p - mu
        u = rel @ heading
        v = rel @ perp
        var_along.append((w * u * u).sum() / mass)
        var_across.append((w * v * v).sum() / mass)
        masses.append(mass)
    masses = np.asarray(masses)
    return (
        float(np.average(var_along, weights=masses)),
        float(np.average(var_across, weights=masses)),
    )


def encode_pgm(grid) -> bytes:
    """8-bit binary PGM (P5) of the grid, scaled to the peak density.

    Image rows run from high iy (left side of the vehicle frame) down, so
    +y is at the top; columns follow +x.
    """
    peak = float(grid.max())
    scaled = np.zeros_like(grid, dtype=np.uint8)
    if peak > 0.0:
        scaled = np.round(grid / peak * 255.0).astype(np.uint8)
    image = scaled.T[::-1, :]  # rows: iy descending; cols: ix ascending
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    return header + image.tobytes()


def heatmap_csv_lines(grid):
    """Exact-valued sparse CSV lines (ix, iy, density), header included."""
    lines = ["ix,iy,density"]
    ix, iy = np.nonzero(grid)
    for a, b in zip(ix, iy):
        lines.append(f"{a},{b},{float(grid[a, b])!r}")
    return lines
