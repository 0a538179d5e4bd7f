"""Posterior label uncertainty from LiDAR evidence.

Observation model: each BEV point is drawn from an equal-weight mixture of
isotropic Gaussians centered on its nearest perimeter reference points of
the box. The label posterior keeps the annotated box as its mean and gets a
per-parameter variance from the local curvature of the log posterior
(Laplace step with a diagonal Gaussian prior); a per-axis grid integration
serves as the independent oracle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .bounds import clamp_variance
from .geometry import BoxBEV, sample_perimeter_points

__all__ = [
    "GenerativeModelConfig",
    "GaussianLabel",
    "PointSetBEV",
    "EmptyObservation",
    "NonPositiveDefinite",
    "PARAM_NAMES",
    "gmm_log_likelihood",
    "nearest_components",
    "infer_label_posterior",
    "posterior_oracle_grid",
]

log = logging.getLogger(__name__)

PARAM_NAMES = ("cx", "cy", "l", "w", "theta")


class EmptyObservation(ValueError):
    """Likelihood requested for an object with no associated points."""


class NonPositiveDefinite(RuntimeError):
    """Posterior precision failed its Cholesky check; caller falls back to the prior."""


@dataclass(frozen=True)
class GenerativeModelConfig:
    """Observation-model knobs.

    k: perimeter reference points per box; n_nearest: mixture components
    scored per observation; sigma_s: isotropic component std in meters;
    prior_var: diagonal prior variance over (cx, cy, l, w, theta).
    """

    k: int = 64
    n_nearest: int = 4
    sigma_s: float = 0.1
    prior_var: tuple = (0.25, 0.25, 0.25, 0.1, 0.04)

    def __post_init__(self):
        if self.k < 4:
            raise ValueError("k must be >= 4")
        if not (1 <= self.n_nearest <= self.k):
            raise ValueError("n_nearest must be in [1, k]")
        if self.sigma_s <= 0.0:
            raise ValueError("sigma_s must be positive")
        pv = tuple(float(v) for v in self.prior_var)
        if len(pv) != 5 or any(v <= 0.0 for v in pv):
            raise ValueError("prior_var needs 5 positive entries")
        object.__setattr__(self, "prior_var", pv)


@dataclass(frozen=True, eq=False)
class PointSetBEV:
    """BEV observations of one object; m is always the row count."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)

    @property
    def m(self):
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class GaussianLabel:
    """Annotated box plus clamped per-parameter variances (cx, cy, l, w, theta)."""

    mean: BoxBEV
    var: np.ndarray

    def __post_init__(self):
        v = clamp_variance(self.var)
        if v.shape != (5,):
            raise ValueError("label variance must have 5 entries")
        object.__setattr__(self, "var", v)


def _squared_distances(box, obs, cfg):
    refs = sample_perimeter_points(box, cfg.k)
    diff = obs.points[:, None, :] - refs[None, :, :]
    return np.einsum("mkd,mkd->mk", diff, diff)


def nearest_components(box: BoxBEV, obs: PointSetBEV, cfg: GenerativeModelConfig) -> np.ndarray:
    """(M, n_nearest) indices of each observation's nearest reference points."""
    if obs.m == 0:
        raise EmptyObservation("no observations to assign")
    d2 = _squared_distances(box, obs, cfg)
    if cfg.n_nearest >= cfg.k:
        return np.tile(np.arange(cfg.k), (obs.m, 1))
    return np.argpartition(d2, cfg.n_nearest - 1, axis=1)[:, : cfg.n_nearest]


def gmm_log_likelihood(
    box: BoxBEV,
    obs: PointSetBEV,
    cfg: GenerativeModelConfig,
    assignments: np.ndarray | None = None,
) -> float:
    """Total log density of the observations under the perimeter mixture.

    Each observation is scored against its n_nearest reference points with
    equal weights 1/n_nearest; pass `assignments` to pin the component sets
    (used by the curvature evaluation) instead of recomputing them at `box`.
    Log-sum-exp stabilized.
    """
    if obs.m == 0:
        raise EmptyObservation("log likelihood of an empty point set")
    if assignments is None:
        assignments = nearest_components(box, obs, cfg)
    refs = sample_perimeter_points(box, cfg.k)
    sel = refs[assignments]  # (M, N, 2)
    diff = obs.points[:, None, :] - sel
    d2 = np.einsum("mnd,mnd->mn", diff, diff)
    log_comp = -d2 / (2.0 * cfg.sigma_s**2)
    mx = log_comp.max(axis=1)
    lse = mx + np.log(np.exp(log_comp - mx[:, None]).sum(axis=1))
    const = -math.log(2.0 * math.pi * cfg.sigma_s**2) - math.log(cfg.n_nearest)
    return float((lse + const).sum())


def _fd_hessian(f, x0, steps):
    """Dense symmetric Hessian by central differences."""
    n = x0.size
    h = np.zeros((n, n))
    f0 = f(x0)
    for i in range(n):
        hi = steps[i]
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += hi
        xm[i] -= hi
        h[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / hi**2
        for j in range(i + 1, n):
            hj = steps[j]
            xpp = x0.copy()
            xpm = x0.copy()
            xmp = x0.copy()
            xmm = x0.copy()
            xpp[i] += hi
            xpp[j] += hj
            xpm[i] += hi
            xpm[j] -= hj
            xmp[i] -= hi
            xmp[j] += hj
            xmm[i] -= hi
            xmm[j] -= hj
            h[i, j] = h[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * hi * hj)
    return h


def _spd_inverse(a):
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite(str(exc)) from None
    return np.linalg.inv(a)


def infer_label_posterior(
    label: BoxBEV, obs: PointSetBEV, cfg: GenerativeModelConfig | None = None
) -> GaussianLabel:
    """Gaussian label posterior at the annotated mean.

    The mean stays at the label; variances come from the diagonal of the
    inverse of [-Hessian(log likelihood) + diag(1/prior_var)], the Hessian
    taken by central differences with mixture assignments frozen at the
    label (the full covariance is formed internally, off-diagonals are
    discarded). No observations, or a non-positive-definite precision, fall
    back to the prior variances.
    """
    cfg = cfg or GenerativeModelConfig()
    prior = np.asarray(cfg.prior_var, dtype=float)
    if obs.m == 0:
        return GaussianLabel(label, prior)

    assign = nearest_components(label, obs, cfg)
    x0 = label.as_vector()
    steps = np.maximum(1e-3, 1e-2 * np.sqrt(prior))
    steps[2] = min(steps[2], 0.25 * label.l)  # keep extents positive in the stencil
    steps[3] = min(steps[3], 0.25 * label.w)

    def loglik(v):
        return gmm_log_likelihood(BoxBEV.from_vector(v), obs, cfg, assignments=assign)

    precision = -_fd_hessian(loglik, x0, steps) + np.diag(1.0 / prior)
    try:
        cov = _spd_inverse(precision)
    except NonPositiveDefinite:
        log.warning(
            "posterior precision not positive definite (M=%d); falling back to prior",
            obs.m,
        )
        return GaussianLabel(label, prior)
    return GaussianLabel(label, np.diag(cov).copy())


def posterior_oracle_grid(
    label: BoxBEV,
    obs: PointSetBEV,
    cfg: GenerativeModelConfig,
    half_widths,
    steps_per_axis: int,
) -> np.ndarray:
    """Per-axis posterior variance by dense 1D integration, for validation.

    Each axis is swept over label +- half_width with the other four
    parameters held at the label (conditional slices, matching the
    diagonal-only reporting); the discrete posterior combines the exact
    mixture likelihood (assignments recomputed at every grid point) with the
    Gaussian prior on the swept axis. Returns the 5 empirical variances.
    """
    if steps_per_axis < 11 or steps_per_axis % 2 == 0:
        raise ValueError("steps_per_axis must be odd and >= 11")
    hw = np.asarray(half_widths, dtype=float)
    if hw.shape != (5,) or np.any(hw <= 0.0):
        raise ValueError("half_widths needs 5 positive entries")
    prior = np.asarray(cfg.prior_var, dtype=float)
    x0 = label.as_vector()
    if x0[2] - hw[2] <= 0.0 or x0[3] - hw[3] <= 0.0:
        raise ValueError("half_widths on l/w axes must keep extents positive")
    out = np.zeros(5)
    for axis in range(5):
        grid = x0[axis] + np.linspace(-hw[axis], hw[axis], steps_per_axis)
        logp = np.empty(steps_per_axis)
        for t, val in enumerate(grid):
            v = x0.copy()
            v[axis] = val
            ll = 0.0
            if obs.m > 0:
                ll = gmm_log_likelihood(BoxBEV.from_vector(v), obs, cfg)
            logp[t] = ll - 0.5 * (val - x0[axis]) ** 2 / prior[axis]
        logp -= logp.max()
        p = np.exp(logp)
        p /= p.sum()
        mu = float((p * grid).sum())
        out[axis] = float((p * (grid - mu) ** 2).sum())
    return out
