"""Perturbation-kernel distributions on the pose groups.

Two families:

- The concentrated Gaussian N_G(X, sigma^2 I): a Gaussian in tangent
  coordinates pushed onto the group by Y = X Exp(z). Its log-density uses the
  Euclidean normalizer zeta = (2 pi sigma^2)^(kappa/2), which is the standard
  concentrated-regime approximation (it ignores curvature corrections that
  matter only for sigma of order 1).
- IG_SO(3), the isotropic Gaussian / heat kernel on SO(3): density over the
  rotation angle via a truncated character series or a closed-form Gaussian
  approximation, with inverse-transform sampling from a tabulated CDF of the
  angle marginal f_eps(phi) (1 - cos phi)/pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from liediff.lie_core import (
    ParamMode,
    RigidTransform,
    Rotation,
    SingularityError,
    compose,
    group_exp,
    group_log,
    inverse,
    so3_exp,
    tangent_dim,
)

# Character-series truncation and the per-term early-exit bound.
SERIES_MAX_TERMS = 2000
SERIES_TERM_TOL = 1e-12
# Resolution of the tabulated angle CDF used for inverse-transform sampling.
CDF_TABLE_SIZE = 1024
# Below this concentration the angle marginal occupies too few table cells and
# sampling falls back to the tangent-space Gaussian (per-axis variance 2 eps,
# the small-eps limit of the heat kernel in this time convention).
EPS_TABLE_FLOOR = 1e-6


def concentrated_sample(x: RigidTransform, sigma: float, mode: ParamMode, rng):
    """Draw Y = X Exp(z) with z ~ N(0, sigma^2 I); returns (Y, z).

    z is returned so training can form the surrogate target -z/sigma^2
    without re-deriving it through a log map.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mode = ParamMode(mode)
    z = rng.normal(0.0, sigma, size=tangent_dim(mode))
    y = compose(x, group_exp(z, mode), mode)
    return y, z


def concentrated_logprob(y: RigidTransform, x: RigidTransform, sigma: float,
                         mode: ParamMode) -> float:
    """log N_G(Y; X, sigma^2 I) = -||z||^2 / (2 sigma^2) - log zeta."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mode = ParamMode(mode)
    rel = compose(inverse(x, mode), y, mode)
    angle = rel.rot.angle_to(Rotation.identity())
    if angle >= math.pi - 1e-6:
        raise SingularityError(
            "relative rotation too close to the injectivity cut for a log-density")
    z = group_log(rel, mode)
    kappa = tangent_dim(mode)
    return float(-0.5 * np.dot(z, z) / (sigma * sigma)
                 - 0.5 * kappa * math.log(2.0 * math.pi * sigma * sigma))


def _igso3_series(phi: np.ndarray, eps: float) -> np.ndarray:
    """Truncated character series sum (2l+1) e^{-eps l(l+1)} sin((2l+1)phi/2)/sin(phi/2)."""
    half = 0.5 * phi
    sin_half = np.sin(half)
    out = np.zeros_like(phi)
    for ell in range(SERIES_MAX_TERMS):
        weight = (2 * ell + 1) * math.exp(-eps * ell * (ell + 1))
        # |sin((2l+1)phi/2)/sin(phi/2)| <= 2l+1 bounds every remaining term.
        if weight * (2 * ell + 1) < SERIES_TERM_TOL:
            break
        out += weight * np.sin((2 * ell + 1) * half)
    return out / sin_half

def _igso3_closed(phi: np.ndarray, eps: float) -> np.ndarray:
    """Folded-Gaussian closed approximation of the heat kernel.

    sqrt(pi) eps^{-3/2} e^{eps/4} e^{-(phi/2)^2/eps}
      * [phi - e^{-pi^2/eps}((phi-2pi) e^{pi phi/eps} + (phi+2pi) e^{-pi phi/eps})]
      / (2 sin(phi/2))
    The image-term exponentials are combined as exp((pi phi - pi^2)/eps) to
    avoid overflow at small eps.
    """
    pref = math.sqrt(math.pi) * eps ** -1.5 * math.exp(0.25 * eps)
    main = np.exp(-0.25 * phi * phi / eps)
    img = ((phi - 2.0 * math.pi) * np.exp((math.pi * phi - math.pi ** 2) / eps)
           + (phi + 2.0 * math.pi) * np.exp((-math.pi * phi - math.pi ** 2) / eps))
    return pref * main * (phi - img) / (2.0 * np.sin(0.5 * phi))


def igso3_density(phi, eps: float, method: str = "truncated_series"):
    """Heat-kernel density f_eps at rotation angle phi in (0, pi).

    This is the density with respect to the Haar measure; integrating over the
    angle requires the marginal factor (1 - cos phi)/pi.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    arr = np.asarray(phi, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any((arr <= 0.0) | (arr >= math.pi)):
        raise ValueError("phi must lie strictly inside (0, pi)")
    if method == "truncated_series":
        out = _igso3_series(arr, eps)
    elif method == "closed_approx":
        out = _igso3_closed(arr, eps)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out[0]) if scalar else out


def igso3_angle_marginal(phi, eps: float, method: str = "truncated_series"):
    """Density of the rotation angle itself: f_eps(phi) (1 - cos phi)/pi."""
    arr = np.asarray(phi, dtype=np.float64)
    return igso3_density(phi, eps, method) * (1.0 - np.cos(arr)) / math.pi


@dataclass(frozen=True)
class Igso3Table:
    """Tabulated inverse-CDF data for one concentration value."""

    grid: np.ndarray
    cdf: np.ndarray
    eps: float

    def __post_init__(self):
        if self.grid.shape != self.cdf.shape:
            raise ValueError("grid and cdf must have equal shapes")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(np.diff(self.cdf) < 0) or abs(self.cdf[-1] - 1.0) > 1e-9:
            raise ValueError("cdf must be non-decreasing and end at 1")
        # Flat CDF stretches (underflowed tails) are dropped from the view used
        # for inverse interpolation so it is strictly monotone.
        keep = np.concatenate([[True], np.diff(self.cdf) > 0])
        object.__setattr__(self, "inv_cdf", self.cdf[keep])
        object.__setattr__(self, "inv_grid", self.grid[keep])

    def inverse(self, u: float) -> float:
        """Angle at CDF value u, by linear interpolation."""
        return float(np.interp(u, self.inv_cdf, self.inv_grid))


_TABLE_CACHE: dict[float, Igso3Table] = {}


def igso3_table(eps: float) -> Igso3Table:
    """Build (or fetch from cache) the angle-CDF table for concentration eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    cached = _TABLE_CACHE.get(eps)
    if cached is not None:
        return cached
    # Interior grid: the density op is defined on the open interval and the
    # marginal vanishes at both endpoints, so the clipped half-cells carry
    # negligible mass.
    grid = np.linspace(0.0, math.pi, CDF_TABLE_SIZE + 2)[1:-1]
    # Truncation noise of the series can leave tiny negative values in the far
    # tail; clip so the CDF stays monotone.
    pdf = np.clip(igso3_angle_marginal(grid, eps), 0.0, None)
    steps = np.diff(grid)
    increments = 0.5 * (pdf[1:] + pdf[:-1]) * steps
    cdf = np.concatenate([[0.0], np.cumsum(increments)])
    total = cdf[-1]
    if not math.isfinite(total) or total <= 0.0:
        raise FloatingPointError(f"CDF construction underflowed for eps={eps}")
    cdf = cdf / total
    table = Igso3Table(grid=grid, cdf=cdf, eps=eps)
    _TABLE_CACHE[eps] = table
    return table


def igso3_sample(eps: float, rng) -> Rotation:
    """Inverse-transform sample of IG_SO(3) centered at the identity.

    For eps below EPS_TABLE_FLOOR the angle distribution is narrower than the
    CDF table can resolve and the sampler falls back to the tangent Gaussian
    with per-axis standard deviation sqrt(2 eps).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps < EPS_TABLE_FLOOR:
        return so3_exp(rng.normal(0.0, math.sqrt(2.0 * eps), size=3))
    table = igso3_table(eps)
    angle = table.inverse(rng.uniform(0.0, 1.0))
    axis = rng.normal(size=3)
    norm = np.linalg.norm(axis)
    while norm < 1e-12:
        axis = rng.normal(size=3)
        norm = np.linalg.norm(axis)
    return so3_exp(angle * axis / norm)
