"""Stein scores of the concentrated Gaussian perturbation kernel.

Four formulations with one numerical reference:

* ``score_closed``: the exact score from group elements, dispatching on mode.
* ``score_simplified``: the -z/sigma^2 shortcut, valid on SO3 and R3SO3 only.
* ``score_surrogate``: -z/sigma^2 applied regardless of mode, i.e. the cheap
  stand-in used for SE3 training where the exact score needs the coupled
  Jacobian block.
* ``score_true_se3``: the exact SE3 score through the block Jacobian.
* ``score_numerical``: central differences of the log-density along the
  right-tangent basis, the oracle everything else is checked against.

All tangent vectors use (rho, phi) ordering.
"""

from __future__ import annotations

import numpy as np

from .distributions import concentrated_logprob
from .lie_core import (
    ParamMode,
    RigidTransform,
    compose,
    group_exp,
    group_log,
    inverse,
    se3_jacobian_inv,
    tangent_dim,
)

H_MIN = 1e-7
H_MAX = 1e-3


def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return sigma


def score_closed(y: RigidTransform, x: RigidTransform, sigma: float,
                 mode: ParamMode) -> np.ndarray:
    """Exact score of N_G(. ; x, sigma^2 I) at y, as a right-tangent vector.

    With z = Log(x^-1 y) this is -(1/sigma^2) J_r^{-T}(z) z.  On SO3 and
    R3SO3 the Jacobian factor leaves z unchanged (z is an eigenvector with
    eigenvalue 1), so the result collapses to -z/sigma^2; on SE3 the coupled
    block matters and the full product is taken.
    """
    sigma = _check_sigma(sigma)
    mode = ParamMode(mode)
    z = group_log(compose(inverse(x, mode), y, mode), mode)
    if mode == ParamMode.SE3:
        return score_true_se3(z, sigma)
    return -z / sigma**2


def score_simplified(z: np.ndarray, sigma: float, mode: ParamMode) -> np.ndarray:
    """Score from the sampled noise directly: -z/sigma^2.

    Exact on SO3 and R3SO3.  SE3 is rejected because the identity behind the
    simplification fails there; use score_surrogate (knowingly approximate)
    or score_true_se3 instead.
    """
    sigma = _check_sigma(sigma)
    mode = ParamMode(mode)
    if mode == ParamMode.SE3:
        raise ValueError(
            "score_simplified is not exact on SE3; "
            "use score_surrogate or score_true_se3")
    z = np.asarray(z, dtype=float)
    if z.shape != (tangent_dim(mode),):
        raise ValueError(f"expected shape ({tangent_dim(mode)},), got {z.shape}")
    return -z / sigma**2


def score_surrogate(z: np.ndarray, sigma: float) -> np.ndarray:
    """Surrogate score -z/sigma^2, taken on any tangent vector.

    On SE3 this deliberately drops the Jacobian coupling; the gap to
    score_true_se3 is zero at phi = 0 and strictly positive at generic z.
    """
    sigma = _check_sigma(sigma)
    z = np.asarray(z, dtype=float)
    if z.shape not in ((3,), (6,)):
        raise ValueError(f"expected a 3- or 6-vector, got shape {z.shape}")
    return -z / sigma**2


def score_true_se3(z: np.ndarray, sigma: float) -> np.ndarray:
    """Exact SE3 score -(1/sigma^2) J_r^{-T}(z) z for z = (rho, phi)."""
    sigma = _check_sigma(sigma)
    z = np.asarray(z, dtype=float)
    if z.shape != (6,):
        raise ValueError(f"expected a 6-vector, got shape {z.shape}")
    jrt = se3_jacobian_inv(z, "right_inv_transpose")
    return -(jrt @ z) / sigma**2


def score_numerical(y: RigidTransform, x: RigidTransform, sigma: float,
                    mode: ParamMode, h: float = 1e-5) -> np.ndarray:
    """Central-difference score over the right-tangent basis at y.

    Component i is [log p(y Exp(h e_i) | x) - log p(y Exp(-h e_i) | x)] / 2h.
    The step must lie in [1e-7, 1e-3]; the default balances truncation
    against round-off for float64.
    """
    sigma = _check_sigma(sigma)
    mode = ParamMode(mode)
    h = float(h)
    if not H_MIN <= h <= H_MAX:
        raise ValueError(f"h must lie in [{H_MIN:g}, {H_MAX:g}], got {h:g}")
    dim = tangent_dim(mode)
    out = np.empty(dim)
    for i in range(dim):
        step = np.zeros(dim)
        step[i] = h
        lp_plus = concentrated_logprob(
            compose(y, group_exp(step, mode), mode), x, sigma, mode)
        lp_minus = concentrated_logprob(
            compose(y, group_exp(-step, mode), mode), x, sigma, mode)
        out[i] = (lp_plus - lp_minus) / (2.0 * h)
    return out
