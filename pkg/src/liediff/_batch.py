"""Vectorized float64 kernels over a leading batch axis.

Private mirror of the scalar operations in lie_core, used by the training
loop and the sampler where per-element Python dispatch would dominate the
runtime.  Every kernel here is cross-checked element-wise against the scalar
reference in the test suite.  Quaternions are (w, x, y, z) rows; tangent
vectors use (rho, phi) ordering.

Unlike the public API, these kernels do not refuse inputs near the angle-pi
singularity margin: the closed forms are finite on (0, 2 pi) and the training
loop may legitimately draw noise beyond the injectivity radius.  Rows with
rotation angle approaching 2 pi (a true singularity) are wrapped back to the
principal branch first.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-4
WRAP_ANGLE = 2.0 * np.pi - 0.3


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip each row so its first nonzero component is positive."""
    q = np.asarray(q, dtype=float)
    nonzero = np.abs(q) > 0.0
    first = np.argmax(nonzero, axis=-1)
    lead = np.take_along_axis(q, first[..., None], axis=-1)[..., 0]
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return q * sign[..., None]


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return quat_canonical(q / np.linalg.norm(q, axis=-1, keepdims=True))


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return quat_canonical(np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1))


def quat_conj(q: np.ndarray) -> np.ndarray:
    return quat_canonical(q * np.array([1.0, -1.0, -1.0, -1.0]))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply unit quaternions to vectors, row by row."""
    u = q[..., 1:]
    w = q[..., :1]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def so3_exp_quat(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    half = 0.5 * theta
    # sinc form is exact at theta = 0.
    k = 0.5 * np.sinc(half / np.pi)
    q = np.empty(phi.shape[:-1] + (4,))
    q[..., 0] = np.cos(half)
    q[..., 1:] = k[..., None] * phi
    return quat_canonical(q)


def so3_log_quat(q: np.ndarray) -> np.ndarray:
    q = quat_canonical(np.asarray(q, dtype=float))
    w = q[..., 0]
    xyz = q[..., 1:]
    s = np.linalg.norm(xyz, axis=-1)
    # Guarded atan2 form; the s -> 0 limit of the factor is 2/w.
    small = s < 1e-9
    safe_s = np.where(small, 1.0, s)
    factor = np.where(small, 2.0 / w, 2.0 * np.arctan2(s, w) / safe_s)
    return factor[..., None] * xyz


def _jl_ab(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients a, b of J_l = I + a hat(phi) + b hat(phi)^2."""
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small,
                 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
                 (1.0 - np.cos(safe)) / (safe * safe))
    b = np.where(small,
                 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
                 (safe - np.sin(safe)) / (safe ** 3))
    return a, b


def _jl_inv_c(theta: np.ndarray) -> np.ndarray:
    """Coefficient c of J_l^{-1} = I - hat(phi)/2 + c hat(phi)^2."""
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    return np.where(small,
                    1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0,
                    1.0 / (safe * safe) - 1.0 / (2.0 * safe * np.tan(0.5 * safe)))


def hat_batch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def jl_matrix(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi, axis=-1)
    a, b = _jl_ab(theta)
    h = hat_batch(phi)
    eye = np.broadcast_to(np.eye(3), h.shape)
    return eye + a[..., None, None] * h + b[..., None, None] * (h @ h)


def jl_inv_matrix(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi, axis=-1)
    c = _jl_inv_c(theta)
    h = hat_batch(phi)
    eye = np.broadcast_to(np.eye(3), h.shape)
    return eye - 0.5 * h + c[..., None, None] * (h @ h)


def _q_coeffs(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t2 = theta * theta
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    s = np.sin(safe)
    c = np.cos(safe)
    sh = np.sin(0.5 * safe)
    q2 = np.where(small,
                  1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
                  (safe - s) / safe ** 3)
    # Difference-of-squares form; the naive theta^2 + 2 cos - 2 cancels badly.
    q3 = np.where(small,
                  1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
                  (safe - 2.0 * sh) * (safe + 2.0 * sh) / (2.0 * safe ** 4))
    q4 = np.where(small,
                  1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
                  (2.0 * (safe - s) - (s - safe * c)) / (2.0 * safe ** 5))
    return q2, q3, q4


def q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi, axis=-1)
    q2, q3, q4 = _q_coeffs(theta)
    rx = hat_batch(rho)
    px = hat_batch(phi)
    pxrx = px @ rx
    rxpx = rx @ px
    pxrxpx = pxrx @ px
    px2 = px @ px
    out = 0.5 * rx
    out += q2[..., None, None] * (pxrx + rxpx + pxrxpx)
    out += q3[..., None, None] * (px2 @ rx + rx @ px2 - 3.0 * pxrxpx)
    out += q4[..., None, None] * (pxrx @ px2 + px2 @ rxpx)
    return out


def se3_score_true(z: np.ndarray, sigma: np.ndarray | float) -> np.ndarray:
    """Rows of -(1/sigma^2) J_r^{-T}(z) z for z = (rho, phi)."""
    z = np.asarray(z, dtype=float)
    rho, phi = z[..., :3], z[..., 3:]
    jli = jl_inv_matrix(phi)
    zblock = -jli @ q_matrix(rho, phi) @ jli
    top = (jli @ rho[..., None])[..., 0]
    bottom = (zblock @ rho[..., None])[..., 0] + phi
    sigma = np.asarray(sigma, dtype=float)
    return -np.concatenate([top, bottom], axis=-1) / (sigma ** 2)[..., None]


def group_exp_batch(z: np.ndarray, mode) -> tuple[np.ndarray, np.ndarray]:
    """Tangent rows -> (quaternions, translations)."""
    from .lie_core import ParamMode
    z = np.asarray(z, dtype=float)
    mode = ParamMode(mode)
    if mode == ParamMode.SO3:
        return so3_exp_quat(z), np.zeros(z.shape[:-1] + (3,))
    rho, phi = z[..., :3], z[..., 3:]
    q = so3_exp_quat(phi)
    if mode == ParamMode.R3SO3:
        return q, rho.copy()
    t = (jl_matrix(phi) @ rho[..., None])[..., 0]
    return q, t


def group_log_batch(q: np.ndarray, t: np.ndarray, mode) -> np.ndarray:
    from .lie_core import ParamMode
    mode = ParamMode(mode)
    phi = so3_log_quat(q)
    if mode == ParamMode.SO3:
        return phi
    if mode == ParamMode.R3SO3:
        return np.concatenate([t, phi], axis=-1)
    rho = (jl_inv_matrix(phi) @ np.asarray(t, dtype=float)[..., None])[..., 0]
    return np.concatenate([rho, phi], axis=-1)


def compose_batch(qa: np.ndarray, ta: np.ndarray, qb: np.ndarray,
                  tb: np.ndarray, mode) -> tuple[np.ndarray, np.ndarray]:
    from .lie_core import ParamMode
    mode = ParamMode(mode)
    q = quat_mul(qa, qb)
    if mode == ParamMode.SE3:
        t = ta + quat_rotate(qa, tb)
    else:
        t = ta + tb
    return q, t


def wrap_principal(z: np.ndarray, mode) -> np.ndarray:
    """Wrap rows whose rotation angle is dangerously close to 2 pi.

    Draws of sigma-scaled noise occasionally land beyond the injectivity
    radius; the Jacobian forms stay finite there until the angle reaches
    2 pi, so only rows past WRAP_ANGLE are re-expressed on the principal
    branch (via exp then log, which also rebuilds the translation tangent).
    """
    from .lie_core import ParamMode
    z = np.asarray(z, dtype=float)
    mode = ParamMode(mode)
    phi = z if mode == ParamMode.SO3 else z[..., 3:]
    bad = np.linalg.norm(phi, axis=-1) > WRAP_ANGLE
    if not np.any(bad):
        return z
    z = z.copy()
    q, t = group_exp_batch(z[bad], mode)
    z[bad] = group_log_batch(q, t, mode)
    return z
