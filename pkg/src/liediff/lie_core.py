"""Group algebra for SO(3), R3xSO(3) and SE(3).

Conventions used throughout the package:

- Rotations are stored as unit quaternions (w, x, y, z) with a canonical sign
  (w >= 0; if w == 0 the first nonzero imaginary component is positive).
- Tangent vectors are 3-vectors for SO(3) and 6-vectors ordered (rho, phi)
  for SE(3) and R3xSO(3): translational part first, rotational part last.
- SE(3) composition is (R2, T2) o (R1, T1) = (R2 R1, T2 + R2 T1); the product
  group R3xSO(3) composes as (R2 R1, T2 + T1).
- Left Jacobian J_l(phi) = I + a(theta) phi^ + b(theta) phi^^2 with
  a = (1 - cos theta)/theta^2, b = (theta - sin theta)/theta^3, theta = ||phi||;
  J_r(phi) = J_l(-phi). Coefficients switch to 4th-order Taylor series below
  theta = 1e-4 where the closed forms lose precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Angle below which every phi-dependent coefficient uses its Taylor series.
SMALL_ANGLE = 1e-4
# Inverse Jacobians refuse angles at or beyond pi minus this margin.
SINGULARITY_MARGIN = 1e-6


class SingularityError(ValueError):
    """Requested operation is undefined at or too close to the rotation cut."""


class ParamMode(str, Enum):
    """Which group structure interprets a (rotation, translation) pair."""

    SO3 = "so3"
    R3SO3 = "r3so3"
    SE3 = "se3"


def tangent_dim(mode: ParamMode) -> int:
    return 3 if mode == ParamMode.SO3 else 6


def _as_vector(v, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (dim,):
        raise ValueError(f"{name} must be a {dim}-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    """Normalize and fix the sign ambiguity of a quaternion."""
    norm = math.sqrt(float(np.dot(q, q)))
    if not math.isfinite(norm) or norm == 0.0:
        raise ValueError("quaternion must be finite and nonzero")
    q = q / norm
    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        for comp in q[1:]:
            if comp != 0.0:
                if comp < 0.0:
                    q = -q
                break
    return q


@dataclass(frozen=True)
class Rotation:
    """Element of SO(3) stored as a canonical unit quaternion (w, x, y, z)."""

    q: np.ndarray

    def __post_init__(self):
        q = _as_vector(self.q, 4, "quaternion")
        object.__setattr__(self, "q", _canonical_quat(q))
        self.q.setflags(write=False)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_quat(q) -> "Rotation":
        return Rotation(np.asarray(q, dtype=np.float64))

    @staticmethod
    def from_matrix(m) -> "Rotation":
        """Convert a rotation matrix via the max-diagonal (Shepperd) branch.

        The branch on the largest of trace/diagonal keeps the conversion well
        conditioned for half-turn rotations, where the naive trace formula
        divides by ~0.
        """
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        choices = [tr, m[0, 0], m[1, 1], m[2, 2]]
        case = int(np.argmax(choices))
        if case == 0:
            s = math.sqrt(max(tr + 1.0, 0.0)) * 2.0
            q = np.array([
                0.25 * s,
                (m[2, 1] - m[1, 2]) / s,
                (m[0, 2] - m[2, 0]) / s,
                (m[1, 0] - m[0, 1]) / s,
            ])
        elif case == 1:
            s = math.sqrt(max(1.0 + m[0, 0] - m[1, 1] - m[2, 2], 0.0)) * 2.0
            q = np.array([
                (m[2, 1] - m[1, 2]) / s,
                0.25 * s,
                (m[0, 1] + m[1, 0]) / s,
                (m[0, 2] + m[2, 0]) / s,
            ])
        elif case == 2:
            s = math.sqrt(max(1.0 + m[1, 1] - m[0, 0] - m[2, 2], 0.0)) * 2.0
            q = np.array([
                (m[0, 2] - m[2, 0]) / s,
                (m[0, 1] + m[1, 0]) / s,
                0.25 * s,
                (m[1, 2] + m[2, 1]) / s,
            ])
        else:
            s = math.sqrt(max(1.0 + m[2, 2] - m[0, 0] - m[1, 1], 0.0)) * 2.0
            q = np.array([
                (m[1, 0] - m[0, 1]) / s,
                (m[0, 2] + m[2, 0]) / s,
                (m[1, 2] + m[2, 1]) / s,
                0.25 * s,
            ])
        return Rotation(q)

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def compose(self, other: "Rotation") -> "Rotation":
        """Hamilton product self * other (other applied first)."""
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def apply(self, v) -> np.ndarray:
        """Rotate a 3-vector."""
        v = _as_vector(v, 3, "vector")
        return self.as_matrix() @ v

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle in radians, accurate near zero.

        ||qa -/+ qb|| = 2 |sin(delta/2)| with delta = half the rotation angle,
        so the angle is 4 asin(min_sign_distance / 2).
        """
        d = min(float(np.linalg.norm(self.q - other.q)),
                float(np.linalg.norm(self.q + other.q)))
        return 4.0 * math.asin(min(d / 2.0, 1.0))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation; ParamMode decides the group semantics."""

    rot: Rotation
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = _as_vector(self.trans, 3, "translation")
        object.__setattr__(self, "trans", t)
        self.trans.setflags(write=False)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(Rotation.identity(), np.zeros(3))


def hat(v) -> np.ndarray:
    """Skew-symmetric 3x3 matrix with hat(v) @ u = v x u."""
    x, y, z = _as_vector(v, 3, "vector")
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def so3_exp(phi) -> Rotation:
    """Exponential map: rotation by ||phi|| about phi/||phi||."""
    phi = _as_vector(phi, 3, "phi")
    theta = float(np.linalg.norm(phi))
    half = 0.5 * theta
    # sin(theta/2)/theta via sinc is exact at theta = 0.
    k = 0.5 * np.sinc(half / math.pi)
    return Rotation(np.array([math.cos(half), k * phi[0], k * phi[1], k * phi[2]]))


def so3_log(r: Rotation) -> np.ndarray:
    """Principal axis-angle vector with norm in [0, pi]."""
    w = float(r.q[0])
    xyz = np.asarray(r.q[1:])
    s = float(np.linalg.norm(xyz))
    if s < 1e-9:
        # theta ~ 2 s / w; relative error O(s^2) is far below tolerance here.
        return xyz * (2.0 / w)
    theta = 2.0 * math.atan2(s, w)
    return xyz * (theta / s)


def _ab_coeffs(theta: float) -> tuple[float, float]:
    """a = (1-cos)/theta^2 and b = (theta-sin)/theta^3 with Taylor fallback."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        return a, b
    t2 = theta * theta
    return (1.0 - math.cos(theta)) / t2, (theta - math.sin(theta)) / (t2 * theta)


def _c_coeff(theta: float) -> float:
    """Coefficient of phi^^2 in J_l^{-1}.

    The textbook form 1/theta^2 - (1+cos)/(2 theta sin) cancels destructively
    near theta = pi; the identity (1+cos)/(2 theta sin) = cot(theta/2)/(2 theta)
    is exact and stable on (0, pi].
    """
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    return 1.0 / (theta * theta) - 1.0 / (2.0 * theta * math.tan(0.5 * theta))


def _jl_inv_unchecked(phi: np.ndarray, theta: float) -> np.ndarray:
    """J_l^{-1} without the public singularity refusal (finite on [0, pi])."""
    px = hat(phi)
    return np.eye(3) - 0.5 * px + _c_coeff(theta) * (px @ px)


def so3_jacobian(phi, kind: str) -> np.ndarray:
    """Left/right Jacobian of SO(3) or its inverse.

    kind is one of "left", "right", "left_inv", "right_inv". The inverse kinds
    are singular at ||phi|| = pi and refuse input within SINGULARITY_MARGIN of
    it.
    """
    phi = _as_vector(phi, 3, "phi")
    theta = float(np.linalg.norm(phi))
    px = hat(phi)
    px2 = px @ px
    eye = np.eye(3)
    if kind in ("left", "right"):
        a, b = _ab_coeffs(theta)
        sign = 1.0 if kind == "left" else -1.0
        return eye + sign * a * px + b * px2
    if kind in ("left_inv", "right_inv"):
        if theta >= math.pi - SINGULARITY_MARGIN:
            raise SingularityError(
                f"inverse Jacobian undefined at angle {theta:.6f} (cut at pi)")
        c = _c_coeff(theta)
        sign = 1.0 if kind == "left_inv" else -1.0
        return eye - sign * 0.5 * px + c * px2
    raise ValueError(f"unknown Jacobian kind {kind!r}")


def _q_coeffs(theta: float) -> tuple[float, float, float]:
    """The three angle-dependent coefficients of the SE(3) coupling matrix."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        t4 = t2 * t2
        q2 = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0
        q3 = 1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0
        q4 = 1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0
        return q2, q3, q4
    t2 = theta * theta
    t3 = t2 * theta
    s, c = math.sin(theta), math.cos(theta)
    q2 = (theta - s) / t3
    # (theta^2 + 2 cos - 2) and (2 theta - 3 sin + theta cos) as printed cancel
    # destructively for small-ish angles; these groupings are exact rewrites.
    half_s = math.sin(0.5 * theta)
    q3 = (theta - 2.0 * half_s) * (theta + 2.0 * half_s) / (2.0 * t2 * t2)
    q4 = (2.0 * (theta - s) - (s - theta * c)) / (2.0 * t2 * t3)
    return q2, q3, q4


def se3_q_matrix(rho, phi) -> np.ndarray:
    """Translation-rotation coupling block of the SE(3) left Jacobian.

    Equals the integral int_0^1 s * hat(J_l(s phi) rho) exp(s phi^) ds; the
    closed form below is the standard expansion in rho^ and phi^.
    """
    rho = _as_vector(rho, 3, "rho")
    phi = _as_vector(phi, 3, "phi")
    theta = float(np.linalg.norm(phi))
    rx = hat(rho)
    px = hat(phi)
    q2, q3, q4 = _q_coeffs(theta)
    prp = px @ rx @ px
    px2 = px @ px
    return (
        0.5 * rx
        + q2 * (px @ rx + rx @ px + prp)
        + q3 * (px2 @ rx + rx @ px2 - 3.0 * prp)
        + q4 * (prp @ px + px @ prp)
    )


def se3_jacobian_inv(tau, kind: str) -> np.ndarray:
    """Inverse SE(3) Jacobian blocks in (rho, phi) ordering.

    kind "left_inv" returns [[J_l^{-1}(phi), Z], [0, J_l^{-1}(phi)]] and
    "right_inv_transpose" returns [[J_l^{-1}(phi), 0], [Z, J_l^{-1}(phi)]],
    both with Z = -J_l^{-1}(phi) Q(rho, phi) J_l^{-1}(phi). The same Z block
    appears in both: transposing J_r^{-1}(tau) = J_l^{-1}(-tau) maps
    Z(-rho, -phi)^T back to Z(rho, phi) via Q^T(-rho, -phi) = Q(rho, phi).
    """
    tau = _as_vector(tau, 6, "tau")
    rho, phi = tau[:3], tau[3:]
    jli = so3_jacobian(phi, "left_inv")
    z = -jli @ se3_q_matrix(rho, phi) @ jli
    out = np.zeros((6, 6))
    out[:3, :3] = jli
    out[3:, 3:] = jli
    if kind == "left_inv":
        out[:3, 3:] = z
    elif kind == "right_inv_transpose":
        out[3:, :3] = z
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return out


def group_exp(tau, mode: ParamMode) -> RigidTransform:
    """Tangent vector to group element; semantics fixed by mode."""
    mode = ParamMode(mode)
    if mode == ParamMode.SO3:
        phi = _as_vector(tau, 3, "tau")
        return RigidTransform(so3_exp(phi), np.zeros(3))
    tau = _as_vector(tau, 6, "tau")
    rho, phi = tau[:3], tau[3:]
    rot = so3_exp(phi)
    if mode == ParamMode.R3SO3:
        return RigidTransform(rot, rho.copy())
    trans = so3_jacobian(phi, "left") @ rho
    return RigidTransform(rot, trans)


def group_log(x: RigidTransform, mode: ParamMode) -> np.ndarray:
    """Group element to tangent vector; inverse of group_exp."""
    mode = ParamMode(mode)
    phi = so3_log(x.rot)
    if mode == ParamMode.SO3:
        return phi
    if mode == ParamMode.R3SO3:
        return np.concatenate([x.trans, phi])
    theta = float(np.linalg.norm(phi))
    rho = _jl_inv_unchecked(phi, theta) @ x.trans
    return np.concatenate([rho, phi])


def compose(x: RigidTransform, y: RigidTransform, mode: ParamMode) -> RigidTransform:
    """Group product x o y (y applied first)."""
    mode = ParamMode(mode)
    rot = x.rot.compose(y.rot)
    if mode == ParamMode.SO3:
        return RigidTransform(rot, np.zeros(3))
    if mode == ParamMode.R3SO3:
        return RigidTransform(rot, x.trans + y.trans)
    return RigidTransform(rot, x.trans + x.rot.apply(y.trans))


def inverse(x: RigidTransform, mode: ParamMode) -> RigidTransform:
    mode = ParamMode(mode)
    rinv = x.rot.inverse()
    if mode == ParamMode.SO3:
        return RigidTransform(rinv, np.zeros(3))
    if mode == ParamMode.R3SO3:
        return RigidTransform(rinv, -x.trans)
    return RigidTransform(rinv, -rinv.apply(x.trans))
