"""SO(3) and unit-quaternion helpers.

Quaternions are numpy arrays ``[w, x, y, z]`` in the Hamilton convention.
Conversions and interpolation delegate to ``scipy.spatial.transform``,
which stores quaternions scalar-last.
"""
import numpy as np
from scipy.spatial.transform import Rotation, Slerp

_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(phi: np.ndarray) -> np.ndarray:
    """Rotation matrix of a rotation vector (Rodrigues)."""
    angle = np.linalg.norm(phi)
    if angle < _SMALL_ANGLE:
        K = skew(phi)
        return np.eye(3) + K + 0.5 * K @ K
    K = skew(phi / angle)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * K @ K


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix."""
    return Rotation.from_matrix(R).as_rotvec()


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3): Exp(phi + d) ~ Exp(phi) Exp(Jr d)."""
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (
        np.eye(3)
        - (1.0 - np.cos(angle)) / angle**2 * K
        + (angle - np.sin(angle)) / angle**3 * K @ K
    )


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`right_jacobian`."""
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    coeff = 1.0 / angle**2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * K + coeff * K @ K


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError(f"Cannot normalize quaternion {q}")
    q = q / norm
    # keep the scalar part non-negative so equal rotations compare equal
    return q if q[0] >= 0.0 else -q


def _to_scipy(q: np.ndarray) -> Rotation:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w])


def _from_scipy(rot: Rotation) -> np.ndarray:
    x, y, z, w = rot.as_quat()
    return quat_normalize(np.array([w, x, y, z]))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    return _from_scipy(Rotation.from_matrix(R))


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 ⊗ q2."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_exp(phi: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation vector."""
    angle = np.linalg.norm(phi)
    if angle < _SMALL_ANGLE:
        q = np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
        return q / np.linalg.norm(q)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * phi / angle])


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion (shortest arc)."""
    q = quat_normalize(q)
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < _SMALL_ANGLE:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(vec_norm, q[0])
    return angle * q[1:] / vec_norm


def quat_box_plus(q: np.ndarray, dtheta: np.ndarray) -> np.ndarray:
    """Right (body-frame) perturbation q ⊗ Exp(dtheta), renormalized."""
    return quat_normalize(quat_multiply(q, quat_exp(dtheta)))


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion of intrinsic z-y-x (yaw, pitch, roll) angles."""
    return _from_scipy(Rotation.from_euler("ZYX", [yaw, pitch, roll]))


def quat_to_euler(q: np.ndarray) -> np.ndarray:
    """(roll, pitch, yaw) of a quaternion, inverse of :func:`quat_from_euler`."""
    yaw, pitch, roll = _to_scipy(q).as_euler("ZYX")
    return np.array([roll, pitch, yaw])


def quat_slerp(q0: np.ndarray, q1: np.ndarray, fraction: float) -> np.ndarray:
    """Spherical interpolation between two quaternions, fraction in [0, 1]."""
    if fraction <= 0.0:
        return quat_normalize(q0)
    if fraction >= 1.0:
        return quat_normalize(q1)
    rotations = Rotation.concatenate([_to_scipy(q0), _to_scipy(q1)])
    return _from_scipy(Slerp([0.0, 1.0], rotations)([fraction])[0])


def is_rotation_matrix(R: np.ndarray, tol: float = 1e-12) -> bool:
    """True when R is orthonormal with determinant +1 (infinity norm check)."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R.T @ R - np.eye(3))) < tol and abs(np.linalg.det(R) - 1.0) < 1e-9
    )
