"""Exponential and logarithm maps of SO(3) (axis-angle parametrisation)."""

from __future__ import annotations

import numpy as np

from ..errors import NotARotation


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix(es) of shape (..., 3, 3) such that hat(w) @ v = w x v."""
    w = np.asarray(w, dtype=float)
    H = np.zeros(w.shape[:-1] + (3, 3))
    H[..., 0, 1] = -w[..., 2]
    H[..., 0, 2] = w[..., 1]
    H[..., 1, 0] = w[..., 2]
    H[..., 1, 2] = -w[..., 0]
    H[..., 2, 0] = -w[..., 1]
    H[..., 2, 1] = w[..., 0]
    return H


def so3_exp(w) -> np.ndarray:
    """Rodrigues' formula; accepts a single 3-vector or a stack (..., 3)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    W = hat(w)
    W2 = W @ W
    small = theta < 1e-6
    t = np.where(small, 1.0, theta)
    A = np.where(small, 1.0 - theta**2 / 6.0, np.sin(t) / t)
    B = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(t)) / t**2)
    return np.eye(3) + A * W + B * W2


def so3_log(R, atol: float = 1e-9) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, with norm in [0, pi]."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise NotARotation("expected a finite 3x3 matrix")
    if np.linalg.norm(R.T @ R - np.eye(3)) > atol or np.linalg.det(R) <= 0:
        raise NotARotation("matrix is not orthonormal with det +1")
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    # atan2 stays well conditioned near 0 and pi, unlike arccos of the trace
    sin = 0.5 * np.linalg.norm(v)
    theta = np.arctan2(sin, (np.trace(R) - 1.0) / 2.0)
    if theta < 1e-6:
        return 0.5 * v * (1.0 + theta**2 / 6.0)
    if sin > 1e-6:
        return theta / (2.0 * sin) * v
    # near pi: axis from the symmetric part, sign from the skew part
    S = (R + R.T) / 4.0 + np.eye(3) / 2.0
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / np.sqrt(max(S[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ v < 0:
        axis = -axis
    return theta * axis
