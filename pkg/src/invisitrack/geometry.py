"""Pinhole cameras, rays, triangulation and point-to-ray distances.

Conventions: world units are millimetres, image units are pixels with
integer coordinates at pixel centres, and extrinsics map world to camera
(x right, y down, z forward).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BehindCamera, DegenerateGeometry, InsufficientViews, OutOfBounds

# cond(A) of the 3x3 normal matrix above which a ray bundle counts as parallel
TRIANGULATION_MAX_COND = 1e10


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Distortion-free pinhole camera.

    Parameters
    ----------
    id : str
        Camera label.
    K : (3, 3) array
        Intrinsic matrix in pixels.
    R, t : (3, 3) array, (3,) array
        World-to-camera rotation and translation (mm), ``x_cam = R x + t``.
    width, height : int
        Image size in pixels.
    """

    id: str
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "K", _frozen(self.K, (3, 3)))
        object.__setattr__(self, "R", _frozen(self.R, (3, 3)))
        object.__setattr__(self, "t", _frozen(self.t, (3,)))
        R = self.R
        if np.linalg.norm(R.T @ R - np.eye(3)) >= 1e-9 or np.linalg.det(R) <= 0:
            raise ValueError(f"camera {self.id}: rotation is not in SO(3)")
        fx, fy = self.K[0, 0], self.K[1, 1]
        cx, cy = self.K[0, 2], self.K[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError(f"camera {self.id}: focal lengths must be positive")
        if not (0 <= cx <= self.width and 0 <= cy <= self.height):
            raise ValueError(f"camera {self.id}: principal point outside image")

    @property
    def center(self) -> np.ndarray:
        """Optical centre in world coordinates."""
        return -self.R.T @ self.t

    @property
    def P(self) -> np.ndarray:
        """3x4 projection matrix ``K [R | t]``."""
        return self.K @ np.hstack([self.R, self.t[:, None]])

    @property
    def principal_point(self) -> np.ndarray:
        return self.K[:2, 2].copy()

    def in_bounds(self, pixels) -> np.ndarray:
        """Boolean mask of pixels lying inside the image rectangle."""
        px = np.asarray(pixels, dtype=float)
        return (
            (px[..., 0] >= -0.5)
            & (px[..., 0] <= self.width - 0.5)
            & (px[..., 1] >= -0.5)
            & (px[..., 1] <= self.height - 0.5)
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "K": self.K.ravel().tolist(),
            "R": self.R.ravel().tolist(),
            "t": self.t.tolist(),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            id=str(d["id"]),
            K=np.reshape(d["K"], (3, 3)),
            R=np.reshape(d["R"], (3, 3)),
            t=np.asarray(d["t"], dtype=float),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray = field()

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if not np.isfinite(n) or n == 0:
            raise ValueError("ray direction must be a finite non-zero vector")
        object.__setattr__(self, "origin", _frozen(self.origin, (3,)))
        object.__setattr__(self, "direction", _frozen(d / n, (3,)))

    def at(self, s: float) -> np.ndarray:
        return self.origin + s * self.direction


def camera_points(camera: CameraModel, points) -> np.ndarray:
    """Transform world points (..., 3) into the camera frame."""
    X = np.asarray(points, dtype=float)
    return X @ camera.R.T + camera.t


def project_points(camera: CameraModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection without depth checks.

    Returns
    -------
    pixels : (..., 2) array
    depth : (...) array
        z coordinate in the camera frame; callers decide what to do with
        non-positive values.
    """
    Xc = camera_points(camera, points)
    h = Xc @ camera.K.T
    z = Xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = h[..., :2] / h[..., 2:3]
    return px, z


def project(camera: CameraModel, point) -> np.ndarray:
    """Perspective projection of a single world point to a pixel."""
    px, z = project_points(camera, np.asarray(point, dtype=float).reshape(3))
    if not z > 0:
        raise BehindCamera(f"point has depth {z:.6g} in camera {camera.id}")
    return px


def projection_jacobian(camera: CameraModel, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixels, depths and d(pixel)/d(world point) for points of shape (M, 3).

    The Jacobian has shape (M, 2, 3).
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    Xc = X @ camera.R.T + camera.t
    h = Xc @ camera.K.T
    w = h[:, 2]
    px = h[:, :2] / w[:, None]
    # d(h_a / w)/dXc = (K[a] - px_a K[2]) / w
    KA = camera.K[None, :2, :] - px[:, :, None] * camera.K[None, 2:3, :]
    J = (KA / w[:, None, None]) @ camera.R
    return px, Xc[:, 2], J


def pixel_to_ray(camera: CameraModel, pixel) -> Ray:
    """Back-project a pixel to the world-frame ray through the camera centre."""
    u = np.asarray(pixel, dtype=float).reshape(2)
    if not np.all(np.isfinite(u)) or not camera.in_bounds(u):
        raise OutOfBounds(f"pixel {u.tolist()} outside {camera.width}x{camera.height} image of {camera.id}")
    d_cam = np.linalg.solve(camera.K, np.array([u[0], u[1], 1.0]))
    return Ray(camera.center, camera.R.T @ d_cam)


def point_to_ray_distance(point, ray: Ray) -> float:
    """Perpendicular distance from a point to an (infinite) ray line."""
    d = np.asarray(point, dtype=float) - ray.origin
    perp = d - (d @ ray.direction) * ray.direction
    return float(np.linalg.norm(perp))


def triangulate_rays(rays: Sequence[Ray]) -> np.ndarray:
    """Least-squares point closest to all rays (generalised midpoint)."""
    if len(rays) < 2:
        raise InsufficientViews(f"need at least 2 rays, got {len(rays)}")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for ray in rays:
        P = np.eye(3) - np.outer(ray.direction, ray.direction)
        A += P
        b += P @ ray.origin
    if np.linalg.cond(A) > TRIANGULATION_MAX_COND:
        raise DegenerateGeometry("ray bundle is (nearly) parallel")
    return np.linalg.solve(A, b)


def triangulate(observations: Iterable[tuple[CameraModel, np.ndarray]]) -> np.ndarray:
    """Triangulate one point from ``(camera, pixel)`` observations."""
    obs = list(observations)
    if len(obs) < 2:
        raise InsufficientViews(f"need at least 2 observations, got {len(obs)}")
    return triangulate_rays([pixel_to_ray(cam, px) for cam, px in obs])


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    if abs(z @ up) / np.linalg.norm(up) > 0.99:
        up = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return R, -R @ eye


def save_rig(cameras: Sequence[CameraModel], path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cameras], indent=1) + "\n")


def load_rig(path) -> list[CameraModel]:
    return [CameraModel.from_dict(d) for d in json.loads(Path(path).read_text())]
