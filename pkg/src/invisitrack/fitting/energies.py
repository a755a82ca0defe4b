"""Energy terms of the embedded deformation fit and their residual blocks.

Every term is a sum of squared residuals.  The ``*_block`` functions return
the stacked residual vector and, on request, its sparse Jacobian with
respect to a per-vertex increment ``[dw_i, dt_i]`` (6 columns per vertex),
where the rotation update is ``R_i <- exp(dw_i) R_i``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from ..errors import BehindCamera
from ..geometry import CameraModel, projection_jacobian
from ..template import Binding, Template, binding_weights, vertex_normals
from .graph import GraphNeighborhood
from .so3 import hat, so3_exp


@dataclass(eq=False)
class DeformationState:
    """Per-vertex translations t_i (N, 3) and rotations R_i (N, 3, 3)."""

    translations: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        self.translations = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        if len(self.translations) != len(self.rotations):
            raise ValueError("translations and rotations differ in length")

    @classmethod
    def zero(cls, n: int) -> "DeformationState":
        return cls(np.zeros((n, 3)), np.tile(np.eye(3), (n, 1, 1)))

    @property
    def n(self) -> int:
        return len(self.translations)

    def deformed(self, rest_vertices) -> np.ndarray:
        return np.asarray(rest_vertices, dtype=float) + self.translations

    def retract(self, step) -> "DeformationState":
        step = np.asarray(step, dtype=float).reshape(self.n, 6)
        R = so3_exp(step[:, :3]) @ self.rotations
        return DeformationState(self.translations + step[:, 3:], R)

    def copy(self) -> "DeformationState":
        return DeformationState(self.translations.copy(), self.rotations.copy())

    def to_dict(self) -> dict:
        return {"translations": self.translations.tolist(), "rotations": self.rotations.reshape(-1, 9).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DeformationState":
        return cls(np.array(d["translations"]), np.array(d["rotations"]).reshape(-1, 3, 3))


def deform_point(state: DeformationState, i: int, rest_vertex, point) -> np.ndarray:
    """Position of ``point`` under the local transform of node i."""
    v = np.asarray(rest_vertex, dtype=float)
    return state.rotations[i] @ (np.asarray(point, dtype=float) - v) + v + state.translations[i]


@dataclass(eq=False)
class MarkerObservationSet:
    """2-D marker positions per camera, aligned with a list of marker ids.

    ``pixels`` has shape (C, F, 2) and ``weights`` (C, F); entries with
    weight 0 are ignored (occluded or undetected).
    """

    camera_ids: list[str]
    marker_ids: list[str]
    pixels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        C, F = len(self.camera_ids), len(self.marker_ids)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(C, F, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(C, F)
        if np.any(self.weights < 0):
            raise ValueError("observation weights must be non-negative")

    @classmethod
    def empty(cls, marker_ids=()) -> "MarkerObservationSet":
        return cls([], list(marker_ids), np.zeros((0, len(marker_ids), 2)), np.zeros((0, len(marker_ids))))

    @property
    def n_observed(self) -> int:
        return int(np.count_nonzero(self.weights))

    def reordered(self, marker_ids: Sequence[str]) -> "MarkerObservationSet":
        """Observations re-indexed to ``marker_ids``; missing ids get weight 0."""
        if list(marker_ids) == list(self.marker_ids):
            return self
        pos = {m: k for k, m in enumerate(self.marker_ids)}
        C = len(self.camera_ids)
        px = np.zeros((C, len(marker_ids), 2))
        w = np.zeros((C, len(marker_ids)))
        for k, m in enumerate(marker_ids):
            if m in pos:
                px[:, k] = self.pixels[:, pos[m]]
                w[:, k] = self.weights[:, pos[m]]
        return MarkerObservationSet(list(self.camera_ids), list(marker_ids), px, w)

    def to_records(self) -> list[dict]:
        out = []
        for c, cid in enumerate(self.camera_ids):
            for f, mid in enumerate(self.marker_ids):
                if self.weights[c, f] > 0:
                    u, v = self.pixels[c, f].tolist()
                    out.append({"camera_id": cid, "marker_id": mid, "u": u, "v": v, "w": float(self.weights[c, f])})
        return out

    @classmethod
    def from_records(cls, records: Sequence[dict], camera_ids: Sequence[str], marker_ids: Sequence[str]) -> "MarkerObservationSet":
        cpos = {c: k for k, c in enumerate(camera_ids)}
        mpos = {m: k for k, m in enumerate(marker_ids)}
        px = np.zeros((len(camera_ids), len(marker_ids), 2))
        w = np.zeros((len(camera_ids), len(marker_ids)))
        for r in records:
            c, f = cpos[r["camera_id"]], mpos[r["marker_id"]]
            px[c, f] = (r["u"], r["v"])
            w[c, f] = r.get("w", 1.0)
        return cls(list(camera_ids), list(marker_ids), px, w)


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Closest deformed template vertex c(j) for each cloud point j."""

    indices: np.ndarray
    distances: np.ndarray


def build_correspondences(deformed_vertices, cloud) -> CorrespondenceSet:
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        return CorrespondenceSet(np.zeros(0, dtype=np.intp), np.zeros(0))
    d, idx = cKDTree(np.asarray(deformed_vertices, dtype=float)).query(cloud)
    return CorrespondenceSet(np.asarray(idx, dtype=np.intp), d)


class EnergyTerm(NamedTuple):
    value: float
    residuals: np.ndarray


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    return sp.coo_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape).tocsr()


# ---------------------------------------------------------------------------
# fit term


def fit_block(state: DeformationState, rest_vertices, cloud, correspondences: CorrespondenceSet,
              beta: float, normals=None, jacobian: bool = False):
    """Point-to-vertex residuals (3 per point) then point-to-face residuals.

    ``normals`` are the vertex normals of the deformed mesh; they are held
    fixed in the Jacobian.  Pass ``beta=0`` (or ``normals=None``) to drop
    the point-to-face part.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    c = correspondences.indices
    M, N = len(cloud), state.n
    diff = np.asarray(rest_vertices)[c] + state.translations[c] - cloud
    use_face = beta > 0 and normals is not None
    parts = [diff.ravel()]
    sb = np.sqrt(beta) if use_face else 0.0
    if use_face:
        n = np.asarray(normals)[c]
        parts.append(sb * np.einsum("ij,ij->i", n, diff))
    r = np.concatenate(parts)
    if not jacobian:
        return r, None
    rows = np.arange(3 * M)
    cols = (6 * c[:, None] + 3 + np.arange(3)[None, :]).ravel()
    vals = np.ones(3 * M)
    if use_face:
        rows = np.concatenate([rows, np.repeat(3 * M + np.arange(M), 3)])
        cols = np.concatenate([cols, (6 * c[:, None] + 3 + np.arange(3)[None, :]).ravel()])
        vals = np.concatenate([vals, (sb * n).ravel()])
    return r, _coo(rows, cols, vals, (len(r), 6 * N))


def energy_fit(state: DeformationState, template: Template, cloud, correspondences: CorrespondenceSet,
               beta: float) -> EnergyTerm:
    """Point-to-vertex plus beta-weighted point-to-face energy.

    Normals come from the deformed mesh of ``state``.  Templates without
    faces (joint chains) only have the point-to-vertex part.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        warnings.warn("energy_fit called with an empty point cloud", RuntimeWarning, stacklevel=2)
        return EnergyTerm(0.0, np.zeros(0))
    normals = None
    if len(template.faces):
        normals = vertex_normals(state.deformed(template.vertices), template.faces)
    r, _ = fit_block(state, template.vertices, cloud, correspondences, beta, normals)
    return EnergyTerm(float(r @ r), r)


# ---------------------------------------------------------------------------
# marker term


def marker_block(state: DeformationState, rest_vertices, marker_idx, marker_w,
                 observations: MarkerObservationSet, cameras: dict[str, CameraModel], jacobian: bool = False):
    """Residuals sqrt(w_ij) (p_ij - pi_i(x_j)) stacked per camera, 2 per marker.

    Entries with w_ij = 0 contribute zero rows.
    """
    deformed = state.deformed(rest_vertices)
    X = np.einsum("mk,mkd->md", marker_w, deformed[marker_idx])
    C, F = observations.weights.shape
    r = np.zeros((C, F, 2))
    jr, jc, jv = [], [], []
    for ci, cid in enumerate(observations.camera_ids):
        w = observations.weights[ci]
        vis = np.flatnonzero(w > 0)
        if len(vis) == 0:
            continue
        px, z, Jp = projection_jacobian(cameras[cid], X[vis])
        if np.any(z <= 0):
            bad = observations.marker_ids[vis[np.argmin(z)]]
            raise BehindCamera(f"marker {bad} is behind camera {cid} but has positive weight")
        sw = np.sqrt(w[vis])
        r[ci, vis] = sw[:, None] * (observations.pixels[ci, vis] - px)
        if jacobian:
            # d r / d t_k = -sqrt(w) * alpha_k * dpi/dX
            blk = -(sw[:, None, None] * Jp)  # (V, 2, 3)
            base = 2 * (ci * F + vis)
            for k in range(marker_idx.shape[1]):
                a = marker_w[vis, k]
                keep = a != 0
                if not np.any(keep):
                    continue
                vals = blk[keep] * a[keep, None, None]
                rows = np.broadcast_to(base[keep, None, None] + np.arange(2)[None, :, None], vals.shape)
                cols = np.broadcast_to(6 * marker_idx[vis[keep], k][:, None, None] + 3 + np.arange(3)[None, None, :], vals.shape)
                jr.append(rows.ravel())
                jc.append(cols.ravel())
                jv.append(vals.ravel())
    r = r.ravel()
    if not jacobian:
        return r, None
    if jr:
        J = _coo(np.concatenate(jr), np.concatenate(jc), np.concatenate(jv), (len(r), 6 * state.n))
    else:
        J = sp.csr_matrix((len(r), 6 * state.n))
    return r, J


def energy_marker(state: DeformationState, template: Template, bindings: Sequence[Binding],
                  observations: MarkerObservationSet, cameras) -> EnergyTerm:
    """Weighted squared reprojection error of the bound markers."""
    cams = _camera_dict(cameras)
    obs = observations.reordered([b.marker_id for b in bindings])
    idx, w = binding_weights(bindings, template.faces, template.n_vertices)
    r, _ = marker_block(state, template.vertices, idx, w, obs, cams)
    return EnergyTerm(float(r @ r), r)


def _camera_dict(cameras) -> dict[str, CameraModel]:
    if isinstance(cameras, dict):
        return cameras
    return {c.id: c for c in cameras}


# ---------------------------------------------------------------------------
# smoothness term


def smooth_block(state: DeformationState, rest_vertices, neighborhood: GraphNeighborhood, jacobian: bool = False):
    """sqrt(gamma_jk) (R_j v_kj - v_kj + t_j - t_k), 3 rows per graph edge."""
    v = np.asarray(rest_vertices, dtype=float)
    j, k = neighborhood.src, neighborhood.dst
    vkj = v[k] - v[j]
    Rv = np.einsum("eab,eb->ea", state.rotations[j], vkj)
    sg = np.sqrt(neighborhood.gamma)[:, None]
    r = (sg * (Rv - vkj + state.translations[j] - state.translations[k])).ravel()
    if not jacobian:
        return r, None
    E = len(j)
    rows3 = 3 * np.arange(E)[:, None] + np.arange(3)[None, :]  # (E, 3)
    # d/d(dw_j) of exp(dw) R v = -hat(R v)
    Jw = -sg[:, :, None] * hat(Rv)  # (E, 3, 3)
    rows_w = np.broadcast_to(rows3[:, :, None], (E, 3, 3))
    cols_w = np.broadcast_to(6 * j[:, None, None] + np.arange(3)[None, None, :], (E, 3, 3))
    cols_tj = 6 * j[:, None] + 3 + np.arange(3)[None, :]
    cols_tk = 6 * k[:, None] + 3 + np.arange(3)[None, :]
    sgv = np.broadcast_to(sg, (E, 3))
    rows = np.concatenate([rows_w.ravel(), rows3.ravel(), rows3.ravel()])
    cols = np.concatenate([cols_w.ravel(), cols_tj.ravel(), cols_tk.ravel()])
    vals = np.concatenate([Jw.ravel(), sgv.ravel(), -sgv.ravel()])
    return r, _coo(rows, cols, vals, (len(r), 6 * state.n))


def energy_smooth(state: DeformationState, template: Template, neighborhood: GraphNeighborhood) -> EnergyTerm:
    r, _ = smooth_block(state, template.vertices, neighborhood)
    return EnergyTerm(float(r @ r), r)


def combine_energies(e_fit: float, e_marker: float, e_smooth: float, lambda_marker: float, lambda_smooth: float) -> float:
    return e_fit + lambda_marker * e_marker + lambda_smooth * e_smooth
