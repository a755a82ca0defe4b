"""Object templates (triangle meshes and joint chains) and marker bindings."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import InvalidBinding, InvalidTemplate, OffSurface

MIN_FACE_AREA = 1e-9
DEFAULT_EMBED_TOLERANCE_MM = 1.0


def face_normals(vertices, faces) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised face normals (twice the area) and face areas."""
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=np.intp)
    cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return cr, 0.5 * np.linalg.norm(cr, axis=1)


def vertex_normals(vertices, faces) -> np.ndarray:
    """Area-weighted unit vertex normals of a (possibly deformed) mesh.

    Vertices touching no face get a zero normal.
    """
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=np.intp).reshape(-1, 3)
    n = np.zeros_like(v)
    if len(f):
        cr, _ = face_normals(v, f)
        for k in range(3):
            np.add.at(n, f[:, k], cr)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)


@dataclass(frozen=True, eq=False)
class TemplateMesh:
    """Triangle mesh template in its rest pose."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.intp).reshape(-1, 3)
        if len(v) == 0 or not np.all(np.isfinite(v)):
            raise InvalidTemplate("template needs finite vertices")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise InvalidTemplate("face index out of range")
            _, area = face_normals(v, f)
            if np.any(area <= MIN_FACE_AREA):
                raise InvalidTemplate(f"{int(np.sum(area <= MIN_FACE_AREA))} degenerate faces")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def vertex_normals(self) -> np.ndarray:
        return vertex_normals(self.vertices, self.faces)

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (E, 2), lower index first."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


@dataclass(frozen=True, eq=False)
class JointChain:
    """Ordered chain of joints, used as a 1-D template (e.g. rope)."""

    joints: np.ndarray

    def __post_init__(self):
        j = np.array(self.joints, dtype=float).reshape(-1, 3)
        if len(j) < 2:
            raise InvalidTemplate("a joint chain needs at least 2 joints")
        if np.any(np.linalg.norm(np.diff(j, axis=0), axis=1) == 0):
            raise InvalidTemplate("consecutive joints coincide")
        j.setflags(write=False)
        object.__setattr__(self, "joints", j)

    @property
    def vertices(self) -> np.ndarray:
        return self.joints

    @property
    def faces(self) -> np.ndarray:
        return np.zeros((0, 3), dtype=np.intp)

    @property
    def n_vertices(self) -> int:
        return len(self.joints)

    @property
    def rest_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.joints, axis=0), axis=1)

    @property
    def edges(self) -> np.ndarray:
        i = np.arange(len(self.joints) - 1)
        return np.stack([i, i + 1], axis=1)


Template = Union[TemplateMesh, JointChain]


@dataclass(frozen=True)
class MarkerBinding:
    """Marker attached to a mesh face by barycentric weights."""

    marker_id: str
    face_index: int
    barycentric: tuple[float, float, float]

    def __post_init__(self):
        a = tuple(float(x) for x in self.barycentric)
        if len(a) != 3 or min(a) < -1e-12 or abs(sum(a) - 1.0) > 1e-9:
            raise InvalidBinding(f"marker {self.marker_id}: barycentric {a} not on the simplex")
        object.__setattr__(self, "barycentric", a)
        object.__setattr__(self, "face_index", int(self.face_index))

    def to_dict(self) -> dict:
        return {"marker_id": self.marker_id, "face": self.face_index, "alpha": list(self.barycentric)}


@dataclass(frozen=True)
class JointBinding:
    """Marker co-located with a chain joint."""

    marker_id: str
    joint_index: int

    def to_dict(self) -> dict:
        return {"marker_id": self.marker_id, "joint": int(self.joint_index)}


Binding = Union[MarkerBinding, JointBinding]


def binding_from_dict(d: dict) -> Binding:
    if "joint" in d:
        return JointBinding(str(d["marker_id"]), int(d["joint"]))
    return MarkerBinding(str(d["marker_id"]), int(d["face"]), tuple(d["alpha"]))


def build_grid_template(rows: int, cols: int, spacing: float) -> tuple[TemplateMesh, list[MarkerBinding]]:
    """Planar grid in z=0 centred on the origin, one marker per grid vertex.

    Columns run along +x and rows along +y; face normals point to +z.
    """
    if int(rows) != rows or int(cols) != cols or rows < 2 or cols < 2:
        raise InvalidTemplate(f"grid needs rows, cols >= 2 (got {rows}x{cols})")
    if not spacing > 0:
        raise InvalidTemplate("grid spacing must be positive")
    rows, cols = int(rows), int(cols)
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    x = (c - (cols - 1) / 2.0) * spacing
    y = (r - (rows - 1) / 2.0) * spacing
    vertices = np.stack([x.ravel(), y.ravel(), np.zeros(rows * cols)], axis=1)

    idx = np.arange(rows * cols).reshape(rows, cols)
    v00, v01 = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    v10, v11 = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.empty((2 * len(v00), 3), dtype=np.intp)
    faces[0::2] = np.stack([v00, v01, v11], axis=1)
    faces[1::2] = np.stack([v00, v11, v10], axis=1)
    mesh = TemplateMesh(vertices, faces)

    # first incident face for each vertex, and the vertex's slot in it
    first_face = np.full(rows * cols, -1)
    slot = np.zeros(rows * cols, dtype=int)
    for fi in range(len(faces) - 1, -1, -1):
        for k in range(3):
            first_face[faces[fi, k]] = fi
            slot[faces[fi, k]] = k
    bindings = []
    for vi in range(rows * cols):
        alpha = [0.0, 0.0, 0.0]
        alpha[slot[vi]] = 1.0
        bindings.append(MarkerBinding(f"r{vi // cols:02d}c{vi % cols:02d}", int(first_face[vi]), tuple(alpha)))
    return mesh, bindings


def build_chain_template(n_joints: int, spacing: float) -> JointChain:
    """Straight chain along +x starting at the origin."""
    if int(n_joints) != n_joints or n_joints < 2:
        raise InvalidTemplate(f"chain needs at least 2 joints (got {n_joints})")
    if not spacing > 0:
        raise InvalidTemplate("joint spacing must be positive")
    x = np.arange(int(n_joints)) * float(spacing)
    return JointChain(np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1))


def chain_bindings(chain: JointChain) -> list[JointBinding]:
    return [JointBinding(f"j{i:02d}", i) for i in range(chain.n_vertices)]


def closest_points_on_triangles(point, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest point on each triangle (K, 3, 3) to ``point``.

    Returns barycentric coordinates (K, 3) on the simplex and distances (K,).
    """
    p = np.asarray(point, dtype=float)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    K = len(tri)
    best_bary = np.zeros((K, 3))
    best_d = np.full(K, np.inf)

    # interior candidate via projection onto the supporting plane
    e0, e1, ep = b - a, c - a, p - a
    d00 = np.einsum("ij,ij->i", e0, e0)
    d01 = np.einsum("ij,ij->i", e0, e1)
    d11 = np.einsum("ij,ij->i", e1, e1)
    d20 = np.einsum("ij,ij->i", ep, e0)
    d21 = np.einsum("ij,ij->i", ep, e1)
    den = d00 * d11 - d01 * d01
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = (d11 * d20 - d01 * d21) / den
        w2 = (d00 * d21 - d01 * d20) / den
    w0 = 1.0 - w1 - w2
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0) & np.isfinite(w1)
    if np.any(inside):
        q = w0[:, None] * a + w1[:, None] * b + w2[:, None] * c
        d = np.linalg.norm(q - p, axis=1)
        best_d = np.where(inside, d, best_d)
        best_bary[inside] = np.stack([w0, w1, w2], axis=1)[inside]

    # edge candidates
    for i, j in ((0, 1), (1, 2), (2, 0)):
        s, e = tri[:, i], tri[:, j]
        se = e - s
        L = np.einsum("ij,ij->i", se, se)
        u = np.clip(np.einsum("ij,ij->i", p - s, se) / L, 0.0, 1.0)
        q = s + u[:, None] * se
        d = np.linalg.norm(q - p, axis=1)
        better = d < best_d
        if np.any(better):
            best_d = np.where(better, d, best_d)
            bary = np.zeros((K, 3))
            bary[:, i] = 1.0 - u
            bary[:, j] = u
            best_bary[better] = bary[better]
    return best_bary, best_d


def barycentric_embed(mesh: TemplateMesh, point, tolerance: float = DEFAULT_EMBED_TOLERANCE_MM, marker_id: str = "") -> MarkerBinding:
    """Bind a point to the nearest face of the mesh."""
    if len(mesh.faces) == 0:
        raise InvalidTemplate("cannot embed into a mesh without faces")
    tri = mesh.vertices[mesh.faces]
    bary, dist = closest_points_on_triangles(point, tri)
    fi = int(np.argmin(dist))
    if dist[fi] > tolerance:
        raise OffSurface(f"point is {dist[fi]:.4g} mm from the surface (tolerance {tolerance} mm)")
    alpha = np.clip(bary[fi], 0.0, 1.0)
    alpha /= alpha.sum()
    return MarkerBinding(marker_id, fi, tuple(alpha))


def binding_weights(bindings: Sequence[Binding], faces, n_vertices: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vertex indices (F, 3) and weights (F, 3) for a list of bindings."""
    faces = np.asarray(faces, dtype=np.intp).reshape(-1, 3)
    idx = np.zeros((len(bindings), 3), dtype=np.intp)
    w = np.zeros((len(bindings), 3))
    for m, b in enumerate(bindings):
        if isinstance(b, JointBinding):
            if b.joint_index < 0 or (n_vertices is not None and b.joint_index >= n_vertices):
                raise InvalidBinding(f"marker {b.marker_id}: joint {b.joint_index} out of range")
            idx[m] = b.joint_index
            w[m, 0] = 1.0
        else:
            if not 0 <= b.face_index < len(faces):
                raise InvalidBinding(f"marker {b.marker_id}: face {b.face_index} out of range")
            idx[m] = faces[b.face_index]
            w[m] = b.barycentric
    return idx, w


def marker_position(vertices, binding: Binding, faces=None) -> np.ndarray:
    """Position of one marker on a (possibly deformed) vertex set."""
    if isinstance(binding, MarkerBinding) and faces is None:
        raise InvalidBinding("faces are required for face bindings")
    return marker_positions(vertices, [binding], faces if faces is not None else np.zeros((0, 3)))[0]


def marker_positions(vertices, bindings: Sequence[Binding], faces) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    idx, w = binding_weights(bindings, faces, len(v))
    if len(idx) and idx.max() >= len(v):
        raise InvalidBinding("binding refers to a vertex outside the given vertex set")
    return np.einsum("mk,mkd->md", w, v[idx])


# ---------------------------------------------------------------------------
# I/O


def save_obj(mesh: TemplateMesh, path, vertices=None) -> None:
    v = mesh.vertices if vertices is None else np.asarray(vertices)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in v.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TemplateMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise InvalidTemplate("only triangle faces are supported")
            faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:4]])
    return TemplateMesh(np.array(verts), np.array(faces, dtype=np.intp).reshape(-1, 3))


def save_chain(chain: JointChain, path) -> None:
    Path(path).write_text(json.dumps({"joints": chain.joints.tolist()}) + "\n")


def load_chain(path) -> JointChain:
    return JointChain(np.array(json.loads(Path(path).read_text())["joints"]))


def save_bindings(bindings: Sequence[Binding], path) -> None:
    Path(path).write_text(json.dumps([b.to_dict() for b in bindings], indent=1) + "\n")


def load_bindings(path) -> list[Binding]:
    return [binding_from_dict(d) for d in json.loads(Path(path).read_text())]
