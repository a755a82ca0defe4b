"""Random problem instances and naive reference implementations for tests.

The oracles here are written as plain Python loops over the definitions
so that they share no code path with the vectorised implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from invisitrack.fitting import (
    DeformationState,
    GraphNeighborhood,
    MarkerObservationSet,
    build_correspondences,
    build_neighborhood,
    so3_exp,
)
from invisitrack.geometry import CameraModel, project_points
from invisitrack.synth import RigSpec, build_rig
from invisitrack.template import MarkerBinding, TemplateMesh, build_grid_template


@dataclass
class Instance:
    mesh: TemplateMesh
    bindings: list[MarkerBinding]
    state: DeformationState
    cloud: np.ndarray
    correspondences: object
    normals: np.ndarray
    observations: MarkerObservationSet
    cameras: list[CameraModel]
    neighborhood: GraphNeighborhood
    beta: float


def random_state(rng, n, t_scale=3.0, w_scale=0.3) -> DeformationState:
    return DeformationState(rng.normal(0.0, t_scale, (n, 3)), so3_exp(rng.normal(0.0, w_scale, (n, 3))))


def random_instance(rng: np.random.Generator, max_vertices=20, max_points=50, max_cameras=8) -> Instance:
    """Small jittered grid with a random state, cloud, markers and cameras."""
    while True:
        rows, cols = rng.integers(2, 5), rng.integers(2, 6)
        if rows * cols <= max_vertices:
            break
    base, _ = build_grid_template(int(rows), int(cols), float(rng.uniform(10, 30)))
    verts = base.vertices + rng.normal(0.0, 1.0, base.vertices.shape)
    mesh = TemplateMesh(verts, base.faces)
    n = mesh.n_vertices
    state = random_state(rng, n)
    deformed = state.deformed(mesh.vertices)

    M = int(rng.integers(1, max_points + 1))
    cloud = deformed[rng.integers(0, n, M)] + rng.normal(0.0, 2.0, (M, 3))
    corr = build_correspondences(deformed, cloud)

    n_markers = int(rng.integers(1, 2 * len(mesh.faces) + 1))
    bindings = [
        MarkerBinding(f"m{k:02d}", int(rng.integers(len(mesh.faces))), rng.dirichlet(np.ones(3)))
        for k in range(n_markers)
    ]
    C = int(rng.integers(1, max_cameras + 1))
    cameras = build_rig(RigSpec(C, 1, 750.0)).uv
    X = np.array([b.barycentric @ deformed[mesh.faces[b.face_index]] for b in bindings])
    px = np.zeros((C, n_markers, 2))
    for ci, cam in enumerate(cameras):
        px[ci] = project_points(cam, X)[0] + rng.normal(0.0, 5.0, (n_markers, 2))
    weights = rng.integers(0, 2, (C, n_markers)).astype(float)
    obs = MarkerObservationSet([c.id for c in cameras], [b.marker_id for b in bindings], px, weights)
    nb = build_neighborhood(mesh.vertices, k=int(rng.integers(1, min(10, n - 1) + 1)))
    return Instance(mesh, bindings, state, cloud, corr, naive_vertex_normals(deformed, mesh.faces), obs, cameras, nb,
                    float(rng.uniform(0.1, 2.0)))


# ---------------------------------------------------------------------------
# naive oracles


def naive_vertex_normals(vertices, faces) -> np.ndarray:
    acc = [np.zeros(3) for _ in range(len(vertices))]
    for a, b, c in faces:
        cross = np.cross(vertices[b] - vertices[a], vertices[c] - vertices[a])
        for i in (a, b, c):
            acc[i] = acc[i] + cross
    return np.array([v / np.linalg.norm(v) for v in acc])


def naive_energy_fit(state, rest, cloud, indices, normals, beta) -> float:
    total = 0.0
    for j in range(len(cloud)):
        c = indices[j]
        x = [rest[c][d] + state.translations[c][d] for d in range(3)]
        diff = [x[d] - cloud[j][d] for d in range(3)]
        total += sum(e * e for e in diff)
        if normals is not None:
            proj = sum(normals[c][d] * diff[d] for d in range(3))
            total += beta * proj * proj
    return total


def naive_project(cam, X) -> tuple[float, float]:
    P = cam.K @ np.hstack([cam.R, np.reshape(cam.t, (3, 1))])
    h = [sum(P[r][c] * X[c] for c in range(3)) + P[r][3] for r in range(3)]
    return h[0] / h[2], h[1] / h[2]


def naive_energy_marker(state, rest, faces, bindings, obs, cameras) -> float:
    cams = {c.id: c for c in cameras}
    total = 0.0
    for ci, cid in enumerate(obs.camera_ids):
        for f, b in enumerate(bindings):
            w = obs.weights[ci][f]
            if w == 0:
                continue
            X = [0.0, 0.0, 0.0]
            for a, vi in zip(b.barycentric, faces[b.face_index]):
                for d in range(3):
                    X[d] += a * (rest[vi][d] + state.translations[vi][d])
            u, v = naive_project(cams[cid], X)
            total += w * ((obs.pixels[ci][f][0] - u) ** 2 + (obs.pixels[ci][f][1] - v) ** 2)
    return total


def naive_energy_smooth(state, rest, nb) -> float:
    total = 0.0
    for j in range(len(rest)):
        for k, g in zip(nb.neighbors(j), nb.weights(j)):
            vkj = rest[k] - rest[j]
            Rv = [sum(state.rotations[j][a][b] * vkj[b] for b in range(3)) for a in range(3)]
            r = [Rv[d] - vkj[d] + state.translations[j][d] - state.translations[k][d] for d in range(3)]
            total += g * sum(e * e for e in r)
    return total


def fd_jacobian(fun, state: DeformationState, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``fun(state)`` along each 6-dof vertex increment."""
    r0 = fun(state)
    J = np.zeros((len(r0), 6 * state.n))
    for col in range(6 * state.n):
        step = np.zeros(6 * state.n)
        step[col] = h
        J[:, col] = (fun(state.retract(step)) - fun(state.retract(-step))) / (2 * h)
    return J


def relative_error(a, b) -> float:
    scale = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else float(np.linalg.norm(a - b))
