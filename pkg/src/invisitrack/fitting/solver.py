"""Levenberg-Marquardt template fitting with a continuation schedule."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from ..errors import BehindCamera, NonConvergence, NothingToFit
from ..geometry import project_points
from ..template import Binding, JointChain, Template, binding_weights, marker_positions, vertex_normals
from .energies import (
    CorrespondenceSet,
    DeformationState,
    MarkerObservationSet,
    build_correspondences,
    combine_energies,
    fit_block,
    marker_block,
    smooth_block,
)
from .graph import GraphNeighborhood, build_neighborhood, chain_neighborhood

log = logging.getLogger(__name__)

LM_MU_MAX = 1e12
LM_MU_MIN = 1e-12
ENERGY_ABS_FLOOR = 1e-12


@dataclass
class FitConfig:
    lambda_smooth_init: float = 100.0
    lambda_smooth_min: float = 0.1
    lambda_marker_init: float = 10.0
    lambda_marker_min: float = 1.0
    decay: float = 0.5
    beta: float = 1.0
    max_outer: int = 20
    max_inner_lm: int = 50
    energy_rel_tol: float = 1e-6
    lm_initial_damping: float = 1e-3

    def __post_init__(self):
        for name in ("lambda_smooth_init", "lambda_smooth_min", "lambda_marker_init", "lambda_marker_min", "energy_rel_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_smooth_init < self.lambda_smooth_min or self.lambda_marker_init < self.lambda_marker_min:
            raise ValueError("initial lambdas must not be below their minima")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.max_outer < 1 or self.max_inner_lm < 1:
            raise ValueError("iteration limits must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "FitConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FitReport:
    config: dict
    iterations: list[dict] = field(default_factory=list)
    converged: bool = False
    nonconverged: bool = False
    final_energy: float = float("nan")
    marker_reprojection_px: dict[str, float | None] = field(default_factory=dict)
    rms_reprojection_px: float | None = None
    mean_reprojection_px: float | None = None
    wall_time_s: float | None = None

    @property
    def lambda_smooth_schedule(self) -> list[float]:
        return [it["lambda_smooth"] for it in self.iterations]

    @property
    def lambda_marker_schedule(self) -> list[float]:
        return [it["lambda_marker"] for it in self.iterations]

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time_s")
        return d


class FitProblem:
    """Everything that stays fixed while one frame is being fitted."""

    def __init__(self, template: Template, bindings: Sequence[Binding], cloud, observations: MarkerObservationSet | None,
                 cameras, neighborhood: GraphNeighborhood | None = None, beta: float = 1.0):
        self.template = template
        self.rest = np.asarray(template.vertices, dtype=float)
        self.faces = np.asarray(template.faces)
        self.bindings = list(bindings)
        self.marker_ids = [b.marker_id for b in self.bindings]
        self.cloud = np.asarray(cloud if cloud is not None else np.zeros((0, 3)), dtype=float).reshape(-1, 3)
        if observations is None:
            observations = MarkerObservationSet.empty(self.marker_ids)
        self.observations = observations.reordered(self.marker_ids)
        self.cameras = cameras if isinstance(cameras, dict) else {c.id: c for c in cameras}
        if neighborhood is None:
            neighborhood = chain_neighborhood(self.rest) if isinstance(template, JointChain) else build_neighborhood(self.rest)
        self.neighborhood = neighborhood
        self.beta = beta if len(self.faces) else 0.0
        self.marker_idx, self.marker_w = binding_weights(self.bindings, self.faces, len(self.rest))

    @property
    def empty(self) -> bool:
        return len(self.cloud) == 0 and self.observations.n_observed == 0

    def correspondences(self, state: DeformationState) -> tuple[CorrespondenceSet, np.ndarray | None]:
        deformed = state.deformed(self.rest)
        normals = vertex_normals(deformed, self.faces) if len(self.faces) else None
        return build_correspondences(deformed, self.cloud), normals

    def energies(self, state, corr, normals) -> tuple[float, float, float]:
        rf, _ = fit_block(state, self.rest, self.cloud, corr, self.beta, normals)
        rm, _ = marker_block(state, self.rest, self.marker_idx, self.marker_w, self.observations, self.cameras)
        rs, _ = smooth_block(state, self.rest, self.neighborhood)
        return float(rf @ rf), float(rm @ rm), float(rs @ rs)

    def residuals(self, state, corr, normals, lambda_marker, lambda_smooth, jacobian=False):
        rf, Jf = fit_block(state, self.rest, self.cloud, corr, self.beta, normals, jacobian)
        rm, Jm = marker_block(state, self.rest, self.marker_idx, self.marker_w, self.observations, self.cameras, jacobian)
        rs, Js = smooth_block(state, self.rest, self.neighborhood, jacobian)
        sm, ss = np.sqrt(lambda_marker), np.sqrt(lambda_smooth)
        r = np.concatenate([rf, sm * rm, ss * rs])
        if not jacobian:
            return r, None
        return r, sp.vstack([Jf, sm * Jm, ss * Js]).tocsr()

    def reprojection_errors(self, state) -> np.ndarray:
        """(C, F) pixel errors, NaN where the weight is zero."""
        X = marker_positions(state.deformed(self.rest), self.bindings, self.faces)
        obs = self.observations
        err = np.full(obs.weights.shape, np.nan)
        for ci, cid in enumerate(obs.camera_ids):
            vis = obs.weights[ci] > 0
            if np.any(vis):
                px, _ = project_points(self.cameras[cid], X[vis])
                err[ci, vis] = np.linalg.norm(px - obs.pixels[ci, vis], axis=1)
        return err


def levenberg_marquardt(fun: Callable, state: DeformationState, max_iter: int, rel_tol: float,
                        mu0: float = 1e-3) -> tuple[DeformationState, list[float]]:
    """Minimise ``|r(state)|^2`` with Marquardt-scaled damping.

    ``fun(state, jacobian)`` returns ``(r, J)``.  Returns the final state and
    the energy after every accepted step (first entry: initial energy).
    Raises NonConvergence when no damping level reduces the energy while
    the Gauss-Newton model still predicts a meaningful decrease.
    """
    r, J = fun(state, True)
    E = float(r @ r)
    history = [E]
    mu = mu0
    for _ in range(max_iter):
        if E <= ENERGY_ABS_FLOOR:
            break
        g = J.T @ r
        A = (J.T @ J).tocsc()
        d = A.diagonal()
        D = np.maximum(d, max(d.max(), 1.0) * 1e-12)
        accepted = False
        while mu <= LM_MU_MAX:
            step = spsolve(A + sp.diags(mu * D, format="csc"), -g)
            cand = state.retract(step)
            try:
                r_new, _ = fun(cand, False)
                E_new = float(r_new @ r_new)
            except BehindCamera:
                E_new = np.inf
            if np.isfinite(E_new) and E_new < E:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            gn = spsolve(A + sp.diags(1e-9 * D, format="csc"), -g)
            predicted = float(-(g @ gn))
            if predicted <= max(rel_tol * E, ENERGY_ABS_FLOOR):
                break
            raise NonConvergence(f"LM could not decrease energy {E:.6g} (predicted decrease {predicted:.3g})", state=state)
        mu = max(mu * 0.1, LM_MU_MIN)
        decrease = E - E_new
        state, E = cand, E_new
        history.append(E)
        if decrease <= rel_tol * history[-2]:
            break
        r, J = fun(state, True)
    return state, history


def fit_template(template: Template, bindings: Sequence[Binding], cloud, observations: MarkerObservationSet | None,
                 cameras, config: FitConfig | None = None, init: DeformationState | None = None,
                 neighborhood: GraphNeighborhood | None = None) -> tuple[DeformationState, FitReport]:
    """Deform ``template`` to match a point cloud and 2-D marker observations.

    Each outer iteration rebuilds the closest-vertex correspondences and
    deformed normals, runs LM at the current weights, then decays the
    smoothness and marker weights towards their minima.  Iteration stops once
    both weights sit at their minima and the total energy changes by less
    than ``energy_rel_tol``, when the energy vanishes, or after ``max_outer``.
    """
    config = config or FitConfig()
    t0 = time.perf_counter()
    problem = FitProblem(template, bindings, cloud, observations, cameras, neighborhood, config.beta)
    if problem.empty:
        raise NothingToFit("both the point cloud and the marker observations are empty")
    state = init.copy() if init is not None else DeformationState.zero(template.n_vertices)
    report = FitReport(config=config.to_dict())

    lam_s, lam_m = config.lambda_smooth_init, config.lambda_marker_init
    prev = None
    for outer in range(config.max_outer):
        corr, normals = problem.correspondences(state)

        def fun(s, jacobian, corr=corr, normals=normals, lam_m=lam_m, lam_s=lam_s):
            return problem.residuals(s, corr, normals, lam_m, lam_s, jacobian)

        try:
            state, history = levenberg_marquardt(fun, state, config.max_inner_lm, config.energy_rel_tol, config.lm_initial_damping)
        except NonConvergence as exc:
            report.nonconverged = True
            _finish_report(report, problem, exc.state, t0)
            raise NonConvergence(str(exc), state=exc.state, report=report) from None

        e_fit, e_marker, e_smooth = problem.energies(state, corr, normals)
        e_total = combine_energies(e_fit, e_marker, e_smooth, lam_m, lam_s)
        report.iterations.append({
            "iteration": outer,
            "lambda_smooth": lam_s,
            "lambda_marker": lam_m,
            "e_fit": e_fit,
            "e_marker": e_marker,
            "e_smooth": e_smooth,
            "e_total": e_total,
            "lm_steps": len(history) - 1,
        })
        log.debug("outer %d: E=%.6g (fit %.4g, marker %.4g, smooth %.4g)", outer, e_total, e_fit, e_marker, e_smooth)
        at_min = lam_s <= config.lambda_smooth_min and lam_m <= config.lambda_marker_min
        if e_total <= ENERGY_ABS_FLOOR or (
            at_min and prev is not None and abs(prev - e_total) <= config.energy_rel_tol * max(prev, ENERGY_ABS_FLOOR)
        ):
            report.converged = True
            break
        prev = e_total if at_min else None
        lam_s = max(lam_s * config.decay, config.lambda_smooth_min)
        lam_m = max(lam_m * config.decay, config.lambda_marker_min)

    _finish_report(report, problem, state, t0)
    return state, report


def _finish_report(report: FitReport, problem: FitProblem, state: DeformationState, t0: float) -> None:
    if report.iterations:
        report.final_energy = report.iterations[-1]["e_total"]
    err = problem.reprojection_errors(state)
    per_marker = {}
    for f, mid in enumerate(problem.marker_ids):
        col = err[:, f]
        col = col[np.isfinite(col)]
        per_marker[mid] = float(col.mean()) if len(col) else None
    report.marker_reprojection_px = per_marker
    flat = err[np.isfinite(err)]
    if len(flat):
        report.rms_reprojection_px = float(np.sqrt(np.mean(flat**2)))
        report.mean_reprojection_px = float(flat.mean())
    report.wall_time_s = time.perf_counter() - t0


def total_energy(state: DeformationState, template: Template, bindings: Sequence[Binding], cloud,
                 observations: MarkerObservationSet | None, cameras, lambda_marker: float, lambda_smooth: float,
                 beta: float = 1.0, neighborhood: GraphNeighborhood | None = None,
                 correspondences: CorrespondenceSet | None = None) -> float:
    """E_fit + lambda_marker * E_marker + lambda_smooth * E_smooth at ``state``.

    Correspondences default to the closest deformed vertices.
    """
    problem = FitProblem(template, bindings, cloud, observations, cameras, neighborhood, beta)
    corr, normals = problem.correspondences(state)
    if correspondences is not None:
        corr = correspondences
    return combine_energies(*problem.energies(state, corr, normals), lambda_marker, lambda_smooth)
