"""Face-wise vector level sets and the multi-material descent loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .control import ControlValues, solve_optimal_alpha
from .problem import DirichletProblem
from .topo import (SectorGeometry, TopoFields, build_topo_fields, derivative_table, sector_centers,
                   sectors_of)

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-14
NORMALIZE_MODES = ("face", "global", "none", "hybrid")


def init_levelset(geom: SectorGeometry, n_faces: int) -> np.ndarray:
    """Constant level set placing every face in the last region.

    For M = 3 this solves [n^13; n^23] z = (1, 1); for M = 2 it is psi = +1.
    """
    if geom.M == 2:
        z = np.array([1.0])
    else:
        rows = np.array([geom.normal(k, geom.M) for k in range(1, geom.M)])
        z = np.linalg.solve(rows, np.ones(geom.M - 1))
    return np.tile(z, (n_faces, 1))


def partition_from_levelset(geom: SectorGeometry, psi) -> np.ndarray:
    return sectors_of(geom, psi)


def recentre_levelset(geom: SectorGeometry, labels) -> np.ndarray:
    """Level set with every face at the unit centre of its current sector.

    The partition is unchanged, but faces that only just crossed a sector
    boundary no longer flip back at the smallest step.
    """
    return sector_centers(geom)[np.asarray(labels) - 1]


def _normalized(v: np.ndarray, mode: str) -> np.ndarray:
    if mode == "face":
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        return np.where(norms > NORM_FLOOR, v / np.where(norms > NORM_FLOOR, norms, 1.0), v)
    if mode == "global":
        # root mean square face norm, so a uniform field keeps unit face norms
        scale = math.sqrt(np.mean(np.sum(v * v, axis=1)))
        return v / scale if scale > NORM_FLOOR else v
    return v


def _mode(normalize) -> str:
    if normalize is True:
        return "face"
    if normalize is False or normalize is None:
        return "none"
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}, got {normalize!r}")
    return normalize


def update_levelset(psi, G, kappa: float, normalize=True) -> np.ndarray:
    """Blend psi' = (1 - kappa) psi_hat + kappa G_hat.

    ``normalize`` is ``True``/``"face"`` (unit vector per face, vectors of
    norm <= 1e-14 pass through), ``"global"`` (divide by the RMS face norm)
    or ``False``/``"none"``.
    """
    if not 0.0 < kappa <= 1.0:
        raise ValueError(f"step kappa must lie in (0, 1], got {kappa}")
    mode = _mode(normalize)
    psi = np.asarray(psi, dtype=float).reshape(len(psi), -1)
    G = np.asarray(G, dtype=float).reshape(psi.shape)
    if mode == "hybrid":
        return (1.0 - kappa) * _normalized(psi, "face") + kappa * _normalized(G, "global")
    return (1.0 - kappa) * _normalized(psi, mode) + kappa * _normalized(G, mode)


@dataclass
class OptimConfig:
    kappa0: float = 0.1
    kappa_min: float = 1e-6
    max_iter: int = 100
    max_step: int = 20
    normalize: str = "global"
    flux: str = "consistent"
    recentre: bool = True
    rel_tol: float = 1e-10
    optimize_alpha: bool = False
    alpha_theta: float = 0.5
    alpha_tol: float = 1e-8
    alpha_maxiter: int = 100

    def __post_init__(self):
        if not 0.0 < self.kappa0 <= 1.0:
            raise ValueError(f"kappa0 must lie in (0, 1], got {self.kappa0}")
        self.normalize = _mode(self.normalize)


@dataclass
class HistoryRecord:
    iteration: int
    J: float
    kappa: float
    accepted: bool
    areas: np.ndarray
    alpha: np.ndarray
    changed: int = 0


@dataclass
class OptimState:
    iteration: int
    psi: np.ndarray
    labels: np.ndarray
    controls: ControlValues
    u: np.ndarray
    J: float
    kappa: float
    p: np.ndarray | None = None
    flux: np.ndarray | None = None
    fields: TopoFields | None = None
    history: list = field(default_factory=list)
    status: str = "running"

    @property
    def accepted_J(self) -> np.ndarray:
        return np.array([r.J for r in self.history if r.accepted])

    def derivatives(self) -> np.ndarray | None:
        """D^{ij} per face as an (n_faces, M, M) table, if a flux is available."""
        if self.flux is None:
            return None
        return derivative_table(self.controls.alpha, self.flux)


def region_areas(problem: DirichletProblem, labels, M: int) -> np.ndarray:
    return np.bincount(np.asarray(labels) - 1, weights=problem.mesh.face_areas, minlength=M)


def optimize(problem: DirichletProblem, geom: SectorGeometry, controls: ControlValues,
             config: OptimConfig | None = None, psi0=None, callback=None) -> OptimState:
    """Level-set descent on the boundary partition.

    Each outer iteration solves the adjoint once, builds the steering field
    G and tries blended level sets.  A candidate that leaves the partition
    unchanged doubles kappa (free, no solve); a candidate that does not lower
    J halves the step towards the largest known idle one.  Once no smaller
    change set exists, larger steps above the rejected ones are tried before
    giving up.  With ``config.recentre`` each iteration blends from the
    sector centres of the current labels instead of the stored level set, so
    the order in which faces switch follows the size of their steering field.
    ``callback(state, event)`` is called with ``"start"``,
    ``"accepted"`` and ``"end"``.
    """
    config = config or OptimConfig()
    mesh = problem.mesh
    lam = problem.lam
    if config.optimize_alpha and not lam > 0:
        raise ValueError("optimize_alpha requires lambda > 0")
    psi = init_levelset(geom, mesh.n_faces) if psi0 is None else np.array(psi0, dtype=float)
    labels = partition_from_levelset(geom, psi)
    controls = ControlValues(controls.alpha, controls.lower, controls.upper)
    if config.optimize_alpha:
        controls, _ = solve_optimal_alpha(problem, labels, controls, lam, config.alpha_theta,
                                          config.alpha_tol, config.alpha_maxiter, config.flux)
    u = problem.state(labels, controls.alpha)
    J = problem.cost_of_state(u, controls.alpha)
    _check_finite(J, 0)
    state = OptimState(0, psi, labels, controls, u, J, config.kappa0)

    def record(J_value, kappa, accepted, lab, alpha, changed=0):
        state.history.append(HistoryRecord(state.iteration, J_value, kappa, accepted,
                                           region_areas(problem, lab, geom.M), alpha.copy(), changed))

    record(J, config.kappa0, True, labels, controls.alpha)
    state.p = problem.adjoint(u)
    state.flux = problem.flux(u, state.p, config.flux)
    state.fields = build_topo_fields(geom, labels, controls.alpha, state.flux)
    if callback:
        callback(state, "start")

    for it in range(1, config.max_iter + 1):
        if state.J <= 0.0:
            state.status = "zero cost"
            break
        state.iteration = it
        G = state.fields.G
        base = recentre_levelset(geom, state.labels) if config.recentre else state.psi
        kappa = state.kappa
        accepted = False
        idle = 0.0  # largest step known to leave the partition unchanged
        rejected = []  # steps that changed the partition without descent
        seen = set()  # rejected partitions, so repeats cost no solve
        climbing = False
        evaluations = 0
        while evaluations < config.max_step:
            cand_psi = update_levelset(base, G, kappa, config.normalize)
            cand_labels = partition_from_levelset(geom, cand_psi)
            changed = int(np.count_nonzero(cand_labels != state.labels))
            if changed == 0:
                idle = max(idle, kappa)
                if kappa >= 1.0:
                    break
                if rejected and not climbing:
                    lowest = min(rejected)
                    if lowest - idle < config.kappa_min:
                        # no smaller change set exists: try larger steps
                        climbing = True
                        kappa = min(2.0 * max(rejected), 1.0)
                        if kappa <= max(rejected):
                            break
                    else:
                        kappa = 0.5 * (idle + lowest)
                else:
                    kappa = min(2.0 * kappa, 1.0)
                continue
            key = cand_labels.tobytes()
            if key not in seen:
                evaluations += 1
                cand_u = problem.state(cand_labels, state.controls.alpha)
                cand_J = problem.cost_of_state(cand_u, state.controls.alpha)
                _check_finite(cand_J, it)
                if cand_J < state.J:
                    accepted = True
                    break
                seen.add(key)
                record(cand_J, kappa, False, cand_labels, state.controls.alpha, changed)
            rejected.append(kappa)
            if climbing:
                if kappa >= 1.0:
                    break
                kappa = min(2.0 * kappa, 1.0)
                continue
            kappa = 0.5 * (idle + kappa)
            if kappa - idle < config.kappa_min:
                climbing = True
                kappa = min(2.0 * max(rejected), 1.0)
                if kappa <= max(rejected):
                    break

        if not accepted:
            state.status = "no descent" if rejected else "stationary"
            state.kappa = kappa
            break

        previous = state.J
        state.psi, state.labels = cand_psi, cand_labels
        if config.optimize_alpha:
            state.controls, _ = solve_optimal_alpha(problem, cand_labels, state.controls, lam,
                                                    config.alpha_theta, config.alpha_tol,
                                                    config.alpha_maxiter, config.flux)
            cand_u = problem.state(cand_labels, state.controls.alpha)
            cand_J = problem.cost_of_state(cand_u, state.controls.alpha)
        state.u, state.J = cand_u, cand_J
        record(cand_J, kappa, True, cand_labels, state.controls.alpha, changed)
        state.kappa = min(2.0 * kappa, config.kappa0)
        state.p = problem.adjoint(state.u)
        state.flux = problem.flux(state.u, state.p, config.flux)
        state.fields = build_topo_fields(geom, state.labels, state.controls.alpha, state.flux)
        log.debug("iter %d: J=%.6e kappa=%.3g changed=%d", it, state.J, kappa, changed)
        if callback:
            callback(state, "accepted")
        if abs(previous - state.J) / previous < config.rel_tol:
            state.status = "converged"
            break
    else:
        state.status = "max iterations"

    if callback:
        callback(state, "end")
    return state


def _check_finite(J: float, iteration: int) -> None:
    if not np.isfinite(J):
        raise FloatingPointError(f"cost became non-finite ({J}) at iteration {iteration}")
