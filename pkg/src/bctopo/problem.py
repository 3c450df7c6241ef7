"""Discrete boundary-control problem: operators, reference state and cost."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import control, fem
from .mesh import Mesh


@dataclass(eq=False)
class DirichletProblem:
    """Everything needed to evaluate J(S, alpha) on one mesh.

    ``u_ref`` may be left unset and filled in later (e.g. from a reference
    partition via :meth:`state`).
    """

    mesh: Mesh
    source: float | np.ndarray = 1.0
    u_ref: np.ndarray | None = None
    lam: float = 0.0
    rtol: float = fem.DEFAULT_RTOL

    @cached_property
    def K(self):
        return fem.assemble_stiffness(self.mesh)

    @cached_property
    def M(self):
        return fem.assemble_mass(self.mesh)

    def state(self, labels, alpha) -> np.ndarray:
        g = fem.project_boundary_control(self.mesh, labels, alpha)
        return fem.solve_dirichlet(self.mesh, self.K, g, self.source, M=self.M, rtol=self.rtol)

    def adjoint(self, u) -> np.ndarray:
        return control.solve_adjoint(self.mesh, self.K, self.M, u, self.u_ref, rtol=self.rtol)

    def flux(self, u, p, method: str = "tet") -> np.ndarray:
        """Face flux grad p . n by the owning-tet gradient or the consistent residual."""
        if method == "tet":
            return control.boundary_flux(self.mesh, p)
        if method == "consistent":
            return control.consistent_flux(self.mesh, self.K, self.M, u, self.u_ref, p)
        raise ValueError(f"unknown flux method {method!r}; expected 'tet' or 'consistent'")

    def cost_of_state(self, u, alpha) -> float:
        return control.cost(self.M, u, self.u_ref, alpha, self.lam)

    def cost(self, labels, alpha) -> float:
        return self.cost_of_state(self.state(labels, alpha), alpha)
