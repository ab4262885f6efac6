"""Field containers on the product grid.

Components follow the local product holomorphic coordinates: z1 along the
fiber, z2 = w on the base.  A real (1,1) form alpha = i a_{i jbar} dz^i dz^jbar
is stored through c11 = a_{1 1bar} (real), c12 = a_{1 2bar} (complex, the
2 1bar entry is its conjugate) and c22 = a_{2 2bar} (real).  Top forms carry a
single real coefficient relative to (i dz1 dz1bar) ^ (i dz2 dz2bar); with this
convention omega^2 has coefficient 2 det g and the real volume element per
unit coefficient is 4 dx1 dy1 dx2 dy2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryDataError, SingularMetricError
from .grids import GridSpec

DET_FLOOR_REL = 1e-10


@dataclass
class RealScalarField:
    values: np.ndarray
    grid: GridSpec
    ghost_state: str = "interior"     # "interior" or "active"

    def require_active(self, what: str):
        if self.ghost_state != "active":
            raise BoundaryDataError(f"{what} needs ghost data; fill the field first")

    def filled(self, geometry) -> "RealScalarField":
        return RealScalarField(geometry.fill(self.values), self.grid, "active")

    def copy(self) -> "RealScalarField":
        return RealScalarField(self.values.copy(), self.grid, self.ghost_state)


@dataclass
class Form11Field:
    c11: np.ndarray
    c12: np.ndarray
    c22: np.ndarray
    grid: GridSpec
    ghost_state: str = "interior"

    @classmethod
    def zeros(cls, grid: GridSpec, ghost_state: str = "active") -> "Form11Field":
        s = grid.shape
        return cls(np.zeros(s), np.zeros(s, dtype=complex), np.zeros(s), grid,
                   ghost_state)

    def require_active(self, what: str):
        if self.ghost_state != "active":
            raise BoundaryDataError(f"{what} needs ghost data on the form components")

    def scaled(self, factor) -> "Form11Field":
        return Form11Field(self.c11 * factor, self.c12 * factor, self.c22 * factor,
                           self.grid, self.ghost_state)

    def plus(self, other: "Form11Field") -> "Form11Field":
        state = "active" if self.ghost_state == other.ghost_state == "active" \
            else "interior"
        return Form11Field(self.c11 + other.c11, self.c12 + other.c12,
                           self.c22 + other.c22, self.grid, state)


@dataclass
class HermitianMetricField(Form11Field):
    admissible: bool = False
    admissibility_min: float = float("inf")   # min eigenvalue vs its reference

    @classmethod
    def from_form(cls, form: Form11Field, admissible: bool = False
                  ) -> "HermitianMetricField":
        return cls(form.c11, form.c12, form.c22, form.grid, form.ghost_state,
                   admissible)

    def det(self) -> np.ndarray:
        return self.c11 * self.c22 - np.abs(self.c12) ** 2

    def inverse_components(self):
        """g^{1 1bar}, g^{1 2bar}, g^{2 2bar} (the 2 1bar entry is conjugate)."""
        d = self.det()
        return self.c22 / d, -np.conj(self.c12) / d, self.c11 / d

    def check_positive(self, mask, reference_det=None, what="metric"):
        """Positive definiteness on the masked points; raises otherwise."""
        d = self.det()[mask]
        floor = DET_FLOOR_REL * (np.max(np.abs(reference_det[mask]))
                                 if reference_det is not None else 1.0)
        if d.size and (np.min(self.c11[mask]) <= 0 or np.min(self.c22[mask]) <= 0
                       or np.min(d) <= floor):
            raise SingularMetricError(
                f"{what} not positive definite: min diag "
                f"({np.min(self.c11[mask]):.3e}, {np.min(self.c22[mask]):.3e}), "
                f"min det {np.min(d):.3e}")


@dataclass
class TopFormField:
    coeff: np.ndarray
    grid: GridSpec

    def copy(self) -> "TopFormField":
        return TopFormField(self.coeff.copy(), self.grid)


@dataclass
class TorsionField:
    """Lowered torsion T_{1 2 lbar} components; T_{2 1 lbar} = -T_{1 2 lbar}
    and T_{i i lbar} = 0 by antisymmetry."""
    t1: np.ndarray     # T_{1 2 1bar}
    t2: np.ndarray     # T_{1 2 2bar}
    grid: GridSpec

    def component(self, i: int, j: int, l: int) -> np.ndarray:
        """T_{i j lbar} with 1-based indices, antisymmetry applied."""
        if i == j:
            return np.zeros_like(self.t1)
        sign = 1.0 if (i, j) == (1, 2) else -1.0
        return sign * (self.t1 if l == 1 else self.t2)
