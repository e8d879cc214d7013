"""Problem setup: the change of unknowns that turns the forced problem

    Lap u + e^u = s1*phi1 + h,   u = 0 on the boundary,

into the coefficient form

    Lap u + k(x) e^{-s*phi1} e^u = 0,   k = e^{-rho},  rho = (-Lap)^{-1} h,

with s = s1 / lambda1, plus the target region Lambda where spikes live.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .elliptic import (
    DiscreteLaplacian,
    EigenPair,
    apply_operator,
    assemble_laplacian,
    principal_eigenpair,
    solve_dirichlet,
)
from .geometry import (
    Domain,
    Grid,
    ScalarField,
    build_grid,
    constant_field,
    integrate,
    load_field_csv,
)
from .green import GreenEvaluator

__all__ = ["DomainCore", "ProblemData", "build_core", "setup", "to_in1_solution"]


@dataclass(frozen=True)
class DomainCore:
    """Grid, factorized Laplacian, eigenpair and Green cache for one
    (domain, n) pair; shared across parameter values."""

    domain: Domain
    grid: Grid
    lap: DiscreteLaplacian
    eigen: EigenPair
    green: GreenEvaluator


def build_core(domain: Domain, n: int, eig_tol: float = 1e-9) -> DomainCore:
    grid = build_grid(domain, n)
    lap = assemble_laplacian(grid)
    eigen = principal_eigenpair(lap, tol=eig_tol)
    return DomainCore(domain=domain, grid=grid, lap=lap, eigen=eigen, green=GreenEvaluator(lap))


@dataclass(frozen=True)
class ProblemData:
    """Everything fixed once the forcing and the parameter are chosen."""

    core: DomainCore
    h_field: ScalarField
    rho: ScalarField
    k_field: ScalarField
    log_k: ScalarField = field(repr=False)
    s: float
    s_in1: float
    lambda_threshold: float
    lambda_mask: np.ndarray = field(repr=False)

    @property
    def domain(self) -> Domain:
        return self.core.domain

    @property
    def grid(self) -> Grid:
        return self.core.grid

    @property
    def lap(self) -> DiscreteLaplacian:
        return self.core.lap

    @property
    def eigen(self) -> EigenPair:
        return self.core.eigen

    @property
    def green(self) -> GreenEvaluator:
        return self.core.green

    @property
    def phi1(self) -> ScalarField:
        return self.core.eigen.phi

    @property
    def lam1(self) -> float:
        return self.core.eigen.lam

    def in_lambda(self, xi, margin: float = 0.0) -> bool:
        """Whether phi1(xi) clears the Lambda threshold."""
        from .geometry import interpolate

        return bool(interpolate(self.phi1, np.asarray(xi, float)) >= self.lambda_threshold - margin)


def resolve_h_source(core: DomainCore, source) -> ScalarField:
    """Builtin name ("zero" | "eigenmode"), CSV path, callable, or field."""
    if isinstance(source, ScalarField):
        if source.grid is not core.grid:
            raise ValueError("h field lives on a different grid")
        return source
    if callable(source):
        from .geometry import field_from_function

        return field_from_function(core.grid, source)
    if source is None or source == "zero":
        return constant_field(core.grid, 0.0)
    if source == "eigenmode":
        return ScalarField(core.grid, core.eigen.lam * core.eigen.phi.values)
    p = Path(source)
    if p.suffix == ".csv" or p.exists():
        return load_field_csv(core.grid, p)
    raise ValueError(f"unknown h source {source!r}")


def setup(
    core: DomainCore,
    h_source="zero",
    s_in1: float | None = None,
    s: float | None = None,
    lambda_threshold: float = 0.9,
) -> ProblemData:
    """Assemble ProblemData from forcing and parameter.

    Exactly one of s_in1 (forced-problem parameter) or s (coefficient-form
    parameter) must be given; they are related by s = s_in1 / lambda1.
    The default Lambda is the phi1 > 0.9 superlevel region.
    """
    if (s_in1 is None) == (s is None):
        raise ValueError("give exactly one of s_in1 or s")
    lam1 = core.eigen.lam
    if s is None:
        if s_in1 <= 0:
            raise ValueError("s_in1 must be positive")
        s = s_in1 / lam1
    else:
        if s <= 0:
            raise ValueError("s must be positive")
        s_in1 = s * lam1

    h_field = resolve_h_source(core, h_source)
    if np.all(h_field.values == 0.0):
        rho = constant_field(core.grid, 0.0)
    else:
        rho = solve_dirichlet(core.lap, rhs=h_field, boundary=0.0)
    log_k = ScalarField(core.grid, -rho.values)
    k_field = ScalarField(core.grid, np.exp(-rho.values))

    if not (0.0 < lambda_threshold < 1.0):
        raise ValueError("lambda threshold must lie in (0, 1)")
    mask = core.eigen.phi.values > lambda_threshold
    mask &= core.grid.kind == 0  # interior nodes only
    if not mask.any():
        raise ValueError("Lambda region is empty at this threshold")
    _check_lambda_condition(core.grid, core.eigen.phi.values, mask)

    return ProblemData(
        core=core,
        h_field=h_field,
        rho=rho,
        k_field=k_field,
        log_k=log_k,
        s=float(s),
        s_in1=float(s_in1),
        lambda_threshold=float(lambda_threshold),
        lambda_mask=mask,
    )


def _check_lambda_condition(grid: Grid, phi: np.ndarray, mask: np.ndarray) -> None:
    """sup over the Lambda rim of phi1 must stay below sup over Lambda."""
    rim = np.zeros_like(mask)
    inner = np.zeros_like(mask)
    inner[1:-1, 1:-1] = (
        mask[:-2, 1:-1] & mask[2:, 1:-1] & mask[1:-1, :-2] & mask[1:-1, 2:]
    )
    rim = mask & ~inner
    if rim.any() and phi[rim].max() >= phi[mask].max():
        raise ValueError("Lambda violates sup_boundary phi1 < sup phi1")


def in3_residual(u: ScalarField, data: ProblemData) -> np.ndarray:
    """Lap u + k e^{-s phi1} e^u at interior nodes (zero Dirichlet data)."""
    grid = data.grid
    lap_u = -apply_operator(data.lap, u, boundary=0.0)
    ii, jj = grid.interior_ij[:, 0], grid.interior_ij[:, 1]
    expo = data.log_k.values - data.s * data.phi1.values + u.values
    return lap_u + np.exp(np.clip(expo[ii, jj], None, 300.0))


def to_in1_solution(u_in3: ScalarField, data: ProblemData) -> ScalarField:
    """Map a coefficient-form solution back to the forced problem:
    u1 = u - s*phi1 - rho (note s*phi1 = (s_in1/lambda1)*phi1)."""
    if u_in3.grid is not data.grid:
        raise ValueError("field lives on a different grid")
    shift = data.s * data.phi1.values + data.rho.values
    return ScalarField(data.grid, u_in3.values - shift)


def from_in1_solution(u_in1: ScalarField, data: ProblemData) -> ScalarField:
    if u_in1.grid is not data.grid:
        raise ValueError("field lives on a different grid")
    shift = data.s * data.phi1.values + data.rho.values
    return ScalarField(data.grid, u_in1.values + shift)


def in1_residual(u_in1: ScalarField, data: ProblemData) -> np.ndarray:
    """Lap u + e^u - s_in1 phi1 - h at interior nodes."""
    grid = data.grid
    lap_u = -apply_operator(data.lap, u_in1, boundary=0.0)
    ii, jj = grid.interior_ij[:, 0], grid.interior_ij[:, 1]
    return (
        lap_u
        + np.exp(np.clip(u_in1.values[ii, jj], None, 300.0))
        - data.s_in1 * data.phi1.values[ii, jj]
        - data.h_field.values[ii, jj]
    )


def mass_in3(u: ScalarField, data: ProblemData) -> float:
    """Quadrature of k e^{-s phi1} e^u (the quantized mass)."""
    expo = data.log_k.values - data.s * data.phi1.values + u.values
    return float(np.sum(np.exp(np.clip(expo, None, 300.0)) * data.grid.cell_weights))


def mass_in1(u_in1: ScalarField, data: ProblemData) -> float:
    """Quadrature of e^{u1} for the forced-problem solution."""
    return float(
        np.sum(np.exp(np.clip(u_in1.values, None, 300.0)) * data.grid.cell_weights)
    )
