"""Linearized operator L(psi) = Lap psi + W psi, translation kernel basis
with cutoffs, and the orthogonally constrained solve.

W = k e^{-s phi1} e^U is the linearization weight at the approximation U.
Around each spike the operator approaches the planar Liouville
linearization, whose bounded kernel is spanned by

    Z_0(z) = (|z|^2 - 1)/(|z|^2 + 1),   Z_i(z) = 4 z_i / (1 + |z|^2),

scaled per spike as Z_ij(x) = (1/gamma_j) Z_i((x - xi_j)/(mu_j delta_j)).
The projected problem pins only the translation pair i = 1, 2 per spike
(the dilation direction is controlled by the height choice), solving

    L(psi) = h + sum c_ij chi_j Z_ij,    int chi_j Z_ij psi = 0,

as a single bordered sparse system factorized once per operator/basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ansatz import Ansatz
from .geometry import ScalarField
from .problem import ProblemData

__all__ = [
    "LinearizedOperator",
    "KernelBasis",
    "ProjectedLinearSolve",
    "ProjectedSolver",
    "planar_kernel",
    "build_operator",
    "build_kernel_basis",
    "solve_projected",
]

DEFAULT_CUTOFF_RADIUS = 10.0  # scaled cutoff radius R0; chi falls to 0 by R0+1


def planar_kernel(i: int, zx, zy):
    """Bounded kernel functions of the planar Liouville linearization
    Lap Z + 8 (1 + |z|^2)^-2 Z = 0, i in {0, 1, 2}."""
    zx = np.asarray(zx, dtype=float)
    zy = np.asarray(zy, dtype=float)
    r2 = zx * zx + zy * zy
    if i == 0:
        return (r2 - 1.0) / (r2 + 1.0)
    if i == 1:
        return 4.0 * zx / (1.0 + r2)
    if i == 2:
        return 4.0 * zy / (1.0 + r2)
    raise ValueError("kernel index must be 0, 1 or 2")


def _smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t**2)


@dataclass(frozen=True)
class LinearizedOperator:
    """Weight field and matrix of Lap + W over interior nodes."""

    ansatz: Ansatz
    data: ProblemData
    W: ScalarField
    matrix: sp.csr_matrix = field(repr=False)


def build_operator(ansatz: Ansatz, data: ProblemData) -> LinearizedOperator:
    """W evaluated in log space; matrix = (Lap eliminated) + diag W."""
    grid = data.grid
    expo = data.log_k.values - data.s * data.phi1.values + ansatz.U.values
    W = np.exp(np.clip(expo, None, 300.0))
    ii, jj = grid.interior_ij[:, 0], grid.interior_ij[:, 1]
    mat = (-data.lap.matrix + sp.diags(W[ii, jj])).tocsr()
    return LinearizedOperator(ansatz=ansatz, data=data, W=ScalarField(grid, W), matrix=mat)


@dataclass(frozen=True)
class KernelBasis:
    """Per spike: cutoff chi_j and translation fields Z_1j, Z_2j."""

    ansatz: Ansatz
    R0: float
    chi: tuple[ScalarField, ...]
    Z: tuple[tuple[ScalarField, ScalarField], ...]

    @property
    def m(self) -> int:
        return len(self.chi)


def build_kernel_basis(
    ansatz: Ansatz, data: ProblemData, R0: float = DEFAULT_CUTOFF_RADIUS
) -> KernelBasis:
    """Cutoffs have scaled radius R0 (physical R0 * mu_j delta_j) with a
    quintic smoothstep shoulder of unit scaled width; supports must be
    pairwise disjoint, which admissible separations guarantee."""
    config = ansatz.config
    grid = data.grid
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    chis = []
    zs = []
    core = config.mu * config.delta_j
    for j in range(config.m):
        t = np.hypot(X - config.xi[j][0], Y - config.xi[j][1]) / core[j]
        chi = 1.0 - _smoothstep5(t - R0)
        chis.append(ScalarField(grid, chi))
        zx = (X - config.xi[j][0]) / core[j]
        zy = (Y - config.xi[j][1]) / core[j]
        z1 = planar_kernel(1, zx, zy) / config.gamma_j[j]
        z2 = planar_kernel(2, zx, zy) / config.gamma_j[j]
        zs.append((ScalarField(grid, z1), ScalarField(grid, z2)))
    for a in range(config.m):
        for bn in range(a + 1, config.m):
            sep = float(np.hypot(*(config.xi[a] - config.xi[bn])))
            if sep <= (R0 + 1) * (core[a] + core[bn]):
                raise ValueError(
                    f"cutoff supports of spikes {a} and {bn} overlap "
                    f"(separation {sep:.3g})"
                )
    return KernelBasis(ansatz=ansatz, R0=float(R0), chi=tuple(chis), Z=tuple(zs))


@dataclass(frozen=True)
class ProjectedLinearSolve:
    """Solution of the constrained linearized problem."""

    psi: ScalarField
    c: np.ndarray  # (2, m) multipliers in the equation orientation
    equation_residual: float
    constraint_residual: float


class ProjectedSolver:
    """Bordered factorization of [[Lap + W, -B], [B^T Q, 0]]; reusable for
    many right-hand sides (the factorization is immutable)."""

    def __init__(self, op: LinearizedOperator, basis: KernelBasis):
        self.op = op
        self.basis = basis
        grid = op.data.grid
        ii, jj = grid.interior_ij[:, 0], grid.interior_ij[:, 1]
        wq = grid.cell_weights[ii, jj]
        cols = []
        for j in range(basis.m):
            for i in (0, 1):
                cols.append((basis.chi[j].values * basis.Z[j][i].values)[ii, jj])
        B = np.column_stack(cols) if cols else np.zeros((ii.size, 0))
        # unit Gram diagonal for the multiplier block
        self.col_scale = np.sqrt((B * B * wq[:, None]).sum(axis=0))
        if (self.col_scale == 0).any():
            raise ValueError("kernel basis column vanished on the grid")
        Bn = B / self.col_scale
        self.Bn = Bn
        self.wq = wq
        nc = Bn.shape[1]
        K = sp.bmat(
            [
                [op.matrix, sp.csr_matrix(-Bn)],
                [sp.csr_matrix((Bn * wq[:, None]).T), None],
            ],
            format="csc",
        )
        self.n = ii.size
        self.nc = nc
        self.lu = spla.splu(K)
        self._ii, self._jj = ii, jj

    def solve(self, h: ScalarField | np.ndarray) -> ProjectedLinearSolve:
        grid = self.op.data.grid
        if isinstance(h, ScalarField):
            hvec = h.values[self._ii, self._jj]
        else:
            hvec = np.asarray(h, dtype=float)
        if not np.isfinite(hvec).all():
            raise ValueError("right-hand side contains non-finite values")
        rhs = np.concatenate([hvec, np.zeros(self.nc)])
        sol = self.lu.solve(rhs)
        psi = sol[: self.n]
        # equation reads (Lap + W) psi = h + sum c chi Z with c = -z/scale
        z = sol[self.n :]
        c = -(z / self.col_scale)
        eq = self.op.matrix @ psi - self.Bn @ z - hvec
        scale = max(np.abs(hvec).max(), np.abs(self.op.matrix @ psi).max(), 1e-300)
        eq_res = float(np.abs(eq).max() / scale)
        cons = (self.Bn * self.wq[:, None]).T @ psi
        cons_scale = max(float(np.abs(psi).max()), 1e-300)
        cons_res = float(np.abs(cons).max() / cons_scale) if self.nc else 0.0
        m = self.basis.m
        c = c.reshape(m, 2).T.copy()  # (2, m): c[i-1, j]
        fld = ScalarField(grid, grid.scatter_interior(psi))
        return ProjectedLinearSolve(
            psi=fld, c=c, equation_residual=eq_res, constraint_residual=cons_res
        )


def solve_projected(
    op: LinearizedOperator, basis: KernelBasis, h: ScalarField | np.ndarray
) -> ProjectedLinearSolve:
    """One-shot facade over ProjectedSolver (factorizes per call; hold a
    ProjectedSolver to amortize)."""
    return ProjectedSolver(op, basis).solve(h)
