"""bubbleforge: multi-spike solutions of Delta u + k(x) e^{-s phi1} e^u = 0.

Builds spike ansatz approximations from Green's-function data, optimizes
spike configurations against the reduced interaction energy, solves the
projected linearized problem, and corrects to genuine discrete solutions
with quantization diagnostics.
"""

from .geometry import (
    Domain,
    Grid,
    ScalarField,
    build_grid,
    field_from_function,
    gradient,
    integrate,
    interpolate,
    rectangle,
    unit_disk,
    unit_square,
)
from .elliptic import (
    DiscreteLaplacian,
    EigenPair,
    assemble_laplacian,
    harmonic_extension,
    principal_eigenpair,
    solve_dirichlet,
)
from .green import GreenEvaluator, gamma
from .problem import DomainCore, ProblemData, build_core, setup, to_in1_solution
from .ansatz import (
    Ansatz,
    SpikeConfiguration,
    assemble_ansatz,
    bubble_profile,
    compute_mu,
    make_configuration,
)
from .energy import energy_expansion, energy_full, maximize_configuration
from .linearized import build_kernel_basis, build_operator, solve_projected
from .corrector import contract, newton_refine
from .pipeline import RunConfig, run, sweep

__version__ = "0.1.0"
