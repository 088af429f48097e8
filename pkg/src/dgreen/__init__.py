"""dgreen: bounded solutions of linear and weakly nonlinear evolution
equations on the real line, built on exponential dichotomies and the
generalized Green operator, with brute-force oracles for verification.
"""

from .dichotomy import (
    SIDE_MINUS,
    SIDE_PLUS,
    HalfLineDichotomy,
    build_gluing,
    piecewise_spectral_projector,
    spectral_projector,
    verify_dichotomy,
)
from .exceptions import (
    DgreenError,
    IterationDivergenceError,
    MathematicalError,
    NoDichotomyError,
    ProblemFormatError,
    PseudoInverseError,
    RootFindingError,
)
from .green import (
    Forcing,
    GreenContext,
    QuadratureConfig,
    bounded_family,
    diff_residual,
    green_apply,
    jump_check,
    make_context,
    rhs_g,
    sample_bounded_family,
    solvability_kernel,
    solvability_residual,
)
from .nonlinear import (
    GeneratingRoot,
    IterationState,
    Nonlinearity,
    build_B0,
    corollary_compare,
    generating_F,
    iterate_solution,
    linearize_at,
    solve_generating,
    sufficient_check,
)
from .operator_core import (
    CLASSICAL,
    ILL_POSED_MARGIN,
    PSEUDOSOLUTION,
    PseudoInverseResult,
    Regime,
    moore_penrose,
    pseudo_solve,
    regime_classify,
)
from .oracle import BvpResult, bvp_solve, compare, convolution_scalar
from .propagator import (
    EvolutionFamily,
    Generator,
    MatrixSource,
    build_family,
    interaction_picture_V,
    weak_residual,
)
from .registry import forcing_source, nonlinearity_source, operator_source
from .trajectory import Trajectory, write_csv, write_json

__version__ = "0.1.0"
