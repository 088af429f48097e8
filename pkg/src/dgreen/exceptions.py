"""Exception hierarchy.

Input problems (bad files, bad shapes, unknown registry ids) raise
``ProblemFormatError``; everything that is a *mathematical* failure of the
method itself (no dichotomy, no root, diverging iteration, inconsistent
system) derives from ``MathematicalError`` so the CLI can map it to its own
exit code.
"""


class DgreenError(Exception):
    """Base class for all package-specific errors."""


class ProblemFormatError(DgreenError, ValueError):
    """Malformed problem description: schema, dimensions, unknown ids."""


class MathematicalError(DgreenError):
    """The requested object does not exist or cannot be computed."""


class PseudoInverseError(MathematicalError):
    """SVD failure while computing a pseudoinverse."""


class NoDichotomyError(MathematicalError):
    """The generator/projector pair does not admit an exponential dichotomy."""


class RootFindingError(MathematicalError):
    """Newton iteration for the generating constants failed."""


class IterationDivergenceError(MathematicalError):
    """The nonlinear fixed-point iteration diverged or stalled."""
