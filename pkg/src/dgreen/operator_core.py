"""Dense complex operator algebra: pseudoinverses, kernel/cokernel
projectors and the classification of how an operator equation D xi = g
can be solved.

All operators are plain complex ndarrays.  Inner products are
conjugate-linear in the first argument (``np.vdot`` convention), which
fixes the meaning of adjoints and orthogonal projectors throughout the
package.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import PseudoInverseError

__all__ = [
    "PseudoInverseResult",
    "Regime",
    "CLASSICAL",
    "PSEUDOSOLUTION",
    "ILL_POSED_MARGIN",
    "moore_penrose",
    "pseudo_solve",
    "regime_classify",
]

#: Regime tags for the solvability trichotomy of D xi = g.
CLASSICAL = "classical"
PSEUDOSOLUTION = "pseudosolution"
ILL_POSED_MARGIN = "ill_posed_margin"


def as_operator(a) -> np.ndarray:
    """Coerce to a finite 2-D complex array."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got array of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("operator has non-finite entries")
    return a


@dataclass(frozen=True)
class PseudoInverseResult:
    """SVD-truncated Moore-Penrose pseudoinverse and derived projectors.

    Attributes
    ----------
    pinv : (n, m) ndarray
        The pseudoinverse of the (m, n) input.
    rank : int
        Numerical rank after truncation at ``tol_rank * sigma_max``.
    singular_values : (min(m, n),) ndarray
        All singular values, descending.
    kernel_proj : (n, n) ndarray
        Orthogonal projector onto the kernel, ``I - pinv @ a``.
    cokernel_proj : (m, m) ndarray
        Orthogonal projector onto the cokernel, ``I - a @ pinv``.
    ill_posedness_margin : float
        Smallest singular value above the numerical noise floor
        (independent of the rank cutoff); 0.0 for the zero operator.
        A small positive margin signals that the range is nearly not
        closed, the finite-dimensional shadow of an ill-posed problem.
    """

    pinv: np.ndarray
    rank: int
    singular_values: np.ndarray
    kernel_proj: np.ndarray
    cokernel_proj: np.ndarray
    ill_posedness_margin: float


def moore_penrose(a, tol_rank: float = 1e-10) -> PseudoInverseResult:
    """Moore-Penrose pseudoinverse with relative rank truncation.

    Singular values below ``tol_rank * sigma_max`` are treated as exact
    zeros.  The four Penrose axioms hold to ~1e-10 * sigma_max on the
    retained part.

    Parameters
    ----------
    a : array_like, shape (m, n)
    tol_rank : float
        Relative rank cutoff, in (0, 1).
    """
    a = as_operator(a)
    if not 0.0 < tol_rank < 1.0:
        raise ValueError(f"tol_rank must be in (0, 1), got {tol_rank}")
    m, n = a.shape
    try:
        u, s, vh = np.linalg.svd(a)
    except np.linalg.LinAlgError as exc:
        raise PseudoInverseError(f"SVD did not converge for a {m}x{n} operator") from exc

    cutoff = tol_rank * s[0] if s.size else 0.0
    rank = int(np.count_nonzero(s > cutoff))
    if rank:
        pinv = (vh[:rank].conj().T / s[:rank]) @ u[:, :rank].conj().T
    else:
        pinv = np.zeros((n, m), dtype=complex)
    # margin: smallest singular value that is genuinely present (above the
    # roundoff floor), whether or not the rank cut discarded it
    noise_floor = 100.0 * max(m, n) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    present = s[s > noise_floor]
    margin = float(present[-1]) if present.size else 0.0

    kernel_proj = np.eye(n, dtype=complex) - pinv @ a
    cokernel_proj = np.eye(m, dtype=complex) - a @ pinv
    return PseudoInverseResult(pinv, rank, s, kernel_proj, cokernel_proj, margin)


def pseudo_solve(d, g, c=None, tol_rank: float = 1e-10) -> np.ndarray:
    """Least-squares solution family of D xi = g.

    Returns ``xi = pinv(D) g + P_ker(D) c``.  Every member minimises
    ||D xi - g||; the ``c = 0`` member has minimal norm among the
    minimisers.
    """
    d = as_operator(d)
    g = np.asarray(g, dtype=complex).reshape(-1)
    if g.shape[0] != d.shape[0]:
        raise ValueError(
            f"right-hand side has dimension {g.shape[0]}, operator expects {d.shape[0]}"
        )
    pr = moore_penrose(d, tol_rank)
    xi = pr.pinv @ g
    if c is not None:
        c = np.asarray(c, dtype=complex).reshape(-1)
        if c.shape[0] != d.shape[1]:
            raise ValueError(
                f"kernel parameter has dimension {c.shape[0]}, operator expects {d.shape[1]}"
            )
        xi = xi + pr.kernel_proj @ c
    return xi


@dataclass(frozen=True)
class Regime:
    """Which sense of solution D xi = g admits.

    ``tag`` is ``CLASSICAL`` when g lies in the range (residual below
    tol_solve) and ``PSEUDOSOLUTION`` otherwise.  ``margin_flagged``
    marks proximity to a non-closed range: the smallest retained
    singular value sits in (0, tol_margin).  At finite dimension the
    range is always closed, so the flag is a diagnostic, not a third
    mutually exclusive state; ``label`` reports it as the middle case.
    """

    tag: str
    residual_norm: float
    margin_flagged: bool

    def label(self) -> str:
        return ILL_POSED_MARGIN if self.margin_flagged else self.tag


def regime_classify(
    pr: PseudoInverseResult, g, tol_solve: float, tol_margin: float
) -> Regime:
    """Classify D xi = g by the cokernel component of g.

    ``residual_norm = ||cokernel_proj @ g||`` vanishes exactly when g is
    in the range of D.
    """
    if tol_solve <= 0 or tol_margin <= 0:
        raise ValueError("tolerances must be positive")
    g = np.asarray(g, dtype=complex).reshape(-1)
    residual = float(np.linalg.norm(pr.cokernel_proj @ g))
    tag = CLASSICAL if residual <= tol_solve else PSEUDOSOLUTION
    flagged = 0.0 < pr.ill_posedness_margin < tol_margin
    return Regime(tag, residual, flagged)
