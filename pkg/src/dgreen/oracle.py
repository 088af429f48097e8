"""Brute-force verifiers, deliberately simple and independent of the
Green-operator path.

Bounded solutions on the line are approximated by a two-point BVP on
[-T, T]: a one-shot dense linear system built from stepwise propagators
plus projected boundary rows that annihilate the modes growing out of
the window, i.e. P_minus(-T) x(-T) = 0 (kills the backward-growing
part) and (I - P_plus(T)) x(T) = 0 (kills the forward-growing part).
When the gluing operator is singular, kernel-pinning rows select the
same family member as the Green construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

from .dichotomy import HalfLineDichotomy, build_gluing
from .exceptions import MathematicalError
from .green import Forcing
from .operator_core import moore_penrose
from .propagator import EvolutionFamily
from .trajectory import Trajectory

__all__ = ["BvpResult", "bvp_solve", "convolution_scalar", "compare"]


@dataclass(frozen=True)
class BvpResult:
    trajectory: Trajectory
    boundary_residual: float
    condition_number: float


def _constraint_rows(p: np.ndarray) -> np.ndarray:
    """Rows r with r x = 0 equivalent to P x = 0 (rank-many rows)."""
    _, s, vh = np.linalg.svd(p)
    rank = int(np.count_nonzero(s > 1e-8))
    return vh[:rank]


def bvp_solve(
    family: EvolutionFamily,
    dich_plus: HalfLineDichotomy,
    dich_minus: HalfLineDichotomy,
    f: Forcing,
    T: float,
    h: float,
    c=None,
    tol_rank: float = 1e-10,
) -> BvpResult:
    """One-shot dense BVP for x' = A(t) x + f on [-T, T].

    Stepping rows x_{j+1} = Phi_j x_j + r_j use their own midpoint
    exponentials (not the family caches); r_j is a per-step Simpson
    integral of the forcing.  Solved by dense least squares; an
    inconsistent overdetermined system (large residual) is the numerical
    signature that no bounded solution exists.
    """
    if T > min(family.t_max, -family.t_min) + 1e-9:
        raise ValueError(f"T = {T} exceeds the family range")
    n = family.n
    n_steps = int(round(2.0 * T / h))
    if n_steps % 2:
        n_steps += 1
    h_eff = 2.0 * T / n_steps
    times = -T + h_eff * np.arange(n_steps + 1)
    gen = family.gen

    n_unknown = n * (n_steps + 1)
    rows = []
    rhs = []

    # stepping blocks
    for j in range(n_steps):
        t0 = times[j]
        phi = expm(h_eff * gen.evaluate(t0 + h_eff / 2.0))
        phi_half = expm((h_eff / 2.0) * gen.evaluate(t0 + 0.75 * h_eff))
        r_j = (h_eff / 6.0) * (
            phi @ f(t0) + 4.0 * (phi_half @ f(t0 + h_eff / 2.0)) + f(t0 + h_eff)
        )
        block = np.zeros((n, n_unknown), dtype=complex)
        block[:, j * n : (j + 1) * n] = -phi
        block[:, (j + 1) * n : (j + 2) * n] = np.eye(n)
        rows.append(block)
        rhs.append(r_j)

    # projected boundary rows
    p_minus_left = dich_minus.path.projector(-T)
    p_plus_right = dich_plus.path.projector(T)
    left_rows = _constraint_rows(p_minus_left)
    right_rows = _constraint_rows(np.eye(n, dtype=complex) - p_plus_right)
    if left_rows.size:
        block = np.zeros((left_rows.shape[0], n_unknown), dtype=complex)
        block[:, :n] = left_rows
        rows.append(block)
        rhs.append(np.zeros(left_rows.shape[0], dtype=complex))
    if right_rows.size:
        block = np.zeros((right_rows.shape[0], n_unknown), dtype=complex)
        block[:, -n:] = right_rows
        rows.append(block)
        rhs.append(np.zeros(right_rows.shape[0], dtype=complex))

    # kernel pinning: fix the components of x(0) spanned by the bounded
    # homogeneous modes, so comparisons are not defined only modulo ker D
    d = build_gluing(dich_plus.P0, dich_minus.P0)
    pr = moore_penrose(d, tol_rank)
    span = dich_plus.P0 @ pr.kernel_proj
    u, s, _ = np.linalg.svd(span)
    dim_pin = int(np.count_nonzero(s > 1e-8))
    if dim_pin:
        w = u[:, :dim_pin]
        c_vec = np.zeros(n, dtype=complex) if c is None else np.asarray(c, dtype=complex).reshape(-1)
        target = w.conj().T @ (span @ c_vec)
        j0 = n_steps // 2
        block = np.zeros((dim_pin, n_unknown), dtype=complex)
        block[:, j0 * n : (j0 + 1) * n] = w.conj().T
        rows.append(block)
        rhs.append(target)

    a_sys = np.vstack(rows)
    b_sys = np.concatenate(rhs)
    x, _, rank, sing = np.linalg.lstsq(a_sys, b_sys, rcond=None)
    if rank < n_unknown:
        raise MathematicalError(
            f"BVP system is rank-deficient by {n_unknown - rank}: the boundary "
            "projectors do not determine a unique trajectory"
        )
    residual = float(np.linalg.norm(a_sys @ x - b_sys))
    cond = float(sing[0] / sing[n_unknown - 1])
    traj = Trajectory(times, x.reshape(n_steps + 1, n), {"T": T, "h": h_eff})
    return BvpResult(traj, residual, cond)


def convolution_scalar(a: float, f, t: float) -> complex:
    """Textbook bounded solution of x' = a x + f for scalar a != 0.

    a < 0: integral_{-inf}^t e^{a(t-tau)} f(tau) dtau;
    a > 0: -integral_t^{inf} e^{a(t-tau)} f(tau) dtau.
    Adaptive quadrature to ~1e-10.
    """
    if a == 0:
        raise ValueError("convolution_scalar requires a != 0")

    def scalar_f(tau: float) -> complex:
        val = f(tau)
        return complex(np.asarray(val, dtype=complex).reshape(-1)[0])

    if a < 0:
        integrand = lambda u: np.exp(a * u) * scalar_f(t - u)
        sign = 1.0
    else:
        integrand = lambda u: np.exp(-a * u) * scalar_f(t + u)
        sign = -1.0
    re = quad(lambda u: integrand(u).real, 0.0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=400)[0]
    im = quad(lambda u: integrand(u).imag, 0.0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=400)[0]
    return sign * complex(re, im)


def compare(traj_a: Trajectory, traj_b: Trajectory) -> tuple:
    """(max_err, at_t): sup-norm gap on the common window.

    Evaluated on the coarser trajectory's own nodes; the finer one is
    linearly interpolated onto them.
    """
    lo = max(traj_a.times[0], traj_b.times[0])
    hi = min(traj_a.times[-1], traj_b.times[-1])
    if lo > hi:
        raise ValueError("trajectories have disjoint time ranges")
    da = np.median(np.diff(traj_a.times)) if len(traj_a.times) > 1 else np.inf
    db = np.median(np.diff(traj_b.times)) if len(traj_b.times) > 1 else np.inf
    coarse, fine = (traj_a, traj_b) if da >= db else (traj_b, traj_a)
    mask = (coarse.times >= lo - 1e-12) & (coarse.times <= hi + 1e-12)
    ts = coarse.times[mask]
    if ts.size == 0:
        raise ValueError("no common samples in the overlap window")
    vals_c = coarse.values[mask]
    vals_f = np.empty_like(vals_c)
    for j in range(fine.n):
        vals_f[:, j] = np.interp(ts, fine.times, fine.values[:, j].real) + 1j * np.interp(
            ts, fine.times, fine.values[:, j].imag
        )
    errs = np.linalg.norm(vals_c - vals_f, axis=1)
    idx = int(np.argmax(errs))
    return float(errs[idx]), float(ts[idx])
