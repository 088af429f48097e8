"""Weakly nonlinear perturbations of the bounded-solution problem.

Which members of the linear bounded family survive a perturbation
eps * Z(x, t, eps) is decided by the generating-constants functional
F(c) = integral K(t) Z(phi0(t, c), t, 0) dt.  Roots of F are found by a
damped Newton method restricted to the kernel of the gluing operator;
around a root, the bounded solution of the perturbed equation is
constructed by a fixed-point iteration whose linear part is the
generalized Green operator and whose kernel-direction updates are
driven by the pseudoinverse of the bifurcation operator B0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import IterationDivergenceError, MathematicalError, RootFindingError
from .green import Forcing, GreenContext, GreenSolution, solvability_residual, tail_bound
from .operator_core import moore_penrose
from .trajectory import Trajectory

__all__ = [
    "Nonlinearity",
    "GeneratingRoot",
    "IterationState",
    "generating_F",
    "solve_generating",
    "linearize_at",
    "build_B0",
    "sufficient_check",
    "iterate_solution",
    "corollary_compare",
    "evaluate_perturbed",
    "perturbed_residual",
]

log = logging.getLogger(__name__)

EPS_MAX_DEFAULT = 0.1


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Z(x, t, eps) with an optional analytic derivative in x.

    ``jac`` (if given) returns the complex-linear Jacobian of Z at
    (x, t, eps=0).  Without it a central finite difference is used,
    guarded by a two-step self-consistency check.  ``bound_radius`` is
    the radius q of the ball around the generating solution on which Z
    is declared bounded/smooth.
    """

    kind: str
    func: Callable[[np.ndarray, float, float], np.ndarray]
    n: int
    jac: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    bound_radius: float = 1.0
    params: dict = field(default_factory=dict)

    def __call__(self, x, t: float, eps: float) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=complex), t, eps),
                          dtype=complex).reshape(-1)


@dataclass
class GeneratingRoot:
    """A root of the generating-constants equation with its linearization."""

    c0: np.ndarray
    F_norm_at_root: float
    B0: np.ndarray
    B0_rank: int
    sufficient_ok: bool
    frechet_match_err: float
    note: str = ""


@dataclass
class IterationState:
    k: int
    y_k: Trajectory
    ybar_k: Trajectory
    c_k: np.ndarray
    correction_norm: float


class _SampledFunction:
    """Values on the quadrature lattice, spline-interpolated off it."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = times
        self.values = values
        self._t0 = times[0]
        self._q = times[1] - times[0]
        self._spline = None

    def __call__(self, t: float) -> np.ndarray:
        jf = (t - self._t0) / self._q
        j = int(round(jf))
        if abs(jf - j) < 1e-9 and 0 <= j < len(self.times):
            return self.values[j]
        if self._spline is None:
            self._spline = CubicSpline(self.times, self.values, axis=0)
        return self._spline(t)


def _fd_jacobian(z: Nonlinearity, x: np.ndarray, t: float, step: float) -> np.ndarray:
    n = x.shape[0]
    jac = np.empty((n, n), dtype=complex)
    for j in range(n):
        e = np.zeros(n, dtype=complex)
        e[j] = step
        jac[:, j] = (z(x + e, t, 0.0) - z(x - e, t, 0.0)) / (2.0 * step)
    return jac


def _jacobian_at(z: Nonlinearity, x: np.ndarray, t: float, check: bool = False) -> np.ndarray:
    """A1(t) = dZ/dx at (x, t, 0); analytic if declared, else central FD."""
    if z.jac is not None:
        return np.asarray(z.jac(x, t), dtype=complex)
    step = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    jac = _fd_jacobian(z, x, t, step)
    if check:
        jac2 = _fd_jacobian(z, x, t, step / 2.0)
        dev = np.linalg.norm(jac - jac2, 2)
        if dev > 1e-4 * (1.0 + np.linalg.norm(jac, 2)):
            raise MathematicalError(
                f"finite-difference derivative of Z is not self-consistent at t = {t} "
                f"(two-step deviation {dev:.3e})"
            )
    return jac


def _phi0_lattice(ctx: GreenContext, sol: GreenSolution, c: np.ndarray) -> np.ndarray:
    """phi0(t, c) on the lattice: homogeneous modes times c plus G[f]."""
    hom = np.einsum("jab,b->ja", ctx.homoclinic_lattice, c)
    return hom + _lattice_values(sol)


def _lattice_values(sol: GreenSolution) -> np.ndarray:
    """G[f] at every lattice node (plus branch at the origin)."""
    ctx = sol.ctx
    vals = np.empty((ctx.n_nodes, ctx.n), dtype=complex)
    vals[: ctx.idx0] = (sol.j1 - sol.j2 + sol.hom_minus)[: ctx.idx0]
    vals[ctx.idx0:] = sol.i1 - sol.i2 + sol.hom_plus
    return vals


def _check_generating_pre(ctx: GreenContext, f: Forcing, tol_solve: float):
    _, rnorm = solvability_residual(ctx, f)
    allowance = tol_solve + tail_bound(ctx, f)
    if rnorm > allowance:
        raise MathematicalError(
            f"forcing violates the solvability condition (residual {rnorm:.3e} "
            f"> {allowance:.3e}); no generating solutions exist"
        )


def generating_F(
    ctx: GreenContext, z: Nonlinearity, f: Forcing, c, tol_solve: float = 1e-6
) -> np.ndarray:
    """F(c) = integral K(t) Z(phi0(t, c), t, 0) dt."""
    c = np.asarray(c, dtype=complex).reshape(-1)
    _check_generating_pre(ctx, f, tol_solve)
    sol = ctx.solution(f)
    phi0 = _phi0_lattice(ctx, sol, c)
    zvals = np.array(
        [z(phi0[j], ctx.lattice[j], 0.0) for j in range(ctx.n_nodes)]
    )
    return ctx.integrate_kernel(zvals)


def build_B0(ctx: GreenContext, z: Nonlinearity, root_traj: Trajectory) -> np.ndarray:
    """B0 = integral K(t) A1(t) U(t,0) P_plus(0) P_ker(D) dt.

    ``root_traj`` must be the generating solution sampled on the
    context lattice; A1 is the x-derivative of Z along it.
    """
    if len(root_traj.times) != ctx.n_nodes or not np.allclose(
        root_traj.times, ctx.lattice
    ):
        raise ValueError("root trajectory must be sampled on the context lattice")
    a1 = _a1_lattice(ctx, z, root_traj.values)
    return _assemble_B0(ctx, a1)


def _a1_lattice(ctx: GreenContext, z: Nonlinearity, phi0: np.ndarray) -> np.ndarray:
    a1 = np.empty((ctx.n_nodes, ctx.n, ctx.n), dtype=complex)
    for j in range(ctx.n_nodes):
        a1[j] = _jacobian_at(z, phi0[j], ctx.lattice[j], check=(j == ctx.idx0))
    return a1


def _assemble_B0(ctx: GreenContext, a1: np.ndarray) -> np.ndarray:
    nodes, wts = ctx.line_weights()
    k = ctx.kernel_lattice
    w = ctx.homoclinic_lattice
    return np.einsum("j,jab,jbc,jcd->ad", wts, k[nodes], a1[nodes], w[nodes])


def sufficient_check(root: GeneratingRoot, ctx: GreenContext, tol_suff: float = 1e-8) -> bool:
    """Condition for the iteration to close: P_coker(B0) P_coker(D) P_minus(0) = 0."""
    pr = moore_penrose(root.B0) if np.any(root.B0) else None
    if pr is None:
        coker_b0 = np.eye(ctx.n, dtype=complex)
        root.B0_rank = 0
    else:
        coker_b0 = pr.cokernel_proj
        root.B0_rank = pr.rank
    val = np.linalg.norm(coker_b0 @ ctx.pinv.cokernel_proj @ ctx.dich_minus.P0, 2)
    root.sufficient_ok = bool(val <= tol_suff)
    return root.sufficient_ok


def _kernel_basis(ctx: GreenContext) -> np.ndarray:
    kp = ctx.pinv.kernel_proj
    u, s, _ = np.linalg.svd(kp)
    k = int(np.count_nonzero(s > 0.5))
    return u[:, :k]


def linearize_at(
    ctx: GreenContext,
    z: Nonlinearity,
    f: Forcing,
    c,
    tol_suff: float = 1e-8,
    fd_step: float = 1e-5,
) -> GeneratingRoot:
    """Package the linearization data at c: B0, sufficiency, derivative gap.

    Used by solve_generating at the converged root, and directly for
    diagnostics at arbitrary constants.
    """
    c = np.asarray(c, dtype=complex).reshape(-1)
    sol = ctx.solution(f)
    phi0 = _phi0_lattice(ctx, sol, c)
    a1 = _a1_lattice(ctx, z, phi0)
    b0 = _assemble_B0(ctx, a1)
    fval = generating_F(ctx, z, f, c)
    root = GeneratingRoot(
        c0=c,
        F_norm_at_root=float(np.linalg.norm(fval)),
        B0=b0,
        B0_rank=0,
        sufficient_ok=False,
        frechet_match_err=np.nan,
    )
    sufficient_check(root, ctx, tol_suff)
    if root.B0_rank == 0:
        log.warning("degenerate constants: B0 = 0, the root is not simple")
        root.note = "degenerate: B0 = 0"
    root.frechet_match_err = corollary_compare(ctx, z, f, root, fd_step)
    return root


def solve_generating(
    ctx: GreenContext,
    z: Nonlinearity,
    f: Forcing,
    c_init,
    tol_root: float = 1e-10,
    max_iter: int = 50,
) -> GeneratingRoot:
    """Damped Newton for F(c) = 0, restricted to the kernel of D.

    The constants only matter through P_ker(D) c, so the iteration runs
    in kernel coordinates; steps are Gauss-Newton (least-squares) in
    case the restricted Jacobian is rectangular or rank-deficient.
    """
    c = np.asarray(c_init, dtype=complex).reshape(-1)
    if ctx.pinv.rank == ctx.n:
        # D invertible: no solvability conditions, F vanishes identically
        root = linearize_at(ctx, z, f, c)
        root.note = "F identically zero on kernel"
        return root
    basis = _kernel_basis(ctx)
    k = basis.shape[1]

    def f_of(gamma: np.ndarray) -> np.ndarray:
        return generating_F(ctx, z, f, c + basis @ gamma)

    gamma = np.zeros(k, dtype=complex)
    fval = f_of(gamma)
    fnorm = np.linalg.norm(fval)
    for it in range(max_iter):
        if fnorm <= tol_root:
            break
        step = 1e-6 * (1.0 + float(np.linalg.norm(gamma)))
        jac = np.empty((ctx.n, k), dtype=complex)
        for j in range(k):
            e = np.zeros(k, dtype=complex)
            e[j] = step
            jac[:, j] = (f_of(gamma + e) - f_of(gamma - e)) / (2.0 * step)
        delta = -np.linalg.lstsq(jac, fval, rcond=None)[0]
        if np.linalg.norm(delta) < 1e-14 * (1.0 + np.linalg.norm(gamma)):
            raise RootFindingError(
                f"restricted Jacobian is singular near c = {c + basis @ gamma} "
                f"(residual {fnorm:.3e}); possible bifurcation point"
            )
        scale = 1.0
        for _ in range(12):
            trial = gamma + scale * delta
            ftrial = f_of(trial)
            if np.linalg.norm(ftrial) < fnorm:
                gamma, fval, fnorm = trial, ftrial, np.linalg.norm(ftrial)
                break
            scale *= 0.5
        else:
            raise RootFindingError(
                f"Newton stagnated at residual {fnorm:.3e} (tol {tol_root:.1e})"
            )
    else:
        raise RootFindingError(
            f"no root found in {max_iter} iterations; final residual {fnorm:.3e}"
        )
    return linearize_at(ctx, z, f, c + basis @ gamma)


def corollary_compare(
    ctx: GreenContext,
    z: Nonlinearity,
    f: Forcing,
    root: GeneratingRoot,
    fd_step: float = 1e-5,
) -> float:
    """||B0 - F'_fd(c0)|| restricted to the kernel of D.

    The two sides are computed by independent routes (quadrature of
    K A1 W versus finite differences of F), so agreement is a real
    consistency check on the linearization.
    """
    c0 = root.c0
    n = ctx.n
    jac = np.empty((n, n), dtype=complex)
    for j in range(n):
        e = np.zeros(n, dtype=complex)
        e[j] = fd_step
        jac[:, j] = (
            generating_F(ctx, z, f, c0 + e) - generating_F(ctx, z, f, c0 - e)
        ) / (2.0 * fd_step)
    return float(np.linalg.norm((root.B0 - jac) @ ctx.pinv.kernel_proj, 2))


def iterate_solution(
    ctx: GreenContext,
    z: Nonlinearity,
    f: Forcing,
    root: GeneratingRoot,
    eps: float,
    max_iter: int = 60,
    tol_fix: float = 1e-10,
    eps_max: float = EPS_MAX_DEFAULT,
    tol_consistency: float = 1e-6,
) -> Tuple[Trajectory, List[IterationState]]:
    """Fixed-point iteration for the bounded solution of the perturbed equation.

    Starting from y_0 = 0:
      ybar_{k+1} = eps * G[Z(phi0 + y_k, ., eps)]
      c_k   = -pinv(B0) * integral K (A1 ybar_k + R(y_k)) dt
      y_{k+1} = U(.,0) P_plus(0) P_ker(D) c_k + ybar_{k+1}
    with the remainder R(y) = Z(phi0 + y, ., eps) - Z(phi0, ., 0) - A1 y.
    Stops when the sup-norm correction drops below tol_fix; three
    consecutive growing corrections raise a divergence error suggesting
    a smaller eps.
    """
    if not root.sufficient_ok:
        raise MathematicalError(
            "sufficiency condition fails at these constants; the iteration "
            "is not guaranteed to close"
        )
    if eps < 0 or eps > eps_max:
        raise ValueError(f"eps = {eps} outside [0, {eps_max}]")

    sol0 = ctx.solution(f)
    phi0 = _phi0_lattice(ctx, sol0, root.c0)
    a1 = _a1_lattice(ctx, z, phi0)
    z0 = np.array([z(phi0[j], ctx.lattice[j], 0.0) for j in range(ctx.n_nodes)])
    b0_pinv = moore_penrose(root.B0).pinv if root.B0_rank else np.zeros_like(root.B0)
    w = ctx.homoclinic_lattice
    lattice = ctx.lattice

    y = np.zeros((ctx.n_nodes, ctx.n), dtype=complex)
    ybar = np.zeros_like(y)
    history: List[IterationState] = []
    grow_streak = 0
    prev_corr = None
    converged = False

    for k in range(max_iter):
        z_shift = np.array(
            [z(phi0[j] + y[j], lattice[j], eps) for j in range(ctx.n_nodes)]
        )
        fk = Forcing(
            "sampled",
            _SampledFunction(lattice, z_shift),
            ctx.n,
            sup_norm=float(np.max(np.linalg.norm(z_shift, axis=1))),
        )
        ybar_next = eps * _lattice_values(GreenSolution(ctx, fk))

        remainder = z_shift - z0 - np.einsum("jab,jb->ja", a1, y)
        integrand = np.einsum("jab,jb->ja", a1, ybar) + remainder
        c_k = -(b0_pinv @ ctx.integrate_kernel(integrand))
        y_next = np.einsum("jab,b->ja", w, c_k) + ybar_next

        corr = float(np.max(np.linalg.norm(y_next - y, axis=1)))
        history.append(
            IterationState(
                k + 1,
                Trajectory(lattice, y_next.copy()),
                Trajectory(lattice, ybar_next.copy()),
                c_k,
                corr,
            )
        )
        y, ybar = y_next, ybar_next
        if corr <= tol_fix:
            converged = True
            break
        if prev_corr is not None and corr > prev_corr:
            grow_streak += 1
            if grow_streak >= 3:
                raise IterationDivergenceError(
                    f"corrections grew for 3 consecutive steps (last {corr:.3e}); "
                    "try a smaller eps"
                )
        else:
            grow_streak = 0
        prev_corr = corr

    if not converged:
        raise IterationDivergenceError(
            f"no convergence in {max_iter} iterations (last correction "
            f"{history[-1].correction_norm:.3e}); the starting constants may "
            "not satisfy the generating equation"
        )

    # A fixed point only yields a bounded solution if the composed forcing
    # satisfies the solvability condition (the jump of the limit at 0 is
    # eps times this integral); from non-root constants the iteration can
    # settle on a spurious fixed point with a conserved inconsistency.
    z_final = np.array(
        [z(phi0[j] + y[j], lattice[j], eps) for j in range(ctx.n_nodes)]
    )
    consistency = float(np.linalg.norm(ctx.integrate_kernel(z_final)))
    z_scale = float(np.max(np.linalg.norm(z_final, axis=1))) if ctx.n_nodes else 0.0
    if eps > 0 and consistency > tol_consistency * (1.0 + z_scale):
        raise IterationDivergenceError(
            f"iteration settled on an inconsistent limit (solvability residual "
            f"{consistency:.3e} leaves a jump at t = 0); the starting constants "
            "do not satisfy the generating equation"
        )

    x = phi0 + y
    ratios = [
        history[i + 1].correction_norm / history[i].correction_norm
        for i in range(len(history) - 1)
        if history[i].correction_norm > 0
    ]
    meta = {
        "eps": eps,
        "iterations": len(history),
        "final_correction": history[-1].correction_norm,
        "correction_ratios": ratios[-3:],
        "final_consistency": consistency,
        "c0": root.c0,
        "c_last": history[-1].c_k,
        "regime": "nonlinear",
    }
    return Trajectory(lattice, x, meta), history


def evaluate_perturbed(
    ctx: GreenContext,
    z: Nonlinearity,
    f: Forcing,
    root: GeneratingRoot,
    traj: Trajectory,
    eps: float,
    times,
) -> np.ndarray:
    """Evaluate the converged perturbed solution at arbitrary times.

    Reassembles x(t) = phi0(t, c0) + U(t,0) P_plus(0) P_ker(D) c_last
    + eps * G[Z(x, ., eps)](t, 0) from the fixed-point data, so the
    values carry quadrature-grade accuracy off the lattice too.
    """
    c_last = np.asarray(traj.meta["c_last"], dtype=complex).reshape(-1)
    zvals = np.array(
        [z(traj.values[j], traj.times[j], eps) for j in range(len(traj.times))]
    )
    fk = Forcing(
        "sampled",
        _SampledFunction(traj.times, zvals),
        ctx.n,
        sup_norm=float(np.max(np.linalg.norm(zvals, axis=1))),
    )
    sol_z = GreenSolution(ctx, fk)
    sol_f = ctx.solution(f)
    out = []
    for t in np.atleast_1d(times):
        t = float(t)
        hom = ctx.homoclinic_at(t)
        out.append(
            hom @ (root.c0 + c_last) + sol_f.value(t) + eps * sol_z.value(t)
        )
    return np.array(out)


def perturbed_residual(
    ctx: GreenContext,
    z: Nonlinearity,
    f: Forcing,
    root: GeneratingRoot,
    traj: Trajectory,
    eps: float,
    sample,
    fd_step: float = 1e-3,
) -> float:
    """Max ODE residual ||x' - A(t) x - eps Z(x,t,eps) - f(t)|| of the limit."""
    sample = [float(t) for t in np.atleast_1d(sample)]
    for t in sample:
        if abs(t) <= fd_step:
            raise ValueError(f"sample point t = {t} too close to the jump at 0")
    times = [u for t in sample for u in (t - fd_step, t, t + fd_step)]
    pts = evaluate_perturbed(ctx, z, f, root, traj, eps, times)
    worst = 0.0
    for k, t in enumerate(sample):
        xm, xc, xp = pts[3 * k], pts[3 * k + 1], pts[3 * k + 2]
        a = ctx.family.gen.evaluate(t)
        res = (xp - xm) / (2.0 * fd_step) - a @ xc - eps * z(xc, t, eps) - f(t)
        worst = max(worst, float(np.linalg.norm(res)))
    return worst
