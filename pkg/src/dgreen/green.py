"""Bounded solutions on the whole line: solvability condition, right-hand
side of the gluing equation, and the piecewise generalized Green operator.

The improper integrals are truncated at t_cut (tail controlled by the
dichotomy constants) and evaluated by composite Simpson rules on a
symmetric lattice.  Every propagated product is kept in its decaying
regime: integrands are projected *before* transport, accumulators are
re-projected after every cell, and the solvability kernel is advanced
by a right-multiplication recurrence with the same discipline.  Bare
U(t, s) is never formed over long spans.
"""
from __future__ import annotations

import logging
import threading
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dichotomy import SIDE_MINUS, SIDE_PLUS, HalfLineDichotomy, build_gluing
from .operator_core import PseudoInverseResult, moore_penrose, regime_classify
from .propagator import EvolutionFamily
from .trajectory import Trajectory

__all__ = [
    "QuadratureConfig",
    "Forcing",
    "GreenContext",
    "make_context",
    "solvability_kernel",
    "solvability_residual",
    "rhs_g",
    "green_apply",
    "jump_check",
    "diff_residual",
    "bounded_family",
    "sample_bounded_family",
    "required_t_cut",
    "tail_bound",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureConfig:
    """Truncation and composite-Simpson parameters for the line integrals.

    ``t_cut`` is the half-line truncation time, ``nodes_per_unit`` the
    number of Simpson cells per unit time (each cell contributes an odd
    node count), ``tail_tol`` the budget for each neglected tail.
    """

    t_cut: float
    nodes_per_unit: int = 32
    tail_tol: float = 1e-9
    rule: str = "simpson"

    def __post_init__(self):
        if self.t_cut <= 0:
            raise ValueError("t_cut must be positive")
        if self.nodes_per_unit < 4:
            raise ValueError("nodes_per_unit must be >= 4")
        if self.tail_tol <= 0:
            raise ValueError("tail_tol must be positive")
        if self.rule != "simpson":
            raise ValueError(f"unsupported quadrature rule {self.rule!r}")


@dataclass(frozen=True, eq=False)
class Forcing:
    """A bounded continuous forcing t -> f(t) with a known sup bound."""

    kind: str
    func: Callable[[float], np.ndarray]
    n: int
    sup_norm: float
    params: dict = field(default_factory=dict)

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.func(t), dtype=complex).reshape(-1)


def required_t_cut(m: float, alpha: float, sup_f: float, tail_tol: float) -> float:
    """Smallest truncation giving tail bound M e^{-alpha T} |||f||| / alpha <= tol."""
    return float(np.log(max(m * sup_f / (alpha * tail_tol), 1.0)) / alpha)


def tail_bound(ctx: "GreenContext", f: Forcing) -> float:
    """Analytic bound on each neglected half-line tail for this forcing."""
    b_plus = ctx.dich_plus.M * np.exp(-ctx.dich_plus.alpha * ctx.T) / ctx.dich_plus.alpha
    b_minus = ctx.dich_minus.M * np.exp(-ctx.dich_minus.alpha * ctx.T) / ctx.dich_minus.alpha
    return float(max(b_plus, b_minus) * f.sup_norm)


class GreenContext:
    """Everything the bounded-solution construction needs.

    Holds the evolution family, both half-line dichotomies, the gluing
    operator D with its pseudoinverse data, and the quadrature lattice.
    Immutable after construction; per-forcing solution sweeps are cached.
    """

    def __init__(
        self,
        family: EvolutionFamily,
        dich_plus: HalfLineDichotomy,
        dich_minus: HalfLineDichotomy,
        d: np.ndarray,
        pinv: PseudoInverseResult,
        quad: QuadratureConfig,
    ):
        if dich_plus.side != SIDE_PLUS or dich_minus.side != SIDE_MINUS:
            raise ValueError("dichotomies passed with swapped sides")
        if dich_plus.family is not family or dich_minus.family is not family:
            raise ValueError("dichotomies must refer to the context's family")
        self.family = family
        self.dich_plus = dich_plus
        self.dich_minus = dich_minus
        self.D = d
        self.pinv = pinv
        self.quad = quad
        self.n = family.n

        # lattice: spacing q = 1/(2 * nodes_per_unit), an even cell count
        # per half-line, 0 exactly on a node
        self.q = 1.0 / (2.0 * quad.nodes_per_unit)
        m_half = int(round(quad.t_cut / self.q))
        if m_half % 2:
            m_half -= 1
        if m_half < 4:
            raise ValueError("t_cut too small for the requested nodes_per_unit")
        self.T = m_half * self.q
        self.idx0 = m_half
        self.n_nodes = 2 * m_half + 1
        self.lattice = -self.T + self.q * np.arange(self.n_nodes)
        slack = 1e-9
        if family.t_min > -self.T - slack or family.t_max < self.T + slack:
            raise ValueError(
                f"family range [{family.t_min}, {family.t_max}] does not cover "
                f"the truncated line [-{self.T}, {self.T}]"
            )

        self._lock = threading.RLock()  # lattice builders nest under it
        self._hops_f: list = [None] * (self.n_nodes - 1)
        self._hops_b: list = [None] * (self.n_nodes - 1)
        self._pp: Optional[np.ndarray] = None
        self._pm: Optional[np.ndarray] = None
        self._k_lattice: Optional[np.ndarray] = None
        self._w_lattice: Optional[np.ndarray] = None
        self._solutions: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()

    # -- lattice plumbing --------------------------------------------------

    def hop(self, j: int, forward: bool) -> np.ndarray:
        """U over one lattice cell: U(t_{j+1}, t_j), or its exact reverse."""
        cache = self._hops_f if forward else self._hops_b
        m = cache[j]
        if m is None:
            t0, t1 = self.lattice[j], self.lattice[j + 1]
            m = self.family.matrix(t1, t0) if forward else self.family.matrix(t0, t1)
            cache[j] = m
        return m

    def proj_plus(self, j: int) -> np.ndarray:
        """P_plus at lattice node j (j >= idx0)."""
        if self._pp is None:
            self._build_proj_lattices()
        return self._pp[j - self.idx0]

    def proj_minus(self, j: int) -> np.ndarray:
        """P_minus at lattice node j (j <= idx0)."""
        if self._pm is None:
            self._build_proj_lattices()
        return self._pm[j]

    def proj_at(self, side: str, t: float) -> np.ndarray:
        path = self.dich_plus.path if side == SIDE_PLUS else self.dich_minus.path
        return path.projector(t)

    def _build_proj_lattices(self):
        with self._lock:
            if self._pp is not None:
                return
            npts = self.idx0 + 1
            pp = np.empty((npts, self.n, self.n), dtype=complex)
            pm = np.empty((npts, self.n, self.n), dtype=complex)
            for k in range(npts):  # outward order keeps the path caches warm
                pp[k] = self.dich_plus.path.projector(self.lattice[self.idx0 + k])
                pm[npts - 1 - k] = self.dich_minus.path.projector(
                    self.lattice[self.idx0 - k]
                )
            self._pp = pp
            self._pm = pm

    @property
    def kernel_lattice(self) -> np.ndarray:
        """K(t) at every lattice node via a right-multiplication recurrence."""
        if self._k_lattice is None:
            with self._lock:
                if self._k_lattice is None:
                    self._k_lattice = self._build_kernel_lattice()
        return self._k_lattice

    def _build_kernel_lattice(self) -> np.ndarray:
        eye = np.eye(self.n, dtype=complex)
        k = np.empty((self.n_nodes, self.n, self.n), dtype=complex)
        k[self.idx0] = self.pinv.cokernel_proj @ self.dich_minus.P0
        for j in range(self.idx0, 0, -1):  # down the minus half-line
            k[j - 1] = (k[j] @ self.hop(j - 1, True)) @ self.proj_minus(j - 1)
        for j in range(self.idx0, self.n_nodes - 1):  # up the plus half-line
            k[j + 1] = (k[j] @ self.hop(j, False)) @ (eye - self.proj_plus(j + 1))
        return k

    @property
    def homoclinic_lattice(self) -> np.ndarray:
        """U(t,0) P_plus(0) P_ker(D) at every node: bounded homogeneous modes."""
        if self._w_lattice is None:
            with self._lock:
                if self._w_lattice is None:
                    self._w_lattice = self._build_homoclinic_lattice()
        return self._w_lattice

    def _build_homoclinic_lattice(self) -> np.ndarray:
        eye = np.eye(self.n, dtype=complex)
        w = np.empty((self.n_nodes, self.n, self.n), dtype=complex)
        w[self.idx0] = self.proj_plus(self.idx0) @ self.pinv.kernel_proj
        for j in range(self.idx0, self.n_nodes - 1):
            w[j + 1] = self.proj_plus(j + 1) @ (self.hop(j, True) @ w[j])
        for j in range(self.idx0, 0, -1):
            w[j - 1] = (eye - self.proj_minus(j - 1)) @ (self.hop(j - 1, False) @ w[j])
        return w

    def homoclinic_at(self, t: float) -> np.ndarray:
        """U(t,0) P_plus(0) P_ker(D) at an arbitrary time in the window."""
        jf = (t + self.T) / self.q
        j = int(round(jf))
        if abs(jf - j) < 1e-9 and 0 <= j < self.n_nodes:
            return self.homoclinic_lattice[j]
        eye = np.eye(self.n, dtype=complex)
        if t >= 0:
            j = int(np.floor(jf))
            base = self.homoclinic_lattice[j]
            m = self.family.apply(t, self.lattice[j], base)
            return self.proj_at(SIDE_PLUS, t) @ m
        j = int(np.floor(jf)) + 1
        base = self.homoclinic_lattice[j]
        m = self.family.apply(t, self.lattice[j], base)
        return (eye - self.proj_at(SIDE_MINUS, t)) @ m

    def simpson_weights(self, a: int, b: int) -> np.ndarray:
        """Composite Simpson weights on lattice nodes a..b (even cell count)."""
        m = b - a
        if m % 2:
            raise ValueError("Simpson range must span an even number of cells")
        w = np.zeros(m + 1)
        w[0] = w[-1] = 1.0
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * (self.q / 3.0)

    def line_weights(self) -> tuple:
        """(node indices, weights) for integrating over [-T, 0] + [0, T]."""
        wm = self.simpson_weights(0, self.idx0)
        wp = self.simpson_weights(self.idx0, self.n_nodes - 1)
        nodes = np.concatenate(
            [np.arange(self.idx0 + 1), np.arange(self.idx0, self.n_nodes)]
        )
        return nodes, np.concatenate([wm, wp])

    def integrate_kernel(self, values: np.ndarray) -> np.ndarray:
        """integral of K(t) v(t) dt for v sampled on the full lattice."""
        nodes, wts = self.line_weights()
        return np.einsum("j,jab,jb->a", wts, self.kernel_lattice[nodes], values[nodes])

    def solution(self, f: Forcing) -> "GreenSolution":
        with self._lock:
            sol = self._solutions.get(f)
        if sol is None:
            sol = GreenSolution(self, f)
            with self._lock:
                self._solutions[f] = sol
        return sol


def make_context(
    family: EvolutionFamily,
    dich_plus: HalfLineDichotomy,
    dich_minus: HalfLineDichotomy,
    quad: QuadratureConfig,
    tol_rank: float = 1e-10,
) -> GreenContext:
    """Assemble a GreenContext: gluing operator, pseudoinverse, lattice."""
    d = build_gluing(dich_plus.P0, dich_minus.P0)
    pinv = moore_penrose(d, tol_rank)
    ctx = GreenContext(family, dich_plus, dich_minus, d, pinv, quad)
    ref = max(
        dich_plus.M * np.exp(-dich_plus.alpha * ctx.T) / dich_plus.alpha,
        dich_minus.M * np.exp(-dich_minus.alpha * ctx.T) / dich_minus.alpha,
    )
    if ref > quad.tail_tol:
        log.warning(
            "t_cut = %.3g leaves a unit-forcing tail bound %.3e above tail_tol %.3e",
            ctx.T, ref, quad.tail_tol,
        )
    return ctx


class GreenSolution:
    """Sweep results of the Green operator for one forcing.

    Four half-line integral families are accumulated cell by cell along
    the lattice (two interleaved Simpson chains each, so every node gets
    a value), plus the two homogeneous tails carrying pinv(D) g.
    """

    def __init__(self, ctx: GreenContext, f: Forcing):
        if f.n != ctx.n:
            raise ValueError(f"forcing dimension {f.n} != context dimension {ctx.n}")
        self.ctx = ctx
        self.f = f
        self._f_nodes = np.array([f(t) for t in ctx.lattice])
        n0, top = ctx.idx0, ctx.n_nodes - 1

        # integral from 0 out to t, integrand projected by P_plus
        self.i1 = self._forward_sweep(n0, top, SIDE_PLUS, complement=False)
        # integral from t out to T, transported backward, complement of P_plus
        self.i2 = self._backward_sweep(n0, top, SIDE_PLUS, complement=True)
        # integral from -T up to t, projected by P_minus
        self.j1 = self._forward_sweep(0, n0, SIDE_MINUS, complement=False)
        # integral from t up to 0, transported backward, complement of P_minus
        self.j2 = self._backward_sweep(0, n0, SIDE_MINUS, complement=True)

        self.g = self.j1[n0] + self.i2[0]
        self.dg = ctx.pinv.pinv @ self.g
        self.hom_plus = self._propagate_plus(self.dg)
        self.hom_minus = self._propagate_minus(self.dg)

    # -- projected integrand helpers ----------------------------------------

    def _pmat(self, side: str, j: int, complement: bool) -> np.ndarray:
        p = self.ctx.proj_plus(j) if side == SIDE_PLUS else self.ctx.proj_minus(j)
        if complement:
            return np.eye(self.ctx.n, dtype=complex) - p
        return p

    def _pmat_at(self, side: str, t: float, complement: bool) -> np.ndarray:
        p = self.ctx.proj_at(side, t)
        if complement:
            return np.eye(self.ctx.n, dtype=complex) - p
        return p

    # -- sweeps --------------------------------------------------------------

    def _forward_sweep(self, a, b, side, complement):
        """vals[j-a] = integral_{t_a}^{t_j} U(t_j, tau) P(tau) f(tau) dtau."""
        ctx, q, f = self.ctx, self.ctx.q, self.f
        g = np.array(
            [self._pmat(side, j, complement) @ self._f_nodes[j] for j in range(a, b + 1)]
        )
        vals = np.zeros((b - a + 1, ctx.n), dtype=complex)
        if b == a:
            return vals
        # startup half-cell [t_a, t_{a+1}] for the odd chain
        t0, t1 = ctx.lattice[a], ctx.lattice[a + 1]
        tm = 0.5 * (t0 + t1)
        gm = self._pmat_at(side, tm, complement) @ f(tm)
        startup = (q / 6.0) * (
            ctx.hop(a, True) @ g[0] + 4.0 * (ctx.family.matrix(t1, tm) @ gm) + g[1]
        )
        vals[1] = self._pmat(side, a + 1, complement) @ startup
        for start in (a, a + 1):
            j = start
            while j + 2 <= b:
                phi_half = ctx.hop(j + 1, True)
                phi_full = phi_half @ ctx.hop(j, True)
                cell = (q / 3.0) * (
                    phi_full @ g[j - a]
                    + 4.0 * (phi_half @ g[j + 1 - a])
                    + g[j + 2 - a]
                )
                vals[j + 2 - a] = self._pmat(side, j + 2, complement) @ (
                    phi_full @ vals[j - a] + cell
                )
                j += 2
        return vals

    def _backward_sweep(self, a, b, side, complement):
        """vals[j-a] = integral_{t_j}^{t_b} U(t_j, tau) P(tau) f(tau) dtau."""
        ctx, q, f = self.ctx, self.ctx.q, self.f
        h = np.array(
            [self._pmat(side, j, complement) @ self._f_nodes[j] for j in range(a, b + 1)]
        )
        vals = np.zeros((b - a + 1, ctx.n), dtype=complex)
        if b == a:
            return vals
        # startup half-cell [t_{b-1}, t_b] for the odd chain
        t0, t1 = ctx.lattice[b - 1], ctx.lattice[b]
        tm = 0.5 * (t0 + t1)
        hm = self._pmat_at(side, tm, complement) @ f(tm)
        startup = (q / 6.0) * (
            h[b - 1 - a]
            + 4.0 * (ctx.family.matrix(t0, tm) @ hm)
            + ctx.hop(b - 1, False) @ h[b - a]
        )
        vals[b - 1 - a] = self._pmat(side, b - 1, complement) @ startup
        for start in (b, b - 1):
            j = start
            while j - 2 >= a:
                phi_half = ctx.hop(j - 2, False)
                phi_full = phi_half @ ctx.hop(j - 1, False)
                cell = (q / 3.0) * (
                    h[j - 2 - a]
                    + 4.0 * (phi_half @ h[j - 1 - a])
                    + phi_full @ h[j - a]
                )
                vals[j - 2 - a] = self._pmat(side, j - 2, complement) @ (
                    phi_full @ vals[j - a] + cell
                )
                j -= 2
        return vals

    def _propagate_plus(self, vec: np.ndarray) -> np.ndarray:
        """U(t, 0) P_plus(0) vec along the plus half-line nodes."""
        ctx = self.ctx
        vals = np.zeros((ctx.n_nodes - ctx.idx0, ctx.n), dtype=complex)
        vals[0] = ctx.proj_plus(ctx.idx0) @ vec
        for j in range(ctx.idx0, ctx.n_nodes - 1):
            k = j - ctx.idx0
            vals[k + 1] = ctx.proj_plus(j + 1) @ (ctx.hop(j, True) @ vals[k])
        return vals

    def _propagate_minus(self, vec: np.ndarray) -> np.ndarray:
        """U(t, 0) (I - P_minus(0)) vec along the minus half-line nodes."""
        ctx = self.ctx
        eye = np.eye(ctx.n, dtype=complex)
        vals = np.zeros((ctx.idx0 + 1, ctx.n), dtype=complex)
        vals[ctx.idx0] = (eye - ctx.proj_minus(ctx.idx0)) @ vec
        for j in range(ctx.idx0, 0, -1):
            vals[j - 1] = (eye - ctx.proj_minus(j - 1)) @ (ctx.hop(j - 1, False) @ vals[j])
        return vals

    # -- evaluation ------------------------------------------------------------

    def value(self, t: float, branch: Optional[str] = None) -> np.ndarray:
        """G[f](t, 0), choosing the t >= 0 or t <= 0 branch formula."""
        ctx = self.ctx
        slack = 1e-9
        if abs(t) > ctx.T + slack:
            raise ValueError(f"t = {t} outside the truncated window [-{ctx.T}, {ctx.T}]")
        if branch is None:
            branch = SIDE_PLUS if t >= 0 else SIDE_MINUS
        jf = (t + ctx.T) / ctx.q
        j = int(round(jf))
        on_node = abs(jf - j) < 1e-9
        if branch == SIDE_PLUS:
            if t < -slack:
                raise ValueError("plus-branch evaluation requires t >= 0")
            if on_node:
                k = j - ctx.idx0
                return self.i1[k] - self.i2[k] + self.hom_plus[k]
            return self._offnode_plus(t)
        if t > slack:
            raise ValueError("minus-branch evaluation requires t <= 0")
        if on_node:
            return self.j1[j] - self.j2[j] + self.hom_minus[j]
        return self._offnode_minus(t)

    def _offnode_plus(self, t: float) -> np.ndarray:
        ctx, f = self.ctx, self.f
        j = int(np.floor((t + ctx.T) / ctx.q + 1e-12))
        k = j - ctx.idx0
        t0, t1 = ctx.lattice[j], ctx.lattice[j + 1]
        p_t = ctx.proj_at(SIDE_PLUS, t)
        eye = np.eye(ctx.n, dtype=complex)

        g = lambda tau: self._pmat_at(SIDE_PLUS, tau, False) @ f(tau)
        h = lambda tau: self._pmat_at(SIDE_PLUS, tau, True) @ f(tau)
        d0, m0 = t - t0, 0.5 * (t0 + t)
        u_t0 = ctx.family.matrix(t, t0)
        i1 = u_t0 @ self.i1[k] + (d0 / 6.0) * (
            u_t0 @ g(t0) + 4.0 * (ctx.family.matrix(t, m0) @ g(m0)) + g(t)
        )
        i1 = p_t @ i1
        d1, m1 = t1 - t, 0.5 * (t + t1)
        u_t1 = ctx.family.matrix(t, t1)
        i2 = u_t1 @ self.i2[k + 1] + (d1 / 6.0) * (
            h(t) + 4.0 * (ctx.family.matrix(t, m1) @ h(m1)) + u_t1 @ h(t1)
        )
        i2 = (eye - p_t) @ i2
        hom = p_t @ (u_t0 @ self.hom_plus[k])
        return i1 - i2 + hom

    def _offnode_minus(self, t: float) -> np.ndarray:
        ctx, f = self.ctx, self.f
        j = int(np.floor((t + ctx.T) / ctx.q + 1e-12))
        t0, t1 = ctx.lattice[j], ctx.lattice[j + 1]
        p_t = ctx.proj_at(SIDE_MINUS, t)
        eye = np.eye(ctx.n, dtype=complex)

        g = lambda tau: self._pmat_at(SIDE_MINUS, tau, False) @ f(tau)
        h = lambda tau: self._pmat_at(SIDE_MINUS, tau, True) @ f(tau)
        d0, m0 = t - t0, 0.5 * (t0 + t)
        u_t0 = ctx.family.matrix(t, t0)
        j1 = u_t0 @ self.j1[j] + (d0 / 6.0) * (
            u_t0 @ g(t0) + 4.0 * (ctx.family.matrix(t, m0) @ g(m0)) + g(t)
        )
        j1 = p_t @ j1
        d1, m1 = t1 - t, 0.5 * (t + t1)
        u_t1 = ctx.family.matrix(t, t1)
        j2 = u_t1 @ self.j2[j + 1] + (d1 / 6.0) * (
            h(t) + 4.0 * (ctx.family.matrix(t, m1) @ h(m1)) + u_t1 @ h(t1)
        )
        j2 = (eye - p_t) @ j2
        hom = (eye - p_t) @ (u_t1 @ self.hom_minus[j + 1])
        return j1 - j2 + hom


# -- module-level operations -------------------------------------------------


def solvability_kernel(ctx: GreenContext, t: float) -> np.ndarray:
    """K(t) = P_coker(D) P_minus(0) U(0, t), evaluated stably.

    For t > 0 the algebraically equal form P_coker(D) (I - P_plus(0)) U(0, t)
    is transported instead (P_coker(D) D = 0), so the product decays in
    both directions.
    """
    slack = 2 * ctx.q
    if abs(t) > ctx.T + slack:
        raise ValueError(f"t = {t} outside the kernel window [-{ctx.T}, {ctx.T}]")
    jf = (t + ctx.T) / ctx.q
    j = int(round(jf))
    if abs(jf - j) < 1e-9 and 0 <= j < ctx.n_nodes:
        return ctx.kernel_lattice[j].copy()
    eye = np.eye(ctx.n, dtype=complex)
    if t >= 0:
        j = min(int(np.floor(jf)), ctx.n_nodes - 1)
        m = ctx.kernel_lattice[j] @ ctx.family.matrix(ctx.lattice[j], t)
        return m @ (eye - ctx.proj_at(SIDE_PLUS, t))
    j = max(int(np.floor(jf)) + 1, 0)
    m = ctx.kernel_lattice[j] @ ctx.family.matrix(ctx.lattice[j], t)
    return m @ ctx.proj_at(SIDE_MINUS, t)


def solvability_residual(ctx: GreenContext, f: Forcing) -> tuple:
    """(r, ||r||) with r = integral K(t) f(t) dt over the truncated line."""
    values = np.array([f(t) for t in ctx.lattice])
    r = ctx.integrate_kernel(values)
    return r, float(np.linalg.norm(r))


def rhs_g(ctx: GreenContext, f: Forcing) -> np.ndarray:
    """Right-hand side g of D xi = g (both half-line integrals truncated)."""
    return ctx.solution(f).g.copy()


def green_apply(
    ctx: GreenContext, f: Forcing, t: float, branch: Optional[str] = None
) -> np.ndarray:
    """Evaluate the generalized Green operator (G[f])(t, 0)."""
    return ctx.solution(f).value(t, branch)


def jump_check(ctx: GreenContext, f: Forcing, h_limit: float = 1e-6) -> tuple:
    """Jump of G[f] at 0 versus minus the solvability residual.

    One-sided limits are branch evaluations at +-h_limit with one
    Richardson refinement step.
    """
    sol = ctx.solution(f)

    def limit(sign: float, branch: str) -> np.ndarray:
        v1 = sol.value(sign * h_limit, branch)
        v2 = sol.value(2.0 * sign * h_limit, branch)
        return 2.0 * v1 - v2

    jump = limit(+1.0, SIDE_PLUS) - limit(-1.0, SIDE_MINUS)
    r, _ = solvability_residual(ctx, f)
    expected = -r
    err = float(np.linalg.norm(jump - expected))
    return jump, expected, err


def diff_residual(ctx: GreenContext, f: Forcing, sample, fd_step: float = 1e-3) -> float:
    """Max norm of d/dt G[f] - A(t) G[f] - f over the sample (central differences)."""
    sol = ctx.solution(f)
    worst = 0.0
    for t in np.atleast_1d(sample):
        t = float(t)
        if abs(t) <= fd_step:
            raise ValueError(f"sample point t = {t} too close to the jump at 0")
        branch = SIDE_PLUS if t > 0 else SIDE_MINUS
        vm = sol.value(t - fd_step, branch)
        vp = sol.value(t + fd_step, branch)
        vc = sol.value(t, branch)
        a = ctx.family.gen.evaluate(t)
        res = (vp - vm) / (2.0 * fd_step) - a @ vc - f(t)
        worst = max(worst, float(np.linalg.norm(res)))
    return worst


def bounded_family(ctx: GreenContext, f: Forcing, c, t: float) -> np.ndarray:
    """x0(t, c) = U(t,0) P_plus(0) P_ker(D) c + (G[f])(t, 0)."""
    c = np.asarray(c, dtype=complex).reshape(-1)
    if c.shape[0] != ctx.n:
        raise ValueError(f"c has dimension {c.shape[0]}, expected {ctx.n}")
    return ctx.homoclinic_at(t) @ c + ctx.solution(f).value(t)


def sample_bounded_family(
    ctx: GreenContext,
    f: Forcing,
    c,
    times,
    workers: int = 1,
    tol_solve: float = 1e-8,
) -> Trajectory:
    """Sample x0(t, c) on a time grid; the meta block tags the regime."""
    times = np.asarray(times, dtype=float).reshape(-1)
    _, rnorm = solvability_residual(ctx, f)
    sol = ctx.solution(f)
    regime = regime_classify(
        ctx.pinv, sol.g, tol_solve + tail_bound(ctx, f), 1e-6
    )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(lambda t: bounded_family(ctx, f, c, t), times))
    else:
        vals = [bounded_family(ctx, f, c, t) for t in times]
    meta = {
        "regime": regime.label(),
        "solvability_residual": rnorm,
        "rhs_residual": regime.residual_norm,
        "tail_bound": tail_bound(ctx, f),
        "t_cut": ctx.T,
        "nodes_per_unit": ctx.quad.nodes_per_unit,
    }
    return Trajectory(times, np.array(vals), meta)
