"""Evolution families U(t, s) for x' = A(t) x.

The per-step propagator is the midpoint exponential
``exp(h * A(t + h/2))`` (second-order Magnus truncation), evaluated with
scipy's scaling-and-squaring ``expm``.  Arbitrary U(t, s) on the grid is
a composition of cached steps; off-grid endpoints get one partial
midpoint step, which keeps the cocycle property to discretisation
order.  Backward factors are the exact inverses ``exp(-h * A)`` of the
forward factors, so stepping is stable in both directions as long as
the transported vectors stay in the decaying subspace.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .operator_core import as_operator

__all__ = [
    "MatrixSource",
    "Generator",
    "EvolutionFamily",
    "build_family",
    "interaction_picture_V",
    "weak_residual",
]

SCHRODINGER = "schrodinger"
GENERAL = "general"

#: per-step norm guard: ||h A|| beyond this aborts with advice to shrink h
_STEP_NORM_LIMIT = 50.0


@dataclass(frozen=True)
class MatrixSource:
    """A time-dependent matrix t -> A(t).

    ``breakpoints`` lists times where the map is not smooth (used to
    align grids and to construct piecewise-spectral projectors);
    ``autonomous_pieces`` says A is constant between breakpoints.
    """

    kind: str
    func: Callable[[float], np.ndarray]
    n: int
    breakpoints: tuple = ()
    autonomous_pieces: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, t: float) -> np.ndarray:
        return self.func(t)


@dataclass(frozen=True)
class Generator:
    """Right-hand side A(t) of x' = A(t) x.

    In ``schrodinger`` mode A(t) = -i (H0 + V(t)) with H0 self-adjoint;
    in ``general`` mode A(t) comes straight from a MatrixSource.
    """

    mode: str
    n: int
    H0: Optional[np.ndarray] = None
    V: Optional[MatrixSource] = None
    A: Optional[MatrixSource] = None

    @classmethod
    def schrodinger(cls, H0, V: MatrixSource) -> "Generator":
        H0 = as_operator(H0)
        dev = np.linalg.norm(H0 - H0.conj().T)
        if dev > 1e-12 * max(1.0, np.linalg.norm(H0)):
            raise ValueError(f"H0 is not self-adjoint (||H0 - H0*|| = {dev:.3e})")
        if V.n != H0.shape[0]:
            raise ValueError(f"V acts on dimension {V.n}, H0 on {H0.shape[0]}")
        return cls(SCHRODINGER, H0.shape[0], H0=H0, V=V)

    @classmethod
    def general(cls, A: MatrixSource) -> "Generator":
        return cls(GENERAL, A.n, A=A)

    def evaluate(self, t: float) -> np.ndarray:
        """A(t) in the configured mode."""
        if self.mode == SCHRODINGER:
            return -1j * (self.H0 + self.V(t))
        return self.A(t)

    @property
    def breakpoints(self) -> tuple:
        src = self.V if self.mode == SCHRODINGER else self.A
        return src.breakpoints if src is not None else ()


class EvolutionFamily:
    """Grid-cached propagators for a generator on [t_min, t_max].

    Immutable after construction; the internal caches are protected by
    a lock so read-mostly concurrent use is safe.
    """

    def __init__(self, gen: Generator, t_min: float, t_max: float, h: float):
        self.gen = gen
        self.t_min = float(t_min)
        self.t_max = float(t_max)
        self.h = float(h)
        self.n = gen.n
        self.n_steps = int(round((self.t_max - self.t_min) / self.h))
        self._steps: dict = {}       # (k, dir) -> one-step matrix
        self._spans: dict = {}       # (key_t, key_s) -> U(t, s), short spans only
        self._span_budget = 16384
        self._lock = threading.Lock()

    # -- grid helpers -------------------------------------------------

    def node_time(self, k: int) -> float:
        return self.t_min + k * self.h

    def node_index(self, t: float) -> int:
        """Index of the grid node at/just below t (clipped to range)."""
        k = int(np.floor((t - self.t_min) / self.h + 1e-9))
        return min(max(k, 0), self.n_steps)

    def _check_range(self, t: float):
        slack = 1e-9 * max(1.0, abs(self.t_max), abs(self.t_min))
        if t < self.t_min - slack or t > self.t_max + slack:
            raise ValueError(
                f"time {t} outside family range [{self.t_min}, {self.t_max}]"
            )

    # -- elementary factors -------------------------------------------

    def _exp_step(self, t0: float, dt: float) -> np.ndarray:
        """exp(dt * A(t0 + dt/2)) with an overflow guard."""
        a = self.gen.evaluate(t0 + dt / 2.0)
        nrm = abs(dt) * np.linalg.norm(a, 2)
        if nrm > _STEP_NORM_LIMIT:
            raise ValueError(
                f"||h A|| = {nrm:.3g} at t = {t0}: matrix exponential would "
                "overflow, use a smaller step h"
            )
        return expm(dt * a)

    def _step(self, k: int, forward: bool) -> np.ndarray:
        """Cached factor over [t_k, t_{k+1}]: forward exp(h A) or its exact inverse."""
        key = (k, forward)
        with self._lock:
            m = self._steps.get(key)
        if m is None:
            t_mid = self.node_time(k) + self.h / 2.0
            a = self.gen.evaluate(t_mid)
            nrm = self.h * np.linalg.norm(a, 2)
            if nrm > _STEP_NORM_LIMIT:
                raise ValueError(
                    f"||h A|| = {nrm:.3g} at t = {t_mid}: matrix exponential "
                    "would overflow, use a smaller step h"
                )
            m = expm((self.h if forward else -self.h) * a)
            with self._lock:
                self._steps[key] = m
        return m

    # -- application ----------------------------------------------------

    def apply(self, t: float, s: float, x) -> np.ndarray:
        """U(t, s) x for any t, s inside the grid range."""
        x = np.asarray(x, dtype=complex)
        self._check_range(t)
        self._check_range(s)
        if t == s:
            return x.copy()
        return self._walk(float(t), float(s), x)

    def _walk(self, t: float, s: float, out: np.ndarray) -> np.ndarray:
        h = self.h
        eps = 1e-9 * h
        if t > s:
            k = int(np.ceil((s - self.t_min) / h - 1e-9))  # first node >= s
            tk = self.node_time(k)
            if tk > t + eps:  # no grid node strictly inside (s, t]
                return self._exp_step(s, t - s) @ out
            if tk - s > eps:
                out = self._exp_step(s, tk - s) @ out
            while self.node_time(k + 1) <= t + eps:
                out = self._step(k, True) @ out
                k += 1
            tk = self.node_time(k)
            if t - tk > eps:
                out = self._exp_step(tk, t - tk) @ out
        else:
            k = int(np.floor((s - self.t_min) / h + 1e-9))  # last node <= s
            tk = self.node_time(k)
            if tk < t - eps:  # no grid node strictly inside [t, s)
                return self._exp_step(s, t - s) @ out
            if s - tk > eps:
                out = self._exp_step(s, tk - s) @ out
            while self.node_time(k - 1) >= t - eps:
                out = self._step(k - 1, False) @ out
                k -= 1
            tk = self.node_time(k)
            if tk - t > eps:
                out = self._exp_step(tk, t - tk) @ out
        return out

    def matrix(self, t: float, s: float) -> np.ndarray:
        """U(t, s) as a dense matrix (memoised for short spans)."""
        key = (round(t * 1e12), round(s * 1e12))
        with self._lock:
            m = self._spans.get(key)
        if m is not None:
            return m
        m = self.apply(t, s, np.eye(self.n, dtype=complex))
        with self._lock:
            if len(self._spans) >= self._span_budget:
                self._spans.clear()
            self._spans[key] = m
        return m


def build_family(gen: Generator, t_min: float, t_max: float, h: float) -> EvolutionFamily:
    """Build the evolution family on the given grid.

    Requires 0 < h <= (t_max - t_min)/4 so the grid has at least a few
    steps to compose.
    """
    if t_min >= t_max:
        raise ValueError(f"need t_min < t_max, got [{t_min}, {t_max}]")
    if h <= 0 or h > (t_max - t_min) / 4.0:
        raise ValueError(f"step h = {h} not in (0, {(t_max - t_min) / 4.0}]")
    return EvolutionFamily(gen, t_min, t_max, h)


def interaction_picture_V(H0, V, t: float) -> np.ndarray:
    """Conjugate V(t) by the free evolution: exp(itH0) V(t) exp(-itH0)."""
    H0 = as_operator(H0)
    dev = np.linalg.norm(H0 - H0.conj().T)
    if dev > 1e-12 * max(1.0, np.linalg.norm(H0)):
        raise ValueError("H0 must be self-adjoint for the interaction picture")
    vt = V(t) if callable(V) else as_operator(V)
    left = expm(1j * t * H0)
    right = expm(-1j * t * H0)
    return left @ vt @ right


def weak_residual(
    family: EvolutionFamily, eta, psi0, s: float, sample
) -> float:
    """Max defect of the weak form of the Schrodinger evolution.

    For psi_s(t) = U(t, s) psi0 and a test vector eta in the domain of
    H0, checks |d/dt <eta, psi> + i <H0 eta, psi> + i <V(t) eta, psi>|
    with a central difference in t.  Decays like h^2 for a valid
    propagator.
    """
    gen = family.gen
    if gen.mode != SCHRODINGER:
        raise ValueError("weak_residual requires a schrodinger-mode generator")
    eta = np.asarray(eta, dtype=complex).reshape(-1)
    if np.linalg.norm(eta) == 0:
        raise ValueError("test vector eta must be nonzero")
    psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
    dh = family.h
    worst = 0.0
    for t in np.atleast_1d(sample):
        t = float(t)
        pm = family.apply(t - dh, s, psi0)
        pp = family.apply(t + dh, s, psi0)
        pc = family.apply(t, s, psi0)
        ddt = (np.vdot(eta, pp) - np.vdot(eta, pm)) / (2.0 * dh)
        res = ddt + 1j * np.vdot(gen.H0 @ eta, pc) + 1j * np.vdot(gen.V(t) @ eta, pc)
        worst = max(worst, abs(res))
    return worst
