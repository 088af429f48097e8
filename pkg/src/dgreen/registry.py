"""Closed registries of time-dependent operators, forcings and
nonlinearities available to problem files.

No expression parsing: every entry is a fixed analytic shape with
parameters, so evaluation is exact and testable.  Custom data enters
through the "table" entries (piecewise linear in t).
"""
from __future__ import annotations

import numpy as np

from .exceptions import ProblemFormatError
from .green import Forcing
from .nonlinear import Nonlinearity
from .operator_core import as_operator
from .propagator import MatrixSource

__all__ = [
    "operator_source",
    "forcing_source",
    "nonlinearity_source",
    "OPERATOR_KINDS",
    "FORCING_KINDS",
    "NONLINEARITY_KINDS",
]

OPERATOR_KINDS = ("constant", "sinusoidal", "piecewise_sign", "table")
FORCING_KINDS = ("zero", "constant", "exp_abs", "gaussian", "gaussian_odd", "sum", "table")
NONLINEARITY_KINDS = ("linear", "polynomial")


def _unknown(kind: str, valid) -> ProblemFormatError:
    return ProblemFormatError(
        f"unknown registry id {kind!r}; valid ids: {', '.join(sorted(valid))}"
    )


def operator_source(kind: str, **params) -> MatrixSource:
    """Build a time-dependent matrix source from a registry entry."""
    if kind == "constant":
        m = as_operator(params["matrix"])
        return MatrixSource(kind, lambda t: m, m.shape[0], (), True, params)
    if kind == "sinusoidal":
        base = as_operator(params["base"])
        amp = as_operator(params["amplitude"])
        if amp.shape != base.shape:
            raise ProblemFormatError(
                f"sinusoidal base {base.shape} and amplitude {amp.shape} differ"
            )
        omega = float(params.get("omega", 1.0))
        phase = float(params.get("phase", 0.0))
        func = lambda t: base + np.sin(omega * t + phase) * amp
        return MatrixSource(kind, func, base.shape[0], (), False, params)
    if kind == "piecewise_sign":
        neg = as_operator(params["negative"])
        pos = as_operator(params["positive"])
        if neg.shape != pos.shape:
            raise ProblemFormatError(
                f"piecewise_sign pieces have shapes {neg.shape} vs {pos.shape}"
            )
        func = lambda t: pos if t >= 0 else neg
        return MatrixSource(kind, func, neg.shape[0], (0.0,), True, params)
    if kind == "table":
        times = np.asarray(params["times"], dtype=float)
        mats = np.asarray(params["matrices"], dtype=complex)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ProblemFormatError("table times must be strictly increasing, >= 2 entries")
        if mats.shape[0] != times.shape[0] or mats.ndim != 3:
            raise ProblemFormatError("table needs one matrix per time sample")

        def func(t, times=times, mats=mats):
            if t <= times[0]:
                return mats[0]
            if t >= times[-1]:
                return mats[-1]
            j = int(np.searchsorted(times, t) - 1)
            w = (t - times[j]) / (times[j + 1] - times[j])
            return (1.0 - w) * mats[j] + w * mats[j + 1]

        return MatrixSource(kind, func, mats.shape[1], tuple(times), False, params)
    raise _unknown(kind, OPERATOR_KINDS)


def _amp_vector(params, n_hint=None) -> np.ndarray:
    amp = np.asarray(params["amplitude"], dtype=complex).reshape(-1)
    if n_hint is not None and amp.shape[0] != n_hint:
        raise ProblemFormatError(
            f"forcing amplitude has dimension {amp.shape[0]}, expected {n_hint}"
        )
    return amp


def forcing_source(kind: str, n: int = None, **params) -> Forcing:
    """Build a forcing from a registry entry; sup bounds are analytic."""
    if kind == "zero":
        dim = n if n is not None else int(params.get("dimension", 1))
        zero = np.zeros(dim, dtype=complex)
        return Forcing(kind, lambda t: zero, dim, 0.0, params)
    if kind == "constant":
        amp = _amp_vector(params, n)
        return Forcing(kind, lambda t: amp, amp.shape[0], float(np.linalg.norm(amp)), params)
    if kind == "exp_abs":
        amp = _amp_vector(params, n)
        rate = float(params.get("rate", 1.0))
        center = float(params.get("center", 0.0))
        if rate <= 0:
            raise ProblemFormatError("exp_abs rate must be positive")
        func = lambda t: amp * np.exp(-rate * abs(t - center))
        return Forcing(kind, func, amp.shape[0], float(np.linalg.norm(amp)), params)
    if kind == "gaussian":
        amp = _amp_vector(params, n)
        width = float(params.get("width", 1.0))
        center = float(params.get("center", 0.0))
        if width <= 0:
            raise ProblemFormatError("gaussian width must be positive")
        func = lambda t: amp * np.exp(-(((t - center) / width) ** 2))
        return Forcing(kind, func, amp.shape[0], float(np.linalg.norm(amp)), params)
    if kind == "gaussian_odd":
        amp = _amp_vector(params, n)
        width = float(params.get("width", 1.0))
        center = float(params.get("center", 0.0))
        if width <= 0:
            raise ProblemFormatError("gaussian_odd width must be positive")
        func = lambda t: amp * (t - center) * np.exp(-(((t - center) / width) ** 2))
        sup = float(np.linalg.norm(amp)) * width * np.exp(-0.5) / np.sqrt(2.0)
        return Forcing(kind, func, amp.shape[0], sup, params)
    if kind == "sum":
        parts = [forcing_source(p["kind"], n, **{k: v for k, v in p.items() if k != "kind"})
                 for p in params["parts"]]
        if not parts:
            raise ProblemFormatError("sum forcing needs at least one part")
        dims = {p.n for p in parts}
        if len(dims) != 1:
            raise ProblemFormatError(f"sum forcing parts have mixed dimensions {sorted(dims)}")
        dim = dims.pop()
        func = lambda t: sum(p(t) for p in parts)
        sup = float(sum(p.sup_norm for p in parts))  # triangle-inequality bound
        return Forcing(kind, func, dim, sup, params)
    if kind == "table":
        times = np.asarray(params["times"], dtype=float)
        vals = np.asarray(params["values"], dtype=complex)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ProblemFormatError("table times must be strictly increasing, >= 2 entries")
        if vals.shape[0] != times.shape[0] or vals.ndim != 2:
            raise ProblemFormatError("table needs one vector per time sample")
        if n is not None and vals.shape[1] != n:
            raise ProblemFormatError(
                f"table forcing has dimension {vals.shape[1]}, expected {n}"
            )

        def func(t, times=times, vals=vals):
            if t <= times[0]:
                return vals[0]
            if t >= times[-1]:
                return vals[-1]
            j = int(np.searchsorted(times, t) - 1)
            w = (t - times[j]) / (times[j + 1] - times[j])
            return (1.0 - w) * vals[j] + w * vals[j + 1]

        sup = float(np.max(np.linalg.norm(vals, axis=1)))
        return Forcing(kind, func, vals.shape[1], sup, params)
    raise _unknown(kind, FORCING_KINDS)


def _poly_terms(params, n: int):
    """Validate [[{coeff, powers}, ...] per component] with total degree <= 3."""
    raw = params["terms"]
    if len(raw) != n:
        raise ProblemFormatError(
            f"polynomial has {len(raw)} component term lists, expected {n}"
        )
    terms = []
    for i, comp in enumerate(raw):
        comp_terms = []
        for term in comp:
            coeff = complex(*term["coeff"]) if isinstance(term["coeff"], (list, tuple)) \
                else complex(term["coeff"])
            powers = tuple(int(p) for p in term["powers"])
            if len(powers) != n or any(p < 0 for p in powers):
                raise ProblemFormatError(
                    f"component {i}: powers must be {n} nonnegative integers"
                )
            if sum(powers) > 3:
                raise ProblemFormatError(
                    f"component {i}: total degree {sum(powers)} exceeds 3"
                )
            comp_terms.append((coeff, powers))
        terms.append(comp_terms)
    return terms


def nonlinearity_source(kind: str, n: int = None, **params) -> Nonlinearity:
    """Build Z(x, t, eps) from a registry entry.

    Registry nonlinearities are autonomous and eps-independent; the
    (t, eps) arguments exist so user-supplied callables can use them.
    """
    if kind == "linear":
        w = as_operator(params["matrix"])
        if n is not None and w.shape[0] != n:
            raise ProblemFormatError(
                f"linear nonlinearity is {w.shape[0]}-dimensional, expected {n}"
            )
        return Nonlinearity(
            kind,
            lambda x, t, eps: w @ x,
            w.shape[0],
            jac=lambda x, t: w,
            params=params,
        )
    if kind == "polynomial":
        if n is None:
            raise ProblemFormatError("polynomial nonlinearity needs the dimension n")
        terms = _poly_terms(params, n)

        def func(x, t, eps, terms=terms, n=n):
            out = np.zeros(n, dtype=complex)
            for i, comp in enumerate(terms):
                for coeff, powers in comp:
                    val = coeff
                    for j, p in enumerate(powers):
                        if p:
                            val = val * x[j] ** p
                    out[i] += val
            return out

        jac = None
        if params.get("analytic_derivative"):

            def jac(x, t, terms=terms, n=n):
                out = np.zeros((n, n), dtype=complex)
                for i, comp in enumerate(terms):
                    for coeff, powers in comp:
                        for j, p in enumerate(powers):
                            if not p:
                                continue
                            val = coeff * p * x[j] ** (p - 1)
                            for l, pl in enumerate(powers):
                                if l != j and pl:
                                    val = val * x[l] ** pl
                            out[i, j] += val
                return out

        return Nonlinearity(kind, func, n, jac=jac, params=params)
    raise _unknown(kind, NONLINEARITY_KINDS)
