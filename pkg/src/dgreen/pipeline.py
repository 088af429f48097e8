"""Assemble live solver objects from a parsed problem description."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dichotomy import (
    SIDE_MINUS,
    SIDE_PLUS,
    HalfLineDichotomy,
    piecewise_spectral_projector,
    spectral_projector,
)
from .green import Forcing, GreenContext, QuadratureConfig, make_context
from .nonlinear import Nonlinearity
from .problem import ProblemSpec
from .propagator import EvolutionFamily, Generator, build_family
from .registry import forcing_source, nonlinearity_source, operator_source

__all__ = ["ProblemSetup", "build_setup"]

log = logging.getLogger(__name__)


@dataclass
class ProblemSetup:
    spec: ProblemSpec
    generator: Generator
    family: EvolutionFamily
    forcing: Forcing
    dich_plus: HalfLineDichotomy
    dich_minus: HalfLineDichotomy
    ctx: GreenContext
    nonlinearity: Optional[Nonlinearity]


def _build_generator(spec: ProblemSpec) -> Generator:
    cfg = spec.generator
    if cfg["mode"] == "schrodinger":
        v_cfg = dict(cfg["V"])
        v = operator_source(v_cfg.pop("kind"), **v_cfg)
        return Generator.schrodinger(cfg["H0"], v)
    a_cfg = dict(cfg["A"])
    return Generator.general(operator_source(a_cfg.pop("kind"), **a_cfg))


def _build_projector(setup_cfg: dict, side: str, family: EvolutionFamily) -> np.ndarray:
    kind = setup_cfg["kind"]
    if kind == "explicit":
        return setup_cfg["matrix"]
    src = family.gen.A if family.gen.mode == "general" else family.gen.V
    if src is not None and not src.autonomous_pieces:
        log.warning(
            "projector source %r on a time-varying generator: spectral "
            "construction only certifies (piecewise-)autonomous cases; "
            "supply an explicit projector if verification fails", kind,
        )
    if kind == "spectral":
        probe = 10 * family.h if side == SIDE_PLUS else -10 * family.h
        return spectral_projector(family.gen.evaluate(probe))
    return piecewise_spectral_projector(family, side)


def build_setup(spec: ProblemSpec, t_cut: float = None, h: float = None) -> ProblemSetup:
    """Build family, dichotomies, Green context and sources for a problem.

    ``t_cut`` and ``h`` override the problem grid (CLI flags).
    """
    gen = _build_generator(spec)
    grid = dict(spec.grid)
    if t_cut is not None:
        grid["t_cut"] = float(t_cut)
    if h is not None:
        grid["h"] = float(h)
    pad = max(1.0, 32 * grid["h"])
    family = build_family(gen, -grid["t_cut"] - pad, grid["t_cut"] + pad, grid["h"])

    p_plus = _build_projector(spec.projectors["plus"], SIDE_PLUS, family)
    p_minus = _build_projector(spec.projectors["minus"], SIDE_MINUS, family)
    m_const = spec.projectors["M"]
    alpha = spec.projectors["alpha"]
    dich_plus = HalfLineDichotomy(SIDE_PLUS, p_plus, m_const, alpha, family)
    dich_minus = HalfLineDichotomy(SIDE_MINUS, p_minus, m_const, alpha, family)

    quad = QuadratureConfig(
        t_cut=grid["t_cut"],
        nodes_per_unit=grid["nodes_per_unit"],
        tail_tol=spec.tolerances["tail_tol"],
    )
    ctx = make_context(family, dich_plus, dich_minus, quad, spec.tolerances["tol_rank"])

    f_cfg = dict(spec.forcing)
    forcing = forcing_source(f_cfg.pop("kind"), n=spec.n, **f_cfg)

    z = None
    if spec.nonlinearity is not None:
        z_cfg = {
            k: v
            for k, v in spec.nonlinearity.items()
            if k not in ("eps", "c_init", "max_iter")
        }
        z = nonlinearity_source(z_cfg.pop("kind"), n=spec.n, **z_cfg)

    return ProblemSetup(spec, gen, family, forcing, dich_plus, dich_minus, ctx, z)
