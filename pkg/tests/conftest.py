import numpy as np
import pytest

import dgreen as dg

PROBLEM_T_CUT = 21.0
FAMILY_H = 1.0 / 128.0


def build_ctx(source_kind, nodes_per_unit=32, t_cut=PROBLEM_T_CUT, **source_params):
    """Context for one of the canonical test generators."""
    src = dg.operator_source(source_kind, **source_params)
    gen = dg.Generator.general(src)
    fam = dg.build_family(gen, -t_cut - 1.0, t_cut + 1.0, FAMILY_H)
    if src.autonomous_pieces and src.breakpoints:
        pp = dg.piecewise_spectral_projector(fam, "plus")
        pm = dg.piecewise_spectral_projector(fam, "minus")
    else:
        a0 = gen.evaluate(0.0)
        pp = dg.spectral_projector(a0)
        pm = dg.spectral_projector(a0)
    dp = dg.HalfLineDichotomy("plus", pp, 1.0, 1.0, fam)
    dm = dg.HalfLineDichotomy("minus", pm, 1.0, 1.0, fam)
    quad = dg.QuadratureConfig(t_cut=t_cut, nodes_per_unit=nodes_per_unit)
    return dg.make_context(fam, dp, dm, quad)


@pytest.fixture(scope="session")
def scalar_stable_ctx():
    return build_ctx("constant", matrix=[[-1.0]])


@pytest.fixture(scope="session")
def saddle_ctx():
    return build_ctx("constant", matrix=[[-1.0, 0.0], [0.0, 1.0]])


@pytest.fixture(scope="session")
def growout_ctx():
    return build_ctx("piecewise_sign", negative=[[-1.0]], positive=[[1.0]])


@pytest.fixture(scope="session")
def homoclinic_ctx():
    return build_ctx("piecewise_sign", negative=[[1.0]], positive=[[-1.0]])


@pytest.fixture(scope="session")
def coupled_ctx():
    """2-D problem: component 1 homoclinic, component 2 grow-out."""
    return build_ctx(
        "piecewise_sign",
        nodes_per_unit=64,
        negative=[[1.0, 0.0], [0.0, -1.0]],
        positive=[[-1.0, 0.0], [0.0, 1.0]],
    )


@pytest.fixture(scope="session")
def exp_abs_1():
    return dg.forcing_source("exp_abs", n=1, amplitude=[1.0], rate=1.0)


@pytest.fixture(scope="session")
def gaussian_1():
    return dg.forcing_source("gaussian", n=1, amplitude=[1.0])


@pytest.fixture(scope="session")
def odd_1():
    return dg.forcing_source("gaussian_odd", n=1, amplitude=[1.0])


@pytest.fixture(scope="session")
def zero_1():
    return dg.forcing_source("zero", n=1)


@pytest.fixture(scope="session")
def coupled_forcing():
    return dg.forcing_source(
        "sum",
        n=2,
        parts=[
            {"kind": "gaussian", "amplitude": [1.0, 0.0]},
            {"kind": "gaussian_odd", "amplitude": [0.0, 1.0]},
        ],
    )


@pytest.fixture(scope="session")
def coupled_z():
    """Z = (x2^2, x1^2): quadratic coupling between the two channels."""
    return dg.nonlinearity_source(
        "polynomial",
        n=2,
        terms=[
            [{"coeff": 1.0, "powers": [0, 2]}],
            [{"coeff": 1.0, "powers": [2, 0]}],
        ],
        analytic_derivative=True,
    )


@pytest.fixture(scope="session")
def coupled_root(coupled_ctx, coupled_z, coupled_forcing):
    return dg.solve_generating(
        coupled_ctx, coupled_z, coupled_forcing, [0.5 + 0.5j, 0.0], tol_root=1e-12
    )


def scalar_stable_exact(t):
    """Bounded solution of x' = -x + exp(-|t|)."""
    return (t + 0.5) * np.exp(-t) if t >= 0 else 0.5 * np.exp(t)
