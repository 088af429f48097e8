import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erf

import dgreen as dg
from conftest import build_ctx
from dgreen.exceptions import IterationDivergenceError, MathematicalError
from dgreen.nonlinear import (
    evaluate_perturbed,
    linearize_at,
    perturbed_residual,
)


def g1_exact(t):
    """Bounded solution of x' = -sgn(t) x + exp(-t^2) (odd in t)."""
    mag = np.exp(0.25) * (np.sqrt(np.pi) / 2.0)
    if t >= 0:
        return np.exp(-t) * mag * (erf(t - 0.5) + erf(0.5))
    return -np.exp(t) * mag * (erf(-t - 0.5) + erf(0.5))


@pytest.fixture(scope="module")
def quad_coeffs():
    """Oracle coefficients of F_2(c) = A c^2 + B c + C for the coupled problem."""
    a = 2.0 / 3.0
    b = 2.0 * quad(lambda t: np.exp(-2 * abs(t)) * g1_exact(t), -30, 30, limit=400)[0]
    c = 2.0 * quad(lambda t: np.exp(-t) * g1_exact(t) ** 2, 0, 30, limit=400)[0]
    return a, b, c


@pytest.fixture(scope="session")
def uncoupled_z():
    """The bare Z = (0, x1^2): no feedback into the kernel component."""
    return dg.nonlinearity_source(
        "polynomial", n=2,
        terms=[[], [{"coeff": 1.0, "powers": [2, 0]}]],
        analytic_derivative=True,
    )


@pytest.fixture(scope="session")
def zero_2():
    return dg.forcing_source("zero", n=2)


class TestGeneratingF:
    def test_invertible_gluing_gives_zero_f(self, scalar_stable_ctx, exp_abs_1):
        z = dg.nonlinearity_source(
            "polynomial", n=1, terms=[[{"coeff": 1.0, "powers": [2]}]]
        )
        for c in ([0.0], [2.0], [1.0 + 1.0j]):
            f_val = dg.generating_F(scalar_stable_ctx, z, exp_abs_1, c)
            assert np.linalg.norm(f_val) <= 1e-12

    def test_unforced_quadratic(self, coupled_ctx, uncoupled_z, zero_2):
        for c1 in (0.5, 1.0, 2.0, 1.0 + 0.5j):
            f_val = dg.generating_F(coupled_ctx, uncoupled_z, zero_2, [c1, 0.3])
            assert abs(f_val[0]) <= 1e-12
            assert abs(f_val[1] - (2.0 / 3.0) * c1**2) <= 1e-7 * max(1, abs(c1) ** 2)

    def test_forced_quadratic_coefficients(self, coupled_ctx, coupled_z,
                                           coupled_forcing, quad_coeffs):
        a_o, b_o, c_o = quad_coeffs
        f0 = dg.generating_F(coupled_ctx, coupled_z, coupled_forcing, [0.0, 0.0])[1]
        fp = dg.generating_F(coupled_ctx, coupled_z, coupled_forcing, [1.0, 0.0])[1]
        fm = dg.generating_F(coupled_ctx, coupled_z, coupled_forcing, [-1.0, 0.0])[1]
        assert abs((fp + fm) / 2 - f0 - a_o) <= 1e-8
        assert abs((fp - fm) / 2 - b_o) <= 1e-8
        assert abs(f0 - c_o) <= 1e-8

    def test_depends_only_on_kernel_component(self):
        # 3-D problem: homoclinic + grow-out + stable directions, so the
        # kernel of D is 2-dimensional and strictly smaller than H
        ctx = build_ctx(
            "piecewise_sign",
            negative=np.diag([1.0, -1.0, -1.0]).tolist(),
            positive=np.diag([-1.0, 1.0, -1.0]).tolist(),
        )
        z = dg.nonlinearity_source(
            "polynomial", n=3,
            terms=[[], [{"coeff": 1.0, "powers": [2, 0, 0]}], []],
        )
        f = dg.forcing_source("zero", n=3)
        kp = ctx.pinv.kernel_proj
        assert 0 < ctx.pinv.rank < 3
        rng = np.random.default_rng(3)
        for _ in range(3):
            c = rng.standard_normal(3) + 1j * rng.standard_normal(3)
            f_full = dg.generating_F(ctx, z, f, c)
            f_proj = dg.generating_F(ctx, z, f, kp @ c)
            assert np.linalg.norm(f_full - f_proj) <= 1e-9
            # and F genuinely varies along the kernel
        f0 = dg.generating_F(ctx, z, f, np.zeros(3))
        f1 = dg.generating_F(ctx, z, f, np.array([1.0, 0, 0]))
        assert np.linalg.norm(f1 - f0) > 0.1

    def test_precondition_on_solvability(self, growout_ctx, gaussian_1):
        z = dg.nonlinearity_source(
            "polynomial", n=1, terms=[[{"coeff": 1.0, "powers": [2]}]]
        )
        with pytest.raises(MathematicalError, match="solvability"):
            dg.generating_F(growout_ctx, z, gaussian_1, [0.0])


class TestSolveGenerating:
    def test_double_root_at_zero(self, coupled_ctx, uncoupled_z, zero_2):
        root = dg.solve_generating(
            coupled_ctx, uncoupled_z, zero_2, [0.5, 0.0], tol_root=1e-10, max_iter=80
        )
        # double root: Newton halves its way in, stopping at |c| ~ sqrt(tol)
        assert abs(root.c0[0]) <= 2e-5
        assert root.F_norm_at_root <= 1e-10
        # B0 = (4/3) c0 on the kernel direction: vanishingly small here
        assert np.linalg.norm(root.B0) <= 1e-4

    def test_invertible_d_flags_trivial_f(self, scalar_stable_ctx, exp_abs_1):
        z = dg.nonlinearity_source(
            "polynomial", n=1, terms=[[{"coeff": 1.0, "powers": [2]}]],
            analytic_derivative=True,
        )
        root = dg.solve_generating(scalar_stable_ctx, z, exp_abs_1, [0.7])
        assert root.note == "F identically zero on kernel"
        assert np.allclose(root.c0, [0.7])
        assert root.sufficient_ok  # both cokernel factors vanish

    def test_forced_roots_match_quadratic_formula(self, coupled_root, quad_coeffs):
        a_o, b_o, c_o = quad_coeffs
        disc = b_o**2 - 4 * a_o * c_o
        roots = [
            (-b_o + np.sqrt(complex(disc))) / (2 * a_o),
            (-b_o - np.sqrt(complex(disc))) / (2 * a_o),
        ]
        err = min(abs(coupled_root.c0[0] - r) for r in roots)
        assert err <= 1e-8
        assert abs(coupled_root.c0[1]) <= 1e-10


class TestB0:
    def test_linear_z_matches_direct_quadrature(self, homoclinic_ctx, zero_1):
        w = np.array([[2.0]])
        z_lin = dg.nonlinearity_source("linear", n=1, matrix=w)
        root = linearize_at(homoclinic_ctx, z_lin, zero_1, [0.0])
        # A1 = W constant: B0 = int K(t) W U(t,0) P+(0) P_ker dt
        # with K = 0 here (homoclinic: cokernel is trivial? no: D = 0 scalar)
        ctx = homoclinic_ctx
        vals = np.array([
            (dg.solvability_kernel(ctx, t) @ w @ ctx.homoclinic_lattice[j]).ravel()
            for j, t in enumerate(ctx.lattice)
        ]).reshape(-1, 1)
        nodes, wts = ctx.line_weights()
        direct = np.sum(wts[:, None] * vals[nodes], axis=0)
        assert abs(root.B0[0, 0] - direct[0]) <= 1e-10

    def test_degenerate_root_b0_zero(self, coupled_ctx, uncoupled_z, zero_2):
        root = linearize_at(coupled_ctx, uncoupled_z, zero_2, [0.0, 0.0])
        assert np.linalg.norm(root.B0) <= 1e-12
        assert root.B0_rank == 0

    def test_simple_root_embeds_f_prime(self, coupled_ctx, coupled_z,
                                        coupled_forcing, coupled_root):
        # B0 maps the kernel direction e1 to F_2'(c0) e2
        f_prime = (4.0 / 3.0) * coupled_root.c0[0]
        assert abs(coupled_root.B0[1, 0] - f_prime) <= 1e-6
        assert abs(coupled_root.B0[0, 0]) <= 1e-10

    def test_fd_jacobian_matches_analytic(self, coupled_ctx, coupled_forcing,
                                          coupled_root):
        z_fd = dg.nonlinearity_source(
            "polynomial", n=2,
            terms=[
                [{"coeff": 1.0, "powers": [0, 2]}],
                [{"coeff": 1.0, "powers": [2, 0]}],
            ],
        )  # no analytic derivative: finite differences with self-check
        traj = dg.Trajectory(
            coupled_ctx.lattice, _phi0(coupled_ctx, coupled_forcing, coupled_root.c0)
        )
        b0_fd = dg.build_B0(coupled_ctx, z_fd, traj)
        assert np.linalg.norm(b0_fd - coupled_root.B0, 2) <= 1e-7


def _phi0(ctx, f, c):
    from dgreen.nonlinear import _phi0_lattice
    return _phi0_lattice(ctx, ctx.solution(f), np.asarray(c, dtype=complex))


class TestSufficientCheck:
    def test_invertible_d_true(self, scalar_stable_ctx, exp_abs_1):
        z = dg.nonlinearity_source(
            "polynomial", n=1, terms=[[{"coeff": 1.0, "powers": [2]}]]
        )
        root = linearize_at(scalar_stable_ctx, z, exp_abs_1, [0.0])
        assert dg.sufficient_check(root, scalar_stable_ctx) is True

    def test_degenerate_b0_false(self, coupled_ctx, uncoupled_z, zero_2):
        root = linearize_at(coupled_ctx, uncoupled_z, zero_2, [0.0, 0.0])
        assert dg.sufficient_check(root, coupled_ctx) is False

    def test_simple_root_true(self, coupled_root, coupled_ctx):
        assert dg.sufficient_check(coupled_root, coupled_ctx) is True


class TestCorollaryCompare:
    def test_linear_z_exact(self, homoclinic_ctx, gaussian_1):
        z_lin = dg.nonlinearity_source("linear", n=1, matrix=[[1.5]])
        root = linearize_at(homoclinic_ctx, z_lin, gaussian_1, [0.3])
        err = dg.corollary_compare(homoclinic_ctx, z_lin, gaussian_1, root)
        assert err <= 1e-8

    def test_simple_root(self, coupled_ctx, coupled_z, coupled_forcing, coupled_root):
        err = dg.corollary_compare(coupled_ctx, coupled_z, coupled_forcing,
                                   coupled_root, fd_step=1e-5)
        assert err <= 1e-4

    def test_degenerate_root_both_vanish(self, coupled_ctx, uncoupled_z, zero_2):
        root = linearize_at(coupled_ctx, uncoupled_z, zero_2, [0.0, 0.0])
        err = dg.corollary_compare(coupled_ctx, uncoupled_z, zero_2, root)
        assert err <= 1e-8


class TestIterateSolution:
    def test_eps_zero_reproduces_generating_solution(self, coupled_ctx, coupled_z,
                                                     coupled_forcing, coupled_root):
        traj, hist = dg.iterate_solution(
            coupled_ctx, coupled_z, coupled_forcing, coupled_root,
            eps=0.0, max_iter=10, tol_fix=1e-12,
        )
        assert len(hist) == 1
        assert hist[0].correction_norm == 0.0
        j = coupled_ctx.idx0 + 64
        x0 = dg.bounded_family(coupled_ctx, coupled_forcing, coupled_root.c0,
                               coupled_ctx.lattice[j])
        assert np.linalg.norm(traj.values[j] - x0) <= 1e-12

    def test_scalar_stable_quadratic_perturbation(self, scalar_stable_ctx, exp_abs_1):
        z = dg.nonlinearity_source(
            "polynomial", n=1, terms=[[{"coeff": 1.0, "powers": [2]}]],
            analytic_derivative=True,
        )
        root = dg.solve_generating(scalar_stable_ctx, z, exp_abs_1, [0.0])
        traj, hist = dg.iterate_solution(
            scalar_stable_ctx, z, exp_abs_1, root, eps=0.01,
            max_iter=40, tol_fix=1e-12,
        )
        res = perturbed_residual(
            scalar_stable_ctx, z, exp_abs_1, root, traj, 0.01,
            [0.5, 1.5, -1.0, 3.0],
        )
        assert res <= 1e-5

    def test_coupled_convergence_and_residual(self, coupled_ctx, coupled_z,
                                              coupled_forcing, coupled_root):
        traj, hist = dg.iterate_solution(
            coupled_ctx, coupled_z, coupled_forcing, coupled_root,
            eps=0.01, max_iter=60, tol_fix=1e-12,
        )
        corrs = [s.correction_norm for s in hist]
        assert all(c2 < c1 for c1, c2 in zip(corrs[1:4], corrs[2:5]))
        res = perturbed_residual(
            coupled_ctx, coupled_z, coupled_forcing, coupled_root, traj, 0.01,
            [0.5, 1.5, -1.0, 3.0, -2.5],
        )
        assert res <= 1e-5
        assert traj.meta["final_consistency"] <= 1e-10

    def test_necessity_pair(self, coupled_ctx, coupled_z, coupled_forcing,
                            coupled_root):
        # paired regression: the root converges (above), a non-root with
        # ||F|| > 0.1 must fail
        c_bad = np.array([1.5 + 0.0j, 0.0])
        f_bad = dg.generating_F(coupled_ctx, coupled_z, coupled_forcing, c_bad)
        assert np.linalg.norm(f_bad) > 0.1
        root_bad = linearize_at(coupled_ctx, coupled_z, coupled_forcing, c_bad)
        assert root_bad.sufficient_ok  # B0 is still invertible on the kernel
        with pytest.raises(IterationDivergenceError):
            dg.iterate_solution(
                coupled_ctx, coupled_z, coupled_forcing, root_bad,
                eps=0.01, max_iter=40, tol_fix=1e-12,
            )

    def test_eps_range_validated(self, coupled_ctx, coupled_z, coupled_forcing,
                                 coupled_root):
        with pytest.raises(ValueError, match="eps"):
            dg.iterate_solution(
                coupled_ctx, coupled_z, coupled_forcing, coupled_root, eps=0.5
            )

    def test_requires_sufficiency(self, coupled_ctx, uncoupled_z, zero_2):
        root = linearize_at(coupled_ctx, uncoupled_z, zero_2, [0.0, 0.0])
        with pytest.raises(MathematicalError, match="sufficiency"):
            dg.iterate_solution(coupled_ctx, uncoupled_z, zero_2, root, eps=0.01)

    def test_eps_scaling_of_contraction(self, coupled_ctx, coupled_z,
                                        coupled_forcing, coupled_root):
        def asym_ratio(eps):
            _, hist = dg.iterate_solution(
                coupled_ctx, coupled_z, coupled_forcing, coupled_root,
                eps=eps, max_iter=60, tol_fix=1e-12,
            )
            corrs = [s.correction_norm for s in hist]
            ratios = [
                corrs[i + 1] / corrs[i]
                for i in range(1, len(corrs) - 1)
                if corrs[i + 1] > 1e-9
            ]
            return float(np.median(ratios))

        r_full = asym_ratio(0.01)
        r_half = asym_ratio(0.005)
        assert r_half <= 0.65 * r_full


class TestEvaluatePerturbed:
    def test_matches_lattice_values(self, coupled_ctx, coupled_z, coupled_forcing,
                                    coupled_root):
        traj, _ = dg.iterate_solution(
            coupled_ctx, coupled_z, coupled_forcing, coupled_root,
            eps=0.01, max_iter=60, tol_fix=1e-12,
        )
        idx = [coupled_ctx.idx0 + 32, coupled_ctx.idx0 - 128]
        pts = evaluate_perturbed(
            coupled_ctx, coupled_z, coupled_forcing, coupled_root, traj, 0.01,
            [coupled_ctx.lattice[i] for i in idx],
        )
        for k, i in enumerate(idx):
            assert np.linalg.norm(pts[k] - traj.values[i]) <= 1e-8
