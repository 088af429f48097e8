import json
from pathlib import Path

import numpy as np
import pytest

from dgreen.exceptions import ProblemFormatError
from dgreen.pipeline import build_setup
from dgreen.problem import parse_problem

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def minimal_problem(**overrides):
    doc = {
        "schema": 1,
        "dimension": 1,
        "generator": {"mode": "general",
                      "A": {"kind": "constant", "matrix": [[[-1.0, 0.0]]]}},
        "forcing": {"kind": "exp_abs", "amplitude": [[1.0, 0.0]]},
        "projectors": {"plus": {"kind": "spectral"}, "minus": {"kind": "spectral"}},
        "grid": {"t_cut": 6.0, "h": 0.015625, "nodes_per_unit": 8},
    }
    doc.update(overrides)
    return doc


def write_problem(tmp_path, doc, name="prob.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestParse:
    def test_minimal_valid(self, tmp_path):
        spec = parse_problem(write_problem(tmp_path, minimal_problem()))
        assert spec.n == 1
        assert spec.forcing["kind"] == "exp_abs"
        assert spec.tolerances["tol_rank"] == 1e-10
        assert len(spec.problem_hash) == 16

    def test_all_shipped_problems_parse(self):
        for path in sorted(PROBLEMS.glob("*.json")):
            spec = parse_problem(path)
            assert spec.n >= 1

    def test_hash_is_content_stable(self, tmp_path):
        a = parse_problem(write_problem(tmp_path, minimal_problem(), "a.json"))
        b = parse_problem(write_problem(tmp_path, minimal_problem(), "b.json"))
        assert a.problem_hash == b.problem_hash
        c = parse_problem(
            write_problem(tmp_path, minimal_problem(dimension=1, name="x"), "c.json")
        )
        assert c.problem_hash != a.problem_hash

    def test_unsupported_schema(self, tmp_path):
        with pytest.raises(ProblemFormatError, match="schema"):
            parse_problem(write_problem(tmp_path, minimal_problem(schema=2)))

    def test_missing_file(self):
        with pytest.raises(ProblemFormatError, match="exist"):
            parse_problem("/nonexistent/problem.json")

    def test_dimension_mismatch_names_both(self, tmp_path):
        doc = minimal_problem(
            dimension=3,
            generator={"mode": "schrodinger",
                       "H0": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [2.0, 0.0]]],
                       "V": {"kind": "constant",
                             "matrix": [[[0.0, 0.0], [0.0, 0.0]],
                                        [[0.0, 0.0], [0.0, 0.0]]]}},
            forcing={"kind": "constant",
                     "amplitude": [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]},
        )
        with pytest.raises(ProblemFormatError, match="2x2.*3"):
            parse_problem(write_problem(tmp_path, doc))

    def test_forcing_dimension_mismatch(self, tmp_path):
        doc = minimal_problem(
            forcing={"kind": "constant", "amplitude": [[1.0, 0.0], [0.0, 0.0]]}
        )
        with pytest.raises(ProblemFormatError, match="dimension 2.*dimension is 1"):
            parse_problem(write_problem(tmp_path, doc))

    def test_unknown_registry_id_lists_valid(self, tmp_path):
        doc = minimal_problem(forcing={"kind": "expp", "amplitude": [[1.0, 0.0]]})
        with pytest.raises(ProblemFormatError, match="valid ids.*exp_abs"):
            parse_problem(write_problem(tmp_path, doc))

    def test_negative_tolerance_rejected(self, tmp_path):
        doc = minimal_problem(tolerances={"tol_solve": -1.0})
        with pytest.raises(ProblemFormatError, match="positive"):
            parse_problem(write_problem(tmp_path, doc))

    def test_unknown_tolerance_rejected(self, tmp_path):
        doc = minimal_problem(tolerances={"tol_misc": 1.0})
        with pytest.raises(ProblemFormatError, match="unknown tolerance"):
            parse_problem(write_problem(tmp_path, doc))

    def test_complex_pairs_decoded(self, tmp_path):
        doc = minimal_problem(
            generator={"mode": "general",
                       "A": {"kind": "constant", "matrix": [[[-1.0, 0.5]]]}}
        )
        spec = parse_problem(write_problem(tmp_path, doc))
        assert spec.generator["A"]["matrix"][0, 0] == complex(-1.0, 0.5)

    def test_bad_complex_entry(self, tmp_path):
        doc = minimal_problem(
            generator={"mode": "general",
                       "A": {"kind": "constant", "matrix": [[[1.0, 0.0, 3.0]]]}}
        )
        with pytest.raises(ProblemFormatError, match="re, im"):
            parse_problem(write_problem(tmp_path, doc))


class TestBuildSetup:
    def test_scalar_stable_setup(self, tmp_path):
        spec = parse_problem(write_problem(tmp_path, minimal_problem()))
        setup = build_setup(spec)
        assert setup.ctx.n == 1
        assert setup.ctx.pinv.rank == 1
        assert setup.nonlinearity is None

    def test_grid_overrides(self, tmp_path):
        spec = parse_problem(write_problem(tmp_path, minimal_problem()))
        setup = build_setup(spec, t_cut=8.0)
        assert setup.ctx.T == pytest.approx(8.0, abs=1e-9)

    def test_explicit_projectors(self, tmp_path):
        doc = minimal_problem(
            projectors={
                "plus": {"kind": "explicit", "matrix": [[[1.0, 0.0]]]},
                "minus": {"kind": "explicit", "matrix": [[[1.0, 0.0]]]},
            }
        )
        spec = parse_problem(write_problem(tmp_path, doc))
        setup = build_setup(spec)
        assert np.allclose(setup.dich_plus.P0, [[1.0]])
