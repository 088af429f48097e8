"""Problem files: schema-1 JSON descriptions of a whole run.

Complex numbers are written as [re, im] pairs; matrices are nested
lists of such pairs (row-major).  All registry ids are validated here
so the CLI can report input errors before any numerics start.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ProblemFormatError
from .registry import FORCING_KINDS, NONLINEARITY_KINDS, OPERATOR_KINDS

__all__ = ["ProblemSpec", "parse_problem", "decode_complex", "decode_matrix"]

_PROJECTOR_KINDS = ("spectral", "piecewise_spectral", "explicit")

_TOLERANCE_DEFAULTS = {
    "tol_rank": 1e-10,
    "tol_solve": 1e-8,
    "tail_tol": 1e-9,
    "tol_fix": 1e-10,
    "tol_suff": 1e-8,
    "tol_root": 1e-10,
}

_GRID_DEFAULTS = {
    "t_cut": 21.0,
    "h": 1.0 / 128.0,
    "nodes_per_unit": 32,
}


def decode_complex(entry, where: str) -> complex:
    """A scalar: plain number or [re, im]."""
    if isinstance(entry, (int, float)):
        return complex(entry)
    if (
        isinstance(entry, (list, tuple))
        and len(entry) == 2
        and all(isinstance(v, (int, float)) for v in entry)
    ):
        return complex(entry[0], entry[1])
    raise ProblemFormatError(f"{where}: expected a number or [re, im] pair, got {entry!r}")


def decode_vector(entry, where: str) -> np.ndarray:
    if not isinstance(entry, (list, tuple)):
        raise ProblemFormatError(f"{where}: expected a list of entries")
    return np.array([decode_complex(v, f"{where}[{i}]") for i, v in enumerate(entry)])


def decode_matrix(entry, where: str) -> np.ndarray:
    if not isinstance(entry, (list, tuple)) or not entry:
        raise ProblemFormatError(f"{where}: expected a nonempty list of rows")
    rows = [decode_vector(r, f"{where}[{i}]") for i, r in enumerate(entry)]
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ProblemFormatError(f"{where}: ragged rows with lengths {sorted(len(r) for r in rows)}")
    return np.vstack(rows)


@dataclass
class ProblemSpec:
    """Validated problem description plus its reproducibility hash."""

    name: str
    n: int
    generator: dict
    forcing: dict
    projectors: dict
    nonlinearity: dict | None
    tolerances: dict
    grid: dict
    output: dict
    oracle: dict
    problem_hash: str
    raw: dict = field(repr=False, default_factory=dict)


def _check_square(m: np.ndarray, n: int, where: str):
    if m.shape != (n, n):
        raise ProblemFormatError(
            f"{where} is {m.shape[0]}x{m.shape[1]} but the problem dimension is {n}"
        )


def _decode_operator_cfg(cfg: dict, n: int, where: str) -> dict:
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ProblemFormatError(f"{where}: expected an object with a 'kind' field")
    kind = cfg["kind"]
    if kind not in OPERATOR_KINDS:
        raise ProblemFormatError(
            f"{where}: unknown registry id {kind!r}; valid ids: {', '.join(sorted(OPERATOR_KINDS))}"
        )
    out = dict(cfg)
    for key in ("matrix", "base", "amplitude", "negative", "positive"):
        if key in cfg:
            m = decode_matrix(cfg[key], f"{where}.{key}")
            _check_square(m, n, f"{where}.{key}")
            out[key] = m
    if kind == "table":
        out["times"] = [float(t) for t in cfg["times"]]
        mats = [decode_matrix(m, f"{where}.matrices[{i}]") for i, m in enumerate(cfg["matrices"])]
        for i, m in enumerate(mats):
            _check_square(m, n, f"{where}.matrices[{i}]")
        out["matrices"] = np.array(mats)
    return out


def _decode_forcing_cfg(cfg: dict, n: int, where: str = "forcing") -> dict:
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ProblemFormatError(f"{where}: expected an object with a 'kind' field")
    kind = cfg["kind"]
    if kind not in FORCING_KINDS:
        raise ProblemFormatError(
            f"{where}: unknown registry id {kind!r}; valid ids: {', '.join(sorted(FORCING_KINDS))}"
        )
    out = dict(cfg)
    if "amplitude" in cfg:
        amp = decode_vector(cfg["amplitude"], f"{where}.amplitude")
        if amp.shape[0] != n:
            raise ProblemFormatError(
                f"{where}.amplitude has dimension {amp.shape[0]} but the problem dimension is {n}"
            )
        out["amplitude"] = amp
    if kind == "sum":
        out["parts"] = [
            _decode_forcing_cfg(p, n, f"{where}.parts[{i}]") for i, p in enumerate(cfg["parts"])
        ]
    if kind == "table":
        out["times"] = [float(t) for t in cfg["times"]]
        vals = [decode_vector(v, f"{where}.values[{i}]") for i, v in enumerate(cfg["values"])]
        for i, v in enumerate(vals):
            if v.shape[0] != n:
                raise ProblemFormatError(
                    f"{where}.values[{i}] has dimension {v.shape[0]} but the problem dimension is {n}"
                )
        out["values"] = np.array(vals)
    return out


def _decode_projector_cfg(cfg: dict, n: int, where: str) -> dict:
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ProblemFormatError(f"{where}: expected an object with a 'kind' field")
    if cfg["kind"] not in _PROJECTOR_KINDS:
        raise ProblemFormatError(
            f"{where}: unknown projector source {cfg['kind']!r}; valid ids: "
            f"{', '.join(_PROJECTOR_KINDS)}"
        )
    out = dict(cfg)
    if cfg["kind"] == "explicit":
        m = decode_matrix(cfg["matrix"], f"{where}.matrix")
        _check_square(m, n, f"{where}.matrix")
        out["matrix"] = m
    return out


def _decode_nonlinearity_cfg(cfg: dict, n: int) -> dict:
    where = "nonlinearity"
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ProblemFormatError(f"{where}: expected an object with a 'kind' field")
    kind = cfg["kind"]
    if kind not in NONLINEARITY_KINDS:
        raise ProblemFormatError(
            f"{where}: unknown registry id {kind!r}; valid ids: "
            f"{', '.join(sorted(NONLINEARITY_KINDS))}"
        )
    out = dict(cfg)
    if "matrix" in cfg:
        m = decode_matrix(cfg["matrix"], f"{where}.matrix")
        _check_square(m, n, f"{where}.matrix")
        out["matrix"] = m
    if "c_init" in cfg:
        c = decode_vector(cfg["c_init"], f"{where}.c_init")
        if c.shape[0] != n:
            raise ProblemFormatError(
                f"{where}.c_init has dimension {c.shape[0]} but the problem dimension is {n}"
            )
        out["c_init"] = c
    if "eps" in cfg:
        out["eps"] = float(cfg["eps"])
        if out["eps"] < 0:
            raise ProblemFormatError(f"{where}.eps must be nonnegative")
    return out


def parse_problem(path) -> ProblemSpec:
    """Load and validate a schema-1 problem file."""
    path = Path(path)
    if not path.exists():
        raise ProblemFormatError(f"problem file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"{path}: invalid JSON ({exc})") from exc

    if raw.get("schema") != 1:
        raise ProblemFormatError(
            f"unsupported schema version {raw.get('schema')!r} (supported: 1)"
        )
    if "dimension" not in raw or not isinstance(raw["dimension"], int) or raw["dimension"] < 1:
        raise ProblemFormatError("dimension: expected a positive integer")
    n = raw["dimension"]

    gen_cfg = raw.get("generator")
    if not isinstance(gen_cfg, dict):
        raise ProblemFormatError("generator: missing or not an object")
    mode = gen_cfg.get("mode", "general")
    if mode not in ("general", "schrodinger"):
        raise ProblemFormatError(f"generator.mode: expected 'general' or 'schrodinger', got {mode!r}")
    gen_out = {"mode": mode}
    if mode == "general":
        if "A" not in gen_cfg:
            raise ProblemFormatError("generator.A: required in general mode")
        gen_out["A"] = _decode_operator_cfg(gen_cfg["A"], n, "generator.A")
    else:
        if "H0" not in gen_cfg or "V" not in gen_cfg:
            raise ProblemFormatError("generator.H0 and generator.V: required in schrodinger mode")
        h0 = decode_matrix(gen_cfg["H0"], "generator.H0")
        _check_square(h0, n, "generator.H0")
        gen_out["H0"] = h0
        gen_out["V"] = _decode_operator_cfg(gen_cfg["V"], n, "generator.V")

    forcing = _decode_forcing_cfg(raw.get("forcing", {"kind": "zero"}), n)

    proj_cfg = raw.get("projectors")
    if not isinstance(proj_cfg, dict) or "plus" not in proj_cfg or "minus" not in proj_cfg:
        raise ProblemFormatError("projectors: need 'plus' and 'minus' sources")
    projectors = {
        "plus": _decode_projector_cfg(proj_cfg["plus"], n, "projectors.plus"),
        "minus": _decode_projector_cfg(proj_cfg["minus"], n, "projectors.minus"),
        "M": float(proj_cfg.get("M", 1.0)),
        "alpha": float(proj_cfg.get("alpha", 1.0)),
    }
    if projectors["M"] < 1.0 or projectors["alpha"] <= 0:
        raise ProblemFormatError("projectors: need M >= 1 and alpha > 0")

    nonlinearity = None
    if raw.get("nonlinearity") is not None:
        nonlinearity = _decode_nonlinearity_cfg(raw["nonlinearity"], n)

    tolerances = dict(_TOLERANCE_DEFAULTS)
    for key, val in raw.get("tolerances", {}).items():
        if key not in _TOLERANCE_DEFAULTS:
            raise ProblemFormatError(f"tolerances.{key}: unknown tolerance field")
        val = float(val)
        if val <= 0:
            raise ProblemFormatError(f"tolerances.{key}: must be positive, got {val}")
        tolerances[key] = val

    grid = dict(_GRID_DEFAULTS)
    for key, val in raw.get("grid", {}).items():
        if key not in _GRID_DEFAULTS:
            raise ProblemFormatError(f"grid.{key}: unknown grid field")
        grid[key] = val
    grid["t_cut"] = float(grid["t_cut"])
    grid["h"] = float(grid["h"])
    grid["nodes_per_unit"] = int(grid["nodes_per_unit"])
    if grid["t_cut"] <= 0 or grid["h"] <= 0 or grid["nodes_per_unit"] < 4:
        raise ProblemFormatError("grid: t_cut and h must be positive, nodes_per_unit >= 4")

    output = dict(raw.get("output", {}))
    output.setdefault("t_max", min(10.0, grid["t_cut"] / 2.0))
    output.setdefault("step", 0.125)
    if "c" in output:
        c = decode_vector(output["c"], "output.c")
        if c.shape[0] != n:
            raise ProblemFormatError(
                f"output.c has dimension {c.shape[0]} but the problem dimension is {n}"
            )
        output["c"] = c
    else:
        output["c"] = np.zeros(n, dtype=complex)

    oracle = dict(raw.get("oracle", {}))
    oracle.setdefault("T", max(grid["t_cut"] - 1.0, grid["t_cut"] * 0.75))
    oracle.setdefault("h", 0.1)

    digest = hashlib.sha256(
        json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]

    return ProblemSpec(
        name=str(raw.get("name", path.stem)),
        n=n,
        generator=gen_out,
        forcing=forcing,
        projectors=projectors,
        nonlinearity=nonlinearity,
        tolerances=tolerances,
        grid=grid,
        output=output,
        oracle=oracle,
        problem_hash=digest,
        raw=raw,
    )
