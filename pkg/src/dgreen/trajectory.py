"""Sampled solutions and their on-disk formats.

CSV layout: one row per sample, columns ``t, Re x_1..n, Im x_1..n``.
The JSON document carries the same samples plus the meta block
(tolerances, regime tag, residual norms, problem hash).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Trajectory", "write_csv", "write_json"]


@dataclass
class Trajectory:
    """Times (m,) and complex values (m, n), with provenance meta."""

    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, 1)
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError(
                f"{self.times.shape[0]} times vs {self.values.shape[0]} value rows"
            )
        if not np.all(np.isfinite(self.times)):
            raise ValueError("trajectory times contain non-finite entries")

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1))) if len(self.times) else 0.0

    def value_at(self, t: float) -> np.ndarray:
        """Linear interpolation inside the sampled range."""
        if t < self.times[0] or t > self.times[-1]:
            raise ValueError(f"t = {t} outside sampled range")
        re = np.vstack([np.interp(t, self.times, self.values[:, j].real)
                        for j in range(self.n)])
        im = np.vstack([np.interp(t, self.times, self.values[:, j].imag)
                        for j in range(self.n)])
        return (re + 1j * im).reshape(-1)


def write_csv(traj: Trajectory, path) -> None:
    n = traj.n
    header = ["t"] + [f"Re x_{j + 1}" for j in range(n)] + [
        f"Im x_{j + 1}" for j in range(n)
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(traj.times, traj.values):
            w.writerow([repr(float(t))]
                       + [repr(float(v.real)) for v in row]
                       + [repr(float(v.imag)) for v in row])


def write_json(traj: Trajectory, path) -> None:
    doc = {
        "meta": _jsonable(traj.meta),
        "times": [float(t) for t in traj.times],
        "values": [[[float(v.real), float(v.imag)] for v in row] for row in traj.values],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj
