"""Fitted model files.

A model is stored as a single JSON document.  Floats are written with
Python's shortest round-trip representation, so reading a file and writing
it back reproduces it byte for byte and ``theta`` is recovered bitwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import SplineSpace
from .errors import ConfigError, DataError, RankError
from .manifold import FEASIBLE_TOL, feasibility_residual
from .model import ModelParams

__all__ = ["FORMAT_VERSION", "ModelFile", "save_model", "load_model"]

FORMAT_VERSION = 1
_KIND = "ofpca-model"


@dataclass(frozen=True, eq=False)
class ModelFile:
    """Everything needed to evaluate a fit, independent of the data it came from."""

    spline: dict
    theta: np.ndarray
    lam: np.ndarray
    sigma2: float
    delta: float
    tau: float
    tau_path: tuple = ()
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_fit(cls, result) -> "ModelFile":
        p = result.params
        return cls(
            result.space.spec(),
            np.array(p.theta, dtype=float),
            np.array(p.lam, dtype=float),
            p.sigma2,
            p.delta,
            float(result.tau),
            tuple(float(t) for t in result.tau_path),
            dict(result.meta),
        )

    @property
    def space(self) -> SplineSpace:
        return SplineSpace.from_spec(self.spline)

    @property
    def rank(self) -> int:
        return self.theta.shape[1]

    def params(self) -> ModelParams:
        return ModelParams.from_natural(self.theta, self.lam, self.sigma2, self.delta)

    def to_dict(self) -> dict:
        return {
            "format": _KIND,
            "version": FORMAT_VERSION,
            "spline": self.spline,
            "theta": [[float(v) for v in row] for row in self.theta],
            "lambda": [float(v) for v in self.lam],
            "sigma2": float(self.sigma2),
            "delta": float(self.delta),
            "tau": float(self.tau),
            "tau_path": [float(t) for t in self.tau_path],
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_model(model: ModelFile, path: str | Path) -> None:
    Path(path).write_text(model.dumps(), encoding="utf-8")


def _parse(doc: dict) -> ModelFile:
    if doc.get("format") != _KIND:
        raise DataError("not a model file")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported model file version {doc.get('version')!r}")
    try:
        spline = doc["spline"]
        space = SplineSpace.from_spec(spline)
        theta = np.array(doc["theta"], dtype=float)
        lam = np.array(doc["lambda"], dtype=float)
        model = ModelFile(
            spline, theta, lam, float(doc["sigma2"]), float(doc["delta"]), float(doc["tau"]),
            tuple(float(t) for t in doc["tau_path"]), dict(doc["meta"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file: {exc}") from exc
    if theta.ndim != 2 or theta.shape[0] != space.p or lam.shape != (theta.shape[1],):
        raise DataError(f"theta {theta.shape} and lambda {lam.shape} do not fit a basis of size {space.p}")
    res = feasibility_residual(theta, space.gram)
    if not res < FEASIBLE_TOL:
        raise RankError(f"stored components are not G-orthonormal (residual {res:.3g})")
    return model


def load_model(path: str | Path) -> ModelFile:
    """Read and validate a model file, re-checking the orthonormality constraint."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"model file {str(path)!r} does not exist")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: not a model file")
    return _parse(doc)
