"""Synthetic functional data with known principal components.

Two designs on the unit interval and the unit square.  Random numbers come
from a Philox counter-based generator so streams are reproducible across
platforms.  Subjects are drawn sequentially: observation count, locations,
component scores, then noise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .model import Subject

__all__ = ["SimTruth", "gen_1d", "gen_2d", "builtin_truth", "write_truth", "truth_from_spec", "load_truth"]


@dataclass(frozen=True, eq=False)
class SimTruth:
    setting: str
    eigenfunctions: tuple[Callable[[np.ndarray], np.ndarray], ...]
    eigenvalues: np.ndarray
    noise_sd: float
    m_mean: float
    m_sd: float
    domain: tuple[tuple[float, float], ...]

    @property
    def dims(self) -> int:
        return len(self.domain)

    def evaluate(self, points: np.ndarray, R: int | None = None) -> np.ndarray:
        """Eigenfunction values, shape ``(n_points, R)``; ``points`` is ``(n, d)``."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dims)
        funcs = self.eigenfunctions[: R or len(self.eigenfunctions)]
        return np.column_stack([f(pts) for f in funcs])


def _cos_1d(r: int) -> Callable:
    if r == 1:
        return lambda x: np.ones(len(x))
    return lambda x: np.sqrt(2.0) * np.cos((r - 1) * np.pi * x[:, 0])


def _cos_2d(k1: int, k2: int) -> Callable:
    return lambda x: 2.0 * np.cos(k1 * np.pi * x[:, 0]) * np.cos(k2 * np.pi * x[:, 1])


def _truth_1d() -> SimTruth:
    lam = 0.4 * np.arange(1, 11, dtype=float) ** -2
    return SimTruth("1d", tuple(_cos_1d(r) for r in range(1, 11)), lam, 0.5, 6.0, 2.0, ((0.0, 1.0),))


def _truth_2d() -> SimTruth:
    funcs = tuple(_cos_2d(k1, k2) for k1 in (1, 2) for k2 in (1, 2, 3))
    lam = 2.0 ** -np.arange(6, dtype=float)
    return SimTruth("2d", funcs, lam, 0.2, 25.0, np.sqrt(6.0), ((0.0, 1.0), (0.0, 1.0)))


def builtin_truth(setting: str) -> SimTruth:
    if setting == "1d":
        return _truth_1d()
    if setting == "2d":
        return _truth_2d()
    raise ConfigError(f"unknown simulation setting {setting!r}")


def _simulate(truth: SimTruth, n: int, seed: int) -> tuple[list[Subject], np.ndarray]:
    """Subjects together with the component scores that generated them, shape ``(n, K)``."""
    if n < 1:
        raise ConfigError(f"number of subjects must be >= 1, got {n}")
    rng = np.random.Generator(np.random.Philox(seed))
    sd = np.sqrt(truth.eigenvalues)
    width = len(str(n))
    out, all_scores = [], np.empty((n, len(sd)))
    for i in range(n):
        m = max(1, int(np.rint(rng.normal(truth.m_mean, truth.m_sd))))
        loc = rng.uniform(0.0, 1.0, size=(m, truth.dims))
        scores = rng.normal(0.0, 1.0, size=len(sd)) * sd
        signal = truth.evaluate(loc) @ scores
        y = signal + rng.normal(0.0, truth.noise_sd, size=m)
        out.append(Subject(f"s{i + 1:0{width}d}", loc, y))
        all_scores[i] = scores
    return out, all_scores


def _generate(truth: SimTruth, n: int, seed: int) -> list[Subject]:
    return _simulate(truth, n, seed)[0]


def gen_1d(n: int, seed: int) -> tuple[list[Subject], SimTruth]:
    """Curves on [0, 1] with ten cosine components, variances ``0.4 r^-2``, noise sd 0.5."""
    truth = _truth_1d()
    return _generate(truth, n, seed), truth


def gen_2d(n: int, seed: int) -> tuple[list[Subject], SimTruth]:
    """Surfaces on [0, 1]^2 with six product-cosine components, variances ``2^(1-r)``, noise sd 0.2."""
    truth = _truth_2d()
    return _generate(truth, n, seed), truth


def write_truth(path: str | Path, setting: str, n: int, seed: int) -> None:
    meta = {"setting": setting, "n": n, "seed": seed}
    Path(path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def _cosine_term(coef: float, freq: Sequence[int]) -> Callable:
    freq = np.asarray(freq, dtype=float)
    return lambda x: coef * np.prod(np.cos(np.pi * freq * x), axis=1)


def _cosine_sum(terms: list) -> Callable:
    return lambda x: sum(t(x) for t in terms)


def truth_from_spec(doc: dict) -> SimTruth:
    """Truth described in JSON as sums of products of cosines.

    Two forms are accepted.  A simulation sidecar, ``{"setting": "1d", ...}``,
    names a built-in design.  Otherwise the document lists a domain and, for
    every component, terms ``coef * prod_d cos(freq_d * pi * x_d)``::

        {"domain": [[0, 1]],
         "components": [[{"coef": 1, "freq": [0]}],
                        [{"coef": 1.4142135623730951, "freq": [1]}]],
         "eigenvalues": [0.4, 0.1]}

    ``eigenvalues`` is optional.
    """
    if not isinstance(doc, dict):
        raise ConfigError("truth specification must be a JSON object")
    if "setting" in doc:
        return builtin_truth(doc["setting"])
    try:
        domain = tuple((float(lo), float(hi)) for lo, hi in doc["domain"])
        funcs = []
        for comp in doc["components"]:
            terms = []
            for term in comp:
                freq = [int(f) for f in term["freq"]]
                if len(freq) != len(domain):
                    raise ConfigError(f"term frequencies {freq} do not match the {len(domain)}-d domain")
                terms.append(_cosine_term(float(term["coef"]), freq))
            if not terms:
                raise ConfigError("every component needs at least one term")
            funcs.append(_cosine_sum(terms))
        lam = np.asarray(doc.get("eigenvalues", [np.nan] * len(funcs)), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed truth specification: {exc}") from exc
    if not funcs or not domain or any(lo >= hi for lo, hi in domain):
        raise ConfigError("truth specification needs a non-empty domain and at least one component")
    if lam.shape != (len(funcs),):
        raise ConfigError("eigenvalues must list one value per component")
    return SimTruth("custom", tuple(funcs), lam, 0.0, 0.0, 0.0, domain)


def load_truth(ref: str) -> SimTruth:
    """``builtin:1d``, ``builtin:2d`` or the path of a JSON truth specification."""
    if ref.startswith("builtin:"):
        return builtin_truth(ref.split(":", 1)[1])
    path = Path(ref)
    if not path.is_file():
        raise ConfigError(f"truth {ref!r} is neither builtin:1d, builtin:2d nor an existing file")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{ref}: not valid JSON ({exc})") from exc
    return truth_from_spec(doc)
