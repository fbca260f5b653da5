"""Human-likeness score, Mahalanobis distance and CDF position.

The score of an FRF ``h`` against reference statistics (mean ``mu``,
covariance ``sigma``, spectral weights ``w``) is::

    delta = [Re h, Im h] - mu
    S     = diag([w, w])
    D     = sqrt((S delta)^T sigma^-1 (S delta))

with ``w`` normalised to a maximum of one. The plain Mahalanobis distance is
the same form without ``S``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import DimensionError, StatisticsError
from .spectral import BandPlan, Frf, WeightVector

REFERENCE_SCHEMA = "swaybench.reference/1"
RIDGE_EPS = 1e-6
CONDITION_FLOOR = 1e-10
DEFAULT_BOOTSTRAP = 2000


@dataclass
class ReferenceStats:
    plan: BandPlan
    mu: np.ndarray
    sigma: np.ndarray
    weights: WeightVector
    sample_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sample_mahalanobis: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ridge: float = 0.0
    provenance: dict = field(default_factory=lambda: {"source": "external"})

    def __post_init__(self):
        p = 2 * self.plan.n_bands
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.sample_scores = np.asarray(self.sample_scores, dtype=float)
        self.sample_mahalanobis = np.asarray(self.sample_mahalanobis, dtype=float)
        if not isinstance(self.weights, WeightVector):
            self.weights = WeightVector(self.weights)
        if self.mu.shape != (p,) or self.sigma.shape != (p, p):
            raise DimensionError(f"reference needs a {p}-vector mean and {p}x{p} covariance")
        if self.weights.w.shape != (self.plan.n_bands,):
            raise DimensionError(f"expected {self.plan.n_bands} weights")
        if not np.allclose(self.sigma, self.sigma.T, rtol=0, atol=1e-12 * np.abs(self.sigma).max()):
            raise StatisticsError("covariance is not symmetric")
        if np.any(self.sample_scores < 0):
            raise StatisticsError("sample scores must be non-negative")
        self.cholesky  # fail early on a non positive-definite covariance

    @property
    def n_subjects(self) -> int:
        return int(self.sample_scores.size)

    @cached_property
    def cholesky(self) -> np.ndarray:
        try:
            return linalg.cholesky(self.sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise StatisticsError("covariance is not positive definite") from exc

    @property
    def scale(self) -> np.ndarray:
        """Diagonal of S, built from the normalised weights."""
        wn = self.weights.normalized
        return np.concatenate([wn, wn])

    def to_dict(self) -> dict:
        return {
            "schema": REFERENCE_SCHEMA,
            "band_plan": self.plan.to_dict(),
            "mu": [float(x) for x in self.mu],
            "sigma_shape": list(self.sigma.shape),
            "sigma_row_major": [float(x) for x in self.sigma.ravel()],
            "weights_raw": [float(x) for x in self.weights.w],
            "weights_normalized": [float(x) for x in self.weights.normalized],
            "weights_used_for_scoring": "normalized",
            "sample_scores": [float(x) for x in self.sample_scores],
            "sample_mahalanobis": [float(x) for x in self.sample_mahalanobis],
            "n_subjects": self.n_subjects,
            "regularization": {
                "ridge": float(self.ridge),
                "rule": f"if min eig < {CONDITION_FLOOR:g} * max eig: "
                        f"sigma += {RIDGE_EPS:g} * trace(sigma)/p * I",
            },
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReferenceStats":
        if data.get("schema") != REFERENCE_SCHEMA:
            raise StatisticsError(f"unsupported reference schema {data.get('schema')!r}")
        shape = tuple(data["sigma_shape"])
        return cls(
            plan=BandPlan.from_dict(data["band_plan"]),
            mu=np.asarray(data["mu"]),
            sigma=np.asarray(data["sigma_row_major"]).reshape(shape),
            weights=WeightVector(data["weights_raw"]),
            sample_scores=np.asarray(data.get("sample_scores", [])),
            sample_mahalanobis=np.asarray(data.get("sample_mahalanobis", [])),
            ridge=float(data.get("regularization", {}).get("ridge", 0.0)),
            provenance=data.get("provenance", {"source": "external"}),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ScoreReport:
    score_d: float
    mahalanobis: float
    cdf: float | None
    cdf_ci: tuple | None
    n_ties: int = 0
    weights_used: str = "normalized"

    def to_dict(self) -> dict:
        return {
            "score_d": self.score_d,
            "mahalanobis": self.mahalanobis,
            "cdf": self.cdf,
            "cdf_ci": list(self.cdf_ci) if self.cdf_ci is not None else None,
            "n_ties": self.n_ties,
            "weights_used": self.weights_used,
        }


def expand_frf(frf: Frf) -> np.ndarray:
    return frf.expand()


def _whitened_norm(ref: ReferenceStats, v: np.ndarray) -> float:
    z = linalg.solve_triangular(ref.cholesky, v, lower=True)
    return float(np.sqrt(z @ z))


def distances(frf: Frf, ref: ReferenceStats) -> tuple[float, float]:
    """(weighted score D, Mahalanobis distance) of ``frf`` from the reference mean."""
    if frf.plan != ref.plan:
        raise DimensionError("FRF and reference use different band plans")
    delta = frf.expand() - ref.mu
    return _whitened_norm(ref, ref.scale * delta), _whitened_norm(ref, delta)


def cdf_position(score_d: float, ref: ReferenceStats, n_bootstrap: int = DEFAULT_BOOTSTRAP,
                 seed: int = 0) -> tuple[float, float, float]:
    """Fraction of reference scores strictly below ``score_d`` with a 95% bootstrap band."""
    scores = ref.sample_scores
    if scores.size == 0:
        raise StatisticsError("reference carries no sample scores")
    if n_bootstrap < 1:
        raise StatisticsError("n_bootstrap must be >= 1")
    cdf = float(np.count_nonzero(scores < score_d) / scores.size)
    rng = np.random.default_rng(seed)
    fractions = np.empty(n_bootstrap)
    chunk = max(1, 2_000_000 // scores.size)
    for start in range(0, n_bootstrap, chunk):
        stop = min(n_bootstrap, start + chunk)
        idx = rng.integers(0, scores.size, size=(stop - start, scores.size))
        fractions[start:stop] = (scores[idx] < score_d).mean(axis=1)
    low, high = np.percentile(fractions, [2.5, 97.5])
    return cdf, float(low), float(high)


def score(frf: Frf, ref: ReferenceStats, n_bootstrap: int = DEFAULT_BOOTSTRAP,
          seed: int = 0) -> ScoreReport:
    d, m = distances(frf, ref)
    if ref.n_subjects == 0:
        return ScoreReport(d, m, None, None)
    cdf, low, high = cdf_position(d, ref, n_bootstrap, seed)
    ties = int(np.count_nonzero(ref.sample_scores == d))
    return ScoreReport(d, m, cdf, (low, high), ties)


def regularize(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    """Add a small ridge when the covariance is (near) singular."""
    eig = np.linalg.eigvalsh(sigma)
    if eig.max() > 0 and eig.min() >= CONDITION_FLOOR * eig.max():
        return sigma, 0.0
    p = sigma.shape[0]
    trace = float(np.trace(sigma))
    ridge = RIDGE_EPS * trace / p if trace > 0 else RIDGE_EPS
    return sigma + ridge * np.eye(p), ridge


def fit_reference(frfs, weights: WeightVector, provenance: dict | None = None) -> ReferenceStats:
    """Mean/covariance of a population of FRFs plus every member's own score."""
    frfs = list(frfs)
    if len(frfs) < 2:
        raise StatisticsError(f"need at least 2 FRFs, got {len(frfs)}")
    plan = frfs[0].plan
    if any(f.plan != plan for f in frfs):
        raise DimensionError("FRFs use different band plans")
    x = np.stack([f.expand() for f in frfs])
    mu = x.mean(axis=0)
    sigma = np.cov(x, rowvar=False, ddof=1)
    sigma = 0.5 * (sigma + sigma.T)
    sigma, ridge = regularize(sigma)
    ref = ReferenceStats(plan, mu, sigma, weights, ridge=ridge,
                         provenance=provenance or {"source": "external"})
    pairs = np.array([distances(f, ref) for f in frfs])
    ref.sample_scores = pairs[:, 0]
    ref.sample_mahalanobis = pairs[:, 1]
    return ref


def surrogate_reference(n_subjects: int, seed: int, sim_config=None) -> ReferenceStats:
    """Reference statistics synthesised from jittered closed-loop simulations.

    See :func:`swaybench.pipeline.simulate_population` for the jitter model.
    """
    from .pipeline import SurrogateConfig, simulate_population

    if n_subjects < 2:
        raise StatisticsError("n_subjects must be >= 2")
    sim_config = sim_config or SurrogateConfig()
    population = simulate_population(n_subjects, seed, sim_config)
    if len(population.frfs) < 2:
        raise StatisticsError(
            f"only {len(population.frfs)} of {n_subjects} simulated subjects survived: "
            f"{population.failures}"
        )
    provenance = {
        "source": "surrogate",
        "seed": int(seed),
        "n_requested": int(n_subjects),
        "failures": population.failures,
        "generator": sim_config.to_dict(),
    }
    return fit_reference(population.frfs, population.weights, provenance)
