"""Marginal distributions over simulation parameters.

Transmissibility and initial case counts are fitted by trying each
candidate family and keeping the one whose one-sample Kolmogorov-Smirnov
test gives the largest p-value. Incubation/infectious periods are fixed
discrete laws and vaccine schedules are drawn uniformly from a list.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError, DegenerateDataError, InsufficientDataError
from .simcore import (INCUBATION_DEFAULT, INFECTIOUS_DEFAULT, DiseaseParams, DurationDistribution,
                      VaccineSchedule)

MIN_KS_SAMPLES = 5
KS_SERIES_TERMS = 100


def kolmogorov_sf(lam: float, terms: int = KS_SERIES_TERMS) -> float:
    """Survival function of the Kolmogorov distribution.

    ``Q(lam) = 2 * sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lam^2)``, truncated.
    The alternating series is useless near zero, where Q is 1 to double
    precision anyway.
    """
    if lam < 0.18:
        return 1.0
    j = np.arange(1, terms + 1)
    q = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j * j * lam * lam))
    return float(min(max(q, 0.0), 1.0))


def ks_statistic(samples, cdf: Callable) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n), 0.0))


def ks_test(samples, cdf: Callable) -> tuple[float, float]:
    """One-sample KS test against a continuous reference CDF.

    Returns ``(D, p)``. The p-value uses the asymptotic Kolmogorov law at
    ``(sqrt(n) + 0.12 + 0.11 / sqrt(n)) * D``; this small-sample correction
    is decent for n >= 5 but only really trustworthy from n ~ 35 upward.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n < MIN_KS_SAMPLES:
        raise InsufficientDataError(f"KS test needs at least {MIN_KS_SAMPLES} samples, got {n}")
    d = ks_statistic(samples, cdf)
    sq = math.sqrt(n)
    return d, kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)


def _normal_cdf(mean: float, sd: float):
    def cdf(x):
        z = (np.asarray(x, dtype=float) - mean) / (sd * math.sqrt(2.0))
        return 0.5 * (1.0 + np.vectorize(math.erf, otypes=[float])(z))
    return cdf


def _uniform_cdf(lo: float, hi: float):
    def cdf(x):
        return np.clip((np.asarray(x, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return cdf


@dataclass
class Marginal:
    """One parameter's marginal law.

    ``kind`` is one of ``normal`` (mean, sd), ``uniform`` (lo, hi),
    ``discrete_uniform`` (items) or ``fixed`` (value).
    """

    kind: str
    params: dict = field(default_factory=dict)
    p_value: float | None = None

    def __post_init__(self):
        p = self.params
        if self.kind == "normal":
            if not p.get("sd", 0) > 0:
                raise ConfigError("normal marginal needs sd > 0")
        elif self.kind == "uniform":
            if not p["lo"] < p["hi"]:
                raise ConfigError("uniform marginal needs lo < hi")
        elif self.kind == "discrete_uniform":
            if not p.get("items"):
                raise ConfigError("discrete uniform marginal needs at least one item")
        elif self.kind != "fixed":
            raise ConfigError(f"unknown marginal kind {self.kind!r}")

    @classmethod
    def normal(cls, mean, sd, p_value=None):
        return cls("normal", {"mean": float(mean), "sd": float(sd)}, p_value)

    @classmethod
    def uniform(cls, lo, hi, p_value=None):
        return cls("uniform", {"lo": float(lo), "hi": float(hi)}, p_value)

    @classmethod
    def fixed(cls, value):
        return cls("fixed", {"value": value})

    @classmethod
    def discrete_uniform(cls, items):
        return cls("discrete_uniform", {"items": list(items)})

    def cdf(self):
        if self.kind == "normal":
            return _normal_cdf(self.params["mean"], self.params["sd"])
        if self.kind == "uniform":
            return _uniform_cdf(self.params["lo"], self.params["hi"])
        raise ConfigError(f"{self.kind} marginal has no continuous CDF")

    def sample(self, rng: np.random.Generator):
        if self.kind == "normal":
            return float(rng.normal(self.params["mean"], self.params["sd"]))
        if self.kind == "uniform":
            return float(rng.uniform(self.params["lo"], self.params["hi"]))
        if self.kind == "discrete_uniform":
            items = self.params["items"]
            return items[int(rng.integers(len(items)))]
        return self.params["value"]

    def to_dict(self) -> dict:
        def enc(v):
            return v.to_dict() if hasattr(v, "to_dict") else v
        params = {k: ([enc(i) for i in v] if k == "items" else enc(v)) for k, v in self.params.items()}
        return {"kind": self.kind, "params": params, "p_value": self.p_value}


CANDIDATES: dict[str, Callable[[np.ndarray], Marginal]] = {}


def candidate(name):
    def register(fn):
        CANDIDATES[name] = fn
        return fn
    return register


@candidate("normal")
def _fit_normal(x: np.ndarray) -> Marginal:
    return Marginal.normal(x.mean(), x.std(ddof=1))


@candidate("uniform")
def _fit_uniform(x: np.ndarray) -> Marginal:
    lo, hi = x.min(), x.max()
    pad = 0.01 * (hi - lo)
    return Marginal.uniform(lo - pad, hi + pad)


def fit_marginal(samples, candidates=None) -> Marginal:
    """Fit every candidate family and keep the best by KS p-value.

    Ties go to the earlier candidate in ``candidates`` (default: normal,
    then uniform).
    """
    x = np.asarray(samples, dtype=float)
    if x.size < MIN_KS_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_KS_SAMPLES} samples to fit, got {x.size}")
    if np.all(x == x[0]):
        raise DegenerateDataError("all samples are identical; widen the sample set")
    best = None
    for name in candidates or CANDIDATES:
        m = CANDIDATES[name](x)
        _, p = ks_test(x, m.cdf())
        m.p_value = p
        if best is None or p > best.p_value:
            best = m
    return best


@dataclass
class ParamSpace:
    p_E: Marginal
    p_I: Marginal
    tau: Marginal
    N_I: Marginal
    vaccine: Marginal

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in ("p_E", "p_I", "tau", "N_I", "vaccine")}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSpace":
        def dec(name, m):
            kind, params = m["kind"], dict(m["params"])
            if name in ("p_E", "p_I"):
                params["value"] = DurationDistribution.from_dict(params["value"])
            if name == "vaccine":
                params["items"] = [VaccineSchedule.from_dict(i) if i else None for i in params["items"]]
            return Marginal(kind, params, m.get("p_value"))
        try:
            return cls(**{k: dec(k, d[k]) for k in ("p_E", "p_I", "tau", "N_I", "vaccine")})
        except KeyError as exc:
            raise ConfigError(f"parameter space missing {exc}") from None


def build_space(samples, tau_samples, schedules) -> ParamSpace:
    """Assemble a parameter space from calibration outputs.

    ``samples`` are CalibrationSamples whose ``initial_cases`` feed the N_I
    fit. An empty ``schedules`` list means no vaccination.
    """
    if len(samples) == 0 or len(tau_samples) == 0:
        raise DataError("need calibration samples and tau samples to build a parameter space")
    return ParamSpace(
        p_E=Marginal.fixed(INCUBATION_DEFAULT),
        p_I=Marginal.fixed(INFECTIOUS_DEFAULT),
        tau=fit_marginal(tau_samples),
        N_I=fit_marginal([s.initial_cases for s in samples]),
        vaccine=Marginal.discrete_uniform(list(schedules) or [None]),
    )


def sample_params(space: ParamSpace, rng: np.random.Generator, population: int | None = None,
                  max_redraws: int = 10000) -> DiseaseParams:
    """Draw one DiseaseParams; tau is redrawn until positive, N_I is rounded and clamped."""
    p_E = space.p_E.sample(rng)
    p_I = space.p_I.sample(rng)
    for _ in range(max_redraws):
        tau = space.tau.sample(rng)
        if tau > 0:
            break
    else:
        raise ConfigError("tau marginal produced no positive value")
    n_i = max(0, int(round(space.N_I.sample(rng))))
    if population is not None:
        n_i = min(n_i, population)
    return DiseaseParams(tau=tau, N_I=n_i, p_E=p_E, p_I=p_I, vaccine=space.vaccine.sample(rng))


def save_space(space: ParamSpace, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(space.to_dict(), fh, indent=1, sort_keys=True)


def load_space(path: str) -> ParamSpace:
    try:
        with open(path) as fh:
            return ParamSpace.from_dict(json.load(fh))
    except FileNotFoundError:
        raise DataError(f"parameter space not found: {path}") from None
