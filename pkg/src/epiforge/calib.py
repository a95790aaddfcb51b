"""Calibration targets from surveillance data and transmissibility fitting."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DataError, NumericError
from .netgen import ContactNetwork
from .simcore import (INCUBATION_DEFAULT, INFECTIOUS_DEFAULT, DiseaseParams, DurationDistribution,
                      VaccineSchedule, run_simulation)

log = logging.getLogger(__name__)

SEASON_WEEKS = 52
SEASON_START_EW = 40

TAU_LOWER = 1e-8
TAU_UPPER = 1e-2


def ew_to_sw(ew: int) -> int:
    """Epidemiological week to seasonal week (ew 40 is sw 1)."""
    if int(ew) != ew or not 1 <= ew <= SEASON_WEEKS:
        raise DataError(f"epidemiological week must be in [1, {SEASON_WEEKS}], got {ew}")
    ew = int(ew)
    return ew - (SEASON_START_EW - 1) if ew >= SEASON_START_EW else ew + SEASON_WEEKS - SEASON_START_EW + 1


def sw_to_ew(sw: int) -> int:
    if int(sw) != sw or not 1 <= sw <= SEASON_WEEKS:
        raise DataError(f"seasonal week must be in [1, {SEASON_WEEKS}], got {sw}")
    sw = int(sw)
    ew = sw + SEASON_START_EW - 1
    return ew if ew <= SEASON_WEEKS else ew - SEASON_WEEKS


@dataclass
class SurveillanceSeries:
    region: str
    season: str
    weekly_counts: np.ndarray
    population: int
    surveillance_ratio: float = 1.0

    def __post_init__(self):
        self.weekly_counts = np.asarray(self.weekly_counts, dtype=float)
        if self.weekly_counts.ndim != 1 or self.weekly_counts.size != SEASON_WEEKS:
            raise DataError(f"{self.region}/{self.season}: need {SEASON_WEEKS} weekly counts, "
                            f"got {self.weekly_counts.size}")
        if np.any(self.weekly_counts < 0) or not np.all(np.isfinite(self.weekly_counts)):
            raise DataError(f"{self.region}/{self.season}: counts must be finite and nonnegative")
        if self.population <= 0:
            raise ConfigError(f"{self.region}: population must be positive")


@dataclass
class CalibrationSample:
    region: str
    season: str
    attack_rate: float
    initial_cases: float

    def __post_init__(self):
        if not 0.0 <= self.attack_rate <= 1.0:
            raise DataError(f"attack rate {self.attack_rate} outside [0, 1]")


def scale_surveillance(series: SurveillanceSeries) -> np.ndarray:
    """Reported counts divided by the surveillance ratio."""
    ratio = series.surveillance_ratio
    if not ratio > 0:
        raise ConfigError(f"{series.region}: surveillance ratio must be positive, got {ratio}")
    return series.weekly_counts / ratio


def attack_rate(curve, population: int) -> float:
    if population <= 0:
        raise ConfigError("population must be positive")
    ar = float(np.sum(curve)) / population
    if ar > 1.0:
        warnings.warn(f"attack rate {ar:.4f} exceeds 1; clamped", RuntimeWarning, stacklevel=2)
        ar = 1.0
    return max(ar, 0.0)


def collect_samples(target_region: str, series: list[SurveillanceSeries]) -> list[CalibrationSample]:
    """One (attack rate, initial cases) observation per region-season.

    The target region's series come first, the neighbours follow in input order.
    """
    if not series:
        raise ConfigError("no surveillance series given")
    ordered = sorted(series, key=lambda s: s.region != target_region)
    out = []
    for s in ordered:
        scaled = scale_surveillance(s)
        out.append(CalibrationSample(s.region, s.season, attack_rate(scaled, s.population), float(scaled[0])))
    return out


def rescale_to_network(samples: list[CalibrationSample], populations: dict, network_size: int):
    """Express initial case counts relative to a (smaller) simulation population."""
    out = []
    for s in samples:
        frac = s.initial_cases / populations[s.region]
        out.append(CalibrationSample(s.region, s.season, s.attack_rate, frac * network_size))
    return out


# --- Nelder-Mead -----------------------------------------------------------

@dataclass
class NelderMeadOptions:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    tol: float = 1e-14
    max_iter: int = 1000
    xtol: float = 1e-8
    initial_step: float | None = None


@dataclass
class NelderMeadResult:
    x: np.ndarray | float
    fun: float
    iterations: int
    evaluations: int
    converged: bool


def nelder_mead(objective, x0, options: NelderMeadOptions | None = None, **kwargs) -> NelderMeadResult:
    """Minimize ``objective`` with the Nelder-Mead downhill simplex.

    ``x0`` may be a scalar or a vector; ``result.x`` has the same shape.
    Iteration stops once ``max(f) - min(f)`` over the simplex falls below
    ``tol`` and the simplex is no wider than ``xtol`` in any coordinate, or
    after ``max_iter`` iterations. Keyword arguments override
    fields of ``options``.
    """
    opts = options or NelderMeadOptions()
    if kwargs:
        opts = NelderMeadOptions(**{**asdict(opts), **kwargs})
    scalar = np.ndim(x0) == 0
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n = x0.size

    def f(x):
        return float(objective(x[0] if scalar else x.copy()))

    simplex = np.empty((n + 1, n))
    simplex[0] = x0
    for i in range(n):
        pt = x0.copy()
        if opts.initial_step is not None:
            pt[i] += opts.initial_step
        else:
            pt[i] = pt[i] * 1.05 if pt[i] != 0 else 0.00025
        simplex[i + 1] = pt
    fvals = np.array([f(p) for p in simplex])
    evals = n + 1
    if not np.all(np.isfinite(fvals)):
        raise NumericError("objective is not finite at the initial simplex")

    alpha, gamma, rho, sigma = opts.reflection, opts.expansion, opts.contraction, opts.shrink
    it = 0
    converged = False
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if fvals[-1] - fvals[0] < opts.tol and np.ptp(simplex, axis=0).max() <= opts.xtol:
            converged = True
            break
        if it >= opts.max_iter:
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = f(xr)
        evals += 1
        if fvals[0] <= fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = f(xe)
            evals += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + rho * (xr - centroid)     # outside contraction
            fc = f(xc)
            evals += 1
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + rho * (worst - centroid)  # inside contraction
            fc = f(xc)
            evals += 1
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
        fvals[1:] = [f(p) for p in simplex[1:]]
        evals += n
    best = simplex[0]
    return NelderMeadResult(best[0] if scalar else best.copy(), float(fvals[0]), it, evals, converged)


# --- transmissibility calibration ------------------------------------------

@dataclass
class TauCalibration:
    tau: float
    residual: float
    achieved_attack_rate: float
    low_confidence: bool
    evaluations: int = 0


def mean_attack_rate(network: ContactNetwork, params: DiseaseParams, weeks: int, seeds) -> float:
    return float(np.mean([run_simulation(network, params, weeks, s).state.sum() / network.N
                          for s in seeds]))


def replicate_seeds(seed: int, replicates: int) -> list[int]:
    return [rngmod.mix_seed(seed, rngmod.REPLICATE, i) for i in range(replicates)]


def calibrate_tau(target_ar: float, network: ContactNetwork, p_E: DurationDistribution = INCUBATION_DEFAULT,
                  p_I: DurationDistribution = INFECTIOUS_DEFAULT, N_I: int = 1,
                  vaccine: VaccineSchedule | None = None, replicates: int = 5, seed: int = 0,
                  weeks: int = SEASON_WEEKS, tau0: float = 5e-5, max_iter: int = 60,
                  tol: float = 1e-5) -> TauCalibration:
    """Find tau whose mean simulated attack rate matches ``target_ar``.

    The objective averages ``replicates`` runs with fixed seeds, so it is
    deterministic. The search runs in log(tau), clamped to
    [TAU_LOWER, TAU_UPPER].
    """
    if not 0.0 <= target_ar <= 1.0:
        raise ConfigError(f"target attack rate must be in [0, 1], got {target_ar}")
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    seeds = replicate_seeds(seed, replicates)
    base = DiseaseParams(tau=tau0, N_I=int(N_I), p_E=p_E, p_I=p_I, vaccine=vaccine)
    cache: dict[float, float] = {}

    def ar_at(log_tau: float) -> float:
        tau = float(np.exp(np.clip(log_tau, math.log(TAU_LOWER), math.log(TAU_UPPER))))
        if tau not in cache:
            cache[tau] = mean_attack_rate(network, base.with_tau(tau), weeks, seeds)
        return cache[tau]

    if target_ar == 0.0:
        ar = ar_at(math.log(TAU_LOWER))
        return TauCalibration(TAU_LOWER, ar, ar, ar > 0.1, 1)

    res = nelder_mead(lambda lt: abs(ar_at(lt) - target_ar), math.log(tau0),
                      initial_step=1.0, tol=tol, xtol=1e-3, max_iter=max_iter)
    tau = float(np.exp(np.clip(res.x, math.log(TAU_LOWER), math.log(TAU_UPPER))))
    achieved = ar_at(math.log(tau))
    residual = abs(achieved - target_ar)
    if residual > 0.1:
        log.warning("tau calibration for ar=%.4f left residual %.4f (low confidence)", target_ar, residual)
    return TauCalibration(tau, residual, achieved, residual > 0.1, len(cache))


# --- surveillance input ----------------------------------------------------

def read_ew_csv(path: str) -> np.ndarray:
    """Read an ``ew,count`` CSV into a length-52 seasonal-week vector."""
    counts = np.zeros(SEASON_WEEKS)
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"ew", "count"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns ew,count")
        for row in reader:
            ew = int(row["ew"])
            if ew == 53:
                log.warning("%s: dropping epidemiological week 53", path)
                continue
            sw = ew_to_sw(ew)
            if sw in seen:
                raise DataError(f"{path}: duplicate week ew={ew}")
            seen.add(sw)
            counts[sw - 1] = float(row["count"])
    if len(seen) != SEASON_WEEKS:
        missing = sorted(set(range(1, SEASON_WEEKS + 1)) - seen)
        raise DataError(f"{path}: missing seasonal weeks {missing[:5]}{'...' if len(missing) > 5 else ''}")
    return counts


def load_surveillance(directory: str):
    """Load ``metadata.json`` plus ``<region>__<season>.csv`` files.

    Returns ``(target_region, series)`` where series covers the target and
    its listed neighbours.
    """
    meta_path = os.path.join(directory, "metadata.json")
    if not os.path.isdir(directory):
        raise DataError(f"surveillance directory not found: {directory}")
    if not os.path.exists(meta_path):
        raise DataError(f"surveillance metadata not found: {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    target = meta["target"]
    regions = [target] + list(meta.get("neighbors", []))
    info = meta["regions"]
    series = []
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".csv") or "__" not in name:
            continue
        region, season = name[:-4].split("__", 1)
        if region not in regions:
            continue
        if region not in info:
            raise DataError(f"no metadata for region {region}")
        series.append(SurveillanceSeries(region, season, read_ew_csv(os.path.join(directory, name)),
                                         int(info[region]["population"]),
                                         float(info[region].get("surveillance_ratio", 1.0))))
    if not series:
        raise DataError(f"{directory}: no <region>__<season>.csv files for {regions}")
    return target, series


def write_ew_csv(path: str, sw_counts) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ew", "count"])
        for sw, c in enumerate(sw_counts, start=1):
            w.writerow([sw_to_ew(sw), repr(float(c))])


def save_samples(path: str, samples: list[CalibrationSample], taus: list[TauCalibration],
                 extra: dict | None = None) -> None:
    doc = {"samples": [{**asdict(s), "tau": t.tau, "residual": t.residual,
                        "low_confidence": t.low_confidence} for s, t in zip(samples, taus)]}
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_samples(path: str):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"samples file not found: {path}") from None
    samples = [CalibrationSample(d["region"], d["season"], d["attack_rate"], d["initial_cases"])
               for d in doc["samples"]]
    taus = [d["tau"] for d in doc["samples"]]
    return samples, taus
