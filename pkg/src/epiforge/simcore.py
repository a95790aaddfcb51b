"""Discrete-time agent-based SEIR simulation on a contact network.

One call of :func:`step_day` advances every person by one day:

1. every infectious person tries to infect each susceptible neighbour,
   using the states at the start of the day (synchronous update);
2. existing E/I counters are decremented and expired ones move on
   (E -> I with a fresh infectious period, I -> R);
3. the newly exposed enter E with an incubation period drawn from ``p_E``.

Transmission draws come from :func:`epiforge.rng.hash_uniform` keyed by
``(seed, day, source, target)``, and each person's incubation/infectious
periods are keyed by ``(seed, person)``. Runs are therefore a pure function
of their inputs, and runs that differ only in ``tau`` share random numbers.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DataError, ParameterError
from .netgen import ContactNetwork

log = logging.getLogger(__name__)

DAYS_PER_WEEK = 7


class HealthState(IntEnum):
    S = 0
    E = 1
    I = 2  # noqa: E741
    R = 3


@dataclass(frozen=True)
class DurationDistribution:
    support: tuple
    probabilities: tuple

    def __post_init__(self):
        sup = tuple(int(s) for s in self.support)
        prob = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probabilities", prob)
        if not sup or len(sup) != len(prob):
            raise ConfigError("duration support and probabilities must be non-empty and aligned")
        if len(set(sup)) != len(sup) or min(sup) < 1:
            raise ConfigError(f"duration support must be distinct days >= 1, got {sup}")
        if any(p < 0 or p > 1 for p in prob) or abs(sum(prob) - 1.0) > 1e-9:
            raise ConfigError(f"duration probabilities must sum to 1, got {prob}")
        object.__setattr__(self, "_cdf", np.cumsum(prob))

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) to durations by inverse CDF."""
        idx = np.searchsorted(self._cdf, u, side="right")
        idx = np.minimum(idx, len(self.support) - 1)
        return np.asarray(self.support, dtype=np.int64)[idx]

    def mean(self) -> float:
        return float(np.dot(self.support, self.probabilities))

    def to_dict(self) -> dict:
        return {str(s): p for s, p in zip(self.support, self.probabilities)}

    @classmethod
    def from_dict(cls, d) -> "DurationDistribution":
        if isinstance(d, DurationDistribution):
            return d
        items = sorted((int(k), float(v)) for k, v in d.items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))


INCUBATION_DEFAULT = DurationDistribution((1, 2, 3), (0.3, 0.5, 0.2))
INFECTIOUS_DEFAULT = DurationDistribution((3, 4, 5, 6), (0.3, 0.4, 0.2, 0.1))


def _int_keyed(d) -> dict:
    return {int(k): float(v) for k, v in (d or {}).items()}


@dataclass(frozen=True)
class VaccineSchedule:
    """Weekly vaccine roll-out. Keys of ``weekly_coverage`` are seasonal weeks (1-based)."""

    weekly_coverage: dict = field(default_factory=dict)
    efficacy: float = 0.5
    compliance: float = 1.0
    label: str = ""

    def __post_init__(self):
        cov = _int_keyed(self.weekly_coverage)
        object.__setattr__(self, "weekly_coverage", cov)
        if any(not 0.0 <= c <= 1.0 for c in cov.values()) or sum(cov.values()) > 1.0 + 1e-12:
            raise ConfigError("vaccine coverages must lie in [0, 1] and sum to at most 1")
        if not 0.0 <= self.efficacy <= 1.0 or not 0.0 <= self.compliance <= 1.0:
            raise ConfigError("vaccine efficacy and compliance must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"weekly_coverage": {str(k): v for k, v in sorted(self.weekly_coverage.items())},
                "efficacy": self.efficacy, "compliance": self.compliance, "label": self.label}

    @classmethod
    def from_dict(cls, d) -> "VaccineSchedule":
        if isinstance(d, VaccineSchedule):
            return d
        return cls(**d)


@dataclass(frozen=True)
class Scenario:
    """What-if modifier: per seasonal week (1-based) multiplier on ``tau``."""

    tau_multipliers: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        mult = _int_keyed(self.tau_multipliers)
        if any(m < 0 for m in mult.values()):
            raise ConfigError("scenario multipliers must be nonnegative")
        object.__setattr__(self, "tau_multipliers", mult)

    def multiplier(self, sw: int) -> float:
        return self.tau_multipliers.get(sw, 1.0)

    def to_dict(self) -> dict:
        return {"tau_multipliers": {str(k): v for k, v in sorted(self.tau_multipliers.items())},
                "label": self.label}

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        if isinstance(d, Scenario):
            return d
        return cls(**d)


@dataclass(frozen=True)
class DiseaseParams:
    tau: float
    N_I: int
    p_E: DurationDistribution = INCUBATION_DEFAULT
    p_I: DurationDistribution = INFECTIOUS_DEFAULT
    vaccine: VaccineSchedule | None = None
    scenario: Scenario | None = None

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if int(self.N_I) != self.N_I or self.N_I < 0:
            raise ParameterError(f"N_I must be a nonnegative integer, got {self.N_I}")
        object.__setattr__(self, "N_I", int(self.N_I))

    def with_tau(self, tau: float) -> "DiseaseParams":
        return replace(self, tau=float(tau))

    def to_dict(self) -> dict:
        return {"tau": self.tau, "N_I": self.N_I,
                "p_E": self.p_E.to_dict(), "p_I": self.p_I.to_dict(),
                "vaccine": self.vaccine.to_dict() if self.vaccine else None,
                "scenario": self.scenario.to_dict() if self.scenario else None}

    @classmethod
    def from_dict(cls, d: dict) -> "DiseaseParams":
        try:
            return cls(
                tau=float(d["tau"]), N_I=int(d["N_I"]),
                p_E=DurationDistribution.from_dict(d["p_E"]) if d.get("p_E") else INCUBATION_DEFAULT,
                p_I=DurationDistribution.from_dict(d["p_I"]) if d.get("p_I") else INFECTIOUS_DEFAULT,
                vaccine=VaccineSchedule.from_dict(d["vaccine"]) if d.get("vaccine") else None,
                scenario=Scenario.from_dict(d["scenario"]) if d.get("scenario") else None,
            )
        except KeyError as exc:
            raise ConfigError(f"disease params missing key {exc}") from None


def transmission_probability(tau, w, multiplier=1.0):
    """Per-day infection probability across a contact of ``w`` minutes.

    ``1 - (1 - min(tau * multiplier, 1)) ** w``; works elementwise on arrays.
    """
    p = np.minimum(np.asarray(tau, dtype=float) * multiplier, 1.0)
    with np.errstate(divide="ignore"):
        out = -np.expm1(np.asarray(w, dtype=float) * np.log1p(-p))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class SimState:
    """Mutable per-person simulation state."""

    status: np.ndarray       # HealthState codes, int8
    days_left: np.ndarray    # counter for E and I, 0 otherwise
    vaccinated: np.ndarray   # bool

    @classmethod
    def susceptible(cls, n: int) -> "SimState":
        return cls(np.zeros(n, dtype=np.int8), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=bool))

    def copy(self) -> "SimState":
        return SimState(self.status.copy(), self.days_left.copy(), self.vaccinated.copy())

    def counts(self) -> np.ndarray:
        return np.bincount(self.status, minlength=4)


class Streams:
    """Random sources for one simulation run."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def transmit(self, day, src, dst):
        return rngmod.hash_uniform(self.seed, rngmod.TRANSMIT, day, src, dst)

    def incubation(self, persons):
        return rngmod.hash_uniform(self.seed, rngmod.DURATION_E, persons)

    def infectious(self, persons):
        return rngmod.hash_uniform(self.seed, rngmod.DURATION_I, persons)

    def seeding(self) -> np.random.Generator:
        return rngmod.make_rng(self.seed, rngmod.SEEDING)

    def vaccine(self, week: int) -> np.random.Generator:
        return rngmod.make_rng(self.seed, rngmod.VACCINE, week)


def week_of_day(day: int) -> int:
    """0-based week index of ``day``; seasonal week is this plus one."""
    return day // DAYS_PER_WEEK


def _gather_edges(network: ContactNetwork, sources: np.ndarray):
    ptr = network.adj_ptr
    counts = ptr[sources + 1] - ptr[sources]
    total = int(counts.sum())
    if total == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    starts = np.repeat(ptr[sources] - np.cumsum(counts) + counts, counts)
    pos = starts + np.arange(total)
    return np.repeat(sources, counts), pos


def step_day(state: SimState, network: ContactNetwork, params: DiseaseParams, day: int,
             streams: Streams) -> tuple[SimState, np.ndarray]:
    """Advance one day. Returns the new state and new exposures per county."""
    status = state.status
    new = state.copy()

    infectious = np.flatnonzero(status == HealthState.I)
    exposed = np.empty(0, dtype=np.int64)
    mult = params.scenario.multiplier(week_of_day(day) + 1) if params.scenario else 1.0
    if infectious.size and mult > 0:
        src, pos = _gather_edges(network, infectious)
        dst = network.adj_index[pos]
        sus = status[dst] == HealthState.S
        src, dst, w = src[sus], dst[sus], network.adj_weight[pos][sus]
        if dst.size:
            tau = np.full(dst.size, params.tau)
            if params.vaccine is not None:
                tau[state.vaccinated[dst]] *= 1.0 - params.vaccine.efficacy
            p = transmission_probability(tau, w, mult)
            hit = streams.transmit(day, src, dst) < p
            exposed = np.unique(dst[hit])

    active = (status == HealthState.E) | (status == HealthState.I)
    new.days_left[active] -= 1
    done = active & (new.days_left == 0)
    to_i = np.flatnonzero(done & (status == HealthState.E))
    to_r = done & (status == HealthState.I)
    new.status[to_r] = HealthState.R
    if to_i.size:
        new.status[to_i] = HealthState.I
        new.days_left[to_i] = params.p_I.quantile(streams.infectious(to_i))
    if exposed.size:
        new.status[exposed] = HealthState.E
        new.days_left[exposed] = params.p_E.quantile(streams.incubation(exposed))

    per_county = np.bincount(network.county[exposed], minlength=network.K)
    return new, per_county


def apply_vaccine_week(state: SimState, schedule: VaccineSchedule | None, week: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Vaccinate this seasonal week's quota of not-yet-vaccinated persons.

    Returns the updated flag array (a new array; ``state`` is not touched).
    """
    flags = state.vaccinated.copy()
    if schedule is None:
        return flags
    coverage = schedule.weekly_coverage.get(week, 0.0)
    n = flags.size
    quota = math.floor(coverage * n * schedule.compliance + 1e-9)
    if quota <= 0:
        return flags
    pool = np.flatnonzero(~flags)
    if quota >= pool.size:
        flags[pool] = True
    else:
        flags[rng.choice(pool, size=quota, replace=False)] = True
    return flags


def seed_infections(network: ContactNetwork, params: DiseaseParams, streams: Streams) -> SimState:
    n = network.N
    if params.N_I > n:
        raise ParameterError(f"N_I={params.N_I} exceeds population N={n}")
    state = SimState.susceptible(n)
    if params.N_I:
        seeds = np.sort(streams.seeding().choice(n, size=params.N_I, replace=False))
        state.status[seeds] = HealthState.I
        state.days_left[seeds] = params.p_I.quantile(streams.infectious(seeds))
    return state


class Epicurve:
    """Weekly incidence, shape ``(weeks, K + 1)``; column 0 is the state total."""

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] < 2:
            raise DataError(f"epicurve must be weeks x (K+1) with K >= 1, got shape {values.shape}")
        self.values = values

    @classmethod
    def from_counties(cls, counties) -> "Epicurve":
        counties = np.asarray(counties, dtype=np.float64)
        return cls(np.column_stack([counties.sum(axis=1), counties]))

    @property
    def weeks(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1] - 1

    @property
    def state(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def counties(self) -> np.ndarray:
        return self.values[:, 1:]

    def spatially_consistent(self) -> bool:
        return bool(np.array_equal(self.values[:, 0], self.values[:, 1:].sum(axis=1)))

    def __eq__(self, other):
        if not isinstance(other, Epicurve):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"Epicurve(weeks={self.weeks}, K={self.K}, total={self.values[:, 0].sum():g})"


def run_simulation(network: ContactNetwork, params: DiseaseParams, weeks: int, seed: int,
                   observer=None) -> Epicurve:
    """Simulate ``7 * weeks`` days and aggregate new S->E events weekly by county.

    ``observer(day, state)`` is called with the initial state (day -1) and
    after every simulated day; it must not modify the state.
    """
    if weeks < 1:
        raise ConfigError("weeks must be >= 1")
    streams = Streams(seed)
    state = seed_infections(network, params, streams)
    if observer is not None:
        observer(-1, state)
    counts = np.zeros((weeks, network.K), dtype=np.int64)
    for day in range(weeks * DAYS_PER_WEEK):
        wk = week_of_day(day)
        if params.vaccine is not None and day % DAYS_PER_WEEK == 0:
            state.vaccinated = apply_vaccine_week(state, params.vaccine, wk + 1, streams.vaccine(wk))
        if params.N_I == 0 or not np.any((state.status == HealthState.E) | (state.status == HealthState.I)):
            if observer is None:
                break
        state, new_cases = step_day(state, network, params, day, streams)
        counts[wk] += new_cases
        if observer is not None:
            observer(day, state)
    return Epicurve.from_counties(counts)


def attack_rate_of(curve: Epicurve, population: int) -> float:
    return float(curve.state.sum()) / population


def save_epicurve(curve: Epicurve, path: str, first_week: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["week", "state"] + [f"county_{c}" for c in range(1, curve.K + 1)])
        for t, row in enumerate(curve.values):
            w.writerow([first_week + t] + [repr(float(x)) for x in row])


def load_epicurve(path: str) -> Epicurve:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except FileNotFoundError:
        raise DataError(f"epicurve file not found: {path}") from None
    if header[:2] != ["week", "state"]:
        raise DataError(f"{path}: expected header week,state,county_1..")
    if not rows:
        raise DataError(f"{path}: no rows")
    try:
        vals = np.array([[float(x) if x not in ("", "NA") else np.nan for x in r[1:]] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if vals.shape[1] == 1:
        # state-only series, e.g. surveillance history
        vals = np.column_stack([vals, vals])
    return Epicurve(vals)
