"""Synthetic populations and weighted contact networks.

The population is split into ``K`` counties. Inside a county people are
grouped into households; every household is a clique of long contacts.
On top of that each person gets a number of shorter "external" contacts,
most of them in the home county and a fraction ``cross_county_mix`` in a
different one. Contact weights are durations in minutes per day.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DataError


class Person(NamedTuple):
    id: int
    county: int
    household: int


class ContactEdge(NamedTuple):
    u: int
    v: int
    weight: float


@dataclass(frozen=True)
class WeightDistribution:
    """Contact duration law. ``kind`` is ``"constant"`` or ``"uniform"``."""

    kind: str = "constant"
    value: float = 480.0
    low: float = 30.0
    high: float = 240.0

    def validate(self) -> None:
        if self.kind == "constant":
            if not self.value > 0:
                raise ConfigError(f"constant weight must be positive, got {self.value}")
        elif self.kind == "uniform":
            if not 0 < self.low <= self.high:
                raise ConfigError(f"uniform weight needs 0 < low <= high, got [{self.low}, {self.high}]")
        else:
            raise ConfigError(f"unknown weight distribution {self.kind!r}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, float(self.value))
        if self.low == self.high:
            return np.full(size, float(self.low))
        # uniform on (low, high]: never zero even if low were tiny
        return self.high - (self.high - self.low) * rng.random(size)

    @classmethod
    def from_dict(cls, d) -> "WeightDistribution":
        if isinstance(d, WeightDistribution):
            return d
        return cls(**d)


def _home_default() -> WeightDistribution:
    return WeightDistribution("constant", value=480.0)


def _external_default() -> WeightDistribution:
    return WeightDistribution("uniform", low=30.0, high=240.0)


@dataclass(frozen=True)
class NetworkConfig:
    county_sizes: tuple = (100,)
    mean_household_size: float = 3.0
    household_size_distribution: str = "fixed"
    mean_external_degree: float = 8.0
    home_weight: WeightDistribution = field(default_factory=_home_default)
    external_weight: WeightDistribution = field(default_factory=_external_default)
    cross_county_mix: float = 0.1

    @property
    def K(self) -> int:
        return len(self.county_sizes)

    def validate(self) -> None:
        if len(self.county_sizes) < 1:
            raise ConfigError("network needs at least one county")
        for s in self.county_sizes:
            if int(s) != s or s < 1:
                raise ConfigError(f"county sizes must be positive integers, got {s}")
        if not self.mean_household_size >= 1:
            raise ConfigError("mean_household_size must be >= 1")
        if self.household_size_distribution not in ("fixed", "poisson"):
            raise ConfigError(f"unknown household_size_distribution {self.household_size_distribution!r}")
        if self.mean_external_degree < 0:
            raise ConfigError("mean_external_degree must be >= 0")
        if not 0.0 <= self.cross_county_mix <= 1.0:
            raise ConfigError("cross_county_mix must lie in [0, 1]")
        self.home_weight.validate()
        self.external_weight.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["county_sizes"] = [int(s) for s in self.county_sizes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if "K" in d:
            k = d.pop("K")
            if "county_sizes" in d and len(d["county_sizes"]) != k:
                raise ConfigError(f"K={k} but {len(d['county_sizes'])} county sizes given")
        if "county_sizes" in d:
            d["county_sizes"] = tuple(d["county_sizes"])
        for key in ("home_weight", "external_weight"):
            if key in d:
                d[key] = WeightDistribution.from_dict(d[key])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad network config: {exc}") from None
        cfg.validate()
        return cfg

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class ContactNetwork:
    """Immutable undirected weighted contact network.

    Persons and edges are stored as parallel numpy arrays. Edges are kept
    with ``u < v`` and sorted lexicographically; a symmetric CSR view is
    built once for neighbour queries.
    """

    def __init__(self, county, household, edge_u, edge_v, edge_w, K=None, config_hash=""):
        county = np.asarray(county, dtype=np.int64)
        household = np.asarray(household, dtype=np.int64)
        u = np.asarray(edge_u, dtype=np.int64)
        v = np.asarray(edge_v, dtype=np.int64)
        w = np.asarray(edge_w, dtype=np.float64)
        n = county.size
        if K is None:
            K = int(county.max()) + 1 if n else 0
        if household.size != n or not (u.size == v.size == w.size):
            raise DataError("inconsistent network array lengths")
        if n and (county.min() < 0 or county.max() >= K):
            raise DataError("county index out of range")
        if u.size:
            if u.min() < 0 or v.min() < 0 or max(u.max(), v.max()) >= n:
                raise DataError("edge endpoint is not a valid person id")
            if np.any(u == v):
                raise DataError("self loops are not allowed")
            if np.any(w <= 0):
                raise DataError("edge weights must be positive")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        order = np.lexsort((hi, lo))
        lo, hi, w = lo[order], hi[order], w[order]
        if lo.size > 1:
            key = lo * n + hi
            if np.any(key[1:] == key[:-1]):
                raise DataError("duplicate edge")
        self.county = county
        self.household = household
        self.edge_u, self.edge_v, self.edge_w = lo, hi, w
        self.K = int(K)
        self.config_hash = config_hash
        self.county_populations = np.bincount(county, minlength=self.K).astype(np.int64)

        # symmetric CSR, neighbours ascending
        src = np.concatenate([lo, hi])
        dst = np.concatenate([hi, lo])
        ww = np.concatenate([w, w])
        order = np.lexsort((dst, src))
        self.adj_index = dst[order]
        self.adj_weight = ww[order]
        self.adj_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=self.adj_ptr[1:])
        for arr in (self.county, self.household, self.edge_u, self.edge_v, self.edge_w,
                    self.county_populations, self.adj_index, self.adj_weight, self.adj_ptr):
            arr.flags.writeable = False

    @property
    def N(self) -> int:
        return int(self.county.size)

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.adj_ptr)

    @property
    def persons(self) -> list[Person]:
        return [Person(i, int(c), int(h)) for i, (c, h) in enumerate(zip(self.county, self.household))]

    @property
    def edges(self) -> list[ContactEdge]:
        return [ContactEdge(int(a), int(b), float(c)) for a, b, c in zip(self.edge_u, self.edge_v, self.edge_w)]

    def county_roster(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.county == c)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContactNetwork):
            return NotImplemented
        return (self.K == other.K
                and np.array_equal(self.county, other.county)
                and np.array_equal(self.household, other.household)
                and np.array_equal(self.edge_u, other.edge_u)
                and np.array_equal(self.edge_v, other.edge_v)
                and np.array_equal(self.edge_w, other.edge_w))

    def __repr__(self) -> str:
        return f"ContactNetwork(N={self.N}, K={self.K}, edges={self.edge_u.size})"


def neighbors(network: ContactNetwork, v: int) -> list[tuple[int, float]]:
    """Neighbours of ``v`` with contact weights, ascending by neighbour id."""
    if not 0 <= v < network.N:
        raise IndexError(f"person id {v} out of range [0, {network.N})")
    lo, hi = network.adj_ptr[v], network.adj_ptr[v + 1]
    return [(int(j), float(w)) for j, w in zip(network.adj_index[lo:hi], network.adj_weight[lo:hi])]


def _household_sizes(n: int, cfg: NetworkConfig, rng: np.random.Generator) -> list[int]:
    sizes = []
    left = n
    target = max(1, int(round(cfg.mean_household_size)))
    while left > 0:
        if cfg.household_size_distribution == "fixed":
            s = target
        else:
            s = 1 + int(rng.poisson(cfg.mean_household_size - 1.0))
        s = min(s, left)
        sizes.append(s)
        left -= s
    return sizes


def generate_network(config: NetworkConfig | dict, seed: int) -> ContactNetwork:
    """Build a reproducible two-layer (household + external) contact network."""
    if isinstance(config, dict):
        config = NetworkConfig.from_dict(config)
    config.validate()
    rng = rngmod.make_rng(seed, rngmod.NETWORK)
    sizes = np.array([int(s) for s in config.county_sizes], dtype=np.int64)
    K = sizes.size
    N = int(sizes.sum())
    county = np.repeat(np.arange(K), sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    household = np.empty(N, dtype=np.int64)
    hu, hv = [], []
    next_hh = 0
    for c in range(K):
        start = offsets[c]
        for s in _household_sizes(int(sizes[c]), config, rng):
            members = np.arange(start, start + s)
            household[members] = next_hh
            if s > 1:
                iu, iv = np.triu_indices(s, k=1)
                hu.append(members[iu])
                hv.append(members[iv])
            next_hh += 1
            start += s
    hu = np.concatenate(hu) if hu else np.empty(0, dtype=np.int64)
    hv = np.concatenate(hv) if hv else np.empty(0, dtype=np.int64)
    hw = config.home_weight.sample(rng, hu.size)

    m = int(round(N * config.mean_external_degree / 2.0))
    eu = rng.integers(0, N, size=m)
    cross = rng.random(m) < config.cross_county_mix if K > 1 else np.zeros(m, dtype=bool)
    pick = rng.random(m)
    cu = county[eu]
    ev = np.empty(m, dtype=np.int64)
    # within county: uniform over the other members of u's county
    within = ~cross
    n_c = sizes[cu[within]]
    local_u = eu[within] - offsets[cu[within]]
    step = 1 + np.floor(pick[within] * (n_c - 1)).astype(np.int64)
    ev[within] = offsets[cu[within]] + (local_u + step) % n_c
    # across counties: uniform over everyone outside u's county
    if cross.any():
        n_out = N - sizes[cu[cross]]
        idx = np.floor(pick[cross] * n_out).astype(np.int64)
        shift = idx >= offsets[cu[cross]]
        ev[cross] = idx + shift * sizes[cu[cross]]
    ew = config.external_weight.sample(rng, m)
    keep = eu != ev  # only singleton counties can produce a self pair
    eu, ev, ew = eu[keep], ev[keep], ew[keep]

    all_u = np.concatenate([hu, eu])
    all_v = np.concatenate([hv, ev])
    all_w = np.concatenate([hw, ew])
    lo, hi = np.minimum(all_u, all_v), np.maximum(all_u, all_v)
    key = lo * N + hi
    uniq, inverse = np.unique(key, return_inverse=True)
    merged_w = np.bincount(inverse, weights=all_w, minlength=uniq.size)
    return ContactNetwork(county, household, uniq // N, uniq % N, merged_w, K=K,
                          config_hash=config.digest())


def external_edge_mask(network: ContactNetwork) -> np.ndarray:
    """True for edges whose endpoints live in different households."""
    return network.household[network.edge_u] != network.household[network.edge_v]


# --- persistence -----------------------------------------------------------

PERSONS_FILE = "persons.txt"
EDGES_FILE = "edges.txt"


def save_network(network: ContactNetwork, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    header = f"# N={network.N} K={network.K} config={network.config_hash or '-'}\n"
    with open(os.path.join(out_dir, PERSONS_FILE), "w") as fh:
        fh.write(header)
        for i, (c, h) in enumerate(zip(network.county, network.household)):
            fh.write(f"{i} {c} {h}\n")
    with open(os.path.join(out_dir, EDGES_FILE), "w") as fh:
        fh.write(header)
        for a, b, w in zip(network.edge_u, network.edge_v, network.edge_w):
            fh.write(f"{a} {b} {float(w)!r}\n")


def _parse_header(line: str, path: str) -> dict:
    if not line.startswith("#"):
        raise DataError(f"{path}: missing header line")
    fields = dict(tok.split("=", 1) for tok in line[1:].split())
    try:
        return {"N": int(fields["N"]), "K": int(fields["K"]), "config": fields.get("config", "-")}
    except (KeyError, ValueError):
        raise DataError(f"{path}: malformed header {line.strip()!r}") from None


def load_network(in_dir: str) -> ContactNetwork:
    p_path = os.path.join(in_dir, PERSONS_FILE)
    e_path = os.path.join(in_dir, EDGES_FILE)
    for p in (p_path, e_path):
        if not os.path.exists(p):
            raise DataError(f"network file not found: {p}")
    with open(p_path) as fh:
        head = _parse_header(fh.readline(), p_path)
        rows = np.loadtxt(fh, dtype=np.int64, ndmin=2)
    with open(e_path) as fh:
        _parse_header(fh.readline(), e_path)
        erows = [line.split() for line in fh if line.strip()]
    if rows.shape[0] != head["N"]:
        raise DataError(f"{p_path}: header says N={head['N']} but {rows.shape[0]} rows found")
    if rows.size and not np.array_equal(rows[:, 0], np.arange(head["N"])):
        raise DataError(f"{p_path}: person ids must be dense 0..N-1")
    eu = np.array([int(r[0]) for r in erows], dtype=np.int64)
    ev = np.array([int(r[1]) for r in erows], dtype=np.int64)
    ew = np.array([float(r[2]) for r in erows], dtype=np.float64)
    cfg = head["config"] if head["config"] != "-" else ""
    return ContactNetwork(rows[:, 1], rows[:, 2], eu, ev, ew, K=head["K"], config_hash=cfg)
