"""Synthetic training sets: sample parameters, simulate, collect epicurves."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from . import rng as rngmod
from .errors import ConfigError, DataError, EpiforgeError
from .netgen import ContactNetwork
from .paramspace import ParamSpace, sample_params
from .simcore import DiseaseParams, Epicurve, Scenario, load_epicurve, run_simulation, save_epicurve

DEFAULT_SPLIT = (0.80, 0.15, 0.05)


def curve_seed(master_seed: int, i: int) -> int:
    """Seed of curve ``i``: splitmix64 expansion of ``(master_seed, i)``."""
    return rngmod.mix_seed(master_seed, rngmod.CURVE, i)


def stack_scenarios(base: Scenario | None, extra: Scenario | None) -> Scenario:
    """Combine two what-if scenarios: weekly multipliers multiply, labels join."""
    base = base or Scenario()
    extra = extra or Scenario()
    weeks = set(base.tau_multipliers) | set(extra.tau_multipliers)
    mult = {w: base.multiplier(w) * extra.multiplier(w) for w in sorted(weeks)}
    label = "+".join(lbl for lbl in (base.label, extra.label) if lbl)
    return Scenario(mult, label)


def split_indices(r: int, fractions=DEFAULT_SPLIT) -> dict:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n_train = int(round(r * fractions[0]))
    n_val = int(round(r * fractions[1]))
    n_train = min(n_train, r)
    n_val = min(n_val, r - n_train)
    idx = list(range(r))
    return {"train": idx[:n_train], "validate": idx[n_train:n_train + n_val], "test": idx[n_train + n_val:]}


@dataclass
class Dataset:
    curves: list
    params: list
    seeds: list
    split: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.curves:
            shapes = {c.values.shape for c in self.curves}
            if len(shapes) != 1:
                raise DataError(f"all curves must share one shape, got {sorted(shapes)}")
        if not self.split:
            self.split = split_indices(len(self.curves))
        covered = sorted(i for part in self.split.values() for i in part)
        if covered != list(range(len(self.curves))):
            raise DataError("dataset split must partition the curve indices")

    @property
    def weeks(self) -> int:
        return self.curves[0].weeks

    @property
    def K(self) -> int:
        return self.curves[0].K

    def subset(self, part: str) -> list:
        return [self.curves[i] for i in self.split[part]]

    def extend(self, other: "Dataset", part: str = "train") -> "Dataset":
        """Append ``other``'s curves; they all go into ``part``."""
        offset = len(self.curves)
        split = {k: list(v) for k, v in self.split.items()}
        split[part] = split[part] + [offset + i for i in range(len(other.curves))]
        meta = dict(self.meta)
        meta.setdefault("appended", []).append(other.meta)
        return Dataset(self.curves + other.curves, self.params + other.params,
                       self.seeds + other.seeds, split, meta)


def _simulate_one(job):
    space, network, weeks, scenario, master_seed, i = job
    seed = curve_seed(master_seed, i)
    p = sample_params(space, rngmod.make_rng(master_seed, rngmod.PARAMS, i), population=network.N)
    if scenario is not None:
        p = replace(p, scenario=scenario)
    try:
        return run_simulation(network, p, weeks, seed), p, seed
    except EpiforgeError as exc:
        raise type(exc)(f"simulation {i} failed: {exc}") from exc


def generate_dataset(space: ParamSpace, network: ContactNetwork, r: int, weeks: int,
                     scenario: Scenario | None = None, master_seed: int = 0,
                     split=DEFAULT_SPLIT, jobs: int = 1) -> Dataset:
    """Simulate ``r`` epicurves with parameters drawn from ``space``.

    Every curve depends only on ``(master_seed, i)``, so the result does not
    depend on ``jobs``.
    """
    if r < 1:
        raise ConfigError("number of runs must be >= 1")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    work = [(space, network, weeks, scenario, master_seed, i) for i in range(r)]
    if jobs == 1:
        results = [_simulate_one(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_simulate_one, work, chunksize=max(1, r // (4 * jobs))))
    curves, params, seeds = (list(t) for t in zip(*results))
    meta = {"master_seed": master_seed, "runs": r, "weeks": weeks,
            "scenario": scenario.to_dict() if scenario else None,
            "network_config": network.config_hash}
    return Dataset(curves, params, seeds, split_indices(r, split), meta)


# --- persistence -----------------------------------------------------------

MANIFEST = "manifest.json"


def save_dataset(ds: Dataset, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for i, c in enumerate(ds.curves):
        name = f"curve_{i:05d}.csv"
        save_epicurve(c, os.path.join(out_dir, name))
        files.append(name)
    doc = {"files": files, "seeds": [str(s) for s in ds.seeds],
           "params": [p.to_dict() for p in ds.params], "split": ds.split, "meta": ds.meta}
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_dataset(in_dir: str) -> Dataset:
    path = os.path.join(in_dir, MANIFEST)
    if not os.path.exists(path):
        raise DataError(f"dataset manifest not found: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    curves = [load_epicurve(os.path.join(in_dir, f)) for f in doc["files"]]
    params = [DiseaseParams.from_dict(p) for p in doc["params"]]
    return Dataset(curves, params, [int(s) for s in doc["seeds"]], doc["split"], doc.get("meta", {}))


def replay(ds: Dataset, network: ContactNetwork, i: int) -> Epicurve:
    """Re-run the simulation behind curve ``i`` from its recorded provenance."""
    return run_simulation(network, ds.params[i], ds.weeks, ds.seeds[i])
