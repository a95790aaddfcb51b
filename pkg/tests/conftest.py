import json
import os

import numpy as np
import pytest

from epiforge.calib import SEASON_WEEKS, write_ew_csv


def seasonal_counts(peak_week, width, total):
    w = np.arange(1, SEASON_WEEKS + 1)
    shape = np.exp(-0.5 * ((w - peak_week) / width) ** 2)
    return np.round(total * shape / shape.sum())


def make_surveillance(directory, seasons=3, ar=(0.08, 0.12, 0.1)):
    """Two regions, ``seasons`` seasons each, with known attack rates."""
    os.makedirs(directory, exist_ok=True)
    regions = {"alpha": {"population": 200000, "surveillance_ratio": 1.0},
               "beta": {"population": 100000, "surveillance_ratio": 0.5}}
    for k, (name, info) in enumerate(regions.items()):
        for s in range(seasons):
            total = ar[(s + k) % len(ar)] * info["population"] * info["surveillance_ratio"]
            write_ew_csv(os.path.join(directory, f"{name}__{2010 + s}.csv"),
                         seasonal_counts(5 + s, 4 + k, total))
    with open(os.path.join(directory, "metadata.json"), "w") as fh:
        json.dump({"target": "alpha", "neighbors": ["beta"], "regions": regions}, fh)
    return directory


def smoke_config(directory, seed=11):
    """Smallest end-to-end configuration; returns the config path."""
    surv = make_surveillance(os.path.join(directory, "surveillance"))
    cfg = {
        "seed": seed,
        "workdir": "run",
        "surveillance": os.path.relpath(surv, directory),
        "network": {"county_sizes": [200, 120, 80], "mean_household_size": 3, "mean_external_degree": 8},
        "calibration": {"replicates": 2, "max_iter": 25},
        "schedules": [{"weekly_coverage": {"5": 0.1}, "efficacy": 0.5, "label": "early"}],
        "dataset": {"runs": 10, "weeks": SEASON_WEEKS},
        "model": {"a": 52, "b": 1, "k_l": 1, "k_r": 1, "H_hidden": 4, "H": 8, "max_epochs": 20, "patience": 20},
        "forecast": {"horizon": 3, "rolling_weeks": 10},
    }
    path = os.path.join(directory, "config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=1)
    return path


@pytest.fixture
def smoke_config_path(tmp_path):
    return smoke_config(str(tmp_path))


def finite_difference_check(model, x1, x2, z, eps=1e-6, rel=1e-4, floor=1e-6):
    """Largest violation of |analytic - numeric| <= max(rel * scale, floor) over all weights.

    Returns ``(worst_excess, name)``; ``worst_excess <= 0`` means every
    entry passed.
    """
    from epiforge.forecaster.model import loss_and_grad

    _, grads = loss_and_grad(model, x1, x2, z)
    worst, where = -np.inf, None
    for name, w in model.params.items():
        flat = w.ravel()
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + eps
            up, _ = loss_and_grad(model, x1, x2, z)
            flat[j] = keep - eps
            down, _ = loss_and_grad(model, x1, x2, z)
            flat[j] = keep
            numeric = (up - down) / (2 * eps)
            analytic = grads[name].ravel()[j]
            excess = abs(analytic - numeric) - max(rel * max(abs(analytic), abs(numeric)), floor)
            if excess > worst:
                worst, where = excess, f"{name}[{j}]"
    return worst, where


# --- desk-scale toy data for the acceptance suite ---------------------------

TOY_NETWORK = {"county_sizes": [300, 200, 100], "mean_household_size": 4, "mean_external_degree": 20,
               "cross_county_mix": 0.2}


def toy_dataset(weeks=12, runs=200, seed=0, tau=(1.2e-4, 2.5e-5), n_i=(2, 20), scenario=None,
                split=(0.8, 0.15, 0.05)):
    """Curves on a 600-person, three-county network."""
    from epiforge.datasetgen import generate_dataset
    from epiforge.netgen import generate_network
    from epiforge.paramspace import Marginal, ParamSpace
    from epiforge.simcore import INCUBATION_DEFAULT, INFECTIOUS_DEFAULT

    net = generate_network(TOY_NETWORK, seed)
    space = ParamSpace(Marginal.fixed(INCUBATION_DEFAULT), Marginal.fixed(INFECTIOUS_DEFAULT),
                       Marginal.normal(*tau), Marginal.uniform(*n_i), Marginal.discrete_uniform([None]))
    return generate_dataset(space, net, runs, weeks, scenario=scenario, master_seed=seed, split=split)


# --- acceptance result lines -----------------------------------------------

ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
