"""Command line interface and end-to-end pipeline.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import rng as rngmod
from .calib import (SEASON_WEEKS, calibrate_tau, collect_samples, load_samples, load_surveillance,
                    rescale_to_network, save_samples)
from .datasetgen import generate_dataset, load_dataset, save_dataset, stack_scenarios
from .errors import ConfigError, DataError, EpiforgeError
from .evalmetrics import evaluate_run, load_report, metrics_by_county, ratio_report, write_ratio_csv, \
    write_report
from .forecaster import ModelConfig, load_model, rolling_forecasts, save_model, train
from .netgen import NetworkConfig, generate_network, load_network, save_network
from .paramspace import build_space, load_space, save_space
from .simcore import DiseaseParams, Scenario, VaccineSchedule, load_epicurve, run_simulation, save_epicurve

log = logging.getLogger("epiforge")

STAGES = ("gen-network", "calibrate", "fit-params", "gen-dataset", "train", "forecast", "evaluate")


class StageError(EpiforgeError):
    def __init__(self, stage: str, cause: EpiforgeError):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.exit_code = cause.exit_code


def read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(path: str) -> str:
    if os.path.isfile(path):
        return file_digest(path)
    h = hashlib.sha256()
    for root, dirs, files in os.walk(path):
        dirs.sort()
        for name in sorted(files):
            full = os.path.join(root, name)
            h.update(os.path.relpath(full, path).encode())
            h.update(file_digest(full).encode())
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def stage_seed(master: int, stage: str) -> int:
    """Per-stage seed derived from the master seed (fits in 63 bits)."""
    return rngmod.mix_seed(master, *stage.encode()) >> 1


def load_scenarios(path: str) -> Scenario:
    """A scenario file holds one scenario or a list of scenarios to stack."""
    doc = read_json(path)
    items = doc if isinstance(doc, list) else [doc]
    out = None
    for d in items:
        out = stack_scenarios(out, Scenario.from_dict(d))
    return out


def load_schedules(source) -> list:
    if source is None:
        return []
    if isinstance(source, str):
        source = read_json(source)
    return [VaccineSchedule.from_dict(d) for d in source]


# --- forecast files --------------------------------------------------------

def write_forecasts(path: str, rows, K: int, label: str = "") -> None:
    """``rows`` are ``(issue_week, mean, sd)`` tuples; one CSV line per horizon."""
    names = ["state"] + [f"county_{c}" for c in range(1, K + 1)]
    with_sd = any(sd is not None for _, _, sd in rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["issue_week", "horizon"] + names + ([f"sd_{n}" for n in names] if with_sd else [])
        if label:
            header.append("label")
        w.writerow(header)
        for issue, mean, sd in rows:
            for h in range(mean.shape[0]):
                line = [issue, h + 1] + [repr(float(x)) for x in mean[h]]
                if with_sd:
                    line += [repr(float(x)) for x in sd[h]]
                if label:
                    line.append(label)
                w.writerow(line)


def read_forecasts(path: str) -> dict:
    """Read one forecast CSV or every ``*.csv`` in a directory into ``{(issue, h): vector}``."""
    paths = [path]
    if os.path.isdir(path):
        paths = [os.path.join(path, n) for n in sorted(os.listdir(path)) if n.endswith(".csv")]
    if not paths or not all(os.path.exists(p) for p in paths):
        raise DataError(f"no forecast files at {path}")
    out = {}
    for p in paths:
        with open(p, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = [c for c in reader.fieldnames if c == "state" or c.startswith("county_")]
            for row in reader:
                out[(int(row["issue_week"]), int(row["horizon"]))] = np.array([float(row[c]) for c in cols])
    return out


# --- stage commands --------------------------------------------------------

def cmd_gen_network(config, seed: int, out: str):
    cfg = NetworkConfig.from_dict(read_json(config) if isinstance(config, str) else config)
    net = generate_network(cfg, seed)
    save_network(net, out)
    log.info("network: N=%d K=%d edges=%d -> %s", net.N, net.K, net.edge_u.size, out)
    return net


def cmd_simulate(network: str, params: str, weeks: int, seed: int, out: str):
    net = load_network(network)
    p = DiseaseParams.from_dict(read_json(params))
    curve = run_simulation(net, p, weeks, seed)
    save_epicurve(curve, out)
    return curve


def cmd_calibrate(surveillance: str, network: str, out: str, replicates: int = 5, seed: int = 0,
                  weeks: int = SEASON_WEEKS, max_iter: int = 60, extra: dict | None = None):
    target, series = load_surveillance(surveillance)
    net = load_network(network)
    samples = collect_samples(target, series)
    samples = rescale_to_network(samples, {s.region: s.population for s in series}, net.N)
    taus = []
    for i, s in enumerate(samples):
        n_i = min(net.N, max(0, int(round(s.initial_cases))))
        res = calibrate_tau(s.attack_rate, net, N_I=n_i, replicates=replicates,
                            seed=rngmod.mix_seed(seed, i) >> 1, weeks=weeks, max_iter=max_iter)
        log.info("calibrated %s/%s: ar=%.4f N_I=%d tau=%.4g residual=%.4g",
                 s.region, s.season, s.attack_rate, n_i, res.tau, res.residual)
        taus.append(res)
    save_samples(out, samples, taus, {"target": target, **(extra or {})})
    return samples, taus


def cmd_fit_params(samples: str, schedules, out: str, extra: dict | None = None):
    smp, taus = load_samples(samples)
    space = build_space(smp, taus, load_schedules(schedules))
    save_space(space, out)
    if extra:
        doc = read_json(out)
        doc["meta"] = extra
        with open(out, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
    return space


def cmd_gen_dataset(space: str, network: str, runs: int, weeks: int, seed: int, out: str,
                    scenario: str | None = None, split=None, jobs: int = 1, extra: dict | None = None):
    sp = load_space(space)
    net = load_network(network)
    scen = load_scenarios(scenario) if scenario else None
    kwargs = {"split": tuple(split)} if split else {}
    ds = generate_dataset(sp, net, runs, weeks, scen, seed, jobs=jobs, **kwargs)
    if extra:
        ds.meta.update(extra)
    save_dataset(ds, out)
    return ds


def model_config_for(cfg: dict, K: int, weeks: int) -> ModelConfig:
    d = dict(cfg)
    d.setdefault("K", K)
    d.setdefault("season_length", weeks)
    if d["K"] != K:
        raise ConfigError(f"model K={d['K']} does not match dataset K={K}")
    return ModelConfig.from_dict(d)


def cmd_train(dataset: str, config, seed: int, out: str, init_model=None, extra: dict | None = None):
    ds = load_dataset(dataset)
    raw = read_json(config) if isinstance(config, str) else (config or {})
    mcfg = model_config_for(raw, ds.K, ds.weeks)
    model, hist = train(init_model, ds, mcfg, seed=seed)
    meta = {"best_epoch": hist.best_epoch, "best_val_loss": hist.best_val_loss,
            "epochs": len(hist.val_loss), "seed": str(seed), **(extra or {})}
    save_model(model, out, meta)
    return model, hist


def cmd_forecast(model: str, history: str, horizon: int, out: str, mc: int = 0, rolling_from: int | None = None,
                 seed: int = 0, label: str = ""):
    m = load_model(model)
    series = load_epicurve(history).state
    start = series.size if rolling_from is None else series.size - rolling_from
    if start < 0:
        raise DataError(f"history has only {series.size} weeks; cannot roll over the last {rolling_from}")
    rng = rngmod.make_rng(seed, rngmod.DROPOUT)
    rows = rolling_forecasts(m, series, start, horizon, mc=mc, rng=rng)
    # issue week = weeks observed in the history's last (possibly partial) season
    ell = m.config.season_length
    offset = ell * ((series.size - 1) // ell) if series.size else 0
    rows = [(t - offset, mean, sd) for t, mean, sd in rows]
    write_forecasts(out, rows, m.config.K, label)
    return rows


def cmd_evaluate(truth: str, forecasts: str, out: str):
    curve = load_epicurve(truth)
    report = evaluate_run(curve.values, read_forecasts(forecasts))
    write_report(report, out)
    return report


def cmd_compare(a: str, b: str, out: str):
    ra, rb = load_report(a), load_report(b)
    ratios = ratio_report(metrics_by_county(ra), metrics_by_county(rb))
    write_ratio_csv(ratios, out)
    return ratios


# --- pipeline --------------------------------------------------------------

def _resolve(base: str, path):
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(base, path)


def load_pipeline_config(path: str) -> tuple[dict, str]:
    cfg = read_json(path)
    base = os.path.dirname(os.path.abspath(path))
    env = os.environ.get("EPIFORGE_SEED")
    if env is not None:
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"EPIFORGE_SEED must be an integer, got {env!r}") from None
    cfg.setdefault("seed", 0)
    # hash the config as written (relative paths), with the effective seed
    cfg["config_hash"] = config_hash(cfg)
    cfg["workdir"] = _resolve(base, cfg.get("workdir", "epiforge-run"))
    if cfg.get("surveillance"):
        cfg["surveillance"] = _resolve(base, cfg["surveillance"])
    if isinstance(cfg.get("schedules"), str):
        cfg["schedules"] = _resolve(base, cfg["schedules"])
    for key in ("history", "truth"):
        if cfg.get("forecast", {}).get(key):
            cfg["forecast"][key] = _resolve(base, cfg["forecast"][key])
    return cfg, base


def _paths(workdir: str) -> dict:
    return {
        "gen-network": os.path.join(workdir, "network"),
        "calibrate": os.path.join(workdir, "samples.json"),
        "fit-params": os.path.join(workdir, "space.json"),
        "gen-dataset": os.path.join(workdir, "dataset"),
        "train": os.path.join(workdir, "model.json"),
        "forecast": os.path.join(workdir, "forecasts"),
        "evaluate": os.path.join(workdir, "report"),
    }


def _synthetic_truth(ds, workdir: str):
    """History/truth pair from the first test curve of a dataset."""
    idx = ds.split["test"][0] if ds.split["test"] else len(ds.curves) - 1
    hist = np.concatenate([c.values for c in ds.curves[:idx + 1]], axis=0)
    hist_path = os.path.join(workdir, "history.csv")
    truth_path = os.path.join(workdir, "truth.csv")
    from .simcore import Epicurve
    save_epicurve(Epicurve(hist), hist_path)
    save_epicurve(ds.curves[idx], truth_path)
    return hist_path, truth_path


def _forecast_stage(cfg, paths, model_path, seed, out_name="forecasts.csv", label=""):
    fc = cfg.get("forecast", {})
    if fc.get("history"):
        hist, truth = fc["history"], fc.get("truth")
    else:
        hist, truth = _synthetic_truth(load_dataset(paths["gen-dataset"]), cfg["workdir"])
    weeks = load_dataset(paths["gen-dataset"]).weeks
    os.makedirs(paths["forecast"], exist_ok=True)
    out = os.path.join(paths["forecast"], out_name)
    cmd_forecast(model_path, hist, int(fc.get("horizon", 5)), out, mc=int(fc.get("mc", 0)),
                 rolling_from=int(fc.get("rolling_weeks", weeks)), seed=seed, label=label)
    return out, truth


def run_pipeline(config_file: str) -> dict:
    """Run every stage in order, honouring ``skip`` flags; returns the manifest."""
    cfg, _ = load_pipeline_config(config_file)
    workdir = cfg["workdir"]
    os.makedirs(workdir, exist_ok=True)
    master = int(cfg["seed"])
    skip = cfg.get("skip", {})
    paths = _paths(workdir)
    chash = cfg["config_hash"]
    tag = {"config_hash": chash}
    seeds = {s: stage_seed(master, s) for s in STAGES}
    net_cfg = cfg.get("network", {})
    ds_cfg = cfg.get("dataset", {})
    weeks = int(ds_cfg.get("weeks", SEASON_WEEKS))
    truth = None

    def stage(name, fn):
        if skip.get(name):
            log.info("skipping %s", name)
            return None
        log.info("stage %s", name)
        try:
            return fn()
        except EpiforgeError as exc:
            raise StageError(name, exc) from exc
        except OSError as exc:
            raise StageError(name, DataError(str(exc))) from exc

    stage("gen-network", lambda: cmd_gen_network(net_cfg, seeds["gen-network"], paths["gen-network"]))

    def calibrate():
        surv = cfg.get("surveillance")
        if not surv or not os.path.isdir(surv):
            raise DataError(f"surveillance directory not found: {surv}")
        cal = cfg.get("calibration", {})
        return cmd_calibrate(surv, paths["gen-network"], paths["calibrate"],
                             replicates=int(cal.get("replicates", 5)), seed=seeds["calibrate"],
                             weeks=int(cal.get("weeks", SEASON_WEEKS)), max_iter=int(cal.get("max_iter", 60)),
                             extra=tag)
    stage("calibrate", calibrate)
    stage("fit-params", lambda: cmd_fit_params(paths["calibrate"], cfg.get("schedules"), paths["fit-params"], tag))

    def gen_dataset():
        scen = ds_cfg.get("scenario")
        return cmd_gen_dataset(paths["fit-params"], paths["gen-network"], int(ds_cfg.get("runs", 1000)), weeks,
                               seeds["gen-dataset"], paths["gen-dataset"],
                               scenario=_resolve(os.path.dirname(os.path.abspath(config_file)), scen),
                               split=ds_cfg.get("split"), jobs=int(cfg.get("jobs", 1)), extra=tag)
    stage("gen-dataset", gen_dataset)
    stage("train", lambda: cmd_train(paths["gen-dataset"], cfg.get("model", {}), seeds["train"],
                                     paths["train"], extra=tag))

    def forecast():
        nonlocal truth
        _, truth = _forecast_stage(cfg, paths, paths["train"], seeds["forecast"])
    stage("forecast", forecast)

    def evaluate():
        t = cfg.get("forecast", {}).get("truth") or truth or os.path.join(workdir, "truth.csv")
        report = cmd_evaluate(t, paths["forecast"], paths["evaluate"])
        summary = os.path.join(paths["evaluate"], "summary.json")
        doc = read_json(summary)
        doc.update(tag)
        with open(summary, "w") as fh:
            json.dump(doc, fh, indent=1)
        return report
    stage("evaluate", evaluate)

    manifest = {
        "config_hash": chash,
        "master_seed": str(master),
        "stage_seeds": {k: str(v) for k, v in seeds.items()},
        "artifacts": {name: tree_digest(p) for name, p in paths.items() if os.path.exists(p)},
    }
    with open(os.path.join(workdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def whatif(config_file: str, scenario_file: str) -> dict:
    """Add scenario curves to the baseline training set, retrain and forecast."""
    cfg, _ = load_pipeline_config(config_file)
    workdir = cfg["workdir"]
    paths = _paths(workdir)
    for key in ("gen-dataset", "train", "fit-params", "gen-network"):
        if not os.path.exists(paths[key]):
            raise StageError("whatif", DataError(f"baseline artifact missing: {paths[key]}"))
    master = int(cfg["seed"])
    scen = load_scenarios(scenario_file)
    label = scen.label or "scenario"
    wi = cfg.get("whatif", {})
    base = load_dataset(paths["gen-dataset"])
    runs = int(wi.get("runs", len(base.curves)))
    try:
        extra = generate_dataset(load_space(paths["fit-params"]), load_network(paths["gen-network"]), runs,
                                 base.weeks, scen, stage_seed(master, "whatif:" + label),
                                 split=(1.0, 0.0, 0.0))
    except EpiforgeError as exc:
        raise StageError("whatif", exc) from exc
    combined = base.extend(extra, "train")
    out_dir = os.path.join(workdir, f"whatif-{label}")
    ds_dir = os.path.join(out_dir, "dataset")
    save_dataset(combined, ds_dir)
    model_path = os.path.join(out_dir, "model.json")
    baseline = load_model(paths["train"])
    cmd_train(ds_dir, baseline.config.to_dict(), stage_seed(master, "train"), model_path, init_model=baseline,
              extra={"scenario": scen.to_dict()})
    fpaths = dict(paths, forecast=out_dir)
    fpaths["gen-dataset"] = paths["gen-dataset"]
    base_fc, _ = _forecast_stage(cfg, fpaths, paths["train"], stage_seed(master, "forecast"),
                                 "forecasts_baseline.csv", "baseline")
    scen_fc, _ = _forecast_stage(cfg, fpaths, model_path, stage_seed(master, "forecast"),
                                 f"forecasts_{label}.csv", label)
    result = {"label": label, "labels": label.split("+"), "scenario": scen.to_dict(), "runs": runs,
              "dataset": ds_dir, "model": model_path, "forecasts": {"baseline": base_fc, label: scen_fc}}
    with open(os.path.join(out_dir, "whatif.json"), "w") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
    return result


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epiforge", description="Simulation-trained epidemic forecasting")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for curve generation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-network")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("simulate")
    s.add_argument("--network", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--weeks", type=int, default=SEASON_WEEKS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("calibrate")
    s.add_argument("--surveillance", required=True)
    s.add_argument("--network", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--replicates", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--weeks", type=int, default=SEASON_WEEKS)

    s = sub.add_parser("fit-params")
    s.add_argument("--samples", required=True)
    s.add_argument("--schedules")
    s.add_argument("--out", required=True)

    s = sub.add_parser("gen-dataset")
    s.add_argument("--space", required=True)
    s.add_argument("--network", required=True)
    s.add_argument("--runs", type=int, default=1000)
    s.add_argument("--weeks", type=int, default=SEASON_WEEKS)
    s.add_argument("--scenario")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("forecast")
    s.add_argument("--model", required=True)
    s.add_argument("--history", required=True)
    s.add_argument("--horizon", type=int, default=5)
    s.add_argument("--mc", type=int, default=0, help="MC-dropout samples (0: point forecast)")
    s.add_argument("--rolling-from", type=int, help="also issue forecasts over the last N weeks")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("evaluate")
    s.add_argument("--truth", required=True)
    s.add_argument("--forecasts", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("compare")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("pipeline")
    s.add_argument("--config", required=True)

    s = sub.add_parser("whatif")
    s.add_argument("--config", required=True)
    s.add_argument("--scenario", required=True)
    return p


def dispatch(args) -> None:
    c = args.command
    if c == "gen-network":
        cmd_gen_network(args.config, args.seed, args.out)
    elif c == "simulate":
        cmd_simulate(args.network, args.params, args.weeks, args.seed, args.out)
    elif c == "calibrate":
        cmd_calibrate(args.surveillance, args.network, args.out, args.replicates, args.seed, args.weeks)
    elif c == "fit-params":
        cmd_fit_params(args.samples, args.schedules, args.out)
    elif c == "gen-dataset":
        cmd_gen_dataset(args.space, args.network, args.runs, args.weeks, args.seed, args.out,
                        scenario=args.scenario, jobs=args.jobs)
    elif c == "train":
        cmd_train(args.dataset, args.config, args.seed, args.out)
    elif c == "forecast":
        cmd_forecast(args.model, args.history, args.horizon, args.out, args.mc, args.rolling_from, args.seed)
    elif c == "evaluate":
        cmd_evaluate(args.truth, args.forecasts, args.out)
    elif c == "compare":
        cmd_compare(args.a, args.b, args.out)
    elif c == "pipeline":
        run_pipeline(args.config)
    elif c == "whatif":
        whatif(args.config, args.scenario)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except EpiforgeError as exc:
        print(f"epiforge: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"epiforge: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
