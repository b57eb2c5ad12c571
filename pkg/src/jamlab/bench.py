"""Experiment orchestration: overall tables, ablation surfaces, mixed
datasets and split-ratio sweeps.

Campaigns are materialized on disk once (under <workdir>/campaigns) and
every experiment writes, next to its tables, a JSON manifest with the
exact configuration, seed list and content hashes of all inputs and
outputs, enough to reproduce the tables bit for bit.

Jobs are independent (scenario, model, seed) units; with workers > 1
they run in separate processes and share nothing.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import dataio, sim, svgplot, trainer
from .errors import ContractError

DEFAULT_BASE_SEED = 20240
DESK_REPS = 20
FULL_REPS = 50


@dataclass(frozen=True)
class AblationGrid:
    windows: tuple = (5, 10, 14, 20, 28, 35, 40, 56, 70, 140)
    hidden_dims: tuple = (16, 32, 64, 128, 256)
    power_dbm: float = -45.0

    def __post_init__(self):
        for w in self.windows:
            if sim.TOTAL_EPOCHS % w:
                raise ContractError(f"window {w} does not divide {sim.TOTAL_EPOCHS}")

    def scenarios(self):
        return [(receiver, mode)
                for receiver in (sim.GP01, sim.UBLOX10)
                for mode in ("cw", "cw3")]


@dataclass(frozen=True)
class SweepSpec:
    test_fractions: tuple = (0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)
    repeats: int = 3
    power_dbm: float = -45.0  # worst-case mixes use maximum power only


# ---------------------------------------------------------------------------
# campaign materialization


def scenario_seed(base_seed, *labels):
    """Stable 63-bit stream id from the base seed and scenario labels."""
    text = ":".join([str(base_seed)] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def ensure_campaign(workdir, receiver, mode, power, reps,
                    base_seed=DEFAULT_BASE_SEED):
    """Generate-and-write the scenario campaign unless already on disk."""
    name = f"{receiver.name}_{mode}_{int(power)}_n{reps}_s{base_seed}"
    cdir = Path(workdir) / "campaigns" / name
    mpath = cdir / "manifest.csv"
    if not mpath.exists():
        cfg = sim.ScenarioConfig(
            receiver=receiver, mode=mode, power_dbm=power, repetitions=reps,
            seed=scenario_seed(base_seed, receiver.name, mode, power))
        dataio.write_campaign(sim.generate_campaign(cfg), cdir,
                              kind="single_scenario")
    return mpath


def ensure_mixed(workdir, receiver, powers, reps, kind,
                 base_seed=DEFAULT_BASE_SEED):
    """Mixed or worst-case campaign for one receiver."""
    name = f"{kind}_{receiver.name}_n{reps}_s{base_seed}"
    cdir = Path(workdir) / "campaigns" / name
    mpath = cdir / "manifest.csv"
    if not mpath.exists():
        seed = scenario_seed(base_seed, kind, receiver.name,
                             *sorted(float(p) for p in powers))
        runs = sim.generate_mixed(receiver, powers, seed, n_runs=reps)
        dataio.write_campaign(runs, cdir, kind=kind)
    return mpath


# ---------------------------------------------------------------------------
# jobs


@dataclass(frozen=True)
class TrainJob:
    manifest_path: str
    model: str
    seed: int
    split_seed: int
    hidden_dim: int
    window: int
    stride: int
    test_fraction: float
    cfg_overrides: tuple  # ((key, value), ...) applied to TrainConfig
    row_receiver: str
    row_mode: str
    row_power: float | None
    extra: tuple = ()     # free-form labels, e.g. (("hidden", 64),)


_campaign_cache = {}


def _load_runs(manifest_path):
    runs = _campaign_cache.get(manifest_path)
    if runs is None:
        _, runs = dataio.read_campaign(manifest_path)
        _campaign_cache[manifest_path] = runs
    return runs


def run_train_job(job):
    """One (scenario, model, seed) training; returns a plain dict."""
    runs = _load_runs(job.manifest_path)
    cfg = trainer.TrainConfig(window=job.window, stride=job.stride,
                              seed=job.seed, **dict(job.cfg_overrides))
    ds = trainer.make_datasets(
        runs, cfg, trainer.SplitSpec(test_fraction=job.test_fraction),
        split_seed=job.split_seed)
    params, history = trainer.train(job.model, ds.train, ds.val, cfg,
                                    hidden_dim=job.hidden_dim)
    metrics = trainer.evaluate(params, ds.test, ds.stats)
    return {
        "receiver": job.row_receiver, "mode": job.row_mode,
        "power_dbm": job.row_power, "model": job.model, "seed": job.seed,
        "mae_lat_cm": metrics.mae_lat_cm, "mae_lon_cm": metrics.mae_lon_cm,
        "euclid_mae_cm": metrics.euclid_mae_cm, "n_samples": metrics.n_samples,
        "epochs": len(history), "extra": job.extra,
    }


def run_jobs(jobs, workers=1):
    if workers <= 1:
        return [run_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_train_job, jobs))


# ---------------------------------------------------------------------------
# table assembly and manifests


def _metrics_of(result):
    return trainer.Metrics(result["mae_lat_cm"], result["mae_lon_cm"],
                           result["euclid_mae_cm"], result["n_samples"])


def assemble_results(results):
    """Seed rows in canonical order plus mean/sd aggregate rows per group."""
    groups = {}
    order = []
    for r in results:
        key = (r["receiver"], r["mode"], r["power_dbm"], r["model"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)

    table = dataio.ResultsTable()
    for key in order:
        receiver, mode, power, model = key
        seed_rows = sorted(groups[key], key=lambda r: r["seed"])
        for r in seed_rows:
            table.rows.append(dataio.ResultRow(
                receiver, mode, power, model, "seed", r["seed"],
                r["mae_lat_cm"], r["mae_lon_cm"], r["euclid_mae_cm"]))
        mean, sd = trainer.aggregate_seeds([_metrics_of(r) for r in seed_rows])
        table.rows.append(dataio.ResultRow(
            receiver, mode, power, model, "mean", None,
            mean.mae_lat_cm, mean.mae_lon_cm, mean.euclid_mae_cm))
        if sd is not None:
            table.rows.append(dataio.ResultRow(
                receiver, mode, power, model, "sd", None,
                sd.mae_lat_cm, sd.mae_lon_cm, sd.euclid_mae_cm))
    return table


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_experiment_manifest(out_dir, name, config, seeds, inputs, outputs):
    config_json = json.dumps(config, sort_keys=True)
    payload = {
        "experiment": name,
        "config": config,
        "config_hash": hashlib.sha256(config_json.encode()).hexdigest(),
        "seeds": list(seeds),
        "inputs": {str(p): _sha256(p) for p in sorted(str(x) for x in inputs)},
        "outputs": {str(p): _sha256(p) for p in sorted(str(x) for x in outputs)},
    }
    path = Path(out_dir) / f"{name}_manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="ascii", newline="\n")
    return path


def _campaign_files(manifest_path):
    manifest = dataio.read_manifest(manifest_path)
    base = Path(manifest_path).parent
    return [manifest_path] + [base / e.path for e in manifest.entries]


# ---------------------------------------------------------------------------
# experiment suites


def run_overall(models, receivers, modes, powers, seeds=5, reps=DESK_REPS,
                workdir=".", out_dir=None, hidden_dim=64, window=10,
                cfg_overrides=(), workers=1, base_seed=DEFAULT_BASE_SEED):
    """Per-scenario model comparison table (paper-style overall tables)."""
    jobs = []
    inputs = []
    for receiver in receivers:
        for mode in modes:
            if mode not in receiver.supported_modes:
                continue
            for power in powers:
                mpath = ensure_campaign(workdir, receiver, mode, power, reps,
                                        base_seed)
                inputs.append(mpath)
                for model in models:
                    for s in range(seeds):
                        jobs.append(TrainJob(
                            manifest_path=str(mpath), model=model, seed=s,
                            split_seed=s, hidden_dim=hidden_dim, window=window,
                            stride=window, test_fraction=0.2,
                            cfg_overrides=tuple(cfg_overrides),
                            row_receiver=receiver.name, row_mode=mode,
                            row_power=float(power)))
    if not jobs:
        raise ContractError("run_overall: no (receiver, mode, power) scenarios")
    table = assemble_results(run_jobs(jobs, workers))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / "overall_results.csv"
        dataio.write_results(table, out_path)
        write_experiment_manifest(
            out_dir, "overall",
            {"models": list(models), "receivers": [r.name for r in receivers],
             "modes": list(modes), "powers": [float(p) for p in powers],
             "reps": reps, "hidden_dim": hidden_dim, "window": window,
             "cfg_overrides": list(map(list, cfg_overrides)),
             "base_seed": base_seed},
            list(range(seeds)), inputs, [out_path])
    return table


def run_mixed(models, receivers, seeds=5, reps=DESK_REPS, workdir=".",
              out_dir=None, hidden_dim=64, window=10, cfg_overrides=(),
              workers=1, base_seed=DEFAULT_BASE_SEED):
    """All jamming types pooled across all power levels, per receiver."""
    jobs = []
    inputs = []
    for receiver in receivers:
        mpath = ensure_mixed(workdir, receiver, sim.POWER_LEVELS_DBM, reps,
                             "mixed", base_seed)
        inputs.append(mpath)
        for model in models:
            for s in range(seeds):
                jobs.append(TrainJob(
                    manifest_path=str(mpath), model=model, seed=s,
                    split_seed=s, hidden_dim=hidden_dim, window=window,
                    stride=window, test_fraction=0.2,
                    cfg_overrides=tuple(cfg_overrides),
                    row_receiver=receiver.name, row_mode="mixed",
                    row_power=None))
    table = assemble_results(run_jobs(jobs, workers))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / "mixed_results.csv"
        dataio.write_results(table, out_path)
        write_experiment_manifest(
            out_dir, "mixed",
            {"models": list(models), "receivers": [r.name for r in receivers],
             "reps": reps, "hidden_dim": hidden_dim, "window": window,
             "base_seed": base_seed},
            list(range(seeds)), inputs, [out_path])
    return table


def run_ablation(grid, seeds=3, reps=DESK_REPS, workdir=".", out_dir=None,
                 cfg_overrides=(), workers=1, base_seed=DEFAULT_BASE_SEED):
    """MAE response surface over (window, hidden dim) per scenario.

    Returns {(receiver_name, mode): [(window, hidden, mae), ...]} and, with
    out_dir set, writes one CSV and one SVG per scenario plus a manifest.
    """
    jobs = []
    inputs = []
    for receiver, mode in grid.scenarios():
        mpath = ensure_campaign(workdir, receiver, mode, grid.power_dbm, reps,
                                base_seed)
        inputs.append(mpath)
        for window in grid.windows:
            for hidden in grid.hidden_dims:
                for s in range(seeds):
                    jobs.append(TrainJob(
                        manifest_path=str(mpath), model="rgnn", seed=s,
                        split_seed=s, hidden_dim=hidden, window=window,
                        stride=window, test_fraction=0.2,
                        cfg_overrides=tuple(cfg_overrides),
                        row_receiver=receiver.name, row_mode=mode,
                        row_power=float(grid.power_dbm),
                        extra=(("window", window), ("hidden", hidden))))
    results = run_jobs(jobs, workers)

    cells = {}
    for r in results:
        extra = dict(r["extra"])
        key = (r["receiver"], r["mode"], extra["window"], extra["hidden"])
        cells.setdefault(key, []).append(r["euclid_mae_cm"])
    surfaces = {}
    for (receiver, mode, window, hidden), vals in sorted(cells.items()):
        surfaces.setdefault((receiver, mode), []).append(
            (window, hidden, sum(vals) / len(vals)))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs = []
        for (receiver, mode), rows in surfaces.items():
            csv_path = out_dir / f"surface_{receiver}_{mode}.csv"
            dataio.write_csv_table(csv_path, ("window", "hidden", "euclid_mae_cm"),
                                   [{"window": w, "hidden": h,
                                     "euclid_mae_cm": float(v)}
                                    for w, h, v in rows])
            svg_path = out_dir / f"surface_{receiver}_{mode}.svg"
            svgplot.emit_surface_svg(
                rows, svg_path,
                title=f"{receiver} / {mode} at {grid.power_dbm:g} dBm")
            outputs += [csv_path, svg_path]
        write_experiment_manifest(
            out_dir, "ablation",
            {"windows": list(grid.windows), "hidden_dims": list(grid.hidden_dims),
             "power_dbm": grid.power_dbm, "reps": reps, "base_seed": base_seed},
            list(range(seeds)), inputs, outputs)
    return surfaces


def run_split_sweep(spec, models, reps=DESK_REPS, workdir=".", out_dir=None,
                    hidden_dim=64, window=10, cfg_overrides=(), workers=1,
                    base_seed=DEFAULT_BASE_SEED,
                    receivers=(sim.GP01, sim.UBLOX10)):
    """Average MAE per (model, train fraction) on worst-case mixed data.

    Each ratio is run `spec.repeats` times with distinct split seeds and
    averaged.  Returns {receiver_name: {model: [(train_frac, mae), ...]}}.
    """
    jobs = []
    inputs = []
    for receiver in receivers:
        mpath = ensure_mixed(workdir, receiver, {spec.power_dbm}, reps,
                             "worst_case", base_seed)
        inputs.append(mpath)
        for model in models:
            for tf in spec.test_fractions:
                for rep in range(spec.repeats):
                    jobs.append(TrainJob(
                        manifest_path=str(mpath), model=model, seed=rep,
                        split_seed=scenario_seed(base_seed, "sweep", tf, rep),
                        hidden_dim=hidden_dim, window=window, stride=window,
                        test_fraction=tf, cfg_overrides=tuple(cfg_overrides),
                        row_receiver=receiver.name, row_mode="worst_case",
                        row_power=float(spec.power_dbm),
                        extra=(("train_fraction", round(1.0 - tf, 2)),)))
    results = run_jobs(jobs, workers)

    acc = {}
    for r in results:
        tf = dict(r["extra"])["train_fraction"]
        acc.setdefault((r["receiver"], r["model"], tf), []).append(
            r["euclid_mae_cm"])
    curves = {}
    for (receiver, model, tf), vals in sorted(acc.items()):
        curves.setdefault(receiver, {}).setdefault(model, []).append(
            (tf, sum(vals) / len(vals)))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs = []
        for receiver, per_model in curves.items():
            csv_path = out_dir / f"sweep_{receiver}.csv"
            rows = [{"model": m, "train_fraction": tf, "euclid_mae_cm": float(v)}
                    for m, pts in sorted(per_model.items()) for tf, v in pts]
            dataio.write_csv_table(csv_path,
                                   ("model", "train_fraction", "euclid_mae_cm"),
                                   rows)
            svg_path = out_dir / f"sweep_{receiver}.svg"
            svgplot.emit_lines_svg(
                per_model, svg_path,
                title=f"{receiver} worst-case mix: MAE vs training fraction",
                xlabel="train fraction", ylabel="Euclidean MAE (cm)")
            outputs += [csv_path, svg_path]
        write_experiment_manifest(
            out_dir, "split_sweep",
            {"test_fractions": list(spec.test_fractions),
             "repeats": spec.repeats, "power_dbm": spec.power_dbm,
             "models": list(models), "reps": reps, "hidden_dim": hidden_dim,
             "base_seed": base_seed},
            list(range(spec.repeats)), inputs, outputs)
    return curves
