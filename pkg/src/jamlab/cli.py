"""Command-line orchestrator.

Subcommands: simulate, mix, train, evaluate, overall, ablate,
sweep-splits, mixed.  All paths are resolved relative to --workdir.
Exit codes: 0 success, 1 user/config error, 2 data error, 3 internal
invariant breach.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import bench, dataio, graph, models, sim, trainer
from .errors import (ContractError, JamlabError, ParseError, UserError,
                     ValidationError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _resolve(workdir, path):
    path = Path(path)
    return path if path.is_absolute() else Path(workdir) / path


def _manifest_path(data_path):
    data_path = Path(data_path)
    if data_path.is_dir():
        data_path = data_path / "manifest.csv"
    if not data_path.exists():
        raise FileNotFoundError(
            f"no campaign at {data_path}; generate one with "
            f"'jamlab simulate' or 'jamlab mix'")
    return data_path


def _parse_powers(text):
    if text == "all":
        return list(sim.POWER_LEVELS_DBM)
    try:
        return [float(p) for p in text.split(",") if p]
    except ValueError:
        raise UserError(f"bad power list {text!r}") from None


def _parse_models(text):
    names = [m for m in text.split(",") if m]
    for m in names:
        if m not in models.MODEL_KINDS:
            raise UserError(f"unknown model {m!r}; choose from {models.MODEL_KINDS}")
    return names


def _parse_receivers(text):
    out = []
    for name in text.split(","):
        if name not in sim.RECEIVERS:
            raise UserError(f"unknown receiver {name!r}")
        out.append(sim.RECEIVERS[name])
    return out


_CFG_FIELDS = {f.name: f.type for f in dataclasses.fields(trainer.TrainConfig)}


def load_config_overrides(path):
    """key=value lines mapping onto TrainConfig fields."""
    overrides = {}
    with open(path, encoding="ascii") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UserError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _CFG_FIELDS:
                raise UserError(f"{path}:{line_no}: unknown TrainConfig key {key!r}")
            caster = int if _CFG_FIELDS[key] in ("int", int) else float
            try:
                overrides[key] = caster(value)
            except ValueError:
                raise UserError(f"{path}:{line_no}: bad value for {key}: {value!r}") \
                    from None
    return overrides


def _train_config(args, workdir):
    overrides = {}
    if getattr(args, "config", None):
        overrides = load_config_overrides(_resolve(workdir, args.config))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    try:
        return trainer.TrainConfig(**overrides), tuple(
            (k, v) for k, v in sorted(overrides.items()) if k != "seed")
    except (TypeError, ContractError) as exc:
        raise UserError(f"bad training configuration: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, workdir):
    try:
        cfg = sim.ScenarioConfig(
            receiver=sim.RECEIVERS[args.receiver], mode=args.mode,
            power_dbm=args.power, repetitions=args.reps, seed=args.seed)
    except ContractError as exc:
        raise UserError(str(exc)) from None
    runs = sim.generate_campaign(cfg)
    out = _resolve(workdir, args.out)
    dataio.write_campaign(runs, out, kind="single_scenario")
    print(f"wrote {len(runs)} runs to {out}")
    return 0


def cmd_mix(args, workdir):
    receiver = sim.RECEIVERS[args.receiver]
    powers = _parse_powers(args.powers)
    try:
        runs = sim.generate_mixed(receiver, powers, seed=args.seed,
                                  n_runs=args.reps)
    except ContractError as exc:
        raise UserError(str(exc)) from None
    out = _resolve(workdir, args.out)
    kind = "worst_case" if args.worst else "mixed"
    dataio.write_campaign(runs, out, kind=kind)
    print(f"wrote {len(runs)} {kind} runs to {out}")
    return 0


def cmd_train(args, workdir):
    cfg, _ = _train_config(args, workdir)
    manifest = _manifest_path(_resolve(workdir, args.data))
    _, runs = dataio.read_campaign(manifest)
    ds = trainer.make_datasets(runs, cfg, split_seed=cfg.seed)
    params, history = trainer.train(args.model, ds.train, ds.val, cfg,
                                    hidden_dim=args.hidden)
    metrics = trainer.evaluate(params, ds.test, ds.stats)

    out = _resolve(workdir, args.out)
    out.mkdir(parents=True, exist_ok=True)
    models.save_params(params, out / "checkpoint.txt")
    graph.save_stats(ds.stats, out / "stats.csv")
    trainer.save_history(history, out / "history.csv")
    with open(out / "config.txt", "w", encoding="ascii", newline="\n") as fh:
        for field in dataclasses.fields(cfg):
            fh.write(f"{field.name}={getattr(cfg, field.name)}\n")
        fh.write(f"# model={args.model} hidden={args.hidden} data={manifest}\n")
    split_rows = []
    for name, samples in (("train", ds.train), ("val", ds.val), ("test", ds.test)):
        for rep in sorted({s.labels[3] for s in samples}):
            split_rows.append({"split": name, "repetition": rep})
    dataio.write_csv_table(out / "split.csv", ("split", "repetition"), split_rows)
    dataio.write_csv_table(
        out / "metrics.csv",
        ("mae_lat_cm", "mae_lon_cm", "euclid_mae_cm", "n_samples"),
        [{"mae_lat_cm": metrics.mae_lat_cm, "mae_lon_cm": metrics.mae_lon_cm,
          "euclid_mae_cm": metrics.euclid_mae_cm, "n_samples": metrics.n_samples}])
    print(f"trained {args.model} for {len(history)} epochs; "
          f"test euclid MAE {metrics.euclid_mae_cm:.3f} cm; checkpoint in {out}")
    return 0


def cmd_evaluate(args, workdir):
    ckpt_dir = _resolve(workdir, args.checkpoint)
    if ckpt_dir.is_file():
        ckpt_dir = ckpt_dir.parent
    params = models.load_params(ckpt_dir / "checkpoint.txt")
    stats = graph.load_stats(ckpt_dir / "stats.csv")

    window = stride = 10
    cfg_path = ckpt_dir / "config.txt"
    if cfg_path.exists():
        for line in cfg_path.read_text().splitlines():
            if line.startswith("window="):
                window = int(line.split("=", 1)[1])
            if line.startswith("stride="):
                stride = int(line.split("=", 1)[1])

    manifest = _manifest_path(_resolve(workdir, args.data))
    _, runs = dataio.read_campaign(manifest)

    split_path = ckpt_dir / "split.csv"
    if split_path.exists():
        _, rows = dataio.read_csv_table(split_path)
        test_reps = {int(r["repetition"]) for r in rows if r["split"] == "test"}
        runs = [r for r in runs if r.repetition_idx in test_reps] or runs

    samples = []
    for run in runs:
        samples.extend(graph.windows_from_run(run, window, stride))
    samples = [graph.apply_norm(s, stats) for s in samples]
    metrics = trainer.evaluate(params, samples, stats)
    print(f"mae_lat_cm={metrics.mae_lat_cm!r} mae_lon_cm={metrics.mae_lon_cm!r} "
          f"euclid_mae_cm={metrics.euclid_mae_cm!r} n_samples={metrics.n_samples}")
    return 0


def cmd_overall(args, workdir):
    cfg, overrides = _train_config(args, workdir)
    reps = bench.FULL_REPS if args.full else args.reps
    hidden = 256 if args.full else args.hidden
    bench.run_overall(
        models=_parse_models(args.models),
        receivers=_parse_receivers(args.receivers),
        modes=[m for m in args.modes.split(",") if m],
        powers=_parse_powers(args.powers),
        seeds=args.seeds, reps=reps, workdir=workdir,
        out_dir=_resolve(workdir, args.out_dir), hidden_dim=hidden,
        window=args.window, cfg_overrides=overrides, workers=args.workers,
        base_seed=args.base_seed)
    print(f"overall table written to {_resolve(workdir, args.out_dir)}")
    return 0


def cmd_ablate(args, workdir):
    _, overrides = _train_config(args, workdir)
    if args.full:
        grid = bench.AblationGrid()
        reps = bench.FULL_REPS
    else:
        grid = bench.AblationGrid(
            windows=tuple(int(w) for w in args.windows.split(",")),
            hidden_dims=tuple(int(h) for h in args.hidden_dims.split(",")))
        reps = args.reps
    bench.run_ablation(grid, seeds=args.seeds, reps=reps, workdir=workdir,
                       out_dir=_resolve(workdir, args.out_dir),
                       cfg_overrides=overrides, workers=args.workers,
                       base_seed=args.base_seed)
    print(f"ablation surfaces written to {_resolve(workdir, args.out_dir)}")
    return 0


def cmd_sweep_splits(args, workdir):
    _, overrides = _train_config(args, workdir)
    spec = bench.SweepSpec(repeats=args.repeats)
    reps = bench.FULL_REPS if args.full else args.reps
    bench.run_split_sweep(
        spec, _parse_models(args.models), reps=reps, workdir=workdir,
        out_dir=_resolve(workdir, args.out_dir), hidden_dim=args.hidden,
        window=args.window, cfg_overrides=overrides, workers=args.workers,
        base_seed=args.base_seed, receivers=_parse_receivers(args.receivers))
    print(f"split sweep written to {_resolve(workdir, args.out_dir)}")
    return 0


def cmd_mixed(args, workdir):
    _, overrides = _train_config(args, workdir)
    reps = bench.FULL_REPS if args.full else args.reps
    hidden = 256 if args.full else args.hidden
    bench.run_mixed(
        models=_parse_models(args.models),
        receivers=_parse_receivers(args.receivers),
        seeds=args.seeds, reps=reps, workdir=workdir,
        out_dir=_resolve(workdir, args.out_dir), hidden_dim=hidden,
        window=args.window, cfg_overrides=overrides, workers=args.workers,
        base_seed=args.base_seed)
    print(f"mixed table written to {_resolve(workdir, args.out_dir)}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = _Parser(prog="jamlab",
                     description="Synthetic GNSS jamming deviation workbench")
    parser.add_argument("--workdir", default=".",
                        help="base directory for all relative paths")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate one scenario campaign")
    p.add_argument("--receiver", required=True, choices=sorted(sim.RECEIVERS))
    p.add_argument("--mode", required=True, choices=sim.JAM_MODES)
    p.add_argument("--power", required=True, type=float)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mix", help="generate a mixed-label campaign")
    p.add_argument("--receiver", required=True, choices=sorted(sim.RECEIVERS))
    p.add_argument("--powers", default="all",
                   help="'all' or comma-separated dBm levels")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--worst", action="store_true",
                   help="tag the campaign as worst_case")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model on a campaign")
    p.add_argument("--model", required=True, choices=models.MODEL_KINDS)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key=value TrainConfig overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a campaign")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    def common(p, seeds):
        p.add_argument("--out-dir", required=True)
        p.add_argument("--models", default=",".join(models.MODEL_KINDS))
        p.add_argument("--receivers", default="GP01,Ublox10")
        p.add_argument("--seeds", type=int, default=seeds)
        p.add_argument("--reps", type=int, default=bench.DESK_REPS)
        p.add_argument("--hidden", type=int, default=64)
        p.add_argument("--window", type=int, default=10)
        p.add_argument("--config", help="key=value TrainConfig overrides")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--base-seed", type=int, default=bench.DEFAULT_BASE_SEED)
        p.add_argument("--full", action="store_true",
                       help="paper-scale profile (50 reps, hidden 256)")

    p = sub.add_parser("overall", help="per-scenario comparison tables")
    common(p, seeds=5)
    p.add_argument("--modes", default="cw,cw3,fm")
    p.add_argument("--powers", default="all")

    p = sub.add_parser("ablate", help="(window, hidden) response surfaces")
    common(p, seeds=3)
    p.add_argument("--windows", default="5,10,14,20,28,35,40,56,70,140")
    p.add_argument("--hidden-dims", default="16,64",
                   help="desk default; --full restores 16,32,64,128,256")

    p = sub.add_parser("sweep-splits", help="test:train ratio sweep")
    common(p, seeds=3)
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("mixed", help="all modes pooled across powers")
    common(p, seeds=5)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return 1
        workdir = Path(args.workdir)
        handler = {
            "simulate": cmd_simulate,
            "mix": cmd_mix,
            "train": cmd_train,
            "evaluate": cmd_evaluate,
            "overall": cmd_overall,
            "ablate": cmd_ablate,
            "sweep-splits": cmd_sweep_splits,
            "mixed": cmd_mixed,
        }[args.command]
        return handler(args, workdir)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, ValidationError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, JamlabError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
