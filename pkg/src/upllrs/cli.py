"""``upllrs`` command line: synth, separate, train, run-all, audit, report.

Exit codes: 0 ok, 2 configuration error, 3 I/O or data-format error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data, diagnostics, separation, trainer
from .config import RunConfig, load_config
from .errors import ConfigError, DataFormatError, UpllError

log = logging.getLogger("upllrs")

GRID_ALIASES = {"mu": "data.mu", "eta": "data.eta", "xi": "train.xi", "gamma": "rs.gamma",
                "beta": "rs.beta", "tau": "train.tau", "patience": "rs.patience", "mode": "train.mode"}


# --- stages ----------------------------------------------------------------

def _data_dir(cfg: RunConfig) -> Path:
    return cfg.run_dir() / "data"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _echo_config(cfg: RunConfig, directory: Path) -> None:
    _write_text(directory / "config.txt", cfg.dump())


def build_labeled(cfg: RunConfig) -> data.LabeledDataset:
    d = cfg.data
    if d.source == "csv":
        return data.load_csv(d.path, d.label_column)
    ds = data.synth_gaussians(d.n, d.classes, d.dim, d.separation, cfg.seed)
    return data.LabeledDataset(data.standardize(ds.features), ds.labels, ds.class_count)


def cmd_synth(cfg: RunConfig) -> Path:
    out = _data_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    split = data.synthesize(build_labeled(cfg), cfg.data.mu, cfg.data.eta, cfg.seed)
    data.write_upll(split.train, out / "train_features.npy", out / "train_candidates.jsonl")
    data.write_labeled(split.val, out, "val")
    data.write_labeled(split.test, out, "test")
    tr, va, te = split.indices
    _write_text(out / "splits.json", json.dumps({"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}))
    meta = {"class_count": split.train.class_count, "dim": int(split.train.features.shape[1]),
            "n_train": len(split.train), "n_val": len(split.val), "n_test": len(split.test)}
    _write_text(out / "meta.json", json.dumps(meta, indent=1) + "\n")
    _write_text(out / "audit.json", json.dumps(data.audit(split.train).to_dict(), indent=1) + "\n")
    _echo_config(cfg, cfg.run_dir())
    return out


def load_split(cfg: RunConfig):
    out = _data_dir(cfg)
    meta_path = out / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no synthesized dataset under {out}; run `upllrs synth` first")
    meta = diagnostics.load_json(meta_path)
    C = meta["class_count"]
    train = data.read_upll(out / "train_features.npy", out / "train_candidates.jsonl", C)
    return train, data.read_labeled(out, "val", C), data.read_labeled(out, "test", C)


def cmd_separate(cfg: RunConfig) -> Path:
    train, val, _ = load_split(cfg)
    result = separation.run_recursive_separation(train, val, cfg.rs)
    out = cfg.run_dir() / "rs"
    out.mkdir(parents=True, exist_ok=True)
    result.save(out / "separation.json")
    if train.hidden_truth is not None:
        curve = diagnostics.purity_curve(result.history)
        _write_text(out / "purity.csv", diagnostics.purity_csv(curve))
        hist = diagnostics.loss_decile_histogram(result.initial_losses, train.reliability())
        _write_text(out / "decile.csv", diagnostics.decile_csv(hist))
    return out


def cmd_train(cfg: RunConfig) -> Path:
    train_set, val, test = load_split(cfg)
    dim = train_set.features.shape[1]
    if cfg.train.mode.startswith("baseline") or cfg.no_rs:
        reliable, unl = train_set, np.zeros((0, dim))
    else:
        sep_path = cfg.run_dir() / "rs" / "separation.json"
        if not sep_path.exists():
            raise FileNotFoundError(f"no separation result at {sep_path}; run `upllrs separate` or pass --no-rs")
        sep = separation.SeparationResult.load(sep_path)
        reliable = train_set.subset(sep.reliable_indices)
        unl = train_set.features[sep.unreliable_indices]
    if cfg.no_unreliable:
        unl = np.zeros((0, dim))
    result = trainer.train(cfg.train, reliable, unl, val, test)
    out = cfg.train_dir()
    result.write(out)
    _write_text(out / "epochs.csv", diagnostics.epochs_csv(result.metrics))
    _echo_config(cfg, out)
    return out


def cmd_audit(cfg: RunConfig) -> dict:
    train, _, _ = load_split(cfg)
    report = data.audit(train).to_dict()
    _write_text(_data_dir(cfg) / "audit.json", json.dumps(report, indent=1) + "\n")
    return report


def cmd_report(cfg: RunConfig) -> Path:
    run = cfg.run_dir()
    audit = diagnostics.load_json(run / "data" / "audit.json") if (run / "data" / "audit.json").exists() else None
    decile = curve = sep_info = None
    sep_path = run / "rs" / "separation.json"
    if sep_path.exists():
        sep = separation.SeparationResult.load(sep_path)
        sep_info = {"steps": len(sep.history) - 1, "stop_reason": sep.stop_reason,
                    "reliable_size": len(sep.reliable_indices), "unreliable_size": len(sep.unreliable_indices),
                    "initial_purity": sep.history[0].get("audited_purity"),
                    "final_purity": sep.history[-1].get("audited_purity")}
        try:
            curve = diagnostics.purity_curve(sep.history)
            train, _, _ = load_split(cfg)
            if sep.initial_losses is not None:
                decile = diagnostics.loss_decile_histogram(sep.initial_losses, train.reliability())
        except UpllError:
            curve = decile = None
    metrics = summary = None
    tdir = cfg.train_dir()
    if (tdir / "metrics.jsonl").exists():
        metrics = trainer.read_metrics(tdir / "metrics.jsonl")
        summary = diagnostics.load_json(tdir / "summary.json")
    out = run / "report" / tdir.name
    diagnostics.export_report(out, decile, curve, metrics, summary, audit, sep_info)
    return out


STAGES = ("synth", "separate", "train", "report")


def _stage_marker(cfg: RunConfig, stage: str) -> Path:
    # train/report outputs depend on the training config, so their markers do too
    name = {"train": cfg.train_dir().name, "report": f"report-{cfg.train_dir().name}"}.get(stage, stage)
    return cfg.run_dir() / "stages" / f"{name}.done"


def cmd_run_all(cfg: RunConfig) -> dict:
    """synth -> separate -> train -> report, skipping stages whose marker exists."""
    funcs = {"synth": cmd_synth, "separate": cmd_separate, "train": cmd_train, "report": cmd_report}
    for stage in STAGES:
        if stage == "separate" and (cfg.no_rs or cfg.train.mode.startswith("baseline")):
            continue
        marker = _stage_marker(cfg, stage)
        if marker.exists():
            log.info("skipping %s (done)", stage)
            continue
        funcs[stage](cfg)
        marker.parent.mkdir(parents=True, exist_ok=True)
        marker.write_text("done\n", encoding="utf-8")
    return _cell_summary(cfg)


def _cell_summary(cfg: RunConfig) -> dict:
    row = {"run_dir": str(cfg.run_dir()), "train_dir": cfg.train_dir().name}
    summary = diagnostics.load_json(cfg.train_dir() / "summary.json")
    row["best_val_acc"] = summary["best_val_acc"]
    row["test_acc_at_best_val"] = summary["test_acc_at_best_val"]
    sep_path = cfg.run_dir() / "rs" / "separation.json"
    if sep_path.exists() and not cfg.no_rs:
        sep = separation.SeparationResult.load(sep_path)
        row["rs_steps"] = len(sep.history) - 1
        row["reliable_size"] = len(sep.reliable_indices)
        row["final_purity"] = sep.history[-1].get("audited_purity")
    return row


def expand_grid(specs: list[str]) -> list[dict[str, str]]:
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"--grid expects KEY=V1,V2,..., got {spec!r}")
        key, values = spec.split("=", 1)
        key = GRID_ALIASES.get(key.strip(), key.strip())
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"--grid {key}: no values")
        axes.append([(key, v) for v in vals])
    return [dict(cell) for cell in itertools.product(*axes)]


def _run_cell(flat: dict[str, str]) -> dict:
    cfg = RunConfig.from_flat(flat)
    return cmd_run_all(cfg)


def run_grid(cfg: RunConfig, specs: list[str], workers: int = 1) -> Path:
    cells = expand_grid(specs)
    flats = [cfg.with_overrides(cell).to_flat() for cell in cells]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_cell, flats))
    else:
        rows = [_run_cell(f) for f in flats]
    keys = list(cells[0]) if cells else []
    cols = keys + ["run_dir", "train_dir", "rs_steps", "reliable_size", "final_purity",
                   "best_val_acc", "test_acc_at_best_val"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for cell, row in zip(cells, rows):
        merged = {**cell, **row}
        w.writerow([merged.get(c, "") for c in cols])
    out = Path(cfg.output_dir) / "grid.csv"
    _write_text(out, buf.getvalue())
    return out


# --- argument handling -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="upllrs", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["synth", "separate", "train", "run-all", "audit", "report"])
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="base output directory")
    p.add_argument("--mode", choices=trainer.MODES)
    for flag in ("mu", "eta", "gamma", "tau", "xi"):
        p.add_argument(f"--{flag}", type=float)
    p.add_argument("--beta", type=int)
    p.add_argument("--patience", type=int, help="separation patience")
    p.add_argument("--no-rs", action="store_true", help="train on the raw training set (no separation)")
    p.add_argument("--no-unreliable", action="store_true", help="ignore the unreliable subset")
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    direct = {"seed": args.seed, "output_dir": args.out, "train.mode": args.mode, "data.mu": args.mu,
              "data.eta": args.eta, "rs.gamma": args.gamma, "rs.beta": args.beta,
              "rs.patience": args.patience, "train.tau": args.tau, "train.xi": args.xi}
    over.update({k: str(v) for k, v in direct.items() if v is not None})
    if args.no_rs:
        over["train.no_rs"] = "true"
    if args.no_unreliable:
        over["train.no_unreliable"] = "true"
    return cfg.with_overrides(over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        cfg = config_from_args(args)
        if args.grid:
            if args.command != "run-all":
                raise ConfigError("--grid is only valid with run-all")
            print(run_grid(cfg, args.grid, args.workers))
            return 0
        if args.command == "synth":
            print(cmd_synth(cfg))
        elif args.command == "separate":
            print(cmd_separate(cfg))
        elif args.command == "train":
            print(cmd_train(cfg))
        elif args.command == "run-all":
            print(json.dumps(cmd_run_all(cfg), indent=1))
        elif args.command == "audit":
            print(json.dumps(cmd_audit(cfg), indent=1))
        elif args.command == "report":
            print(cmd_report(cfg))
    except UpllError as exc:
        log.error("error: %s", exc)
        return exc.exit_code
    except (OSError, DataFormatError) as exc:
        log.error("I/O error: %s", exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
