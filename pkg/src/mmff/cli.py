"""``mmff`` command line: simulate, train, evaluate, compare, report.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace

from . import tensorio
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .dataset import DataError, make_samples, read_dataset, simulate, write_dataset
from .evaluation import compare_schemes, outage_curve, threshold_grid, write_errors_csv
from .evaluation import write_outage_csv, write_rates_csv, write_summary_csv
from .predictor import load_checkpoint, save_checkpoint, train_mmff
from .schemes import (SCHEMES, SchemeError, antenna_config, eval_slots, predict_angles,
                      run_metrics)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class Failure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _config(args) -> ExperimentConfig | None:
    cfg = load_config(args.config) if args.config else None
    if cfg is not None and args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, cfg, name):
    return args.out or os.path.join(cfg.experiment.output_dir, name)


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise Failure(EXIT_DATA, f"cannot create output directory {path}: {exc}") from None


def _dataset(args):
    """Load the dataset; an explicit ``--config`` must match the one it was simulated with."""
    return read_dataset(args.dataset, expected=_config(args))


def _checkpoint(path, ds):
    try:
        model = load_checkpoint(path)
    except (OSError, ValueError, KeyError, tensorio.TensorFormatError) as exc:
        raise Failure(EXIT_DATA, f"cannot load checkpoint {path}: {exc}") from None
    if model.extra.get("config_hash") != config_hash(ds.config):
        raise Failure(EXIT_DATA, "checkpoint was trained on a dataset with a different config")
    return model


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    cfg = _config(args)
    if cfg is None:
        cfg = ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    out = _out(args, cfg, "dataset")
    _makedirs(out)
    write_dataset(simulate(cfg), out)
    print(f"wrote {cfg.experiment.n_realizations} x {cfg.experiment.n_slots} slots to {out}")


def cmd_train(args):
    ds = _dataset(args)
    cfg = ds.config
    train_cfg = cfg.train
    if args.train_seed is not None:
        train_cfg = replace(train_cfg, seed=args.train_seed)
    out = _out(args, cfg, "checkpoint")
    _makedirs(out)
    rows = []
    model = train_mmff(make_samples(ds), train_cfg, spec=cfg.model,
                       log=lambda *row: rows.append(row))
    save_checkpoint(model, out, extra={"config_hash": config_hash(cfg),
                                       "train_seed": train_cfg.seed})
    with open(os.path.join(out, "train_log.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "lr", "train_loss", "test_loss"))
        for epoch, lr, tr, te in rows:
            w.writerow((epoch, repr(float(lr)), repr(float(tr)), repr(float(te))))
    print(f"trained {train_cfg.epochs} epochs, final test loss {rows[-1][3]:.6g}; checkpoint in {out}")


def _write_run(dirpath, run, thresholds):
    _makedirs(dirpath)
    write_errors_csv(os.path.join(dirpath, "errors.csv"), run)
    write_rates_csv(os.path.join(dirpath, "rates.csv"), run)
    write_outage_csv(os.path.join(dirpath, "outage.csv"), outage_curve(run.rates, thresholds))


def _scheme_model(scheme, args, ds):
    if scheme != "mmff":
        return None
    if not args.checkpoint:
        raise Failure(EXIT_CONFIG, "the mmff scheme needs --checkpoint")
    return _checkpoint(args.checkpoint, ds)


def cmd_evaluate(args):
    ds = _dataset(args)
    scheme = (args.scheme or ["mmff"])[0]
    model = _scheme_model(scheme, args, ds)
    slots = eval_slots(ds)
    arrays = antenna_config(ds.config.arrays, args.antennas[0]) if args.antennas else ds.config.arrays
    run = run_metrics(ds, slots, scheme, predict_angles(ds, slots, scheme, model), arrays)
    out = _out(args, ds.config, "eval")
    _write_run(out, run, threshold_grid([run.rates]))
    print(f"{scheme}: mean |err| {run.abs_err.mean():.6g} rad, mean rate {run.rates.mean():.6g}")


def _compare(ds, args, schemes, antennas, out):
    slots = eval_slots(ds)
    preds = {s: predict_angles(ds, slots, s, _scheme_model(s, args, ds)) for s in schemes}
    report_t = ds.config.experiment.report_thresholds
    written = []
    for n in antennas:
        arrays = antenna_config(ds.config.arrays, n)
        runs = [run_metrics(ds, slots, s, preds[s], arrays, scenario=config_hash(ds.config))
                for s in schemes]
        grid = threshold_grid([r.rates for r in runs])
        rows, _ = compare_schemes(runs, report_t, grid)
        sub = os.path.join(out, f"N{n}")
        for r in runs:
            _write_run(os.path.join(sub, r.scheme_id), r, grid)
        path = os.path.join(out, f"summary_N{n}.csv")
        write_summary_csv(path, rows, report_t)
        written.append((n, path, rows))
    with open(os.path.join(out, "baseline_settings.json"), "w") as fh:
        json.dump(asdict(ds.config.baselines), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return written


def _schemes(args, default):
    schemes = args.scheme or default
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise Failure(EXIT_CONFIG, f"unknown scheme(s): {', '.join(bad)}")
    return list(dict.fromkeys(schemes))


def cmd_compare(args):
    ds = _dataset(args)
    default = [s for s in SCHEMES if s != "mmff" or args.checkpoint]
    schemes = _schemes(args, default)
    antennas = args.antennas or [ds.config.arrays.n_tx_mm]
    out = _out(args, ds.config, "compare")
    _makedirs(out)
    for n, path, rows in _compare(ds, args, schemes, antennas, out):
        print(f"N={n}: {len(rows)} scheme(s) -> {path}")


def cmd_report(args):
    ds = _dataset(args)
    default = [s for s in SCHEMES if s != "mmff" or args.checkpoint]
    schemes = _schemes(args, default)
    antennas = args.antennas or list(ds.config.experiment.antenna_sweep)
    out = _out(args, ds.config, "report")
    _makedirs(out)
    lines = []
    for n, _, rows in _compare(ds, args, schemes, antennas, out):
        lines.append(f"N_t = M_r = {n}")
        lines.append(f"  {'scheme':<12} {'mean|err|':>12} {'p95|err|':>12} {'mean rate':>10}")
        for row in rows:
            lines.append(f"  {row['scheme']:<12} {row['mean_abs_err']:>12.6f} "
                         f"{row['p95_abs_err']:>12.6f} {row['mean_rate']:>10.4f}")
        lines.append("")
    text = "\n".join(lines)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="mmff", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", metavar="PATH", help="INI experiment config")
        sp.add_argument("--seed", type=int, metavar="U64", help="overrides the config seed")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        if dataset:
            sp.add_argument("dataset", help="dataset directory written by `simulate`")
        return sp

    common(sub.add_parser("simulate", help="generate a dataset"), dataset=False)
    t = common(sub.add_parser("train", help="train the predictor on a dataset"))
    t.add_argument("--train-seed", type=int, help="seed for initialization and shuffling")
    for name, hlp in (("evaluate", "metric CSVs for one scheme"),
                      ("compare", "summary table across schemes"),
                      ("report", "compare across the antenna sweep and print a table")):
        sp = common(sub.add_parser(name, help=hlp))
        sp.add_argument("--scheme", action="append", metavar="NAME", help=f"one of {', '.join(SCHEMES)}")
        sp.add_argument("--checkpoint", metavar="DIR", help="directory written by `train`")
        sp.add_argument("--antennas", action="append", type=int, metavar="N",
                        help="mmWave elements per side (repeatable)")
    return p


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "compare": cmd_compare, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except Failure as exc:
        print(f"mmff: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"mmff: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchemeError as exc:
        print(f"mmff: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, tensorio.TensorFormatError, OSError) as exc:
        print(f"mmff: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"mmff: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
