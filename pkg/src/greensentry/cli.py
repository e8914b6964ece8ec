"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
Every subcommand writes its outputs plus a ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .config import PROFILES, RunConfig
from .detect import (ModelState, export_plot_data, export_reconstruction_data, fit_model_state,
                     reconstruct_dataset, timed_detect)
from .errors import DataError, NumericalError
from .labeling import INJECTION_KINDS, InjectionLog, InjectionSpec, RuleSet, default_ruleset, inject, label, scrub
from .sensor_data import FEATURES, align_merge, forward_fill, ingest_csv, read_csv, write_csv
from .simulate import build_reference_scenario, simulate

log = logging.getLogger("greensentry")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory plus the manifest being accumulated for it."""

    def __init__(self, command, args, cfg: RunConfig):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.manifest = {"command": command, "effective_config": cfg.effective(),
                         "seeds": {"global": cfg.seed}, "inputs": {}, "artifacts": {}}

    def input(self, path):
        self.manifest["inputs"][str(path)] = _digest(path)

    def path(self, name) -> Path:
        self.manifest["artifacts"][name] = name
        return self.out / name

    def write_json(self, name, obj):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(obj, indent=2) + "\n")

    def finish(self):
        with open(self.out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


def _rules(args) -> RuleSet:
    return RuleSet.load(args.rules) if getattr(args, "rules", None) else default_ruleset()


def _flags(args) -> dict:
    keys = ("seed", "profile", "epochs", "batch_size", "learning_rate", "optimizer", "node_size")
    return {k: getattr(args, k, None) for k in keys}


def _labeled(dataset, rules):
    return dataset if dataset.is_labeled else label(dataset, rules)[0]


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args, run):
    ds = simulate(run.cfg.sim_config())
    write_csv(ds, run.path("dataset.csv"))
    run.manifest["seeds"]["simulation"] = run.cfg.seed
    log.info("simulated %d records", len(ds))


def cmd_ingest(args, run):
    series, report = {}, {"duplicates": {}, "reordered": {}, "segment_breaks": {}}
    max_fill = run.cfg.values["max_fill_minutes"]
    for sid in FEATURES:
        path = getattr(args, sid)
        run.input(path)
        res = ingest_csv(path, sid)
        filled = forward_fill(res.series, 1, max_fill)
        series[sid] = filled.series
        report["duplicates"][sid] = res.duplicates
        report["reordered"][sid] = res.reordered
        report["segment_breaks"][sid] = len(filled.breaks)
    merged = align_merge(series)
    report["dropped"] = merged.dropped
    report["records"] = len(merged.dataset)
    write_csv(merged.dataset, run.path("dataset.csv"))
    run.write_json("ingest_report.json", report)


def cmd_label(args, run):
    run.input(args.dataset)
    ds, report = label(read_csv(args.dataset), _rules(args))
    write_csv(ds, run.path("labeled.csv"))
    run.write_json("label_report.json", report.to_dict())


def cmd_inject(args, run):
    run.input(args.dataset)
    rules = _rules(args)
    ds = _labeled(read_csv(args.dataset), rules)
    spec = InjectionSpec(count=args.count, kinds=tuple(args.kinds.split(",")),
                         target_features=tuple(args.features.split(",")), seed=run.cfg.seed)
    out, entries = inject(ds, spec, rules)
    write_csv(out, run.path("injected.csv"))
    InjectionLog(entries).write_csv(run.path("injection_log.csv"))


def _train(run, ds, rules, allow_scrub):
    ds = _labeled(ds, rules)
    if ds.anomaly_mask().any():
        if not allow_scrub:
            raise DataError("training data contains anomalous labels; pass --scrub to remove them")
        ds = scrub(ds)
    cfg = run.cfg
    state, report = fit_model_state(ds.values, cfg.model_config(), cfg.train_config(),
                                    cfg.values["split_ratio"], cfg.values["split_mode"],
                                    cfg.values["k"])
    state.save(run.path("model.json"))
    run.write_json("train_report.json", report.to_dict())
    run.manifest["seeds"]["training"] = cfg.seed
    return state


def cmd_train(args, run):
    run.input(args.dataset)
    _train(run, read_csv(args.dataset), _rules(args), args.scrub)


def _evaluate(run, state, ds, report=True, plots=True):
    ev = timed_detect(state, ds)
    if report:
        run.write_json("report.json", ev.to_dict())
    if plots:
        export_plot_data(ev.losses, ev.labels, ev.threshold, ds.timestamps, run.path("plot_loss.csv"))
        export_reconstruction_data(ds.timestamps, ds.values, reconstruct_dataset(state, ds),
                                   run.path("plot_reconstruction.csv"))
    return ev


def _load_pair(args, run):
    run.input(args.model)
    run.input(args.dataset)
    state = ModelState.load(args.model)
    state.require_calibrated()
    return state, _labeled(read_csv(args.dataset), _rules(args))


def cmd_detect(args, run):
    _evaluate(run, *_load_pair(args, run))


def cmd_evaluate(args, run):
    _evaluate(run, *_load_pair(args, run), plots=False)


def cmd_export_plots(args, run):
    _evaluate(run, *_load_pair(args, run), report=False)


def cmd_reproduce(args, run):
    sc = build_reference_scenario(run.cfg.seed)
    write_csv(sc.train, run.path("train.csv"))
    write_csv(sc.test, run.path("test.csv"))
    sc.injection_log.write_csv(run.path("injection_log.csv"))
    with open(run.path("simulation.conf"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(sc.config.to_text())
    state = _train(run, sc.train, default_ruleset(), allow_scrub=False)
    ev = _evaluate(run, state, sc.test)
    m = ev.metrics
    print(f"accuracy={m.accuracy:.4f} precision={m.precision:.4f} recall={m.recall:.4f} f1={m.f1:.4f}")


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int, help="global seed (unsigned 64-bit)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--rules", help="rule set file (id,feature,kind,threshold,category)")
    common.add_argument("--profile", choices=sorted(PROFILES))
    common.add_argument("-v", "--verbose", action="store_true")

    training = _Parser(add_help=False)
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch-size", dest="batch_size", type=int)
    training.add_argument("--learning-rate", dest="learning_rate", type=float)
    training.add_argument("--optimizer", choices=("sgd", "adam"))
    training.add_argument("--node-size", dest="node_size", type=int)

    parser = _Parser(prog="greensentry", description="Autoencoder anomaly detection for greenhouse sensors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")

    p = sub.add_parser("ingest", parents=[common], help="merge raw per-sensor CSVs")
    for sid in FEATURES:
        p.add_argument(f"--{sid.replace('_', '-')}", dest=sid, required=True, metavar="CSV")

    p = sub.add_parser("label", parents=[common], help="apply the rule set")
    p.add_argument("dataset")

    p = sub.add_parser("inject", parents=[common], help="inject synthetic anomalies")
    p.add_argument("dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--kinds", default="spike", help=f"comma list of {','.join(INJECTION_KINDS)}")
    p.add_argument("--features", default=",".join(FEATURES))

    p = sub.add_parser("train", parents=[common, training], help="train and calibrate a model")
    p.add_argument("dataset")
    p.add_argument("--scrub", action="store_true", help="drop anomalous records before training")

    for name, helptext in (("detect", "score a dataset: report and plot data"),
                           ("evaluate", "score a dataset: report only"),
                           ("export-plots", "score a dataset: plot data only")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("model")
        p.add_argument("dataset")

    sub.add_parser("reproduce", parents=[common, training], help="run the reference scenario end to end")
    return parser


COMMANDS = {
    "simulate": cmd_simulate, "ingest": cmd_ingest, "label": cmd_label, "inject": cmd_inject,
    "train": cmd_train, "detect": cmd_detect, "evaluate": cmd_evaluate,
    "export-plots": cmd_export_plots, "reproduce": cmd_reproduce,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_sources(args.config, _flags(args))
        r = Run(args.command, args, cfg)
        if args.config:
            r.input(args.config)
        if getattr(args, "rules", None):
            r.input(args.rules)
        COMMANDS[args.command](args, r)
        r.finish()
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())
