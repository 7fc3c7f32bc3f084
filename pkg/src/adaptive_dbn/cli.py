"""``adaptive-dbn`` command line: train, eval, relearn and fixture subcommands.

Every run is driven by one INI config file; flags only name paths. Relative
paths inside the config resolve against the config file's directory, and all
artifacts go under ``[run] output_dir``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 degenerate
parent partition.
"""

import argparse
import configparser
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import load_csv, load_idx, make_overlap_fixture, save_csv, split
from .dbn import AdaptiveDBN, load_model, save_model
from .exceptions import DataError, DegeneratePartitionError
from .metrics import (
    class_report,
    confusion,
    format_report,
    kl_histogram,
    write_confusion_csv,
    write_histogram_csv,
    write_ratio_csv,
    write_report_csv,
)
from .numerics import derive_seed
from .relearn import (
    EVALUATION_SETS,
    build_plan,
    export_scatter,
    kl_divergence,
    quantile_thresholds,
    relearn_sweep,
    train_child,
    write_sweep_csv,
)

logger = logging.getLogger("adaptive_dbn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _as_int(text):
    return int(text)


def _as_float(text):
    value = float(text)
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _as_list(text):
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _as_float_list(text):
    return tuple(_as_float(t) for t in _as_list(text))


def _as_hidden(text):
    sizes = tuple(int(t) for t in _as_list(text))
    if not sizes:
        raise ValueError("empty")
    return sizes[0] if len(sizes) == 1 else sizes


def _as_optional_int(text):
    return None if text.strip().lower() == "none" else int(text)


_DBN_KEYS = {
    "n_hidden": _as_hidden,
    "learning_rate": _as_float,
    "cd_steps": _as_int,
    "epochs": _as_int,
    "batch_size": _as_int,
    "gen_threshold": _as_float,
    "annihilate_threshold": _as_float,
    "inherit_noise": _as_float,
    "max_hidden": _as_optional_int,
    "wd_window": _as_int,
    "layer_wd_threshold": _as_float,
    "layer_energy_threshold": _as_float,
    "max_layers": _as_int,
    "head_learning_rate": _as_float,
    "head_epochs": _as_int,
}

_SCHEMA = {
    "run": {"seed": _as_int, "output_dir": str},
    "data": {
        "source": str,
        "csv_path": str,
        "idx_images": str,
        "idx_labels": str,
        "class_labels": _as_list,
        "n_per_class": _as_int,
        "overlap": _as_float,
        "test_fraction": _as_float,
    },
    "dbn": _DBN_KEYS,
    "relearn": {
        "focus_classes": _as_list,
        "thresholds": _as_float_list,
        "threshold_quantiles": _as_float_list,
        "evaluate_on": str,
        "histogram_bins": _as_int,
    },
}


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: Path = Path("out")
    source: str = "fixture"
    csv_path: Path = None
    idx_images: Path = None
    idx_labels: Path = None
    class_labels: tuple = None
    n_per_class: int = 500
    overlap: float = 0.6
    test_fraction: float = 0.0
    dbn: dict = field(default_factory=dict)
    focus_classes: tuple = None
    thresholds: tuple = None
    threshold_quantiles: tuple = None
    evaluate_on: str = "set2"
    histogram_bins: int = 20


def read_config(path):
    """Parse and validate a run config; raises :class:`ConfigError` naming the bad key."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if parser.defaults():
        raise ConfigError(f"{path}: [DEFAULT] section is not supported")
    raw = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, text in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
            try:
                raw[(section, key)] = _SCHEMA[section][key](text)
            except ValueError as exc:
                raise ConfigError(f"{path}: invalid value for [{section}] {key}: {text!r} ({exc})") from None

    base = path.parent
    cfg = RunConfig()
    for (section, key), value in raw.items():
        if section == "dbn":
            cfg.dbn[key] = value
        else:
            setattr(cfg, key, value)
    cfg.output_dir = Path(os.path.normpath(base / cfg.output_dir))
    for key in ("csv_path", "idx_images", "idx_labels"):
        if getattr(cfg, key) is not None:
            setattr(cfg, key, Path(os.path.normpath(base / getattr(cfg, key))))
    _validate(cfg)
    return cfg


def _validate(cfg):
    def bad(key, why):
        raise ConfigError(f"invalid value for {key}: {why}")

    if cfg.source not in ("fixture", "csv", "idx"):
        bad("[data] source", f"{cfg.source!r} is not one of fixture, csv, idx")
    if cfg.source == "csv" and cfg.csv_path is None:
        bad("[data] csv_path", "required when source = csv")
    if cfg.source == "idx" and (cfg.idx_images is None or cfg.idx_labels is None):
        bad("[data] idx_images", "idx_images and idx_labels are required when source = idx")
    if cfg.n_per_class < 1:
        bad("[data] n_per_class", "must be >= 1")
    if not 0.0 <= cfg.overlap <= 1.0:
        bad("[data] overlap", "must lie in [0, 1]")
    if not 0.0 <= cfg.test_fraction < 1.0:
        bad("[data] test_fraction", "must lie in [0, 1)")
    if cfg.thresholds is not None and cfg.threshold_quantiles is not None:
        bad("[relearn] thresholds", "give either thresholds or threshold_quantiles, not both")
    if cfg.thresholds is not None:
        if not cfg.thresholds:
            bad("[relearn] thresholds", "must not be empty")
        if any(t < 0 for t in cfg.thresholds):
            bad("[relearn] thresholds", "must be >= 0")
    if cfg.threshold_quantiles is not None:
        if not cfg.threshold_quantiles or any(not 0 <= q <= 1 for q in cfg.threshold_quantiles):
            bad("[relearn] threshold_quantiles", "must be a non-empty list in [0, 1]")
    if cfg.evaluate_on not in EVALUATION_SETS:
        bad("[relearn] evaluate_on", f"must be one of {', '.join(EVALUATION_SETS)}")
    if cfg.histogram_bins < 1:
        bad("[relearn] histogram_bins", "must be >= 1")
    if cfg.dbn.get("max_layers", 1) < 1:
        bad("[dbn] max_layers", "must be >= 1")
    if not cfg.dbn.get("head_learning_rate", 1.0) > 0:
        bad("[dbn] head_learning_rate", "must be > 0")
    if cfg.dbn.get("head_epochs", 1) < 0:
        bad("[dbn] head_epochs", "must be >= 0")
    model = AdaptiveDBN(**cfg.dbn)
    model.layers_ = []
    try:
        model._new_layer()._check_params()
    except ValueError as exc:
        bad("[dbn]", str(exc))


def load_dataset(cfg):
    if cfg.source == "fixture":
        return make_overlap_fixture(cfg.n_per_class, cfg.overlap, rng=derive_seed(cfg.seed, 0),
                                    class_labels=cfg.class_labels or ("anger", "disgust"))
    if cfg.source == "csv":
        return load_csv(cfg.csv_path, class_labels=cfg.class_labels)
    return load_idx(cfg.idx_images, cfg.idx_labels, class_labels=cfg.class_labels)


def train_test(cfg):
    """``(train, test)``; both are the full dataset when ``test_fraction`` is 0."""
    ds = load_dataset(cfg)
    if cfg.test_fraction == 0:
        return ds, ds
    return split(ds, 1.0 - cfg.test_fraction, derive_seed(cfg.seed, 3))


def _out(cfg, *parts):
    path = cfg.output_dir.joinpath(*parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_train(cfg):
    train, _ = train_test(cfg)
    model = AdaptiveDBN(random_state=cfg.seed, **cfg.dbn)
    model.fit(train.X, train.labels, classes=train.class_labels)
    save_model(model, _out(cfg, "model.json"))
    model.log_.write_epochs_csv(_out(cfg, "train_log.csv"))
    model.log_.write_events_csv(_out(cfg, "train_events.csv"))
    with open(_out(cfg, "head_loss.csv"), "w") as f:
        f.write("epoch,cross_entropy\n")
        f.writelines(f"{k},{v!r}\n" for k, v in enumerate(model.log_.head_loss))
    acc = float(np.mean(model.predict(train.X) == train.labels))
    print(f"trained {model.n_layers_} layer(s) {[r.n_hidden_ for r in model.layers_]}; "
          f"training accuracy {acc:.4f}; model written to {_out(cfg, 'model.json')}")


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    try:
        return load_model(path)
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: unreadable model file ({exc})") from None


def cmd_eval(cfg, model_path):
    model = _load_model(model_path)
    _, test = train_test(cfg)
    try:
        cm = confusion(model, test)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    report = class_report(cm)
    write_confusion_csv(cm, _out(cfg, "eval", "confusion.csv"))
    write_report_csv(report, _out(cfg, "eval", "class_report.csv"))
    write_ratio_csv(report, _out(cfg, "eval", "classification_ratio.csv"))
    text = format_report(cm, report)
    _out(cfg, "eval", "report.txt").write_text(text)
    print(text, end="")


_RELEARN_FILES = ("summary.txt", "kl_hist_p_q1.csv", "kl_hist_p_q2.csv", "kl_aggregate.csv", "sweep.csv")


def cmd_relearn(cfg, model_path):
    parent = _load_model(model_path)
    _, test = train_test(cfg)
    focus = cfg.focus_classes or test.class_labels
    try:
        plan = build_plan(parent, test, focus)
    except DegeneratePartitionError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from None

    q1 = train_child(plan, "set1", random_state=derive_seed(cfg.seed, 1))
    q2 = train_child(plan, "set2", random_state=derive_seed(cfg.seed, 2))
    set0 = plan.subset("set0")
    kl_q1 = kl_divergence(parent, q1, set0, plan.focus_classes, model_pair=("P", "Q1"))
    kl_q2 = kl_divergence(parent, q2, set0, plan.focus_classes, model_pair=("P", "Q2"))

    if cfg.threshold_quantiles is not None:
        basis = kl_divergence(parent, q2, plan.subset("set2"), plan.focus_classes)
        thresholds = quantile_thresholds(basis, cfg.threshold_quantiles)
    elif cfg.thresholds is not None:
        thresholds = list(cfg.thresholds)
    else:
        raise ConfigError("[relearn] thresholds or threshold_quantiles is required for relearn")
    results = relearn_sweep(plan, thresholds, random_state=cfg.seed, q2=q2, evaluate_on=cfg.evaluate_on)

    outdir = cfg.output_dir / "relearn"
    if outdir.is_dir():
        for stale in list(outdir.glob("scatter_*.csv")) + [outdir / n for n in _RELEARN_FILES]:
            stale.unlink(missing_ok=True)
    for name, report in (("kl_hist_p_q1.csv", kl_q1), ("kl_hist_p_q2.csv", kl_q2)):
        counts, edges = kl_histogram(report.kl, cfg.histogram_bins)
        write_histogram_csv(counts, edges, _out(cfg, "relearn", name))
    with open(_out(cfg, "relearn", "kl_aggregate.csv"), "w") as f:
        f.write("pair,aggregate_kl\n")
        f.write(f"KL(P;Q1),{kl_q1.aggregate!r}\n")
        f.write(f"KL(P;Q2),{kl_q2.aggregate!r}\n")
    write_sweep_csv(results, _out(cfg, "relearn", "sweep.csv"))
    for i, r in enumerate(results):
        export_scatter(r.report, r.theta, _out(cfg, "relearn", f"scatter_{i:02d}_theta_{r.theta:.6g}.csv"))

    lines = [plan.summary(), "KL divergence (mean per-sample, natural log, over Set 0)",
             f"  KL(P, Q1) = {kl_q1.aggregate:.6f}", f"  KL(P, Q2) = {kl_q2.aggregate:.6f}", "",
             f"Re-learning sweep (evaluated on {cfg.evaluate_on})",
             f"  {'theta':>14}{'n_above':>10}{'ratio':>10}  flag"]
    for r in results:
        ratio = "-" if r.flag == "empty" else f"{100 * r.classification_ratio:.1f}%"
        lines.append(f"  {r.theta:>14.6g}{r.n_above:>10}{ratio:>10}  {r.flag}")
    text = "\n".join(lines) + "\n"
    _out(cfg, "relearn", "summary.txt").write_text(text)
    print(text, end="")


def cmd_fixture(cfg):
    ds = make_overlap_fixture(cfg.n_per_class, cfg.overlap, rng=derive_seed(cfg.seed, 0),
                              class_labels=cfg.class_labels or ("anger", "disgust"))
    path = _out(cfg, "fixture.csv")
    save_csv(ds, path)
    print(f"wrote {len(ds)} samples to {path}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="adaptive-dbn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", help="train the parent model")
    p.add_argument("--config", required=True)
    p = sub.add_parser("eval", help="confusion matrix and per-class report")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p = sub.add_parser("relearn", help="child models, KL divergence and threshold sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p = sub.add_parser("fixture", help="write the synthetic overlap dataset as CSV")
    p.add_argument("--config", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = read_config(args.config)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.model)
        elif args.command == "relearn":
            cmd_relearn(cfg, args.model)
        else:
            cmd_fixture(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegeneratePartitionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
