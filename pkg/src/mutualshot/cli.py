"""Command-line front end: ``mutualshot <command> [options]``.

Options may also come from a JSON file given with ``--config``; keys are the
option names with underscores. A flag on the command line overrides the
file. Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import (ShiftSpec, load_bundle, load_dataset, save_bundle, save_dataset)
from .errors import ConfigError, FormatError, NumericError
from .features import extract_feature_matrix, read_feature_csv, write_feature_csv
from .kdf import TRAIN_LOG_COLUMNS, evaluate_bundle, write_log_csv
from .metrics import METRIC_NAMES
from .pipeline import make_domains, pretrain
from .shot import ADAPT_LOG_COLUMNS, AdaptFlags, adapt

log = logging.getLogger("mutualshot")

EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC = 2, 3, 4
REQUIRED = object()

# name -> (type, default, help); bool options are on/off flags
COMMON = {"seed": (int, 0, "master random seed")}
ADAPT_OPTS = {
    "shots": (int, 1, "labelled target windows per class"),
    "epochs": (int, 30, "adaptation epochs"),
    "batch_size": (int, 32, "mini-batch size"),
    "lr_sdt": (float, 1e-3, "tree learning rate"),
    "lr_vit": (float, 1e-4, "transformer learning rate"),
    "weight_decay": (float, 1e-4, "decoupled weight decay"),
    "no_pseudo": (bool, False, "drop pseudo-labels (SHOT-IM)"),
    "no_consistency": (bool, False, "use each model's own pseudo-labels on every sample (SHOT)"),
    "no_ssl": (bool, False, "ignore the labelled target windows"),
    "sdt_rep": (str, "gates", "tree representation for centroids: gates, paths or features"),
}
COMMANDS = {
    "gen-data": ("write synthetic source, target and held-out target datasets", {
        "out_dir": (str, REQUIRED, "output directory"),
        "n_per_class": (int, 60, "windows per class"),
        "n_channels": (int, 8, "channels"),
        "n_samples": (int, 256, "samples per window"),
        "fs": (float, 256.0, "sampling rate in Hz"),
        "n_subjects": (int, 12, "subjects per dataset"),
        "amplitude_scale": (float, 1.6, "target amplitude factor"),
        "noise_sigma": (float, 0.5, "extra white noise on the target"),
        "freq_jitter_hz": (float, 1.5, "per-subject rhythm speed-up on the target"),
        "channel_drop_p": (float, 0.0, "probability of a silent target channel"),
    }),
    "extract-features": ("write the 41-per-channel feature matrix of a dataset", {
        "data": (str, REQUIRED, "dataset file"),
        "out": (str, REQUIRED, "feature CSV"),
    }),
    "pretrain": ("mutual-learning pre-training on a labelled source dataset", {
        "source": (str, REQUIRED, "source dataset file"),
        "out": (str, REQUIRED, "output bundle"),
        "features": (str, None, "cached source feature CSV"),
        "log": (str, None, "training log CSV (default: <out>.log.csv)"),
        "alpha": (float, 1.0, "weight of the divergence term"),
        "sdt_depth": (int, 4, "tree depth"),
        "patch_len": (int, 32, "samples per transformer patch"),
        "d_model": (int, 64, "token width"),
        "n_layers": (int, 4, "encoder blocks"),
        "n_heads": (int, 4, "attention heads"),
        "d_ff": (int, 128, "feed-forward width"),
        "epochs": (int, 50, "maximum epochs"),
        "batch_size": (int, 32, "mini-batch size"),
        "lr_sdt": (float, 1e-2, "tree learning rate"),
        "lr_vit": (float, 1e-3, "transformer learning rate"),
        "weight_decay": (float, 1e-4, "decoupled weight decay"),
        "patience": (int, 10, "early-stopping patience in epochs"),
        "val_folds": (int, 3, "subject folds; one is held out for early stopping (0 = none)"),
        "jsd_joint_grad": (bool, False, "let the divergence gradient reach both models"),
    }),
    "adapt": ("source-free adaptation of a bundle to a target dataset", {
        "bundle": (str, REQUIRED, "pre-trained bundle"),
        "target": (str, REQUIRED, "target dataset file"),
        "out": (str, REQUIRED, "adapted bundle"),
        "features": (str, None, "cached target feature CSV"),
        "log": (str, None, "adaptation log CSV (default: <out>.log.csv)"),
        **ADAPT_OPTS,
    }),
    "evaluate": ("metrics of both models of a bundle on a labelled dataset", {
        "bundle": (str, REQUIRED, "bundle"),
        "data": (str, REQUIRED, "labelled dataset file"),
        "out": (str, REQUIRED, "JSON report"),
        "features": (str, None, "cached feature CSV"),
    }),
    "sweep-shots": ("adapt at several shot counts and tabulate the metrics", {
        "bundle": (str, REQUIRED, "pre-trained bundle"),
        "target": (str, REQUIRED, "target dataset file"),
        "eval": (str, None, "labelled evaluation dataset (default: the target)"),
        "out": (str, REQUIRED, "sweep CSV"),
        "shot_list": (str, "1,3,5", "comma-separated shot counts"),
        "repeats": (int, 3, "adaptation runs per shot count, seeds seed..seed+repeats-1"),
        **{k: v for k, v in ADAPT_OPTS.items() if k != "shots"},
    }),
}
PATH_INPUTS = {"data", "source", "target", "bundle", "features", "eval"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"mutualshot: config error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mutualshot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file of option values")
        p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
        for key, (typ, default, text) in {**opts, **COMMON}.items():
            flag = "--" + key.replace("_", "-")
            shown = "required" if default is REQUIRED else f"default {default}"
            if typ is bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None,
                               help=text)
            else:
                p.add_argument(flag, dest=key, type=typ, default=None,
                               help=text if "default" in text else f"{text} ({shown})")
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the JSON file, then explicit flags; validated."""
    opts = {**COMMANDS[command][1], **COMMON}
    cfg = {k: default for k, (_, default, _) in opts.items()}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(from_file) - set(opts))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {unknown}")
        for key, val in from_file.items():
            cfg[key] = _coerce(key, opts[key][0], val)
    for key in opts:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    missing = [k for k, v in cfg.items() if v is REQUIRED]
    if missing:
        raise ConfigError("missing required option(s): "
                          + ", ".join("--" + k.replace("_", "-") for k in missing))
    _validate(command, cfg)
    return cfg


def _coerce(key, typ, val):
    if val is None:
        return None
    if typ is bool:
        if not isinstance(val, bool):
            raise ConfigError(f"{key} must be true or false")
        return val
    if typ is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"{key} must be an integer")
    if typ is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise ConfigError(f"{key} must be a number")
    if typ is str and not isinstance(val, str):
        raise ConfigError(f"{key} must be a string")
    return typ(val)


def _validate(command: str, cfg: dict):
    for key in PATH_INPUTS & set(cfg):
        if cfg[key] is not None and not os.path.isfile(cfg[key]):
            raise ConfigError(f"{key} file not found: {cfg[key]}")
    positive = ("n_per_class", "n_channels", "n_samples", "n_subjects", "epochs", "batch_size",
                "sdt_depth", "patch_len", "d_model", "n_layers", "n_heads", "d_ff", "repeats")
    for key in positive:
        if key in cfg and cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    for key in ("fs",):
        if key in cfg and not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive")
    for key in ("alpha", "lr_sdt", "lr_vit", "weight_decay", "shots", "patience", "val_folds"):
        if key in cfg and not cfg[key] >= 0:
            raise ConfigError(f"{key} must be >= 0")
    if cfg.get("val_folds") == 1:
        raise ConfigError("val_folds must be 0 or at least 2")
    if "sdt_rep" in cfg and cfg["sdt_rep"] not in ("gates", "paths", "features"):
        raise ConfigError("sdt_rep must be gates, paths or features")
    if command == "gen-data":
        shift_spec(cfg)
    if command == "pretrain":
        if cfg["d_model"] % cfg["n_heads"]:
            raise ConfigError("d_model must be divisible by n_heads")
    if command == "sweep-shots":
        shot_counts(cfg)


def shift_spec(cfg: dict) -> ShiftSpec:
    return ShiftSpec(amplitude_scale=cfg["amplitude_scale"], noise_sigma=cfg["noise_sigma"],
                     freq_jitter_hz=cfg["freq_jitter_hz"], channel_drop_p=cfg["channel_drop_p"])


def shot_counts(cfg: dict) -> list[int]:
    try:
        shots = [int(s) for s in cfg["shot_list"].split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad shot_list {cfg['shot_list']!r}") from exc
    if not shots or min(shots) < 0:
        raise ConfigError("shot_list needs non-negative integers")
    return shots


def _header(command: str, cfg: dict) -> dict:
    return {"command": command, "config": cfg, "seed": cfg["seed"]}


def _features(path, ds):
    if path is None:
        return extract_feature_matrix(ds.windows, ds.fs)
    subjects, labels, feats = read_feature_csv(path)
    if feats.shape != (len(ds), 41 * ds.n_channels) or not np.array_equal(labels, ds.labels):
        raise FormatError(f"feature cache {path} does not match the dataset", 0)
    return feats


def _check_shape(bundle, ds):
    cfg = bundle.vit.config
    if (ds.n_channels, ds.n_samples, ds.n_classes) != (cfg.n_channels, cfg.n_samples,
                                                       cfg.n_classes):
        raise ConfigError(f"dataset is {ds.n_channels}x{ds.n_samples} with {ds.n_classes} "
                          f"classes, bundle expects {cfg.n_channels}x{cfg.n_samples} with "
                          f"{cfg.n_classes}")


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands
def cmd_gen_data(cfg: dict):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    gen = {k: cfg[k] for k in ("n_per_class", "n_channels", "n_samples", "fs")}
    sets = make_domains(cfg["seed"], shift=shift_spec(cfg), n_subjects=cfg["n_subjects"], **gen)
    for name, ds in zip(("source", "target", "target_test"), sets):
        path = out / f"{name}.eegw"
        save_dataset(ds, path)
        # the binary format has no metadata block, so the config sits next to it
        _write_json(path.with_suffix(".json"), {**_header("gen-data", cfg), "role": name,
                                                "n_windows": len(ds)})
        log.info("wrote %s (%d windows)", path, len(ds))


def cmd_extract_features(cfg: dict):
    ds = load_dataset(cfg["data"])
    feats = extract_feature_matrix(ds.windows, ds.fs)
    write_feature_csv(cfg["out"], ds.subjects, ds.labels, feats, _header("extract-features", cfg))
    log.info("wrote %s (%d x %d)", cfg["out"], *feats.shape)


def cmd_pretrain(cfg: dict):
    ds = load_dataset(cfg["source"])
    feats = _features(cfg["features"], ds)
    vit_kwargs = {k: cfg[k] for k in ("patch_len", "d_model", "n_layers", "n_heads", "d_ff")}
    if ds.n_samples % cfg["patch_len"]:
        raise ConfigError(f"window length {ds.n_samples} not divisible by patch_len")
    bundle, history, _ = pretrain(
        ds, feats, seed=cfg["seed"], val_folds=cfg["val_folds"], alpha=cfg["alpha"],
        sdt_depth=cfg["sdt_depth"], vit_kwargs=vit_kwargs, epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], lr_sdt=cfg["lr_sdt"], lr_vit=cfg["lr_vit"],
        weight_decay=cfg["weight_decay"], patience=cfg["patience"],
        joint_grad=cfg["jsd_joint_grad"])
    bundle.meta = _header("pretrain", cfg)
    save_bundle(bundle, cfg["out"])
    write_log_csv(cfg["log"] or cfg["out"] + ".log.csv", history, TRAIN_LOG_COLUMNS,
                  bundle.meta)
    log.info("wrote %s", cfg["out"])


def _adapt_kwargs(cfg: dict) -> dict:
    return dict(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr_sdt=cfg["lr_sdt"],
                lr_vit=cfg["lr_vit"], weight_decay=cfg["weight_decay"], sdt_rep=cfg["sdt_rep"],
                flags=AdaptFlags(no_pseudo=cfg["no_pseudo"], no_consistency=cfg["no_consistency"],
                                 no_ssl=cfg["no_ssl"]))


def cmd_adapt(cfg: dict):
    bundle = load_bundle(cfg["bundle"])
    target = load_dataset(cfg["target"])
    _check_shape(bundle, target)
    feats = _features(cfg["features"], target)
    adapted, history, state = adapt(bundle, target, shots=cfg["shots"], seed=cfg["seed"],
                                    features=feats, **_adapt_kwargs(cfg))
    adapted.meta = {**_header("adapt", cfg), "pretrain": bundle.meta,
                    "labeled_idx": state.labeled_idx.tolist()}
    save_bundle(adapted, cfg["out"])
    write_log_csv(cfg["log"] or cfg["out"] + ".log.csv", history, ADAPT_LOG_COLUMNS,
                  _header("adapt", cfg))
    log.info("wrote %s", cfg["out"])


def cmd_evaluate(cfg: dict):
    bundle = load_bundle(cfg["bundle"])
    ds = load_dataset(cfg["data"])
    _check_shape(bundle, ds)
    if (ds.labels < 0).any():
        raise ConfigError("evaluation needs a fully labelled dataset")
    feats = _features(cfg["features"], ds)
    rep = evaluate_bundle(bundle, ds.windows, feats, ds.labels)
    _write_json(cfg["out"], {**_header("evaluate", cfg),
                             **{m: r.as_dict() for m, r in rep.items()}})
    for m, r in rep.items():
        log.info("%s: acc %.4f bca %.4f f1 %.4f", m, r.acc, r.bca, r.f1_weighted)


def cmd_sweep_shots(cfg: dict):
    bundle = load_bundle(cfg["bundle"])
    target = load_dataset(cfg["target"])
    test = load_dataset(cfg["eval"]) if cfg["eval"] else target
    _check_shape(bundle, target)
    _check_shape(bundle, test)
    if (test.labels < 0).any():
        raise ConfigError("evaluation needs a fully labelled dataset")
    f_tgt = extract_feature_matrix(target.windows, target.fs)
    f_test = f_tgt if test is target else extract_feature_matrix(test.windows, test.fs)
    rows = []
    for shots in shot_counts(cfg):
        vals = {}
        for r in range(cfg["repeats"]):
            adapted, _, _ = adapt(bundle, target, shots=shots, seed=cfg["seed"] + r,
                                  features=f_tgt, **_adapt_kwargs(cfg))
            for model, rep in evaluate_bundle(adapted, test.windows, f_test, test.labels).items():
                for metric in METRIC_NAMES:
                    vals.setdefault((model, metric), []).append(getattr(rep, metric))
        for (model, metric), v in vals.items():
            rows.append((shots, model, metric, float(np.mean(v)), float(np.std(v))))
        log.info("shots %d done", shots)
    with open(cfg["out"], "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(_header("sweep-shots", cfg), sort_keys=True) + "\n")
        fh.write("shots,model,metric,mean,std\n")
        for shots, model, metric, mean, std in rows:
            fh.write(f"{shots},{model},{metric},{mean:.6f},{std:.6f}\n")


HANDLERS = {"gen-data": cmd_gen_data, "extract-features": cmd_extract_features,
            "pretrain": cmd_pretrain, "adapt": cmd_adapt, "evaluate": cmd_evaluate,
            "sweep-shots": cmd_sweep_shots}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_config(args.command, args)
        log.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
        HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"mutualshot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"mutualshot: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"mutualshot: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
