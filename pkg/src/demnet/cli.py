"""Command-line pipeline: prepare, balance, train, evaluate, predict.

Configuration is an INI file (sections below) with every key defaulted;
flags override file values. Unknown sections or keys are rejected by name.
One root seed drives every stage through fixed offsets (see tensor
module), so a whole run is reproducible from `seed` alone.

    [run]    seed, mode (raw | hybrid)
    [data]   root, height, width, train, val, test, stratified, leak_free
    [smote]  enabled, k, replicate
    [model]  stem_filters, block_filters, dense_widths, dropout, kernel,
             adaptive_pooling
    [train]  epochs, batch_size, lr, rho, eps, shuffle

Every subcommand writes its artifacts plus run_manifest.json (resolved
config, input/output SHA-256 hashes) under --out. Exit codes: 0 success,
2 usage, 3 config, 4 missing file, 5 dataset, 6 container format,
7 checkpoint, 8 training diverged, 9 anything else.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, metrics, model as model_mod, optim, smote as smote_mod
from .tensor import stage_seed

EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_DATASET = 5
EXIT_CONTAINER = 6
EXIT_CHECKPOINT = 7
EXIT_DIVERGED = 8
EXIT_OTHER = 9


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_ints(raw: str):
    return tuple(int(v) for v in raw.split(",") if v.strip())


def _parse_floats(raw: str):
    return tuple(float(v) for v in raw.split(",") if v.strip())


# section -> key -> (parser, default)
_SCHEMA = {
    "run": {
        "seed": (int, 42),
        "mode": (str, "raw"),
    },
    "data": {
        "root": (str, ""),
        "height": (int, 128),
        "width": (int, 128),
        "train": (float, 0.8),
        "val": (float, 0.1),
        "test": (float, 0.1),
        "stratified": (_parse_bool, False),
        "leak_free": (_parse_bool, False),
    },
    "smote": {
        "enabled": (_parse_bool, True),
        "k": (int, 5),
        "replicate": (_parse_bool, False),
    },
    "model": {
        "stem_filters": (int, 16),
        "block_filters": (_parse_ints, (32, 64, 128, 256)),
        "dense_widths": (_parse_ints, (512, 128, 64)),
        "dropout": (_parse_floats, (0.25, 0.25)),
        "kernel": (int, 3),
        "adaptive_pooling": (_parse_bool, False),
    },
    "train": {
        "epochs": (int, 50),
        "batch_size": (int, 128),
        "lr": (float, 1e-3),
        "rho": (float, 0.9),
        "eps": (float, 1e-8),
        "shuffle": (_parse_bool, True),
    },
}

# flag dest -> (section, key)
_FLAG_MAP = {
    "seed": ("run", "seed"),
    "mode": ("run", "mode"),
    "data_root": ("data", "root"),
    "leak_free": ("data", "leak_free"),
    "stratified": ("data", "stratified"),
    "k_neighbors": ("smote", "k"),
    "no_smote": ("smote", "enabled"),
    "replicate": ("smote", "replicate"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "lr"),
}


def load_config(path=None, overrides=None) -> dict:
    """Resolve {section: {key: value}} from defaults, then the INI file,
    then flag overrides. Unknown sections/keys error by name."""
    cfg = {s: {k: d for k, (_, d) in keys.items()} for s, keys in _SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file {path} not found")
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser[section].items():
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown config key {key!r} in [{section}]")
                parse, _ = _SCHEMA[section][key]
                try:
                    cfg[section][key] = parse(raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
    for dest, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = _FLAG_MAP[dest]
        if dest == "no_smote":
            value = not value
        cfg[section][key] = value
    if cfg["run"]["mode"] not in ("raw", "hybrid"):
        raise ConfigError(f"run.mode must be raw or hybrid, got {cfg['run']['mode']!r}")
    return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, cfg: dict,
                    inputs: list, outputs: list):
    manifest = {
        "subcommand": subcommand,
        "config": cfg,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _echo_config(cfg: dict, log):
    log("resolved config:")
    for section in sorted(cfg):
        for key in sorted(cfg[section]):
            log(f"  {section}.{key} = {cfg[section][key]}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_spec(cfg: dict) -> dataio.SplitSpec:
    d = cfg["data"]
    return dataio.SplitSpec(train=d["train"], val=d["val"], test=d["test"],
                            seed=stage_seed(cfg["run"]["seed"], "split"),
                            stratified=d["stratified"])


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} {p} not found")
    return p


# --- subcommands ---------------------------------------------------------------

def _cmd_prepare(args, cfg, log):
    root = _require(cfg["data"]["root"] or args.data_root, "dataset root")
    out = _out_dir(args)
    ds = dataio.load_image_dataset(root, (cfg["data"]["height"], cfg["data"]["width"]))
    log(f"loaded {len(ds)} images from {root}")
    splits = dataio.split_dataset(ds, _split_spec(cfg))
    outputs = []
    manifest_csv = out / "split_manifest.csv"
    dataio.write_split_manifest(manifest_csv, splits)
    outputs.append(manifest_csv)
    for name, part in (("train", splits.train), ("val", splits.val),
                       ("test", splits.test)):
        path = out / f"prepared_{name}.ftc"
        dataio.feature_container_write(part, path)
        outputs.append(path)
        log(f"{name}: {len(part)} samples -> {path}")
    outputs.append(_write_manifest(out, "prepare", cfg, [], outputs))
    return 0


def _balance_rows(x, y, cfg):
    flat = x.reshape(len(x), -1)
    matrix = smote_mod.FeatureMatrix(flat.astype(np.float32), y)
    scfg = smote_mod.SmoteConfig(k=cfg["smote"]["k"],
                                 seed=stage_seed(cfg["run"]["seed"], "smote"))
    balance = (smote_mod.replicate_balance if cfg["smote"]["replicate"]
               else smote_mod.smote_balance)
    result = balance(matrix, scfg)
    bx = result.x.reshape((len(result.x),) + x.shape[1:])
    return bx, result.y, result


def _counts_table(result) -> str:
    lines = ["class before after"]
    for c in sorted(result.counts_before):
        lines.append(f"{c} {result.counts_before[c]} {result.counts_after[c]}")
    return "\n".join(lines) + "\n"


def _cmd_balance(args, cfg, log):
    out = _out_dir(args)
    outputs = []
    inputs = []
    if cfg["data"]["leak_free"]:
        # balance only the (already split) training set
        if not args.features:
            raise ConfigError("--leak-free balance needs --features <train container>")
        src = _require(args.features, "training container")
        inputs.append(src)
        ds = dataio.feature_container_read(src)
        bx, by, result = _balance_rows(ds.samples, ds.labels, cfg)
        path = out / "balanced_train.ftc"
        dataio.feature_container_write((bx, by, ds.class_names), path)
        outputs.append(path)
        log(f"balanced train split {result.counts_before} -> {result.counts_after}")
    else:
        # original order: balance the whole set, then split
        if args.features:
            src = _require(args.features, "feature container")
            inputs.append(src)
            ds = dataio.feature_container_read(src)
        else:
            root = _require(cfg["data"]["root"] or args.data_root, "dataset root")
            ds = dataio.load_image_dataset(
                root, (cfg["data"]["height"], cfg["data"]["width"]))
        if cfg["smote"]["enabled"]:
            bx, by, result = _balance_rows(ds.samples, ds.labels, cfg)
            log(f"balanced {result.counts_before} -> {result.counts_after}")
        else:
            bx, by, result = ds.samples, ds.labels, None
            log("smote disabled; splitting unbalanced data")
        tr, va, te = dataio.split_indices(by, _split_spec(cfg))
        for name, idx in (("train", tr), ("val", va), ("test", te)):
            path = out / f"balanced_{name}.ftc"
            dataio.feature_container_write((bx[idx], by[idx], ds.class_names), path)
            outputs.append(path)
            log(f"{name}: {len(idx)} samples -> {path}")
    if result is not None:
        counts = out / "class_counts.txt"
        counts.write_text(_counts_table(result), encoding="utf-8")
        outputs.append(counts)
    outputs.append(_write_manifest(out, "balance", cfg, inputs, outputs))
    return 0


def _model_config_for(shape: tuple[int, ...], cfg: dict) -> model_mod.DemnetConfig:
    m = cfg["model"]
    base = model_mod.DemnetConfig(
        stem_filters=m["stem_filters"], block_filters=m["block_filters"],
        dense_widths=m["dense_widths"], dropout_rates=m["dropout"],
        kernel_size=m["kernel"], adaptive_pooling=m["adaptive_pooling"])
    if len(shape) == 1 or cfg["run"]["mode"] == "hybrid":
        return model_mod.hybrid_config(shape, base)
    if len(shape) == 3:
        c, h, w = shape
        return model_mod.DemnetConfig(
            in_channels=int(c), in_height=int(h), in_width=int(w),
            stem_filters=m["stem_filters"], block_filters=m["block_filters"],
            dense_widths=m["dense_widths"], dropout_rates=m["dropout"],
            kernel_size=m["kernel"], adaptive_pooling=m["adaptive_pooling"])
    raise dataio.DatasetError(f"cannot build a model for sample shape {shape}")


def _as_model_input(samples: np.ndarray, config: model_mod.DemnetConfig):
    want = (config.in_channels, config.in_height, config.in_width)
    if samples.ndim == 2:
        return samples.reshape((len(samples),) + want)
    if tuple(samples.shape[1:]) != want:
        raise dataio.DatasetError(
            f"container sample shape {samples.shape[1:]} does not match "
            f"model input {want}")
    return samples


def _history_csv(history: list[dict]) -> str:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    for h in history:
        val_loss = f"{h['val_loss']:.6f}" if "val_loss" in h else ""
        val_acc = f"{h['val_acc']:.6f}" if "val_acc" in h else ""
        lines.append(f"{h['epoch']},{h['loss']:.6f},{h['acc']:.6f},"
                     f"{val_loss},{val_acc}")
    return "\n".join(lines) + "\n"


def _cmd_train(args, cfg, log):
    out = _out_dir(args)
    src = _require(args.features, "training container")
    inputs = [src]
    ds = dataio.feature_container_read(src)
    val_ds = None
    if args.val_features:
        val_src = _require(args.val_features, "validation container")
        inputs.append(val_src)
        val_ds = dataio.feature_container_read(val_src)

    mconfig = _model_config_for(tuple(ds.samples.shape[1:]), cfg)
    net = model_mod.build_demnet(mconfig, seed=stage_seed(cfg["run"]["seed"], "init"))
    log(f"built model: {net.parameter_count()} parameters, input "
        f"{mconfig.in_channels}x{mconfig.in_height}x{mconfig.in_width}")

    x = _as_model_input(ds.samples, mconfig)
    t = cfg["train"]
    tconfig = optim.TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                                lr=t["lr"], rho=t["rho"], eps=t["eps"],
                                shuffle=t["shuffle"], seed=cfg["run"]["seed"])
    val_x = val_y = None
    if val_ds is not None:
        val_x = _as_model_input(val_ds.samples, mconfig)
        val_y = val_ds.labels
    history = optim.fit(net, x, ds.labels, tconfig, val_x, val_y, log=log)

    ckpt = out / "checkpoint.dmnt"
    model_mod.save_checkpoint(net, ckpt)
    hist = out / "history.csv"
    hist.write_text(_history_csv(history), encoding="utf-8")
    log(f"checkpoint -> {ckpt}")
    outputs = [ckpt, hist]
    outputs.append(_write_manifest(out, "train", cfg, inputs, outputs))
    return 0


def _cmd_evaluate(args, cfg, log):
    out = _out_dir(args)
    ckpt = _require(args.checkpoint, "checkpoint")
    src = _require(args.features, "evaluation container")
    net = model_mod.load_checkpoint(ckpt)
    net.set_mode("infer")
    ds = dataio.feature_container_read(src)
    x = _as_model_input(ds.samples, net.config)

    preds = []
    bs = cfg["train"]["batch_size"]
    for start in range(0, len(x), bs):
        preds.append(model_mod.predict(net, x[start:start + bs]))
    y_pred = np.concatenate(preds)
    cm = metrics.confusion_matrix(ds.labels, y_pred, num_classes=net.config.num_classes)
    report = metrics.compute_metrics(cm, ds.class_names or None)

    conf_csv = out / "confusion.csv"
    conf_csv.write_text(metrics.confusion_to_csv(cm, report.class_names),
                        encoding="utf-8")
    mjson = out / "metrics.json"
    mjson.write_text(metrics.report_to_json(report) + "\n", encoding="utf-8")
    rpt = out / "report.txt"
    rpt.write_text(metrics.render_report(report) + "\n", encoding="utf-8")
    log(metrics.render_report(report))
    outputs = [conf_csv, mjson, rpt]
    outputs.append(_write_manifest(out, "evaluate", cfg, [ckpt, src], outputs))
    return 0


def _cmd_predict(args, cfg, log):
    out = _out_dir(args)
    ckpt = _require(args.checkpoint, "checkpoint")
    images = _require(args.images, "image directory")
    net = model_mod.load_checkpoint(ckpt)
    net.set_mode("infer")
    hw = (net.config.in_height, net.config.in_width)
    files = sorted(p for p in Path(images).iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        raise dataio.DatasetError(f"no images under {images}")
    batch = np.stack([dataio.decode_image(p, hw) for p in files])
    if net.config.in_channels != 1:
        raise dataio.DatasetError(
            f"predict reads grayscale images; model wants {net.config.in_channels} channels")
    preds = model_mod.predict(net, batch)
    lines = ["filename,predicted_class"]
    for p, c in zip(files, preds):
        lines.append(f"{p.name},{dataio.CLASS_NAMES[c]}")
    csv = out / "predictions.csv"
    csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log(f"{len(files)} predictions -> {csv}")
    _write_manifest(out, "predict", cfg, [ckpt], [csv])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demnet",
        description="4-class dementia-stage MRI training pipeline")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="root seed (default 42)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = sub.add_parser("prepare", help="load images, split, write containers")
    common(p)
    p.add_argument("--data-root", help="dataset root directory")
    p.add_argument("--stratified", action="store_true", default=None)

    p = sub.add_parser("balance", help="SMOTE-balance classes")
    common(p)
    p.add_argument("--data-root", help="dataset root (balance whole set, then split)")
    p.add_argument("--features", help="input container (required with --leak-free)")
    p.add_argument("--k-neighbors", type=int, dest="k_neighbors")
    p.add_argument("--no-smote", action="store_true", default=None)
    p.add_argument("--replicate", action="store_true", default=None,
                   help="duplicate instead of interpolating")
    p.add_argument("--leak-free", action="store_true", default=None,
                   help="balance the training split only")

    p = sub.add_parser("train", help="train on a container")
    common(p)
    p.add_argument("--features", required=True, help="training container")
    p.add_argument("--val-features", help="validation container")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--mode", choices=("raw", "hybrid"))

    p = sub.add_parser("evaluate", help="metrics on a labelled container")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True, help="evaluation container")

    p = sub.add_parser("predict", help="classify a directory of images")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="flat directory of images")
    return parser


_COMMANDS = {
    "prepare": _cmd_prepare,
    "balance": _cmd_balance,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
}

_EXIT_BY_ERROR = (
    (ConfigError, EXIT_CONFIG),
    (FileNotFoundError, EXIT_MISSING),
    (dataio.ContainerError, EXIT_CONTAINER),
    (model_mod.CheckpointError, EXIT_CHECKPOINT),
    (optim.TrainingDivergedError, EXIT_DIVERGED),
    (dataio.DatasetError, EXIT_DATASET),
    (ValueError, EXIT_DATASET),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = (lambda *_: None) if args.quiet else print
    try:
        overrides = {dest: getattr(args, dest, None) for dest in _FLAG_MAP}
        cfg = load_config(args.config, overrides)
        _echo_config(cfg, log)
        return _COMMANDS[args.subcommand](args, cfg, log)
    except Exception as exc:
        for klass, code in _EXIT_BY_ERROR:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
