"""Command-line entry point: ``egogesture <command> [options]``.

Every command reads its settings from one flat namespace, layered as
built-in defaults < ``--config`` file (JSON or YAML) < ``EGOGESTURE_<NAME>``
environment variables < command-line flags.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from collections import OrderedDict
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .codec import DEFAULT_THRESHOLD, GestureRegistry
from .core import ConfigError, DataError, EgoGestureError, InputError
from .dataio import (ANNOTATIONS, IMAGES, REGISTRY, SPLITS, SplitSpec, SyntheticConfig, generate_synthetic,
                     import_scut, load_dataset, split, split_members, read_splits, write_dataset, write_splits,
                     _read_image)
from .model import NetworkConfig, build, load_backbone, load_checkpoint, save_checkpoint

ENV_PREFIX = "EGOGESTURE_"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class UsageError(Exception):
    pass


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# name, type, default, help
COMMON = [
    ("seed", int, 0, "random seed"),
    ("out", str, None, "output directory, created if needed; files inside are overwritten (default: ./out)"),
]

NETWORK = [
    ("input_size", int, 128, "network input side in pixels"),
    ("divisor", int, 1, "divide every channel width by this (1 = full-size network)"),
    ("dropout", float, 0.5, "dropout rate of the probability head"),
    ("head", str, "ensemble", "positional head: ensemble, ensemble_gap or fc"),
    ("upsample_mode", str, "nearest", "upsampling interpolation: nearest or bilinear"),
]

TRAINING = [
    ("epochs", int, 300, "training epochs"),
    ("batch_size", int, 64, "mini-batch size"),
    ("lr_schedule", str, "1:1e-5,151:1e-6,251:1e-7", "comma-separated start_epoch:learning_rate pairs"),
    ("augment", _bool, True, "apply random geometric and photometric augmentation"),
    ("bias_correction", _bool, False, "use bias-corrected ADAM moment estimates"),
    ("renormalize", _bool, False, "divide the positional loss by the visible-entry count"),
    ("max_steps", int, None, "stop after this many optimizer steps"),
    ("workers", int, 1, "augmentation worker threads"),
    ("checkpoint_every", int, 0, "write a checkpoint every N epochs (0 = only at the end)"),
    ("backbone", str, None, "torch state dict with pretrained VGG-16 'features.*' weights"),
]

COMMANDS: "OrderedDict[str, tuple[str, list]]" = OrderedDict([
    ("synth", ("generate a synthetic dataset", [
        ("count", int, 64, "number of samples"),
        ("width", int, 640, "image width"),
        ("height", int, 480, "image height"),
        ("stratified", _bool, True, "cycle through the classes instead of drawing them at random"),
    ])),
    ("split", ("write splits.json (test/validation/train file lists per class)", [
        ("root", str, None, "dataset root holding annotations.jsonl, or images/<class>/ folders; "
                             "splits.json goes here unless --out is given"),
        ("mode", str, "block", "test/validation selection: block, uniform or fixed"),
        ("test_stride", int, 10, "one test file per this many"),
        ("val_stride", int, 20, "one validation file per this many of the remainder"),
    ])),
    ("import", ("convert a per-class label-list corpus into the dataset layout", [
        ("source", str, None, "corpus directory with one sub-folder per class"),
    ])),
    ("train", ("train a network", [
        ("root", str, None, "dataset root; splits.json selects the train/val sets when present"),
        *NETWORK, *TRAINING,
    ])),
    ("eval", ("evaluate a network on a dataset split", [
        ("root", str, None, "dataset root"),
        ("weights", str, None, "checkpoint written by train"),
        ("which", str, "test", "split to evaluate: test, val, train or all"),
        ("boxes", str, None, "JSON-lines hand boxes; ground-truth boxes when omitted"),
        ("tau", float, DEFAULT_THRESHOLD, "finger visibility threshold"),
        ("metric_mode", str, "class", "classification scoring: class or finger"),
        ("postprocess", str, None, "mean, random_row or none (default follows the head)"),
    ])),
    ("predict", ("run detection on a folder of images", [
        ("weights", str, None, "checkpoint written by train"),
        ("images", str, None, "folder of images"),
        ("boxes", str, None, "JSON-lines hand boxes keyed by image file name; full frame when omitted"),
        ("tau", float, DEFAULT_THRESHOLD, "finger visibility threshold"),
    ])),
    ("ablate", ("train and evaluate the positional-head ablation variants", [
        ("root", str, None, "dataset root"),
        ("weights", str, None, "trained proposed-network checkpoint (trained here when omitted)"),
        ("variants", str, "proposed,averaging-layer-in-network,random-ensemble-sample,direct-fc-regression",
         "comma-separated variants"),
        ("which", str, "test", "split to evaluate"),
        ("tau", float, DEFAULT_THRESHOLD, "finger visibility threshold"),
        *[o for o in NETWORK if o[0] != "head"], *TRAINING,
    ])),
    ("bench", ("time detector, forward pass and post-processing per image", [
        ("weights", str, None, "checkpoint; a freshly initialized network when omitted"),
        ("images", str, None, "folder of images; synthetic images when omitted"),
        ("n_images", int, 50, "timed images"),
        ("warmup", int, 10, "untimed warm-up iterations"),
        *NETWORK,
    ])),
    ("plot", ("render learning curves and a confusion matrix", [
        ("history", str, None, "history.csv written by train"),
        ("report", str, None, "report.json written by eval"),
    ])),
])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _options(command: str) -> list:
    return COMMON + COMMANDS[command][1]


def _defaults(command: str) -> dict:
    return {name: default for name, _, default, _ in _options(command)}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="egogesture", description=__doc__.splitlines()[0],
                     epilog=f"Run 'egogesture <command> --help' for command options. Environment "
                            f"variables {ENV_PREFIX}<OPTION> (upper case, underscores) override the config file.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    parser.commands = {}
    for command, (text, opts) in COMMANDS.items():
        p = sub.add_parser(command, help=text, description=text, argument_default=argparse.SUPPRESS,
                           epilog=f"Precedence: defaults < --config < {ENV_PREFIX}<OPTION> environment "
                                  f"variables (e.g. {ENV_PREFIX}{opts[0][0].upper() if opts else 'SEED'}) < flags.")
        parser.commands[command] = p
        p.add_argument("--config", help="JSON or YAML file of option values (flat mapping)")
        for name, typ, default, help_text in COMMON + opts:
            flag = "--" + name.replace("_", "-")
            shown = help_text if default is None else f"{help_text} (default: {default})"
            if typ is _bool:
                p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, help=shown)
            else:
                p.add_argument(flag, dest=name, type=typ, help=shown)
    return parser


def _read_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} not found")
    text = p.read_text()
    if p.suffix.lower() in (".yaml", ".yml"):
        import yaml
        data = yaml.safe_load(text) or {}
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve(command: str, given: dict, environ: Optional[dict] = None) -> dict:
    """Merge defaults, config file, environment and explicit flags for ``command``."""
    environ = os.environ if environ is None else environ
    types = {name: typ for name, typ, _, _ in _options(command)}
    values = _defaults(command)

    def coerce(name, value, origin):
        if value is None:
            return None
        try:
            return types[name](value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{origin}: bad value for {name}: {value!r}") from exc

    if given.get("config"):
        for k, v in _read_config_file(given["config"]).items():
            if k not in types:
                raise UsageError(f"config file: unknown option {k!r} for {command}")
            values[k] = coerce(k, v, "config file")
    for name in types:
        env = environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = coerce(name, env, ENV_PREFIX + name.upper())
    for k, v in given.items():
        if k in types:
            values[k] = v
    return values


def _require(cfg: dict, *names):
    missing = [n for n in names if cfg.get(n) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _out(cfg: dict) -> Path:
    out = Path(cfg["out"] or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=1, default=str) + "\n")


def parse_schedule(text: str) -> tuple:
    try:
        pairs = [item.split(":") for item in text.split(",") if item.strip()]
        return tuple((int(e), float(lr)) for e, lr in pairs)
    except ValueError as exc:
        raise ConfigError(f"bad learning-rate schedule {text!r}; expected e.g. 1:1e-5,151:1e-6") from exc


def network_config(cfg: dict, head: Optional[str] = None) -> NetworkConfig:
    return NetworkConfig.shrunken(input_size=cfg["input_size"], divisor=cfg["divisor"],
                                  dropout_rate=cfg["dropout"], head=head or cfg.get("head", "ensemble"),
                                  upsample_mode=cfg["upsample_mode"])


def train_config(cfg: dict, checkpoint_dir: Optional[Path] = None):
    from .training import TrainConfig
    return TrainConfig(batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                       lr_schedule=parse_schedule(cfg["lr_schedule"]), augment=cfg["augment"],
                       bias_correction=cfg["bias_correction"], renormalize_positional=cfg["renormalize"],
                       seed=cfg["seed"], max_steps=cfg["max_steps"], checkpoint_every=cfg["checkpoint_every"],
                       checkpoint_dir=str(checkpoint_dir) if checkpoint_dir else None, workers=cfg["workers"])


def _partition(root: str, which: str):
    ds = load_dataset(root)
    split_path = Path(root) / SPLITS
    if which == "all":
        return ds
    if not split_path.exists():
        if which == "train":
            return ds
        raise DataError(f"{split_path} not found; run 'egogesture split --root {root}' or use --which all")
    doc = read_splits(split_path)
    if which not in ("test", "val", "train"):
        raise UsageError(f"--which must be test, val, train or all, got {which!r}")
    return ds.subset(split_members(doc, which))


def _train_and_val(root: str):
    ds = load_dataset(root)
    split_path = Path(root) / SPLITS
    if not split_path.exists():
        return ds, []
    doc = read_splits(split_path)
    return ds.subset(split_members(doc, "train")), ds.subset(split_members(doc, "val"))


def _initial_net(cfg: dict, ncfg: NetworkConfig):
    net = build(ncfg, seed=cfg["seed"])
    if cfg.get("backbone"):
        load_backbone(net, cfg["backbone"])
    return net


# -- commands ----------------------------------------------------------------

def cmd_synth(cfg):
    samples = generate_synthetic(SyntheticConfig(width=cfg["width"], height=cfg["height"], seed=cfg["seed"],
                                                 stratified=cfg["stratified"]), cfg["count"])
    root = write_dataset(_out(cfg), samples)
    print(f"wrote {len(samples)} samples to {root}")


def _files_per_class(root: Path) -> "OrderedDict[str, list[str]]":
    groups: OrderedDict[str, list[str]] = OrderedDict()
    ann = root / ANNOTATIONS
    if ann.exists():
        with open(ann) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    groups.setdefault(rec["class"], []).append(rec["image"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{ann}: bad record ({exc})", line=lineno) from exc
        return groups
    img_root = root / IMAGES if (root / IMAGES).is_dir() else root
    for cdir in sorted(p for p in img_root.iterdir() if p.is_dir()):
        files = sorted(f"{cdir.name}/{f.name}" for f in cdir.iterdir() if f.is_file())
        if files:
            groups[cdir.name] = files
    if not groups:
        raise DataError(f"{root}: neither {ANNOTATIONS} nor per-class image folders found")
    return groups


def cmd_split(cfg):
    _require(cfg, "root")
    root = Path(cfg["root"])
    if not root.is_dir():
        raise DataError(f"dataset root {root} not found")
    spec = SplitSpec(test_stride=cfg["test_stride"], val_stride=cfg["val_stride"], mode=cfg["mode"])
    parts = split(_files_per_class(root), spec, seed=cfg["seed"])
    out = Path(cfg["out"]) if cfg["out"] else root
    out.mkdir(parents=True, exist_ok=True)
    write_splits(out / SPLITS, parts, cfg["seed"], spec)
    for name, p in parts.items():
        print(f"{name}: test {len(p['test'])}  val {len(p['val'])}  train {len(p['train'])}")


def cmd_import(cfg):
    _require(cfg, "source")
    n = import_scut(cfg["source"], _out(cfg))
    print(f"imported {n} records into {cfg['out']}")


def cmd_train(cfg):
    from .training import train, write_history
    _require(cfg, "root")
    out = _out(cfg)
    ncfg = network_config(cfg)
    tcfg = train_config(cfg, out / "checkpoints" if cfg["checkpoint_every"] else None)
    train_set, val_set = _train_and_val(cfg["root"])
    net, history = train(train_set, tcfg, ncfg, val_set, net=_initial_net(cfg, ncfg))
    save_checkpoint(net, out / "weights.npz", extra={"seed": cfg["seed"], "epochs": len(history)})
    write_history(history, out / "history.csv")
    _write_json(out / "train_config.json", cfg)
    last = history[-1] if history else {}
    print(f"trained {len(history)} epochs on {len(train_set)} samples; final L = {last.get('train_L', float('nan')):.6g}")


def _detector(boxes: Optional[str]):
    from .pipeline import BoxFileDetector
    return BoxFileDetector(boxes) if boxes else None


def cmd_eval(cfg):
    from .evaluation import classification_table, evaluate, pixel_error_table
    from .pipeline import write_predictions
    _require(cfg, "root", "weights")
    out = _out(cfg)
    net = load_checkpoint(cfg["weights"])
    samples = list(_partition(cfg["root"], cfg["which"]))
    if not samples:
        raise DataError(f"split {cfg['which']!r} is empty")
    registry = GestureRegistry.load(Path(cfg["root"]) / REGISTRY) if (Path(cfg["root"]) / REGISTRY).exists() else None
    report, dets = evaluate(net, samples, _detector(cfg["boxes"]), registry, cfg["tau"], cfg["postprocess"],
                            cfg["seed"], cfg["metric_mode"])
    _write_json(out / "report.json", report)
    text = classification_table(report["classification"], "Classification") + "\n\n" + \
        pixel_error_table(report["pixel_error"], "Fingertip error") + "\n"
    (out / "report.txt").write_text(text)
    write_predictions(out / "predictions.jsonl", [s.name for s in samples], dets)
    print(text, end="")


def _image_files(folder: str) -> list[Path]:
    d = Path(folder)
    if not d.is_dir():
        raise DataError(f"image folder {d} not found")
    files = sorted(p for p in d.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no images in {d}")
    return files


def cmd_predict(cfg):
    from .pipeline import FullFrameDetector, detect_batch, write_predictions
    _require(cfg, "weights", "images")
    out = _out(cfg)
    net = load_checkpoint(cfg["weights"])
    files = _image_files(cfg["images"])
    ids = [str(p.relative_to(cfg["images"])) for p in files]
    detector = _detector(cfg["boxes"]) or FullFrameDetector()
    results = []
    for start in range(0, len(files), 32):
        chunk = [(i, _read_image(p)) for i, p in zip(ids[start:start + 32], files[start:start + 32])]
        results += detect_batch(chunk, detector, net, cfg["tau"], rng=np.random.default_rng(cfg["seed"]))
    write_predictions(out / "predictions.jsonl", ids, results)
    print(f"wrote {len(results)} predictions to {out / 'predictions.jsonl'}")


def cmd_ablate(cfg):
    from .evaluation import ablation_table, build_variant, evaluate, parse_variant
    from .evaluation.ablation import AblationVariant
    from .training import train
    _require(cfg, "root")
    out = _out(cfg)
    variants = [parse_variant(v.strip()) for v in cfg["variants"].split(",") if v.strip()]
    samples = list(_partition(cfg["root"], cfg["which"]))
    train_set, val_set = _train_and_val(cfg["root"])
    base = network_config(cfg, head="ensemble")
    tcfg = train_config(cfg)
    proposed = None

    def trained_proposed():
        nonlocal proposed
        if proposed is None:
            if cfg["weights"]:
                proposed = load_checkpoint(cfg["weights"])
            else:
                proposed, _ = train(train_set, tcfg, base, val_set, net=_initial_net(cfg, base))
                save_checkpoint(proposed, out / "proposed.npz")
        return proposed

    reports = OrderedDict()
    for v in variants:
        if v is AblationVariant.DIRECT_FC:
            net, over = build_variant(v, trained_proposed().config, cfg["seed"])
            net, _ = train(train_set, tcfg, net.config, val_set, net=net)
            save_checkpoint(net, out / "direct-fc.npz")
        else:
            net, over = build_variant(v, trained_proposed().config, cfg["seed"], weights=trained_proposed())
        reports[v.value], _ = evaluate(net, samples, tau=cfg["tau"], postprocess=over["postprocess"],
                                       seed=cfg["seed"])
    _write_json(out / "ablation.json", reports)
    text = ablation_table(reports) + "\n"
    (out / "ablation.txt").write_text(text)
    print(text, end="")


def cmd_bench(cfg):
    from .evaluation import benchmark, timing_table
    from .pipeline import FullFrameDetector, GroundTruthDetector
    out = _out(cfg)
    net = load_checkpoint(cfg["weights"]) if cfg["weights"] else build(network_config(cfg), seed=cfg["seed"])
    if cfg["images"]:
        images = [_read_image(p) for p in _image_files(cfg["images"])]
        detector, ids = FullFrameDetector(), None
    else:
        samples = generate_synthetic(SyntheticConfig(seed=cfg["seed"]), min(16, cfg["n_images"] + cfg["warmup"]))
        images, ids = [s.image for s in samples], [s.name for s in samples]
        detector = GroundTruthDetector.from_samples(samples)
    rep = benchmark(net, detector, images, n_images=cfg["n_images"], warmup=cfg["warmup"], ids=ids)
    _write_json(out / "bench.json", rep.to_dict())
    text = timing_table(rep.to_dict()) + "\n"
    (out / "bench.txt").write_text(text)
    print(text, end="")


def cmd_plot(cfg):
    from .evaluation.plots import confusion_figure, learning_curves
    from .training import read_history
    if not cfg["history"] and not cfg["report"]:
        raise UsageError("plot needs --history and/or --report")
    out = _out(cfg)
    if cfg["history"]:
        if not Path(cfg["history"]).is_file():
            raise DataError(f"{cfg['history']} not found")
        print(learning_curves(read_history(cfg["history"]), out / "learning_curves.png"))
    if cfg["report"]:
        try:
            rep = json.loads(Path(cfg["report"]).read_text())
            conf = rep["confusion"]
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{cfg['report']}: not an evaluation report ({exc})") from exc
        print(confusion_figure(conf["matrix"], conf["classes"], out / "confusion.png"))


HANDLERS = {"synth": cmd_synth, "split": cmd_split, "import": cmd_import, "train": cmd_train,
            "eval": cmd_eval, "predict": cmd_predict, "ablate": cmd_ablate, "bench": cmd_bench,
            "plot": cmd_plot}


def run(argv: Optional[Sequence[str]] = None, environ: Optional[dict] = None) -> int:
    parser = build_parser()
    try:
        ns, extra = parser.parse_known_args(argv)
        given = vars(ns)
        command = given.pop("command")
        if extra:
            parser.commands[command].error("unrecognized arguments: " + " ".join(extra))
        cfg = resolve(command, given, environ)
        HANDLERS[command](cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EgoGestureError, RuntimeError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
