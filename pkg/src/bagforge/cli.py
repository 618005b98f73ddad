"""Command-line entry point: synthesize/ingest -> split -> train -> evaluate
-> visualize.

Exit codes: 0 success, 1 domain/config errors (including usage), 2 file
format and I/O errors.  Every training/eval/tsne run writes its resolved
configuration next to its outputs, and re-running from that file
reproduces the outputs bit for bit.
"""

import argparse
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from . import bench as benchmod
from . import datastore as ds
from . import metrics as mx
from . import model as mdl
from . import optim, tsne
from .aggregators import VARIANTS
from .errors import BagforgeError, ConfigError, FormatError

ENV_SEED = "BAGFORGE_SEED"


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit-code-1 errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return json.dumps(str(value))


def dump_config(doc: dict) -> str:
    return "".join(f"{key} = {_toml_value(val)}\n" for key, val in doc.items())


def load_config_file(path, allowed: set) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"{path}: invalid config file ({exc})") from exc
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return doc


def _resolve(args, key: str, filecfg: dict, default):
    """Precedence: explicit flag > config file > default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in filecfg:
        return filecfg[key]
    return default


def _resolve_seed(args, filecfg: dict) -> int:
    value = _resolve(args, "seed", filecfg, None)
    if value is None:
        value = os.environ.get(ENV_SEED, 0)
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {value!r}")


def build_parser() -> Parser:
    parser = Parser(prog="bagforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="TOML key/value file; "
                       "flags override file values")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic bag dataset")
    common(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--bags", type=int, default=None, help="bags per class")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--sep", type=float, default=None)
    p.add_argument("--n-lo", type=int, default=None)
    p.add_argument("--n-hi", type=int, default=None)
    p.add_argument("--dataset-id", default=None)

    p = sub.add_parser("split", help="assign stratified train/val/test splits")
    common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--train", type=float, default=None)
    p.add_argument("--val", type=float, default=None)
    p.add_argument("--test", type=float, default=None)
    p.add_argument("--grouping", choices=("core", "tma"), default=None)
    p.add_argument("--force", action="store_true", default=None)

    p = sub.add_parser("train", help="train one aggregator configuration")
    common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--aggregator", choices=VARIANTS, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--no-class-weights", action="store_true", default=None)
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--run-id", default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", choices=("train", "val", "test"), default=None)
    p.add_argument("--average", choices=("macro", "weighted"), default=None)
    p.add_argument("--run-id", default=None)
    # training-configuration overrides; must match the checkpoint's hash
    p.add_argument("--aggregator", choices=VARIANTS, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--no-class-weights", action="store_true", default=None)
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)

    p = sub.add_parser("tsne", help="embed core means to 2-D and plot")
    common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default=None)
    p.add_argument("--perplexity", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--run-id", default=None)

    p = sub.add_parser("count-params", help="trainable parameter accounting")
    common(p)
    p.add_argument("--aggregator", choices=VARIANTS, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)

    p = sub.add_parser("inspect", help="dump a bag header or manifest stats")
    p.add_argument("path")

    p = sub.add_parser("bench", help="compare compiled and numpy kernels")
    p.add_argument("--repeats", type=int, default=20)

    return parser


_TRAIN_KEYS = {"manifest", "out", "run_id", "seed", "aggregator", "lr", "epochs",
               "patience", "no_class_weights", "d_model", "heads", "layers",
               "hidden", "weight_decay"}
_EVAL_KEYS = {"manifest", "out", "run_id", "seed", "checkpoint", "split", "average",
              "aggregator", "lr", "epochs", "patience", "no_class_weights",
              "d_model", "heads", "layers", "hidden", "weight_decay"}
_SYNTH_KEYS = {"out", "seed", "k", "bags", "d", "sep", "n_lo", "n_hi", "dataset_id"}
_SPLIT_KEYS = {"manifest", "out", "seed", "train", "val", "test", "grouping", "force"}
_TSNE_KEYS = {"manifest", "out", "run_id", "seed", "split", "perplexity", "iterations"}


def _filecfg(args, allowed: set) -> dict:
    if getattr(args, "config", None):
        return load_config_file(args.config, allowed)
    return {}


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"missing required option {flag}")
    return value


def _write_resolved(doc: dict, out_dir: str, run_id: str, suffix="config.toml") -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{run_id}.{suffix}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(doc))
    return path


def cmd_synth(args) -> int:
    cfg = _filecfg(args, _SYNTH_KEYS)
    out = _require(_resolve(args, "out", cfg, None), "--out")
    seed = _resolve_seed(args, cfg)
    k = int(_resolve(args, "k", cfg, 4))
    bags = int(_resolve(args, "bags", cfg, 50))
    d = int(_resolve(args, "d", cfg, 512))
    sep = float(_resolve(args, "sep", cfg, 6.0))
    n_lo = int(_resolve(args, "n_lo", cfg, 8))
    n_hi = int(_resolve(args, "n_hi", cfg, 16))
    dataset_id = _resolve(args, "dataset_id", cfg, "synthetic")
    manifest = ds.synthesize_dataset(k=k, bags_per_class=bags, n_range=(n_lo, n_hi),
                                     d=d, separation=sep, seed=seed, out_dir=out,
                                     dataset_id=dataset_id)
    _write_resolved({"out": out, "seed": seed, "k": k, "bags": bags, "d": d,
                     "sep": sep, "n_lo": n_lo, "n_hi": n_hi,
                     "dataset_id": dataset_id}, out, "synth")
    print(f"wrote {len(manifest.entries)} bags + manifest.json under {out}")
    return 0


def cmd_split(args) -> int:
    cfg = _filecfg(args, _SPLIT_KEYS)
    manifest_path = _require(_resolve(args, "manifest", cfg, None), "--manifest")
    fractions = (float(_resolve(args, "train", cfg, 0.6)),
                 float(_resolve(args, "val", cfg, 0.15)),
                 float(_resolve(args, "test", cfg, 0.25)))
    spec = ds.SplitSpec(fractions=fractions, seed=_resolve_seed(args, cfg),
                        grouping=_resolve(args, "grouping", cfg, "core"),
                        force=bool(_resolve(args, "force", cfg, False)))
    manifest = ds.load_manifest(manifest_path)
    out_path = _resolve(args, "out", cfg, None) or manifest_path
    result = ds.stratified_split(manifest, spec)
    ds.save_manifest(result, out_path)
    _write_resolved({"manifest": manifest_path, "out": out_path,
                     "seed": spec.seed, "train": spec.fractions[0],
                     "val": spec.fractions[1], "test": spec.fractions[2],
                     "grouping": spec.grouping, "force": spec.force},
                    os.path.dirname(os.path.abspath(out_path)), "split")
    sizes = {s: len(result.select(s)) for s in ("train", "val", "test")}
    print(f"split {len(result.entries)} cores -> "
          f"{sizes['train']}/{sizes['val']}/{sizes['test']} (train/val/test)")
    return 0


def _train_config_from(args, cfg: dict, seed: int) -> optim.TrainConfig:
    return optim.TrainConfig(
        aggregator=_resolve(args, "aggregator", cfg, "bgap"),
        lr=float(_resolve(args, "lr", cfg, 2e-5)),
        epochs=int(_resolve(args, "epochs", cfg, 50)),
        seed=seed,
        patience=int(_resolve(args, "patience", cfg, 10)),
        class_weighting=not bool(_resolve(args, "no_class_weights", cfg, False)),
        d_model=int(_resolve(args, "d_model", cfg, 512)),
        heads=int(_resolve(args, "heads", cfg, 8)),
        layers=int(_resolve(args, "layers", cfg, 2)),
        hidden=int(_resolve(args, "hidden", cfg, 128)),
        weight_decay=float(_resolve(args, "weight_decay", cfg, 0.01)),
    )


def _resolved_train_doc(manifest_path, out, run_id, config: optim.TrainConfig) -> dict:
    return {
        "manifest": manifest_path,
        "out": out,
        "run_id": run_id,
        "seed": config.seed,
        "aggregator": config.aggregator,
        "lr": config.lr,
        "epochs": config.epochs,
        "patience": config.patience,
        "no_class_weights": not config.class_weighting,
        "d_model": config.d_model,
        "heads": config.heads,
        "layers": config.layers,
        "hidden": config.hidden,
        "weight_decay": config.weight_decay,
    }


def cmd_train(args) -> int:
    cfg = _filecfg(args, _TRAIN_KEYS)
    manifest_path = _require(_resolve(args, "manifest", cfg, None), "--manifest")
    out = _require(_resolve(args, "out", cfg, None), "--out")
    run_id = _resolve(args, "run_id", cfg, "run")
    config = _train_config_from(args, cfg, _resolve_seed(args, cfg))
    manifest = ds.load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    result = optim.train(manifest, root, config)

    os.makedirs(out, exist_ok=True)
    ckpt_path = os.path.join(out, f"{run_id}.ckpt")
    ds.write_checkpoint(ckpt_path, result.params.named_tensors(),
                        result.config_hash, max(result.best_epoch, 0))
    with open(os.path.join(out, f"{run_id}.log.ndjson"), "w", encoding="utf-8") as fh:
        fh.write(result.log_lines())
    _write_resolved(_resolved_train_doc(manifest_path, out, run_id, config),
                    out, run_id)
    total = mdl.count_params(result.params)
    print(f"trained {config.aggregator} ({total} trainable params), "
          f"best epoch {result.best_epoch} val macro-F1 {result.best_val_f1:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _load_model_from_checkpoint(ckpt_path, config: optim.TrainConfig,
                                manifest: ds.Manifest) -> mdl.ModelParams:
    tensors, chash, _epoch = ds.read_checkpoint(ckpt_path)
    if chash != optim.config_hash(config):
        raise ConfigError(
            f"{ckpt_path}: checkpoint was trained under a different configuration "
            f"(hash {chash}, resolved {optim.config_hash(config)})")
    params = mdl.init_model(config.aggregator, manifest.d, manifest.k, config.seed,
                            d_model=config.d_model, heads=config.heads,
                            layers=config.layers, hidden=config.hidden)
    named = dict(params.named_tensors())
    if set(named) != set(tensors):
        raise FormatError(f"{ckpt_path}: tensor names do not match the "
                          f"{config.aggregator} architecture")
    for name, tensor in named.items():
        if tensors[name].shape != tensor.shape:
            raise FormatError(f"{ckpt_path}: tensor {name!r} has shape "
                              f"{tensors[name].shape}, expected {tensor.shape}")
        tensor.data = tensors[name]
    return params


def cmd_eval(args) -> int:
    cfg_path = getattr(args, "config", None)
    ckpt_path = getattr(args, "checkpoint", None)
    if cfg_path is None and ckpt_path is not None:
        guess = ckpt_path[:-5] + ".config.toml" if ckpt_path.endswith(".ckpt") else None
        if guess and os.path.exists(guess):
            args.config = guess
    cfg = _filecfg(args, _EVAL_KEYS)
    ckpt_path = _require(_resolve(args, "checkpoint", cfg, None), "--checkpoint")
    manifest_path = _require(_resolve(args, "manifest", cfg, None), "--manifest")
    out = _require(_resolve(args, "out", cfg, None), "--out")
    run_id = _resolve(args, "run_id", cfg, "eval")
    split = _resolve(args, "split", cfg, "test")
    average = _resolve(args, "average", cfg, "macro")
    config = _train_config_from(args, cfg, _resolve_seed(args, cfg))

    manifest = ds.load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    params = _load_model_from_checkpoint(ckpt_path, config, manifest)
    bags = ds.load_bags(manifest, root, split)
    if not bags:
        raise ConfigError(f"split {split!r} is empty")
    cm, _ = optim.evaluate_split(bags, params)
    report = mx.macro_metrics(cm, average=average)
    paths = mx.emit_report(cm, report, out, run_id, manifest.class_names)
    doc = _resolved_train_doc(manifest_path, out, run_id, config)
    doc.update({"checkpoint": ckpt_path, "split": split, "average": average})
    _write_resolved(doc, out, run_id, "eval.config.toml")
    print(f"{split} ({average}): SEN {report.sen:.4f}  PREC {report.prec:.4f}  "
          f"ACC {report.acc:.4f}  F1 {report.f1:.4f}")
    print(f"report: {paths['json']}")
    return 0


def cmd_tsne(args) -> int:
    cfg = _filecfg(args, _TSNE_KEYS)
    manifest_path = _require(_resolve(args, "manifest", cfg, None), "--manifest")
    out = _require(_resolve(args, "out", cfg, None), "--out")
    run_id = _resolve(args, "run_id", cfg, "map")
    split = _resolve(args, "split", cfg, "all")
    seed = _resolve_seed(args, cfg)
    config = tsne.TsneConfig(
        perplexity=float(_resolve(args, "perplexity", cfg, 30.0)),
        iterations=int(_resolve(args, "iterations", cfg, 1000)),
        seed=seed)
    manifest = ds.load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    eset = tsne.core_embeddings(manifest, root, None if split == "all" else split)
    coords, kl_first, kl_final = tsne.run_tsne(eset, config)
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, f"{run_id}.tsne.csv")
    svg_path = os.path.join(out, f"{run_id}.tsne.svg")
    tsne.write_coords_csv(csv_path, eset.core_ids, coords, eset.labels)
    tsne.emit_scatter(coords, eset.labels, manifest.class_names, svg_path)
    _write_resolved({"manifest": manifest_path, "out": out, "run_id": run_id,
                     "seed": seed, "split": split,
                     "perplexity": config.perplexity,
                     "iterations": config.iterations}, out, run_id, "tsne.config.toml")
    print(f"embedded {len(eset.core_ids)} cores; KL {kl_first:.4f} -> {kl_final:.4f}")
    print(f"scatter: {svg_path}")
    return 0


def cmd_count_params(args) -> int:
    cfg = _filecfg(args, {"aggregator", "d", "k", "d_model", "heads", "layers",
                          "hidden", "seed", "out"})
    variant = _resolve(args, "aggregator", cfg, "transmil")
    d = int(_resolve(args, "d", cfg, 512))
    k = int(_resolve(args, "k", cfg, 4))
    params = mdl.init_model(variant, d, k, seed=0,
                            d_model=int(_resolve(args, "d_model", cfg, 512)),
                            heads=int(_resolve(args, "heads", cfg, 8)),
                            layers=int(_resolve(args, "layers", cfg, 2)),
                            hidden=int(_resolve(args, "hidden", cfg, 128)))
    rows = mdl.param_breakdown(params)
    width = max((len(n) for n, _ in rows), default=10)
    for name, count in rows:
        print(f"{name.ljust(width)}  {count}")
    print(f"{'total'.ljust(width)}  {mdl.count_params(params)}")
    return 0


def cmd_inspect(args) -> int:
    path = args.path
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == ds.BAG_MAGIC:
        bag = ds.read_bag(path)
        print(f"bag file: {path}")
        print(f"  core_id: {bag.core_id}")
        print(f"  label:   {bag.label} (of {bag.k} classes)")
        print(f"  N x d:   {bag.n} x {bag.d}")
        return 0
    if head == ds.CKPT_MAGIC:
        tensors, chash, epoch = ds.read_checkpoint(path)
        total = sum(int(np.prod(t.shape)) for t in tensors.values())
        print(f"checkpoint: {path}")
        print(f"  config hash: {chash}")
        print(f"  epoch:       {epoch}")
        print(f"  tensors:     {len(tensors)} ({total} scalars)")
        return 0
    if head[:1] == b"{":
        manifest = ds.load_manifest(path)
        counts = manifest.class_counts()
        print(f"manifest: {manifest.dataset_id} (d={manifest.d}, k={manifest.k})")
        for name, count in zip(manifest.class_names, counts):
            print(f"  {name}: {count} cores")
        for split in ("train", "val", "test", "unassigned"):
            n = len(manifest.select(split))
            if n:
                print(f"  split {split}: {n}")
        return 0
    raise FormatError(f"{path}: unrecognized file (magic {head!r})", offset=0)


def cmd_bench(args) -> int:
    print(format_table_or_note(args.repeats))
    return 0


def format_table_or_note(repeats: int) -> str:
    rows = benchmod.run_benchmarks(repeats)
    table = benchmod.format_table(rows)
    if "c" not in benchmod.kernels.available_backends():
        table += "\n(compiled backend not built; run `python setup.py build_ext --inplace`)"
    return table


_COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "tsne": cmd_tsne,
    "count-params": cmd_count_params,
    "inspect": cmd_inspect,
    "bench": cmd_bench,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BagforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
