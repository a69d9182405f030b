"""Command-line front end for the whole pipeline.

Subcommands: synth | filterbank | train | eval | infer | sweep | visualize.
Runs are driven by a JSON config file (--config) whose keys can be
overridden by flags; every run writes a resolved-config snapshot so it can
be reproduced from the output directory alone.  ANONET_OUT_ROOT sets the
default output root.
"""

import argparse
import json
import os
import sys

import numpy as np
from PIL import Image

from . import data as data_mod
from . import introspect as intro_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import train as train_mod
from .filterbank import build_bank, save_bank


class ConfigFileError(ValueError):
    pass


_SCHEMA = {
    "seed": None,
    "out": None,
    "model": {"name": None, "trainable_filters": None},
    "data": {"path": None,
             "synth": {"count": None, "size": None, "noise_octaves": None,
                       "blur_sigma": None, "axes_range": None, "delta_range": None,
                       "smudge_blur_sigma": None, "weak_scale": None, "seed": None}},
    "split": {"ratio": None, "seed": None},
    "train": {"epochs": None, "batch": None, "loss": None, "rho": None,
              "epsilon": None, "checkpoint_every": None, "threshold": None,
              "pooling": None, "crop": None},
}


def _check_keys(cfg, schema, path="config"):
    for key, value in cfg.items():
        if key not in schema:
            raise ConfigFileError(f"unknown key {path}.{key}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigFileError(f"{path}.{key} must be an object")
            _check_keys(value, sub, f"{path}.{key}")


def load_run_config(path):
    with open(path) as fh:
        cfg = json.load(fh)
    _check_keys(cfg, _SCHEMA)
    return cfg


def _out_root():
    return os.environ.get("ANONET_OUT_ROOT", ".")


def _resolve_out(cfg, args):
    out = args.out or cfg.get("out")
    if not out:
        raise ConfigFileError("no output directory (--out or config 'out')")
    if not os.path.isabs(out):
        out = os.path.join(_out_root(), out)
    os.makedirs(out, exist_ok=True)
    return out


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg["seed"] = args.seed
    tr = cfg.setdefault("train", {})
    for key in ("epochs", "batch", "loss", "threshold"):
        val = getattr(args, key, None)
        if val is not None:
            tr[key] = val
    if getattr(args, "freeze_filters", None) is not None:
        cfg.setdefault("model", {})["trainable_filters"] = not args.freeze_filters
    return cfg


def _load_data(cfg):
    dcfg = cfg.get("data") or {}
    seed = cfg.get("seed", 0)
    if "synth" in dcfg:
        scfg = dict(dcfg["synth"])
        for key in ("size", "axes_range", "delta_range"):
            if key in scfg:
                scfg[key] = tuple(scfg[key])
        scfg.setdefault("seed", seed)
        dataset = data_mod.synth_generate(data_mod.SynthSpec(**scfg))
    elif "path" in dcfg:
        dataset = data_mod.load_dataset(dcfg["path"], seed=seed)
    else:
        raise ConfigFileError("config 'data' needs either 'path' or 'synth'")
    split = cfg.get("split") or {}
    return data_mod.train_val_split(dataset, ratio=split.get("ratio", 0.8),
                                    seed=split.get("seed", seed))


def _train_config(cfg):
    tr = dict(cfg.get("train") or {})
    if tr.get("crop") is not None:
        tr["crop"] = tuple(tr["crop"])
    tr.setdefault("seed", cfg.get("seed", 0))
    return train_mod.TrainConfig(**tr)


def _build_model(cfg):
    mcfg = cfg.get("model") or {}
    name = mcfg.get("name")
    if not name:
        raise ConfigFileError("config 'model.name' is required")
    return model_mod.build_by_name(name, seed=cfg.get("seed", 0),
                                   trainable=mcfg.get("trainable_filters"))


def _snapshot(cfg, out_dir):
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)


def cmd_synth(args):
    cfg = load_run_config(args.config) if args.config else {}
    cfg = _apply_overrides(cfg, args)
    scfg = dict((cfg.get("data") or {}).get("synth") or {})
    if args.count is not None:
        scfg["count"] = args.count
    if args.size is not None:
        scfg["size"] = args.size
    for key in ("size", "axes_range", "delta_range"):
        if key in scfg:
            scfg[key] = tuple(scfg[key])
    scfg.setdefault("seed", cfg.get("seed", 0))
    spec = data_mod.SynthSpec(**scfg)
    out = _resolve_out(cfg, args)
    dataset = data_mod.synth_generate(spec)
    data_mod.save_dataset(dataset, out, manifest_extra=dataset.defect_params)
    _snapshot({"data": {"synth": spec.to_dict()}, "out": out}, out)
    print(f"wrote {len(dataset)} samples to {out}")


def cmd_filterbank(args):
    out = args.out or _out_root()
    os.makedirs(out, exist_ok=True)
    bank = build_bank(args.family, args.k)
    bank_path = os.path.join(out, f"{args.family}_{args.k}.bank")
    sheet_path = os.path.join(out, f"{args.family}_{args.k}.png")
    save_bank(bank, bank_path)
    intro_mod.save_grid(bank.filters, sheet_path)
    print(f"wrote {len(bank)} filters: {bank_path}, {sheet_path}")


def cmd_train(args):
    cfg = _apply_overrides(load_run_config(args.config), args)
    out = _resolve_out(cfg, args)
    tcfg = _train_config(cfg)
    model = _build_model(cfg)
    train_ds, val_ds = _load_data(cfg)
    _snapshot(cfg, out)
    _, history = train_mod.train(model, train_ds, val_ds, tcfg, out_dir=out)
    report = train_mod.validate(model, val_ds, threshold=tcfg.threshold,
                                pooling=tcfg.pooling, epoch=tcfg.epochs)
    metrics_mod.write_reports_csv([report], os.path.join(out, "metrics.csv"))
    metrics_mod.write_reports_jsonl([report], os.path.join(out, "metrics.jsonl"))
    print(f"trained {model.name}: final f1={report.f1:.4f} "
          f"auroc={'n/a' if report.auroc is None else f'{report.auroc:.4f}'} -> {out}")


def cmd_eval(args):
    model = model_mod.load_weights(args.weights)
    dataset = data_mod.load_dataset(args.data, split=os.path.basename(args.data.rstrip("/")))
    out = args.out or _out_root()
    os.makedirs(out, exist_ok=True)
    report = train_mod.validate(model, dataset, threshold=args.threshold,
                                pooling=args.pooling)
    metrics_mod.write_reports_csv([report], os.path.join(out, "metrics.csv"))
    metrics_mod.write_reports_jsonl([report], os.path.join(out, "metrics.jsonl"))
    print(f"{model.name} on {args.data}: f1={report.f1:.4f} "
          f"auroc={'n/a' if report.auroc is None else f'{report.auroc:.4f}'}")


def cmd_infer(args):
    model = model_mod.load_weights(args.weights)
    image = data_mod._to_gray(Image.open(args.image))
    scores = train_mod.predict(model, image)
    out = args.out or _out_root()
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    mask_path = os.path.join(out, f"{stem}_mask.png")
    data_mod.save_png((scores > args.threshold).astype(np.uint8) * 255, mask_path)
    if args.raw_scores:
        np.save(os.path.join(out, f"{stem}_scores.npy"), scores.astype(np.float32))
    print(f"wrote {mask_path} ({scores.shape[0]}x{scores.shape[1]})")


def cmd_sweep(args):
    cfg = _apply_overrides(load_run_config(args.config) if args.config else {}, args)
    if args.data:
        cfg["data"] = {"path": args.data}
    out = _resolve_out(cfg, args)
    tcfg = _train_config(cfg)
    train_ds, val_ds = _load_data(cfg)
    names = (list(model_mod.TABLE1_CONFIGS) if args.table == "table1"
             else list(model_mod.TABLE2_CONFIGS)) + ["baseline"]
    _snapshot(cfg, out)
    rows = []
    for name in names:
        model = model_mod.build_by_name(name, seed=cfg.get("seed", 0))
        _, history = train_mod.train(model, train_ds, val_ds, tcfg,
                                     out_dir=os.path.join(out, name))
        final = history[-1]
        first = history[0]
        avg = (0.5 * (final["f1"] + final["auroc"])
               if final["auroc"] is not None else final["f1"])
        rows.append({"config": name, "parameters": model.count_parameters(),
                     "epoch1_f1": first["f1"], "epoch1_auroc": first["auroc"],
                     "f1": final["f1"], "auroc": final["auroc"],
                     "avg_f1_auroc": avg})
        print(f"{name}: f1={final['f1']:.4f} avg={avg:.4f}")
    rows.sort(key=lambda r: -r["avg_f1_auroc"])
    import csv
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["config", "parameters", "epoch1_f1",
                                                "epoch1_auroc", "f1", "auroc",
                                                "avg_f1_auroc"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else
                                 ("" if v is None else v))
                             for k, v in row.items()})
    print(f"wrote {os.path.join(out, 'sweep.csv')} ({len(rows)} configurations)")


def cmd_visualize(args):
    model = model_mod.load_weights(args.weights)
    out = args.out or _out_root()
    os.makedirs(out, exist_ok=True)
    if args.image:
        image = data_mod._to_gray(Image.open(args.image))
        stacks = intro_mod.intermediate_activations(model, image)
        for idx, stack in enumerate(stacks):
            intro_mod.save_grid(stack, os.path.join(out, f"activations_layer{idx}.png"))
        print(f"wrote {len(stacks)} activation grids to {out}")
    elif args.actmax:
        cfg = intro_mod.ActMaxConfig(layer=args.layer, filter=args.filter,
                                     steps=args.steps, alpha=args.alpha,
                                     seed=args.seed or 0,
                                     input_size=tuple(args.input_size))
        result = intro_mod.activation_maximization(model, cfg)
        stem = f"actmax_l{args.layer}_f{args.filter}"
        lo, hi = result.input.min(), result.input.max()
        span = hi - lo if hi > lo else 1.0
        data_mod.save_png((result.input - lo) / span, os.path.join(out, stem + ".png"))
        intro_mod.write_trace_csv(result.trace, os.path.join(out, stem + "_trace.csv"))
        print(f"{stem}: objective {result.trace[0]:.4g} -> {result.trace[-1]:.4g} "
              f"({'converged' if result.converged else 'did not converge'})")
    else:
        raise ConfigFileError("visualize needs --image or --actmax")


def _add_common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threshold", type=float)
    p.add_argument("--loss", choices=["mse", "cross_entropy"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--freeze-filters", dest="freeze_filters",
                   action="store_true", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="anonet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic defect dataset")
    _add_common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("filterbank", help="build a filter bank + contact sheet")
    p.add_argument("--family", required=True, choices=["LM", "S", "RFS"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_filterbank)

    p = sub.add_parser("train", help="train one configuration")
    _add_common(p)
    p.set_defaults(func=cmd_train)
    p.set_defaults(config_required=True)

    p = sub.add_parser("eval", help="evaluate saved weights on a dataset")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--pooling", choices=["pixel", "image"], default="pixel")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="segment a single image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--raw-scores", action="store_true",
                   help="also write the float score map (.npy)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", help="train every config of a table, rank results")
    _add_common(p)
    p.add_argument("--table", required=True, choices=["table1", "table2"])
    p.add_argument("--data", help="dataset directory (overrides config)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("visualize", help="activation grids / preferred stimuli")
    p.add_argument("--weights", required=True)
    p.add_argument("--image")
    p.add_argument("--actmax", action="store_true")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--filter", type=int, default=0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--input-size", type=int, nargs=2, default=(64, 64))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_visualize)
    return parser


_FAILURES = [
    (ConfigFileError, 2, "bad config"),
    (json.JSONDecodeError, 2, "bad config"),
    (FileNotFoundError, 3, "missing file"),
    (model_mod.ConfigError, 2, "bad config"),
    (train_mod.TrainingDiverged, 5, "training diverged"),
]


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "config_required", False) and not args.config:
        print("anonet: bad config: --config is required for this command", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except tuple(exc for exc, _, _ in _FAILURES) as err:
        for exc, code, label in _FAILURES:
            if isinstance(err, exc):
                print(f"anonet: {label}: {err}", file=sys.stderr)
                return code
    except ValueError as err:
        print(f"anonet: invalid input: {err}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
