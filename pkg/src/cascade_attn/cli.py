"""``cascade-attn`` command-line interface.

Exit codes: 0 success, 1 check failure, 2 usage/config/data error,
3 numeric failure (non-finite loss).
"""

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np
import tomli

from . import checks
from .data import CLASS_NAMES, SyntheticTaskSpec, generate_synthetic, load_split
from .exceptions import CascadeAttnError, ConfigError, DataError, NumericError
from .experiments import format_table, run_compare
from .metrics import format_confusion
from .models import (
    ArchitectureKind,
    build_model,
    count_params,
    forward_clip,
    load_checkpoint,
    comparison_config,
    save_checkpoint,
)
from .optim import TrainConfig, TrainingState, evaluate, train

logger = logging.getLogger("cascade_attn")

ARCHS = [k.value for k in ArchitectureKind]

DEFAULTS = {
    "gen-data": dict(task="joint", seed=0, out=None, train=2000, valid=400, test=400, t_min=8, t_max=32,
                     face_dim=16, context_dim=16, signal=1.0, noise=0.25),
    "train": dict(data=None, arch="caca-a", out=None, split="train", valid_split="valid", epochs=10,
                  lr=1e-4, batch_size=32, stride=1, seed=0, clip_grad_norm=None, encoded_dim=None,
                  hidden_size=None, left_layers=None, right_layers=None, num_classes=8, resume=False),
    "eval": dict(checkpoint=None, data=None, split="valid", stride=1, dump_alignments=None, json=None),
    "compare": dict(data=None, out=None, seeds=5, seed=0, epochs=4, lr=1e-4, batch_size=32, stride=1,
                    clip_grad_norm=None, archs=None, jobs=1, num_classes=8),
    "gradcheck": dict(tolerance=1e-4, epsilon=1e-5, seed=checks.DEFAULT_SEED, archs=None),
    "count-params": dict(arch=None, face_dim=16, context_dim=16, num_classes=8),
}
REQUIRED = {"gen-data": ["out"], "train": ["data", "out"], "eval": ["checkpoint", "data"],
            "compare": ["data"]}


def _add(parser, *flags, **kw):
    kw.setdefault("default", None)
    parser.add_argument(*flags, **kw)


def build_parser():
    parser = argparse.ArgumentParser(prog="cascade-attn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add(p, "--config", help="TOML file of key = value defaults; flags override it")
        return p

    p = command("gen-data", "write a synthetic two-stream dataset")
    _add(p, "--task", choices=["joint", "face-only", "context-only"])
    _add(p, "--seed", type=int)
    _add(p, "--out", help="output directory")
    for split in ("train", "valid", "test"):
        _add(p, f"--{split}", type=int, help=f"number of {split} clips")
    _add(p, "--t-min", type=int)
    _add(p, "--t-max", type=int)
    _add(p, "--face-dim", type=int)
    _add(p, "--context-dim", type=int)
    _add(p, "--signal", type=float, help="pattern magnitude")
    _add(p, "--noise", type=float, help="Gaussian noise sigma")

    p = command("train", "train one architecture")
    _add(p, "--data", help="dataset directory with <split>.json manifests")
    _add(p, "--arch", choices=ARCHS)
    _add(p, "--out", help="run directory (checkpoint, log, resolved config)")
    _add(p, "--split")
    _add(p, "--valid-split", help="split evaluated after every epoch ('none' to skip)")
    _add(p, "--epochs", type=int)
    _add(p, "--lr", type=float)
    _add(p, "--batch-size", type=int)
    _add(p, "--stride", type=int, help="temporal subsampling stride")
    _add(p, "--seed", type=int)
    _add(p, "--clip-grad-norm", type=float)
    _add(p, "--encoded-dim", type=int)
    _add(p, "--hidden-size", type=int)
    _add(p, "--left-layers", type=int)
    _add(p, "--right-layers", type=int)
    _add(p, "--num-classes", type=int)
    _add(p, "--resume", action="store_const", const=True, help="continue the run stored in --out")

    p = command("eval", "evaluate a checkpoint on a split")
    _add(p, "--checkpoint")
    _add(p, "--data")
    _add(p, "--split")
    _add(p, "--stride", type=int)
    _add(p, "--dump-alignments", help="write attention alignment rows (cascade kinds)")
    _add(p, "--json", help="also write the report JSON here")

    p = command("compare", "train all architectures over several seeds")
    _add(p, "--data")
    _add(p, "--out")
    _add(p, "--seeds", type=int)
    _add(p, "--seed", type=int, help="first seed")
    _add(p, "--epochs", type=int)
    _add(p, "--lr", type=float)
    _add(p, "--batch-size", type=int)
    _add(p, "--stride", type=int)
    _add(p, "--clip-grad-norm", type=float)
    _add(p, "--archs", nargs="+", choices=ARCHS)
    _add(p, "--jobs", type=int, help="parallel worker processes")
    _add(p, "--num-classes", type=int)

    p = command("gradcheck", "finite-difference check of every architecture")
    _add(p, "--tolerance", type=float)
    _add(p, "--epsilon", type=float)
    _add(p, "--seed", type=int)
    _add(p, "--archs", nargs="+", choices=ARCHS)

    p = command("count-params", "parameter counts of the comparison-sized models")
    _add(p, "--arch", choices=ARCHS)
    _add(p, "--face-dim", type=int)
    _add(p, "--context-dim", type=int)
    _add(p, "--num-classes", type=int)
    return parser


def resolve_config(command, args):
    """Defaults, then the --config file, then explicit flags."""
    resolved = dict(DEFAULTS[command])
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            with open(cfg_path, "rb") as fh:
                from_file = tomli.load(fh)
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {cfg_path}: {exc}") from exc
        for key, value in from_file.items():
            key = key.replace("-", "_")
            if key not in resolved:
                raise ConfigError(f"unknown key {key!r} in {cfg_path} for {command}")
            resolved[key] = value
    for key, value in vars(args).items():
        if key in resolved and value is not None:
            resolved[key] = value
    missing = [k for k in REQUIRED.get(command, []) if not resolved.get(k)]
    if missing:
        raise ConfigError(f"{command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return resolved


def _echo_config(out_dir, name, resolved):
    Path(out_dir, name).write_text(json.dumps(resolved, indent=1, sort_keys=True) + "\n")


def cmd_gen_data(cfg):
    spec = SyntheticTaskSpec(
        task=cfg["task"], num_train=cfg["train"], num_valid=cfg["valid"], num_test=cfg["test"],
        t_min=cfg["t_min"], t_max=cfg["t_max"], face_dim=cfg["face_dim"], context_dim=cfg["context_dim"],
        signal=cfg["signal"], noise=cfg["noise"], seed=cfg["seed"],
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    splits = generate_synthetic(spec, out)
    _echo_config(out, "gen_config.json", cfg)
    for split, clips in splits.items():
        hist = Counter(c.label for c in clips)
        counts = " ".join(f"{CLASS_NAMES[k]}={hist[k]}" for k in sorted(hist))
        print(f"{split:<6} {len(clips):>6} clips  {counts}")
    return 0


def _model_config(cfg, face_dim, context_dim):
    base = comparison_config(cfg["arch"], face_dim, context_dim, num_classes=cfg["num_classes"], seed=cfg["seed"])
    overrides = {k: cfg[k] for k in ("encoded_dim", "hidden_size", "left_layers", "right_layers")
                 if cfg.get(k) is not None}
    if not overrides:
        return base
    d = base.to_dict()
    d.update(overrides)
    d["right_hidden_size"] = None
    if "right_layers" in overrides and d["right_layers"] is None:
        d["right_layers"] = 1
    return type(base).from_dict(d)


def cmd_train(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    train_clips = load_split(cfg["data"], cfg["split"])
    valid_clips = None
    if cfg["valid_split"] and cfg["valid_split"] != "none" and Path(cfg["data"], f"{cfg['valid_split']}.json").exists():
        valid_clips = load_split(cfg["data"], cfg["valid_split"])

    tconf = TrainConfig(learning_rate=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                        subsample_stride=cfg["stride"], seed=cfg["seed"], clip_grad_norm=cfg["clip_grad_norm"])
    ckpt, state_path, log_path = out / "model.carn", out / "trainer_state.npz", out / "train_log.jsonl"
    if cfg["resume"]:
        if not (ckpt.exists() and state_path.exists()):
            raise ConfigError(f"--resume: no checkpoint and trainer state in {out}")
        model = load_checkpoint(ckpt, expected_kind=cfg["arch"])
        state = TrainingState.load(state_path)
        mode = "a"
    else:
        model = build_model(_model_config(cfg, train_clips[0].face_stream.shape[1],
                                          train_clips[0].context_stream.shape[1]))
        state = TrainingState.fresh(tconf)
        mode = "w"
    resolved = dict(cfg, model=model.config.to_dict(), num_params=count_params(model))
    _echo_config(out, "run_config.json", resolved)
    print(f"{model.config.kind.label}: {count_params(model)} parameters")

    with open(log_path, mode) as log_fh:
        def on_epoch(entry, st):
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()
            save_checkpoint(model, ckpt)
            st.save(state_path)
            print(f"epoch {entry['epoch']:>4}  loss {entry['train_loss']:.5f}  acc {entry['train_acc']:.4f}"
                  + ("" if entry["valid_acc"] is None
                     else f"  valid_acc {entry['valid_acc']:.4f}  valid_map {entry['valid_map']:.4f}"))

        train(model, train_clips, tconf, valid=valid_clips, state=state, on_epoch=on_epoch)
    save_checkpoint(model, ckpt)
    state.save(state_path)
    return 0


def cmd_eval(cfg):
    model = load_checkpoint(cfg["checkpoint"])
    clips = load_split(cfg["data"], cfg["split"])
    report = evaluate(model, clips, stride=cfg["stride"], class_names=CLASS_NAMES[:model.config.num_classes])
    print(report.dumps())
    print()
    print(format_confusion(report.confusion, report.class_names))
    if cfg["json"]:
        Path(cfg["json"]).write_text(report.dumps() + "\n")
    if cfg["dump_alignments"]:
        if not model.config.kind.is_cascade:
            raise ConfigError(f"--dump-alignments needs a cascade model, got {model.config.kind.value}")
        with open(cfg["dump_alignments"], "w") as fh:
            for clip in clips:
                clip = clip if cfg["stride"] == 1 else _sub(clip, cfg["stride"])
                _, tape = forward_clip(model, clip.face_stream, clip.context_stream, keep_alignments=True)
                fh.write(f"# {clip.clip_id}\n")
                for row in tape.alignments:
                    fh.write("\t".join(repr(float(a)) for a in row) + "\n")
    return 0


def _sub(clip, stride):
    from .data import subsample
    return subsample(clip, stride, 0)


def cmd_compare(cfg):
    train_clips = load_split(cfg["data"], "train")
    valid_clips = load_split(cfg["data"], "valid")
    tconf = TrainConfig(learning_rate=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                        subsample_stride=cfg["stride"], seed=cfg["seed"], clip_grad_norm=cfg["clip_grad_norm"])
    out = Path(cfg["out"]) if cfg["out"] else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _echo_config(out, "compare_config.json", cfg)
    rows = run_compare(train_clips, valid_clips, tconf, seeds=cfg["seeds"], base_seed=cfg["seed"],
                       kinds=cfg["archs"], num_classes=cfg["num_classes"], out_dir=out, jobs=cfg["jobs"])
    table = format_table(rows)
    print(table)
    if out is not None:
        (out / "compare.txt").write_text(table + "\n")
        (out / "compare.json").write_text(json.dumps([r.to_json() for r in rows], indent=1) + "\n")
    return 0


def cmd_gradcheck(cfg):
    kinds = [ArchitectureKind(a) for a in cfg["archs"]] if cfg["archs"] else None
    failed = []
    for kind, report, worst in checks.run_suite(cfg["seed"], cfg["epsilon"], cfg["tolerance"], kinds):
        status = "PASS" if report.passed else "FAIL"
        print(f"{status}  {kind.value:<17} max rel. error {report.max_relative_error:.3e}  worst {worst}")
        if not report.passed:
            failed.append(f"{kind.value} (worst parameter {worst})")
    if failed:
        print("gradient check failed for: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_count_params(cfg):
    kinds = [ArchitectureKind(cfg["arch"])] if cfg["arch"] else list(ArchitectureKind)
    for kind in kinds:
        model = build_model(comparison_config(kind, cfg["face_dim"], cfg["context_dim"], num_classes=cfg["num_classes"]))
        print(f"{kind.label:<18}{count_params(model):>10}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
    "count-params": cmd_count_params,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CascadeAttnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
