"""Architecture comparison: train every kind over several seeds, report medians."""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ArchitectureKind, build_model, count_params, comparison_config
from .optim import TrainConfig, evaluate, train

logger = logging.getLogger(__name__)


@dataclass
class CompareRow:
    kind: ArchitectureKind
    num_params: int
    map: float
    accuracy: float
    runs: list = field(default_factory=list)

    def to_json(self):
        return {
            "model": self.kind.label,
            "arch": self.kind.value,
            "params": self.num_params,
            "map": self.map,
            "acc": self.accuracy,
            "runs": self.runs,
        }


def run_one(kind, seed, train_clips, valid_clips, train_config, num_classes=8, out_dir=None):
    """Train one comparison-sized model and evaluate it on ``valid_clips``."""
    face_dim = train_clips[0].face_stream.shape[1]
    context_dim = train_clips[0].context_stream.shape[1]
    model = build_model(comparison_config(kind, face_dim, context_dim, num_classes=num_classes, seed=seed))
    config = TrainConfig(
        learning_rate=train_config.learning_rate,
        batch_size=train_config.batch_size,
        epochs=train_config.epochs,
        subsample_stride=train_config.subsample_stride,
        seed=seed,
        clip_grad_norm=train_config.clip_grad_norm,
    )
    log = train(model, train_clips, config)
    report = evaluate(model, valid_clips, stride=config.subsample_stride)
    result = {
        "seed": seed,
        "map": report.map,
        "acc": report.accuracy,
        "final_train_loss": log[-1]["train_loss"] if log else None,
        "final_train_acc": log[-1]["train_acc"] if log else None,
    }
    if out_dir is not None:
        run_dir = Path(out_dir) / kind.value / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "train_log.jsonl", "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
        (run_dir / "eval.json").write_text(report.dumps() + "\n")
    logger.info("%s seed %d: mAP %.4f acc %.4f", kind.value, seed, report.map, report.accuracy)
    return count_params(model), result


def _median_row(kind, num_params, runs):
    if len(runs) == 1:
        m, a = runs[0]["map"], runs[0]["acc"]
    else:
        m = float(np.median([r["map"] for r in runs]))
        a = float(np.median([r["acc"] for r in runs]))
    return CompareRow(kind, num_params, m, a, runs)


def run_compare(train_clips, valid_clips, train_config, seeds=5, base_seed=0, kinds=None,
                num_classes=8, out_dir=None, jobs=1):
    """Median validation mAP / accuracy per architecture over ``seeds`` runs."""
    kinds = [ArchitectureKind(k) for k in (kinds or list(ArchitectureKind))]
    tasks = [(kind, base_seed + s) for kind in kinds for s in range(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_one, k, s, train_clips, valid_clips, train_config, num_classes, out_dir)
                       for k, s in tasks]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [run_one(k, s, train_clips, valid_clips, train_config, num_classes, out_dir) for k, s in tasks]

    rows = []
    for kind in kinds:
        mine = [o for (k, _), o in zip(tasks, outcomes) if k is kind]
        rows.append(_median_row(kind, mine[0][0], [r for _, r in mine]))
    return rows


def format_table(rows):
    header = f"{'Model':<18}{'#params':>10}{'mAP (%)':>10}{'ACC (%)':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.kind.label:<18}{_millions(r.num_params):>10}{100 * r.map:>10.2f}{100 * r.accuracy:>10.2f}")
    return "\n".join(lines)


def _millions(n):
    return f"{n / 1e6:.2f}M" if n >= 1e5 else str(n)
