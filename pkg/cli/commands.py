"""Command implementations; each returns the process exit code"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from cli.run_manifest import RunManifest
from cli.settings import EvalConfig, Settings, load_settings, read_values
from cluster.estimate import estimate_class_count
from core.domain import LabelGate
from core.errors import ConfigError, ConfigInvalid
from core.manifest import load_split, save_split
from core.validation import validate_split
from evalkit.protocol import evaluate, parametric_known_report, theta_sweep
from gcam.activation import gcam
from gcam.localizer import rank_maps
from libraries.config import build
from libraries.io_utils import save_json, save_pgm, save_table, save_tensor
from libraries.utils import default_logger
from synthgen.generator import SyntheticGenerator
from trainer import checkpoint
from trainer.trainer_class import extract_rep_cache, train


def snapshot(settings: Settings) -> dict:
    return {"gen": asdict(settings.gen), "train": settings.train.as_dict(),
            "evaluation": asdict(settings.evaluation), "experiment": asdict(settings.experiment)}


def run_dir_of(checkpoint_path) -> Path:
    """<run>/checkpoints/epoch-NNNN -> <run>"""
    return Path(checkpoint_path).parent.parent


def load_training_split(args, values_dataset: str):
    """Dataset path from --dataset or the config's dataset key."""

    dataset = getattr(args, "dataset", None) or values_dataset
    if not dataset:
        raise ConfigError("No dataset given: pass --dataset or set dataset= in the config")
    return dataset, load_split(dataset)


def settings_for_dataset(args, mode=None):
    """Settings whose encoder input matches the dataset's images."""

    values = read_values(args.config)
    dataset, split = load_training_split(args, values.get("dataset", ""))
    image = split.training[0].image
    settings = load_settings(args.config, seed=args.seed, dataset=dataset, checkpoint_dir=str(args.out),
                             image_side=image.width, channels=image.channels, mode=mode)
    if image.width != image.height:
        raise ConfigInvalid(f"Encoder expects square images, dataset has {image.width}x{image.height}")
    return settings, split


def cmd_gen_data(args) -> int:
    settings = load_settings(args.config, seed=args.seed)
    out = Path(args.out)
    manifest = RunManifest("gen-data", snapshot(settings), settings.gen.seed)

    generator = SyntheticGenerator(settings.gen)
    split = generator.generate(workers=args.workers)
    violations = validate_split(split)
    if violations:
        raise ConfigInvalid(f"Generated split breaks {len(violations)} rules, first: {violations[0]}")

    manifest.add(save_split(split, out, meta=generator.describe()))
    manifest.write(out)
    print(f"Generated {len(split.labeled)} labeled, {len(split.unlabeled)} unlabeled, "
          f"{len(split.test)} test samples into {out}")

    return 0


def cmd_train(args) -> int:
    settings, split = settings_for_dataset(args, mode=getattr(args, "mode", None))
    manifest = RunManifest("train", snapshot(settings), settings.train.hyper.seed)

    result = train(settings.train, split, resume=args.resume)

    manifest.add(checkpoint.latest(args.out), checkpoint.history_path(args.out))
    manifest.write(args.out)
    if result.history:
        print(f"Trained {len(result.history)} epochs, last: {result.history[-1]}")
    else:
        print("No training epochs run")

    return 0


def _load_for_eval(args):
    restored = checkpoint.load(args.checkpoint)
    config = checkpoint.config_from_header(restored.header)
    split = load_split(getattr(args, "dataset", None) or config.dataset)
    values = read_values(args.config) if getattr(args, "config", None) else {}
    overrides = {k: getattr(args, k) for k in ("theta", "k", "eval_space", "centroid_source")
                 if getattr(args, k, None) is not None}
    return restored, config, split, build(EvalConfig, values, **overrides)


def _boxes_frame(preds: dict, samples) -> pd.DataFrame:
    rows = []
    for sample in samples:
        p = preds[sample.sample_id]
        rows.append({"sample_id": p.sample_id, "cluster_id": p.cluster_id, "x_min": p.box.x_min,
                     "y_min": p.box.y_min, "x_max": p.box.x_max, "y_max": p.box.y_max, "score": p.score})
    return pd.DataFrame(rows, columns=["sample_id", "cluster_id", "x_min", "y_min", "x_max", "y_max", "score"])


def cmd_eval(args) -> int:
    restored, config, split, eval_cfg = _load_for_eval(args)
    out = Path(args.out or run_dir_of(restored.path) / f"eval-{args.split}")
    samples = list(split.part(args.split))
    manifest = RunManifest("eval", {"checkpoint": restored.path, "split": args.split, **asdict(eval_cfg)},
                           config.hyper.seed)

    report, preds, bank, features = evaluate(restored.state, samples, split.taxonomy, k=eval_cfg.k,
                                             theta=eval_cfg.theta, eval_space=eval_cfg.eval_space,
                                             centroid_source=eval_cfg.centroid_source,
                                             train_bank=restored.centroid_bank, seed=config.hyper.seed,
                                             workers=args.workers)
    if restored.head is not None:
        report.extra["parametric_known"] = parametric_known_report(restored.state, restored.head, samples,
                                                                   split.taxonomy, eval_cfg.theta)
    if args.theta_sweep:
        table, best = theta_sweep(restored.state, samples, split.taxonomy, bank, features, workers=args.workers)
        report.extra["best_theta"] = best
        manifest.add(save_table(table, out, "theta_sweep"))

    manifest.add(save_json(report.to_dict(), out / "eval_report.json"),
                 save_table(report.to_frame(), out, "eval_report"),
                 save_table(_boxes_frame(preds, samples), out, "boxes"))
    manifest.write(out)

    for role in ("Known", "NovS", "NovD", "All"):
        print(f"{role:>5}: clus {report.clus_acc[role]}, loc {report.loc_acc[role]}, "
              f"clus-loc {report.clus_loc_acc[role]} (n={report.counts[role]})")

    return 0


def cmd_gcam_export(args) -> int:
    restored, config, split, eval_cfg = _load_for_eval(args)
    out = Path(args.out)
    samples = list(split.part(args.split))
    manifest = RunManifest("gcam-export", {"checkpoint": restored.path, "split": args.split, **asdict(eval_cfg),
                                           "ranks": list(args.ranks or [])}, config.hyper.seed)

    _, preds, bank, features = evaluate(restored.state, samples, split.taxonomy, k=eval_cfg.k,
                                        theta=eval_cfg.theta, eval_space=eval_cfg.eval_space,
                                        centroid_source=eval_cfg.centroid_source,
                                        train_bank=restored.centroid_bank, seed=config.hyper.seed,
                                        workers=args.workers)

    for i, sample in enumerate(samples):
        m = features.feature_map(i)
        cluster_id = preds[sample.sample_id].cluster_id
        activation = gcam(m, bank.feature_centroids[bank.row_of(cluster_id)], cluster_id)
        save_tensor(activation.data, out / "maps" / f"{sample.sample_id}.owt")
        save_pgm(activation.normalized(), out / "heatmaps" / f"{sample.sample_id}.pgm")
        for rank, ranked_cluster, ranked_map in rank_maps(sample, restored.state, bank, args.ranks or (), m):
            save_pgm(ranked_map.normalized(), out / "ranked" / f"{sample.sample_id}_rank{rank}_c{ranked_cluster}.pgm")
    default_logger.info(f"\tExported {len(samples)} activation maps to {out}")

    manifest.add(out / "maps", out / "heatmaps", save_table(_boxes_frame(preds, samples), out, "boxes"))
    if args.ranks:
        manifest.add(out / "ranked")
    if args.theta_sweep:
        table, best = theta_sweep(restored.state, samples, split.taxonomy, bank, features, workers=args.workers)
        manifest.add(save_table(table, out, "theta_sweep"), save_json({"best_theta": best}, out / "best_theta.json"))
    manifest.write(out)

    return 0


def cmd_estimate_k(args) -> int:
    restored = checkpoint.load(args.checkpoint)
    config = checkpoint.config_from_header(restored.header)
    split = load_split(getattr(args, "dataset", None) or config.dataset)
    out = Path(args.out or run_dir_of(restored.path) / "estimate-k")
    seed = config.hyper.seed if args.seed is None else args.seed
    manifest = RunManifest("estimate-k", {"checkpoint": restored.path, "k_min": args.k_min, "k_max": args.k_max},
                           seed)

    gate = LabelGate()
    cache = extract_rep_cache(restored.state, list(split.training))
    targets = [gate.label_of(s) for s in split.labeled]
    estimate = estimate_class_count(cache.reps, np.arange(len(split.labeled)), targets, args.k_min, args.k_max,
                                    seed=seed, max_iters=config.kmeans_iters)

    manifest.add(save_table(estimate.sweep, out, "k_sweep"),
                 save_json({"k_hat": estimate.k_hat, "k_min": args.k_min, "k_max": args.k_max,
                            "true_k": len(split.taxonomy.all_ids)}, out / "estimate.json"))
    manifest.write(out)
    print(f"k_hat={estimate.k_hat}")

    return 0
