"""Canned desk-scale experiments: loss ablation, L / N_c sensitivity, zero-shot and seed robustness"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import pandas as pd

from cli.commands import settings_for_dataset, snapshot
from cli.run_manifest import RunManifest
from cli.settings import Settings
from core.domain import DatasetSplit
from core.errors import ConfigInvalid, TooFewPoints
from evalkit.protocol import evaluate, report_row
from libraries.io_utils import save_json, save_table
from libraries.utils import default_logger, make_rng
from trainer import checkpoint
from trainer.trainer_class import train

EXPERIMENTS = ("ablation", "sensitivity-L", "sensitivity-Nc", "zeroshot", "robustness")
ABLATION_MODES = ("untrained", "ce_baseline", "scl_only", "scl_ocl", "colearn")
# (mode, trained with the held-out classes in D_u)
ZEROSHOT_RUNS = (("ce_baseline", False), ("colearn", False), ("colearn", True))
_ZEROSHOT_STREAM = 0x25

def train_variant(settings: Settings, split: DatasetSplit, run_dir: Path, **train_changes):
    """Trains one configuration into run_dir; keys of HyperParams go to hyper, the rest to TrainConfig."""

    hyper_changes = {k: v for k, v in train_changes.items() if k in settings.train.hyper.as_dict()}
    other_changes = {k: v for k, v in train_changes.items() if k not in hyper_changes}
    config = replace(settings.train, hyper=replace(settings.train.hyper, **hyper_changes),
                     checkpoint_dir=str(run_dir), **other_changes)

    return config, train(config, split)

def evaluate_variant(settings: Settings, config, result, taxonomy, samples, report_path: Path, k=None):
    ev = settings.evaluation
    report, _, _, _ = evaluate(result.state, list(samples), taxonomy, k=ev.k if k is None else k, theta=ev.theta,
                               eval_space=ev.eval_space, centroid_source=ev.centroid_source,
                               train_bank=result.centroid_bank, seed=config.hyper.seed)
    save_json(report.to_dict(), report_path)

    return report

def write_sub_manifest(settings: Settings, config, run_dir: Path, *reports) -> str:
    """run_manifest.json of one experiment row, with the settings that row actually trained with."""

    run_dir = Path(run_dir)
    manifest = RunManifest(f"experiment run {run_dir.name}", snapshot(replace(settings, train=config)),
                           config.hyper.seed)
    manifest.add(run_dir / "checkpoints", checkpoint.history_path(run_dir), *reports)
    return manifest.write(run_dir)

def run_and_evaluate(settings: Settings, split: DatasetSplit, run_dir: Path, **train_changes):
    """Trains one configuration into run_dir and evaluates it on the test part."""

    config, result = train_variant(settings, split, run_dir, **train_changes)
    report_path = run_dir / "eval_report.json"
    report = evaluate_variant(settings, config, result, split.taxonomy, split.test, report_path)
    write_sub_manifest(settings, config, run_dir, report_path)

    return report

def ablation(settings: Settings, split: DatasetSplit, out: Path) -> pd.DataFrame:
    rows = []
    for mode in ABLATION_MODES:
        default_logger.info(f"\tAblation row: {mode}")
        report = run_and_evaluate(settings, split, out / mode, mode=mode)
        rows.append({"mode": mode, **report_row(report)})
    return pd.DataFrame(rows)

def _sweep(settings, split, out, key, grid, label) -> pd.DataFrame:
    rows = []
    for value in grid:
        try:
            report = run_and_evaluate(settings, split, out / f"{label}-{value}", mode="colearn", **{key: value})
        except (ConfigInvalid, TooFewPoints) as err:
            default_logger.warning(f"\tSkipping {key}={value}: {err}")
            continue
        rows.append({key: value, **report_row(report)})
    return pd.DataFrame(rows)

def sensitivity_l(settings: Settings, split: DatasetSplit, out: Path) -> pd.DataFrame:
    return _sweep(settings, split, out, "l_pos", settings.experiment.l_grid, "L")

def sensitivity_nc(settings: Settings, split: DatasetSplit, out: Path) -> pd.DataFrame:
    return _sweep(settings, split, out, "n_c", settings.experiment.nc_grid, "Nc")

def zeroshot_partition(split: DatasetSplit, heldout_fraction: float, seed: int) -> dict:
    """
    Splits the novel classes of each role into seen (kept in D_u) and held-out (removed from training).

    Returns:
        dict: {"seen": [...], "heldout": [...]} category ids.
    """

    rng = make_rng(seed, _ZEROSHOT_STREAM)
    seen, heldout = [], []
    for ids in (split.taxonomy.nov_s_ids, split.taxonomy.nov_d_ids):
        order = [ids[i] for i in rng.permutation(len(ids))]
        n_held = int(round(heldout_fraction * len(ids)))
        heldout.extend(order[:n_held])
        seen.extend(order[n_held:])

    return {"seen": sorted(seen), "heldout": sorted(heldout)}

def zeroshot(settings: Settings, split: DatasetSplit, out: Path) -> pd.DataFrame:
    """
    Held-out novel classes, scored by runs that did and did not see them.

    The novel classes are split into seen and held-out. The cross-entropy baseline and colearn train
    without the held-out classes, and a second colearn run trains on the full D_u. Every run is evaluated
    on the seen and on the held-out novel test samples, each corpus clustered into as many clusters as it
    has classes.
    """

    partition = zeroshot_partition(split, settings.experiment.zeroshot_heldout_fraction,
                                   settings.train.hyper.seed)
    save_json(partition, out / "zeroshot_split.json")
    excluded = split.without_categories(partition["heldout"], keep_test=True)
    default_logger.info(f"\tZero-shot: {len(partition['heldout'])} held-out novel classes, "
                        f"{len(excluded.unlabeled)} of {len(split.unlabeled)} unlabeled samples kept without them")

    rows = []
    for mode, with_heldout in ZEROSHOT_RUNS:
        run_dir = out / f"{mode}-{'with' if with_heldout else 'without'}-heldout"
        config, result = train_variant(settings, split if with_heldout else excluded, run_dir, mode=mode)
        row, reports = {"mode": mode, "trained_on_heldout": with_heldout}, []
        for corpus in ("seen", "heldout"):
            classes = set(partition[corpus])
            samples = [s for s in split.test if s.gt_label in classes]
            if not samples:
                row.update({f"{metric}_{corpus}": None for metric in ("clus", "loc", "clusloc")})
                continue
            report_path = run_dir / f"eval_report_{corpus}.json"
            report = evaluate_variant(settings, config, result, split.taxonomy, samples, report_path,
                                      k=len(classes))
            reports.append(report_path)
            row.update({f"clus_{corpus}": report.clus_acc.get("All"), f"loc_{corpus}": report.loc_acc.get("All"),
                        f"clusloc_{corpus}": report.clus_loc_acc.get("All")})
        write_sub_manifest(settings, config, run_dir, *reports)
        rows.append(row)

    return pd.DataFrame(rows)

def robustness(settings: Settings, split: DatasetSplit, out: Path) -> pd.DataFrame:
    rows = []
    for seed in settings.experiment.experiment_seeds:
        report = run_and_evaluate(settings, split, out / f"seed-{seed}", mode="colearn", seed=int(seed))
        rows.append({"seed": str(seed), **report_row(report)})

    table = pd.DataFrame(rows)
    metrics = table.drop(columns=["seed"]).apply(pd.to_numeric)
    summary = pd.DataFrame([{"seed": "mean", **metrics.mean().to_dict()},
                            {"seed": "std", **metrics.std(ddof=0).to_dict()}])

    return pd.concat([table, summary], ignore_index=True)

_RUNNERS = {"ablation": ablation, "sensitivity-L": sensitivity_l, "sensitivity-Nc": sensitivity_nc,
            "zeroshot": zeroshot, "robustness": robustness}

def cmd_experiment(args) -> int:
    settings, split = settings_for_dataset(args)
    out = Path(args.out)
    manifest = RunManifest(f"experiment {args.name}", snapshot(settings), settings.train.hyper.seed)

    table = _RUNNERS[args.name](settings, split, out)
    manifest.add(save_table(table, out, args.name.replace("-", "_")))
    manifest.write(out)
    print(table.to_string(index=False))

    return 0
