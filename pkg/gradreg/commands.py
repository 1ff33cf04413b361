"""
Experiment commands shared by the command line and the tool server.

Each command takes a resolved RunConfig and an output directory, writes its
artifacts there (plus ``resolved.cfg``) and returns the JSON-ready summary.
Artifacts other than the ``created_at`` stamp are identical across reruns.
"""

import csv
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from gradreg import __version__
from gradreg.dataio import Dataset, load_dataset, load_mnist, split, synthetic_blobs
from gradreg.errors import ConfigError, EstimatorUndefinedError, InvalidParameterError
from gradreg.model import MlpModel, describe, init_mlp, load_model, log_clamp_events, predict, save_model
from gradreg.numcore import lp_norm, substream
from gradreg.perturb import decompose_perturbation, perturb_rows
from gradreg.robust import (
    NoiseModel,
    actual_additional_missrate,
    isotropic_bound,
    linear_density_missrate,
    min_perturb_stats,
    monte_carlo_missrate,
    risk_reports,
    write_min_perturbations_csv,
)
from gradreg.runconfig import RunConfig
from gradreg.train import evaluate_error, mean_input_grad_norm, train, train_two_stage
from gradreg.viz import render_noise_panel, render_perturbation_panel, write_histogram_csv

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MODEL_NAME = "model.bin"
METRICS_NAME = "metrics.csv"
MC_TRIALS = 100_000

# substream keys under the run seed
INIT_STREAM = 0
DATA_STREAM = 1
NOISE_PANEL_STREAM = 2
MC_STREAM = 3
NEAR_ZERO_STREAM = 4


def _finite(value: Optional[float]) -> Optional[float]:
    return value if value is not None and math.isfinite(value) else None


def _write_json(payload: Dict[str, Any], path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stamp(command: str, cfg: RunConfig) -> Dict[str, Any]:
    return {
        "command": command,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "seed": cfg["seed"],
    }


def _prepare(cfg: RunConfig, out_dir: PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out)
    return out


def load_splits(cfg: RunConfig, mnist_dir: Optional[PathLike] = None) -> Tuple[Dataset, Dataset]:
    """Train and evaluation datasets named by the config, subsets applied."""
    if cfg["dataset"] == "synthetic":
        data = synthetic_blobs(
            substream(cfg["seed"], DATA_STREAM),
            cfg["synthetic_per_class"],
            cfg["synthetic_dim"],
            cfg["synthetic_classes"],
            cfg["synthetic_spread"],
        )
        if not 0.0 < cfg["synthetic_train_fraction"] < 1.0:
            raise InvalidParameterError("synthetic_train_fraction must be in (0, 1)")
        train_set, test_set = split(data, int(len(data) * cfg["synthetic_train_fraction"]))
    else:
        explicit = [cfg[k] for k in ("train_images", "train_labels", "test_images", "test_labels")]
        if all(explicit):
            train_set = load_dataset(explicit[0], explicit[1])
            test_set = load_dataset(explicit[2], explicit[3])
        elif any(explicit):
            raise ConfigError("train_images, train_labels, test_images and test_labels go together")
        else:
            directory = cfg["mnist_dir"] or mnist_dir
            if not directory:
                raise ConfigError("dataset=mnist needs mnist_dir or the four IDX paths")
            train_set, test_set = load_mnist(directory)
    if cfg["train_subset"] is not None:
        train_set, _ = split(train_set, min(cfg["train_subset"], len(train_set)))
    if cfg["test_subset"] is not None:
        test_set, _ = split(test_set, min(cfg["test_subset"], len(test_set)))
    logger.info("Loaded %d training and %d evaluation rows (d=%d)", len(train_set), len(test_set), train_set.dim)
    return train_set, test_set


def _load_model_for(model_path: Optional[PathLike], out: Path) -> Tuple[MlpModel, Path]:
    path = Path(model_path) if model_path else out / MODEL_NAME
    return load_model(path), path


def cmd_train(
    cfg: RunConfig,
    out_dir: PathLike,
    mnist_dir: Optional[PathLike] = None,
    progress: bool = False,
) -> Dict[str, Any]:
    out = _prepare(cfg, out_dir)
    train_set, test_set = load_splits(cfg, mnist_dir)
    tcfg = cfg.train_config(progress)
    model = init_mlp(substream(cfg["seed"], INIT_STREAM), train_set.dim, cfg["hidden"], train_set.num_classes)
    log_clamp_events.reset()

    summary = _stamp("train", cfg)
    if cfg["two_stage_first"] is not None:
        result = train_two_stage(
            model,
            train_set,
            cfg["two_stage_first"],
            tcfg,
            max_stage2_epochs=cfg["stage2_cap"],
            test=test_set,
            csv_path=out / METRICS_NAME,
        )
        model = result.model
        summary["two_stage"] = {
            "n_first": cfg["two_stage_first"],
            "target_loss": result.target_loss,
            "stage2_epochs": result.stage2_epochs,
            "stopped_by": result.stopped_by,
            "stage1_test_error": result.test_errors.get("stage1"),
            "stage2_test_error": result.test_errors.get("stage2"),
        }
    else:
        model = train(model, train_set, tcfg, val=test_set, csv_path=out / METRICS_NAME).model
        summary["two_stage"] = None

    save_model(model, out / MODEL_NAME)
    summary.update(
        {
            "model": describe(model),
            "train_size": len(train_set),
            "test_size": len(test_set),
            "train_error": evaluate_error(model, train_set),
            "test_error": evaluate_error(model, test_set),
            "mean_input_grad_norm": mean_input_grad_norm(model, test_set),
            "inject": None if tcfg.spec is None else {"p": tcfg.spec.p, "sigma": tcfg.spec.sigma},
            "clamp_events": log_clamp_events.count,
            "files": [MODEL_NAME, METRICS_NAME, "summary.json"],
        }
    )
    if summary["inject"] is not None and math.isinf(summary["inject"]["p"]):
        summary["inject"]["p"] = "inf"
    _write_json(summary, out / "summary.json")
    logger.info("train: test error %.4f", summary["test_error"])
    return summary


def cmd_attack(
    cfg: RunConfig,
    out_dir: PathLike,
    model_path: Optional[PathLike] = None,
    mnist_dir: Optional[PathLike] = None,
) -> Dict[str, Any]:
    spec = cfg.perturb_spec()
    out = _prepare(cfg, out_dir)
    model, path = _load_model_for(model_path, out)
    _, test_set = load_splits(cfg, mnist_dir)
    examples = test_set.subset(slice(0, min(cfg["attack_examples"], len(test_set))))
    if len(examples) == 0:
        raise InvalidParameterError("attack needs at least one evaluation example")

    panels = render_perturbation_panel(model, examples, spec, cfg["magnify"], out, cfg["grid_cols"])
    eps = perturb_rows(model, examples.inputs, examples.targets, spec)
    clean = predict(model, examples.inputs)
    perturbed = predict(model, examples.inputs + eps)
    norms = np.atleast_1d(lp_norm(eps, spec.p))

    with open(out / "attack.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("example", "label", "pred_clean", "pred_perturbed", "eps_norm"))
        for i in range(len(examples)):
            writer.writerow((i, int(examples.labels[i]), int(clean[i]), int(perturbed[i]), repr(float(norms[i]))))

    with open(out / "decomposition.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("example", "class", "residual", "component_l2", "zero_gradient"))
        targets = examples.targets
        for i in range(len(examples)):
            parts = decompose_perturbation(model, examples.inputs[i], targets[i], spec.sigma)
            for k in range(model.num_classes):
                writer.writerow(
                    (
                        i,
                        k,
                        repr(float(parts.residual[k])),
                        repr(float(np.linalg.norm(parts.components[k]))),
                        int(parts.zero_gradient),
                    )
                )

    was_right = clean == examples.labels
    summary = _stamp("attack", cfg)
    summary.update(
        {
            "model": describe(model),
            "model_path": str(path),
            "p": "inf" if math.isinf(spec.p) else spec.p,
            "sigma": spec.sigma,
            "examples": len(examples),
            "clean_error": float(np.mean(~was_right)),
            "perturbed_error": float(np.mean(perturbed != examples.labels)),
            "flipped_of_correct": int(np.count_nonzero(was_right & (perturbed != examples.labels))),
            "files": [p.name for p in panels] + ["attack.csv", "decomposition.csv", "attack.json"],
        }
    )
    _write_json(summary, out / "attack.json")
    return summary


def cmd_robust(
    cfg: RunConfig,
    out_dir: PathLike,
    model_path: Optional[PathLike] = None,
    mnist_dir: Optional[PathLike] = None,
    progress: bool = False,
) -> Dict[str, Any]:
    out = _prepare(cfg, out_dir)
    model, path = _load_model_for(model_path, out)
    train_set, test_set = load_splits(cfg, mnist_dir)
    data = test_set if cfg["stats_split"] == "test" else train_set
    seed, n = cfg["seed"], cfg["n_directions"]

    stats = min_perturb_stats(model, data, cfg["ls_step"], cfg["ls_t_max"], cfg["bin_width"], progress)
    write_min_perturbations_csv(stats, out / "min_perturbations.csv")
    write_histogram_csv(stats.samples, cfg["bin_width"], out / "histogram.csv")
    near = stats.samples[stats.samples <= cfg["density_cutoff"] + 1e-12]
    write_histogram_csv(near, cfg["bin_width"], out / "histogram_near_zero.csv")

    reports = risk_reports(model, data, stats, cfg["noise_levels"], cfg["noise_trials"], seed, n, progress)
    rows = []
    for k, report in enumerate(reports):
        row = report.to_dict()
        noise = NoiseModel(report.sigma_noise, data.dim)
        rng = substream(seed, MC_STREAM, k)
        row["monte_carlo_rate"] = monte_carlo_missrate(report.p_miss_clean, stats, noise, MC_TRIALS, rng, n)
        rows.append(row)

    p_miss = reports[0].p_miss_clean
    density_noise = NoiseModel(cfg["density_noise"], data.dim)
    near_zero: Dict[str, Any] = {"sigma_noise": cfg["density_noise"], "cutoff": cfg["density_cutoff"]}
    try:
        near_zero["predicted_additional"] = linear_density_missrate(stats, p_miss, density_noise, cfg["density_cutoff"])
    except EstimatorUndefinedError as exc:
        logger.warning("near-zero estimate unavailable: %s", exc)
        near_zero["predicted_additional"] = None
    near_zero["actual_additional"] = actual_additional_missrate(
        model, data, density_noise, cfg["noise_trials"], substream(seed, NEAR_ZERO_STREAM)
    )

    panels = []
    examples = data.subset(slice(0, min(cfg["grid_cols"], len(data))))
    if len(examples):
        for k, level in enumerate(sorted({*cfg["noise_levels"], cfg["density_noise"]})):
            if level > 0:
                rng = substream(seed, NOISE_PANEL_STREAM, k)
                panels.append(render_noise_panel(examples, level, rng, out, cfg["grid_cols"]).name)

    summary = _stamp("robust", cfg)
    stats_dict = {key: _finite(v) if isinstance(v, float) else v for key, v in stats.to_dict().items()}
    summary.update(
        {
            "model": describe(model),
            "model_path": str(path),
            "split": cfg["stats_split"],
            "n_examples": len(data),
            "p_miss_clean": p_miss,
            "min_perturbation": stats_dict,
            "reports": rows,
            "near_zero": near_zero,
            "isotropic_bound": isotropic_bound(n, data.dim),
            "files": ["min_perturbations.csv", "histogram.csv", "histogram_near_zero.csv", *panels, "robust.json"],
        }
    )
    _write_json(summary, out / "robust.json")
    return summary
