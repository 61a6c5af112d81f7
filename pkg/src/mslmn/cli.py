"""Experiment runner.

Subcommands: train, eval, generate, laes-fit, inspect. Experiments are
described by a TOML config with [task], [model], [train], and [output]
sections; relative paths inside the config resolve against the config
file's directory. Training writes metrics.csv (one row per epoch), final
and best checkpoints, and summary.json; multi-seed runs get one
subdirectory per seed plus an aggregate summary. The MSLMN_THREADS
environment variable caps how many seeds run in parallel (default 1,
sequential).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .checkpoint import (
    load_checkpoint,
    load_laes,
    save_checkpoint,
    save_laes,
)
from .laes import encode, fit_laes, reconstruct
from .multiscale import count_params, random_mslmn
from .tasks import (
    REGRESSION,
    SequenceDataset,
    load_feature_csv,
    load_label_file,
    make_common_suffix_task,
    make_generation_task,
    read_feature_file,
)
from .training import (
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    dataset_metric,
    incremental_train,
    predict,
    train_fixed,
)

logger = logging.getLogger(__name__)

METRICS_HEADER = "epoch,module_count,train_loss,val_loss,metric,wall_time_ms"


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the bad field."""


@dataclass
class ExperimentConfig:
    """One experiment: task construction, architecture, and schedule."""

    task: dict
    n_hidden: int
    n_memory: int
    modules: int
    mode: str
    bias: bool
    train: TrainConfig
    out_dir: Path
    seeds: list[int] = field(default_factory=lambda: [0])
    base_dir: Path = Path(".")


def _section(doc: dict, name: str) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _pick(table: dict, section: str, key: str, kind, default):
    if key not in table:
        if default is _REQUIRED:
            raise ConfigError(f"missing required field {section}.{key}")
        return default
    value = table[key]
    if kind in (int, float) and isinstance(value, bool):
        raise ConfigError(f"{section}.{key} should be a number, got a boolean")
    if kind is float and isinstance(value, int):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(
            f"{section}.{key} should be {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}"
        )
    return value


_REQUIRED = object()

TASK_KINDS = ("generation", "common-suffix", "feature-csv")
MODES = ("fixed", "incremental")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        # The decoder message carries the line and column of the fault.
        raise ConfigError(f"{path}: {exc}")

    base = path.parent
    task = dict(_section(doc, "task"))
    kind = _pick(task, "task", "kind", str, _REQUIRED)
    if kind not in TASK_KINDS:
        raise ConfigError(f"task.kind must be one of {TASK_KINDS}, got {kind!r}")
    for key in ("signal_file", "labels_file"):
        if key in task:
            resolved = base / str(task[key])
            if not resolved.exists():
                raise ConfigError(f"task.{key}: no such file: {resolved}")
            task[key] = str(resolved)
    if "feature_files" in task:
        resolved_files = []
        for name in task["feature_files"]:
            resolved = base / str(name)
            if not resolved.exists():
                raise ConfigError(f"task.feature_files: no such file: {resolved}")
            resolved_files.append(str(resolved))
        task["feature_files"] = resolved_files

    model = _section(doc, "model")
    mode = _pick(model, "model", "mode", str, "fixed")
    if mode not in MODES:
        raise ConfigError(f"model.mode must be one of {MODES}, got {mode!r}")

    train = _section(doc, "train")
    seeds = train.get("seeds")
    if seeds is None:
        seeds = [_pick(train, "train", "seed", int, 0)]
    elif not (
        isinstance(seeds, list)
        and seeds
        and all(isinstance(s, int) for s in seeds)
    ):
        raise ConfigError("train.seeds must be a nonempty list of integers")
    try:
        train_config = TrainConfig(
            learning_rate=_pick(train, "train", "learning_rate", float, 1e-3),
            batch_size=_pick(train, "train", "batch_size", int, 1),
            l2_decay=_pick(train, "train", "l2_decay", float, 0.0),
            max_epochs=_pick(train, "train", "max_epochs", int, 100),
            patience=_pick(train, "train", "patience", int, 0),
            module_add_period=_pick(train, "train", "module_add_period", int, 50),
            seed=seeds[0],
            noise_std=_pick(train, "train", "noise_std", float, 0.0),
            laes_state_size=_pick(train, "train", "laes_state_size", int, None),
            grad_clip=_pick(train, "train", "grad_clip", float, None),
            metric_goal=_pick(train, "train", "metric_goal", float, None),
        )
    except ValueError as exc:
        raise ConfigError(f"in [train]: {exc}")

    output = _section(doc, "output")
    out_dir = Path(_pick(output, "output", "dir", str, "runs"))
    if not out_dir.is_absolute():
        # Like the input files, a relative output lands next to the config.
        out_dir = base / out_dir
    return ExperimentConfig(
        task=task,
        n_hidden=_pick(model, "model", "n_hidden", int, 4),
        n_memory=_pick(model, "model", "n_memory", int, 4),
        modules=_pick(model, "model", "modules", int, 1),
        mode=mode,
        bias=_pick(model, "model", "bias", bool, False),
        train=train_config,
        out_dir=out_dir,
        seeds=list(seeds),
        base_dir=base,
    )


def build_dataset(task: dict) -> SequenceDataset:
    kind = task["kind"]
    if kind == "generation":
        return make_generation_task(
            source=task.get("signal_file"), n=int(task.get("n", 300))
        )
    if kind == "common-suffix":
        return make_common_suffix_task(
            classes=int(task.get("classes", 5)),
            per_class=int(task.get("per_class", 7)),
            prefix_len=int(task.get("prefix_len", 10)),
            suffix_len=int(task.get("suffix_len", 60)),
            seed=int(task.get("task_seed", 0)),
            n_features=int(task.get("n_features", 13)),
            jitter_std=float(task.get("jitter_std", 0.25)),
        )
    if kind == "feature-csv":
        if "labels_file" in task:
            paths, labels = load_label_file(task["labels_file"])
            return load_feature_csv(paths, labels)
        files = task.get("feature_files")
        if not files:
            raise ConfigError("task.feature_files is required without labels_file")
        return load_feature_csv(files)
    raise ConfigError(f"unknown task kind {task!r}")


# --------------------------------------------------------------------- output

def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_metrics_csv(path, metrics) -> None:
    lines = [METRICS_HEADER]
    for r in metrics:
        lines.append(
            f"{r.epoch},{r.module_count},{_fmt(r.train_loss)},"
            f"{_fmt(r.val_loss)},{_fmt(r.metric)},{_fmt(r.wall_time_ms)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _eval_indices(data: SequenceDataset) -> list[int]:
    return list(data.test_idx) if len(data.test_idx) else list(range(len(data.inputs)))


def _run_one_seed(
    config: ExperimentConfig, data: SequenceDataset, seed: int, run_dir: Path
) -> dict:
    run_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = replace(config.train, seed=seed)
    diverged = False
    try:
        if config.mode == "incremental":
            result = incremental_train(
                data,
                config.n_hidden,
                config.n_memory,
                config.modules,
                train_cfg,
                bias=config.bias,
            )
        else:
            rng = np.random.default_rng(seed)
            params = random_mslmn(
                rng,
                data.n_input,
                config.n_hidden,
                config.n_memory,
                data.n_output,
                n_modules=config.modules,
                bias=config.bias,
            )
            result = train_fixed(data, params, train_cfg)
    except TrainingDiverged as exc:
        logger.warning("seed %d: %s", seed, exc)
        diverged = True
        result = TrainResult(
            params=exc.params, best_params=exc.params, metrics=exc.metrics
        )

    write_metrics_csv(run_dir / "metrics.csv", result.metrics)
    save_checkpoint(
        run_dir / "checkpoint-final.json",
        result.params,
        data.task_kind,
        optimizer=result.optimizer,
        rng_state=result.rng_state,
    )
    save_checkpoint(run_dir / "checkpoint-best.json", result.best_params, data.task_kind)
    idx = _eval_indices(data)
    summary = {
        "seed": seed,
        "mode": config.mode,
        "task_kind": data.task_kind,
        "diverged": diverged,
        "epochs_run": len(result.metrics),
        "module_count": result.params.n_modules,
        "param_count": count_params(result.params),
        "final_metric": float(dataset_metric(result.params, data, idx)),
        "best_metric": float(dataset_metric(result.best_params, data, idx)),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    logger.info(
        "seed %d done: %d epochs, metric %.6g%s",
        seed,
        summary["epochs_run"],
        summary["final_metric"],
        " (diverged)" if diverged else "",
    )
    return summary


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.out is not None:
        config.out_dir = Path(args.out)
    if args.seed is not None:
        config.seeds = [args.seed]
    data = build_dataset(config.task)
    config.out_dir.mkdir(parents=True, exist_ok=True)

    if len(config.seeds) == 1:
        summaries = [_run_one_seed(config, data, config.seeds[0], config.out_dir)]
    else:
        dirs = [config.out_dir / f"seed-{s}" for s in config.seeds]
        workers = max(1, int(os.environ.get("MSLMN_THREADS", "1")))
        if workers > 1:
            with ThreadPoolExecutor(min(workers, len(config.seeds))) as pool:
                summaries = list(
                    pool.map(
                        lambda sd: _run_one_seed(config, data, sd[0], sd[1]),
                        zip(config.seeds, dirs),
                    )
                )
        else:
            summaries = [
                _run_one_seed(config, data, s, d)
                for s, d in zip(config.seeds, dirs)
            ]
        finals = [s["final_metric"] for s in summaries if not s["diverged"]]
        bests = [s["best_metric"] for s in summaries if not s["diverged"]]
        aggregate = {
            "seeds": config.seeds,
            "runs": summaries,
            "final_metric_mean": float(np.mean(finals)) if finals else None,
            "final_metric_std": float(np.std(finals)) if finals else None,
            "best_metric_mean": float(np.mean(bests)) if bests else None,
            "best_metric_std": float(np.std(bests)) if bests else None,
        }
        (config.out_dir / "summary.json").write_text(json.dumps(aggregate, indent=2))
    return 1 if any(s["diverged"] for s in summaries) else 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = load_config(args.config)
    data = build_dataset(config.task)
    if ckpt.params.n_input != data.n_input:
        raise ConfigError(
            f"checkpoint expects {ckpt.params.n_input}-dim input, dataset "
            f"has {data.n_input}"
        )
    if data.task_kind != ckpt.task_kind:
        raise ConfigError(
            f"checkpoint was trained for {ckpt.task_kind!r}, dataset is "
            f"{data.task_kind!r}"
        )
    metric = float(dataset_metric(ckpt.params, data, _eval_indices(data)))
    name = "nmse" if data.task_kind == REGRESSION else "accuracy"
    print(f"{name} {_fmt(metric)}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps({name: metric}))
    return 0


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.task_kind != REGRESSION:
        raise ConfigError(
            "generate needs a regression checkpoint; this one was trained "
            f"for {ckpt.task_kind!r}"
        )
    n = int(args.n)
    if n < 1:
        raise ConfigError("--n must be >= 1")
    target = None
    if args.config is not None:
        data = build_dataset(load_config(args.config).task)
        if data.task_kind == REGRESSION and len(data.targets):
            full = np.asarray(data.targets[0], dtype=np.float64)
            if full.shape[0] >= n and full.shape[1] == ckpt.params.n_output:
                target = full[:n]
    outputs = predict(ckpt.params, np.zeros((n, ckpt.params.n_input)))

    def row_values(values):
        return ",".join(_fmt(v) for v in np.atleast_1d(values))

    header = ["t"]
    n_y = ckpt.params.n_output
    if target is not None:
        header += ["target"] if n_y == 1 else [f"target_{j}" for j in range(n_y)]
    header += ["output"] if n_y == 1 else [f"output_{j}" for j in range(n_y)]
    lines = [",".join(header)]
    for t in range(n):
        cells = [str(t + 1)]
        if target is not None:
            cells.append(row_values(target[t]))
        cells.append(row_values(outputs[t]))
        lines.append(",".join(cells))
    out_dir = Path(args.out) if args.out is not None else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "generated.csv"
    path.write_text("\n".join(lines) + "\n")
    logger.info("wrote %s (%d rows)", path, n)
    return 0


def cmd_laes_fit(args) -> int:
    if not args.files:
        raise ConfigError("laes-fit needs at least one sequence file")
    try:
        sequences = [read_feature_file(p) for p in args.files]
    except FileNotFoundError as exc:
        raise ConfigError(str(exc))
    model = fit_laes(sequences, state_size=args.state_size)
    out_dir = Path(args.out) if args.out is not None else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_laes(out_dir / "laes-model.json", model)
    lines = ["file,length,max_abs_error"]
    worst = 0.0
    for path, seq in zip(args.files, sequences):
        back = reconstruct(model, encode(model, seq)[-1], seq.shape[0])
        err = float(np.max(np.abs(back - seq)))
        worst = max(worst, err)
        lines.append(f"{path},{seq.shape[0]},{_fmt(err)}")
    (out_dir / "reconstruction.csv").write_text("\n".join(lines) + "\n")
    print(f"max_abs_error {_fmt(worst)}")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    p = ckpt.params
    print(f"task_kind {ckpt.task_kind}")
    print(f"format_version {ckpt.format_version}")
    print(f"n_input {p.n_input}")
    print(f"n_hidden {p.n_hidden}")
    print(f"n_memory {p.n_memory}")
    print(f"n_output {p.n_output}")
    print(f"n_modules {p.n_modules}")
    print(f"bias {'yes' if p.b_h is not None else 'no'}")
    print(f"count_params {count_params(p)}")
    print(f"optimizer_state {'yes' if ckpt.optimizer is not None else 'no'}")
    return 0


# ----------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mslmn", description="Multiscale linear-memory network experiments"
    )
    parser.add_argument("--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a training experiment")
    train.add_argument("--config", required=True, help="TOML experiment config")
    train.add_argument("--out", default=None, help="override output directory")
    train.add_argument("--seed", type=int, default=None, help="override seed list")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("checkpoint")
    ev.add_argument("--config", required=True, help="dataset config")
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    gen = sub.add_parser("generate", help="free-run a regression checkpoint")
    gen.add_argument("checkpoint")
    gen.add_argument("--n", type=int, default=300, help="steps to generate")
    gen.add_argument("--config", default=None, help="optional target source")
    gen.add_argument("--out", default=None)
    gen.set_defaults(func=cmd_generate)

    laes = sub.add_parser("laes-fit", help="closed-form autoencoder fit")
    laes.add_argument("files", nargs="*", help="sequence CSV files")
    laes.add_argument("--state-size", type=int, required=True)
    laes.add_argument("--out", default=None)
    laes.set_defaults(func=cmd_laes_fit)

    ins = sub.add_parser("inspect", help="print checkpoint architecture")
    ins.add_argument("checkpoint")
    ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
