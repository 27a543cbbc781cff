"""Command-line driver: ``ide-net {gen,label,prep-stats,train,extract,eval,ablate}``.

Each subcommand accepts ``--config file.json``; explicit flags override the
file. Failures exit nonzero with a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import evalkit
from .autolabel import InteractionLabels, RuleConfig, balance_negatives, label_counts, label_pair
from .losses import LossWeights
from .model import STB_VARIANTS, ModelConfig
from .prep import center_coords, fit_norm
from .synthgen import ScenarioMix, generate_dataset, read_sample, write_sample
from .training import (
    TASKS,
    TrainConfig,
    load_checkpoint,
    predict,
    predicted_intervals,
    save_checkpoint,
    supervised_metrics,
    train,
)

DESK_LR = 3e-3
LABEL_SUFFIX = ".labels.json"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a command may need; sections mirror the JSON config file:
    ``{"seed", "data", "out", "checkpoint", "test_data", "desk_scale",
    "mix": {...}, "model": {...}, "rules": {...}, "weights": {...},
    "train": {...}}``."""

    seed: int = 0
    data: Optional[str] = None
    out: Optional[str] = None
    checkpoint: Optional[str] = None
    test_data: Optional[str] = None
    desk_scale: bool = False
    mix: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    rules: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    @classmethod
    def from_sources(cls, path: Optional[str], overrides: dict) -> "RunConfig":
        base = {}
        if path:
            try:
                base = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(base, dict):
                raise ConfigError("config file must hold a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(base) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**base)
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, name = key.partition(".")
            if name:
                getattr(cfg, section)[name] = value
            else:
                setattr(cfg, section, value)
        return cfg

    def model_config(self) -> ModelConfig:
        values = dict(self.model)
        try:
            if self.desk_scale:
                return ModelConfig.desk(**values)
            return ModelConfig(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def rule_config(self) -> RuleConfig:
        try:
            return RuleConfig(**self.rules)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        values = dict(self.train)
        if self.desk_scale:
            values.setdefault("epochs", 50)
            values.setdefault("lr", DESK_LR)
        values.setdefault("seed", self.seed)
        try:
            return TrainConfig(weights=LossWeights(**self.weights), **values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# -- file helpers ------------------------------------------------------------
def _require_dir(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"missing --{what}")
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} directory {p} does not exist")
    return p


def _out_dir(path: Optional[str]) -> Path:
    if not path:
        raise ConfigError("missing --out")
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# CSVs written by the commands themselves; never read back as samples
OUTPUT_CSVS = frozenset({"labels_summary.csv", "kde_interacting.csv", "type_assignments.csv"})


def sample_paths(directory: Path) -> list[Path]:
    return sorted(p for p in directory.glob("*.csv")
                  if not p.name.endswith(".steps.csv") and p.name not in OUTPUT_CSVS)


def load_dataset(directory: Path, labeled_only: bool = False) -> list:
    """Samples of a data directory, with label sidecars attached when present."""
    samples = []
    for path in sample_paths(directory):
        sample = read_sample(path)
        label_path = path.with_name(path.stem + LABEL_SUFFIX)
        if label_path.exists():
            sample.labels = InteractionLabels.from_json(json.loads(label_path.read_text(encoding="utf-8")), sample.T)
        elif labeled_only:
            continue
        samples.append(sample)
    return samples


def _write_json(path: Path, obj):
    path.write_text(evalkit.metrics_json(obj), encoding="utf-8")


# -- commands ----------------------------------------------------------------
def cmd_gen(cfg: RunConfig) -> dict:
    out = _out_dir(cfg.out)
    mix_args = dict(cfg.mix)
    n = mix_args.pop("n", None)
    try:
        mix = ScenarioMix.balanced(int(n), **mix_args) if n is not None else ScenarioMix(**mix_args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if mix.total == 0:
        raise ConfigError("scenario mix is empty")
    samples = generate_dataset(mix, cfg.seed)
    for s in samples:
        write_sample(out, s)
    return {"written": len(samples), "out": str(out)}


def cmd_label(cfg: RunConfig) -> dict:
    data = _require_dir(cfg.data, "data")
    out = Path(cfg.out) if cfg.out else data
    out.mkdir(parents=True, exist_ok=True)
    rules = cfg.rule_config()
    samples = [s.with_labels(label_pair(s, rules)) for s in load_dataset(data)]
    for stale in out.glob("*" + LABEL_SUFFIX):
        stale.unlink()
    kept = balance_negatives(samples, cfg.seed)
    for s in kept:
        (out / f"{s.sample_id}{LABEL_SUFFIX}").write_text(s.labels.dumps() + "\n", encoding="utf-8")
    summary = {"all": label_counts(samples), "kept": label_counts(kept), "rules": rules.to_dict()}
    _write_json(out / "labels_summary.json", summary)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["set", "positive", "negative", "not_sure", "total"])
    for name in ("all", "kept"):
        c = summary[name]
        writer.writerow([name, c["positive"], c["negative"], c["not_sure"], c["total"]])
    (out / "labels_summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    return summary


def cmd_prep_stats(cfg: RunConfig) -> dict:
    data = _require_dir(cfg.data, "data")
    samples = load_dataset(data, labeled_only=True) or load_dataset(data)
    stats = fit_norm([center_coords(s) for s in samples])
    out = _out_dir(cfg.out)
    stats.save(out / "norm.json")
    return {"scale": stats.scale, "samples": len(samples)}


def _run_training(cfg: RunConfig, out: Path, tcfg: Optional[TrainConfig] = None, mcfg: Optional[ModelConfig] = None):
    data = _require_dir(cfg.data, "data")
    samples = load_dataset(data, labeled_only=True)
    if not samples:
        raise ConfigError(f"no labeled samples in {data}; run `label` first")
    tcfg = tcfg or cfg.train_config()
    mcfg = mcfg or cfg.model_config()
    result = train(samples, mcfg, tcfg, log_path=out / "train_log.jsonl")
    save_checkpoint(out, result.model, result.stats, tcfg,
                    extra={"best_epoch": result.best_epoch, "train_ids": result.train_ids,
                           "val_ids": result.val_ids})
    return result, samples


def cmd_train(cfg: RunConfig) -> dict:
    out = _out_dir(cfg.out)
    result, _ = _run_training(cfg, out)
    last = result.history[-1] if result.history else {}
    return {"checkpoint": str(out), "best_epoch": result.best_epoch, "epochs": len(result.history),
            "last": last.get("val", last.get("train"))}


def _load_ckpt(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ConfigError("missing --checkpoint")
    return load_checkpoint(cfg.checkpoint)


def cmd_extract(cfg: RunConfig) -> dict:
    model, stats, tcfg = _load_ckpt(cfg)
    data = _require_dir(cfg.data, "data")
    out = _out_dir(cfg.out)
    samples = load_dataset(data)
    include_velocity = bool(tcfg.get("include_velocity", False))
    gate = bool(tcfg.get("gate_by_whether", True))
    pred = predict(model, stats, samples, include_velocity=include_velocity)
    intervals = predicted_intervals(pred, gate)
    summary = []
    for i, s in enumerate(samples):
        rows = []
        for t in range(s.T):
            conf = pred["p_what"][i][t]
            row = {"step": t, "p_when": f"{pred['p_when'][i][t]:.9g}", "type": int(np.argmax(conf))}
            row.update({f"conf_{c}": f"{v:.9g}" for c, v in enumerate(conf)})
            rows.append(row)
        (out / f"{s.sample_id}.steps.csv").write_text(evalkit.step_assignments_csv(rows), encoding="utf-8")
        summary.append({"sample_id": s.sample_id, "p_whether": float(pred["p_whether"][i]),
                        "interval": intervals[i]})
    _write_json(out / "extract_summary.json", summary)
    return {"samples": len(samples), "out": str(out)}


def evaluate(model, stats, test_samples, train_samples=None, include_velocity=False, gate=True,
             rotation_seed: int = 0) -> dict:
    """All evaluation metrics on labeled ``test_samples`` (and train-split
    type ratios when ``train_samples`` is given)."""
    pred = predict(model, stats, test_samples, include_velocity=include_velocity)
    metrics = supervised_metrics(pred, test_samples, gate)
    windows = [s.labels.window for s in test_samples]
    metrics["type_ratio_test"] = evalkit.type_ratio(pred["p_what"], windows)
    if any(w is not None for w in windows):
        metrics["dominance_ratio"] = evalkit.dominance_ratio(pred["p_what"], windows)
    metrics["pattern_histogram"] = evalkit.pattern_histogram(pred["p_what"], windows)
    if train_samples:
        tp = predict(model, stats, train_samples, include_velocity=include_velocity, tasks=("what",))
        metrics["type_ratio_train"] = evalkit.type_ratio(tp["p_what"], [s.labels.window for s in train_samples])
    rng = np.random.default_rng([rotation_seed, 31])
    a1 = rng.uniform(0, 2 * np.pi, len(test_samples))
    a2 = rng.uniform(0, 2 * np.pi, len(test_samples))
    r1 = predict(model, stats, test_samples, a1, include_velocity=include_velocity, tasks=("what",))
    r2 = predict(model, stats, test_samples, a2, include_velocity=include_velocity, tasks=("what",))
    metrics["rotation_tvd"] = float(np.mean([0.5 * np.abs(x - y).sum(-1).mean()
                                             for x, y in zip(r1["p_what"], r2["p_what"])]))
    metrics["n_test"] = len(test_samples)
    return metrics, pred


def cmd_eval(cfg: RunConfig) -> dict:
    model, stats, tcfg = _load_ckpt(cfg)
    data = _require_dir(cfg.test_data or cfg.data, "test-data")
    out = _out_dir(cfg.out)
    test = load_dataset(data, labeled_only=True)
    if not test:
        raise ConfigError(f"no labeled samples in {data}")
    train_samples = None
    if cfg.data and cfg.test_data:
        run_path = Path(cfg.checkpoint) / "run.json"
        train_ids = set(json.loads(run_path.read_text())["train_ids"]) if run_path.exists() else None
        train_samples = [s for s in load_dataset(Path(cfg.data), labeled_only=True)
                         if train_ids is None or s.sample_id in train_ids]
    metrics, pred = evaluate(model, stats, test, train_samples, bool(tcfg.get("include_velocity", False)),
                             bool(tcfg.get("gate_by_whether", True)), cfg.seed)
    points = np.concatenate([evalkit.relative_features(s)[s.labels.per_step.astype(bool)]
                             for s in test if s.labels.whether == 1] or [np.zeros((0, 2))])
    if len(points):
        xs, ys, dens = evalkit.kde_2d(points)
        (out / "kde_interacting.csv").write_text(evalkit.kde_grid_csv(xs, ys, dens), encoding="utf-8")
        metrics["kde_points"] = int(len(points))
    rows = []
    for i, s in enumerate(test):
        for t in range(s.T):
            conf = pred["p_what"][i][t]
            rows.append({"sample_id": s.sample_id, "step": t, "in_window": int(s.labels.per_step[t]),
                         "type": int(np.argmax(conf)), "confidence": f"{float(np.max(conf)):.9g}"})
    (out / "type_assignments.csv").write_text(evalkit.step_assignments_csv(rows), encoding="utf-8")
    _write_json(out / "metrics.json", metrics)
    return metrics


ABLATIONS = {
    "whether_only": dict(tasks=("whether",)),
    "whether_when": dict(tasks=("whether", "when")),
    "what_only": dict(tasks=("what", "tp")),
    "full": dict(tasks=TASKS),
    "lstm_only": dict(stb_variant="lstm_only"),
    "transformer_only": dict(stb_variant="transformer_only"),
}


def cmd_ablate(cfg: RunConfig, variants: list[str]) -> dict:
    out = _out_dir(cfg.out)
    unknown = set(variants) - set(ABLATIONS)
    if unknown:
        raise ConfigError(f"unknown ablations {sorted(unknown)}; choose from {sorted(ABLATIONS)}")
    test = load_dataset(_require_dir(cfg.test_data, "test-data"), labeled_only=True) if cfg.test_data else None
    results = {}
    for name in variants:
        spec = ABLATIONS[name]
        tcfg = cfg.train_config()
        mcfg = cfg.model_config()
        if "tasks" in spec:
            tcfg.tasks = tuple(spec["tasks"])
        if "stb_variant" in spec:
            mcfg = ModelConfig(**{**mcfg.to_dict(), "stb_variant": spec["stb_variant"]})
        result, _ = _run_training(cfg, out / name, tcfg, mcfg)
        entry = {"best_epoch": result.best_epoch, "tasks": list(tcfg.tasks), "stb_variant": mcfg.stb_variant}
        if test:
            entry.update(supervised_metrics(predict(result.model, result.stats, test, tasks=tuple(
                t for t in ("whether", "when", "what") if t in tcfg.tasks)), test, tcfg.gate_by_whether))
        results[name] = entry
    _write_json(out / "ablation.json", results)
    return results


# -- argument parsing --------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ide-net", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, out=True):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int)
        if data:
            p.add_argument("--data", help="sample directory (CSV + sidecars)")
        if out:
            p.add_argument("--out", help="output directory")

    def model_flags(p):
        p.add_argument("--desk", dest="desk_scale", action="store_const", const=True,
                       help="desk-scale model (d_hidden 32, 4 heads), 50 epochs, larger learning rate")
        p.add_argument("--d-hidden", dest="model.d_hidden", type=int)
        p.add_argument("--n-heads", dest="model.n_heads", type=int)
        p.add_argument("--types", dest="model.C", type=int, help="number of interaction types C")
        p.add_argument("--stb-variant", dest="model.stb_variant", choices=STB_VARIANTS)
        p.add_argument("--epochs", dest="train.epochs", type=int)
        p.add_argument("--batch-size", dest="train.batch_size", type=int)
        p.add_argument("--lr", dest="train.lr", type=float)
        p.add_argument("--tasks", dest="train.tasks", type=lambda s: tuple(t for t in s.split(",") if t),
                       help="comma-separated subset of whether,when,what,tp")
        for term in LossWeights.__dataclass_fields__:
            p.add_argument(f"--w-{term}", dest=f"weights.{term}", type=float, help=f"{term} loss weight")

    p = sub.add_parser("gen", help="generate synthetic samples")
    common(p, data=False)
    p.add_argument("--n", dest="mix.n", type=int, help="balanced mix of this many samples")
    p.add_argument("--crossing", dest="mix.crossing", type=int)
    p.add_argument("--stop-sign", dest="mix.stop_sign", type=int)
    p.add_argument("--non-interacting", dest="mix.non_interacting", type=int)
    p.add_argument("--steps", dest="mix.steps", type=int)
    p.add_argument("--jitter", dest="mix.jitter", action="store_const", const=True)

    p = sub.add_parser("label", help="label samples and balance negatives")
    common(p)
    p.add_argument("--ttc-mode", dest="rules.ttc_mode", choices=("gap", "own_min"))

    p = sub.add_parser("prep-stats", help="fit the normalization scale")
    common(p)

    p = sub.add_parser("train", help="train a model")
    common(p)
    model_flags(p)

    for name, helptext in (("extract", "per-step outputs for each sample"), ("eval", "evaluation metrics")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--checkpoint", required=False)
        if name == "eval":
            p.add_argument("--test-data", dest="test_data",
                           help="labeled test directory (then --data gives the training set for ratios)")

    p = sub.add_parser("ablate", help="train and compare task/architecture variants")
    common(p)
    model_flags(p)
    p.add_argument("--test-data", dest="test_data")
    p.add_argument("--variants", default="whether_only,whether_when,what_only,full",
                   help=f"comma-separated subset of {','.join(ABLATIONS)}")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    values = vars(args).copy()
    command = values.pop("command")
    config_path = values.pop("config", None)
    variants = values.pop("variants", "")
    try:
        cfg = RunConfig.from_sources(config_path, values)
        if command == "gen":
            result = cmd_gen(cfg)
        elif command == "label":
            result = cmd_label(cfg)
        elif command == "prep-stats":
            result = cmd_prep_stats(cfg)
        elif command == "train":
            result = cmd_train(cfg)
        elif command == "extract":
            result = cmd_extract(cfg)
        elif command == "eval":
            result = cmd_eval(cfg)
        else:
            result = cmd_ablate(cfg, [v for v in variants.split(",") if v])
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"error": "ConfigError", "message": str(exc)}) + "\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes machine-readable
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    sys.stdout.write(evalkit.metrics_json(result))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
