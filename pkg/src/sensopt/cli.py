"""Command-line pipeline: train, distill, optimize, baseline, compare, sweep.

All commands read one JSON config (see README for the schema) plus a few
override flags. Every random draw is derived from the single global seed and
a purpose tag, outputs carry no timestamps, and floats are written with
their shortest round-trip form, so a rerun with the same config produces
byte-identical files.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .baseline import BaselineResult, brute_force, sequential_dp
from .data import fit_scaler, format_value, load_csv, split
from .errors import (
    BudgetExceededError,
    ConfigError,
    DataError,
    DegenerateReferenceError,
    TrainingDivergedError,
)
from .nn import (
    LossKind,
    ModelKind,
    TrainConfig,
    bce_loss,
    build_model,
    forward,
    load_model,
    save_model,
    train,
)
from .search import (
    Direction,
    Objective,
    SearchConfig,
    SensitivityMode,
    format_assignment,
    run_search,
    top_feature_report,
    write_trace_csv,
)
from .sensitivity import ReferenceSet, ReferenceSource
from .surrogate import (
    build_distillation_set,
    evaluate_surrogate,
    load_surrogate,
    save_surrogate,
    split_holdout,
    train_surrogate,
)

SCHEMA_VERSION = 1

MODEL_FILE = "model.json"
SURROGATE_FILE = "surrogate.json"
TRAIN_METRICS_FILE = "train_metrics.json"
SPLIT_MANIFEST_FILE = "split_manifest.json"
DISTILL_REPORT_FILE = "distill_report.json"
OPTIMIZE_REPORT_FILE = "optimize_report.json"
TRACE_FILE = "trace.csv"
TOP_FEATURES_FILE = "top_features.csv"
BASELINE_REPORT_FILE = "baseline_report.json"
BASELINE_TRACE_FILE = "baseline_trace.csv"
COMPARE_FILE = "compare.csv"
SWEEP_FILE = "sweep_omega.csv"

DEFAULT_SWEEP_GRID = [round(0.1 * i, 1) for i in range(1, 10)]

DEFAULTS = {
    "seed": 0,
    "out_dir": "out",
    "data": {"test_fraction": 0.1, "stratify": False},
    "model": {"hidden_dims": [64], "learning_rate": 0.05, "epochs": 300,
              "batch_size": 16},
    "surrogate": {"hidden_dims": [64, 32], "learning_rate": 0.05, "epochs": 300,
                  "batch_size": 16, "n_samples": 5000, "max_arity": None,
                  "holdout_fraction": 0.2},
    "search": {"omega": 0.6, "zeta": 5, "max_depth": None, "mode": "oracle",
               "direction": "minimize", "label_subset": None, "top_k": 10},
    "baseline": {"budget": 10**6, "max_arity": None},
    "sweep": {"grid": DEFAULT_SWEEP_GRID},
}


def derive_seed(global_seed: int, tag: str) -> int:
    """Stable per-purpose seed: hash of the global seed and a tag string."""
    digest = hashlib.sha256(f"{global_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, overrides: dict | None = None) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be an object")
    cfg = _merge(DEFAULTS, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    cfg["_base_dir"] = str(p.parent)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    data = cfg.get("data", {})
    if "csv" not in data:
        raise ConfigError("config requires data.csv")
    labels = data.get("labels")
    if not labels or not isinstance(labels, list):
        raise ConfigError("config requires data.labels, a non-empty list")
    csv_path = _data_path(cfg)
    if not csv_path.exists():
        raise ConfigError(f"data.csv does not exist: {csv_path}")
    omega = cfg["search"]["omega"]
    if not 0.0 <= float(omega) <= 1.0:
        raise ConfigError(f"search.omega must be in [0,1], got {omega}")
    if int(cfg["search"]["zeta"]) < 1:
        raise ConfigError(f"search.zeta must be >= 1, got {cfg['search']['zeta']}")
    if cfg["search"]["mode"] not in ("oracle", "surrogate"):
        raise ConfigError(f"search.mode must be oracle or surrogate")
    if cfg["search"]["direction"] not in ("minimize", "maximize"):
        raise ConfigError("search.direction must be minimize or maximize")


def _data_path(cfg: dict) -> Path:
    p = Path(cfg["data"]["csv"])
    if not p.is_absolute():
        p = Path(cfg["_base_dir"]) / p
    return p


def _out_dir(cfg: dict) -> Path:
    p = Path(cfg["out_dir"])
    if not p.is_absolute():
        p = Path(cfg["_base_dir"]) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _to_jsonable(x):
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_to_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def write_json(path: Path, obj: dict):
    obj = {"schema_version": SCHEMA_VERSION, **_to_jsonable(obj)}
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def prepare_data(cfg: dict):
    """Load, split, and scale; everything downstream sees model-space data.

    Returns (train_scaled, test_scaled, scaler, train_idx, test_idx)."""
    dataset = load_csv(_data_path(cfg), cfg["data"]["labels"])
    train_set, test_set, train_idx, test_idx = split(
        dataset,
        test_fraction=float(cfg["data"]["test_fraction"]),
        seed=derive_seed(int(cfg["seed"]), "split"),
        stratify=bool(cfg["data"]["stratify"]),
    )
    scaler = fit_scaler(train_set)
    return (scaler.transform(train_set), scaler.transform(test_set), scaler,
            train_idx, test_idx)


def _train_config(section: dict, loss: LossKind, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(section["learning_rate"]),
        epochs=int(section["epochs"]),
        batch_size=int(section["batch_size"]),
        seed=seed,
        loss=loss,
        hidden_dims=[int(d) for d in section["hidden_dims"]],
    )


def _objective(cfg: dict) -> Objective:
    direction = (Direction.MINIMIZE_LABELS
                 if cfg["search"]["direction"] == "minimize"
                 else Direction.MAXIMIZE_LABELS)
    subset = cfg["search"]["label_subset"]
    return Objective(direction, tuple(subset) if subset else None)


def _search_config(cfg: dict, reference: ReferenceSet) -> SearchConfig:
    section = cfg["search"]
    mode = (SensitivityMode.ORACLE if section["mode"] == "oracle"
            else SensitivityMode.SURROGATE)
    sc = SearchConfig(
        value_domains=reference.domains,
        omega=float(section["omega"]),
        zeta=int(section["zeta"]),
        max_depth=None if section["max_depth"] is None else int(section["max_depth"]),
        sensitivity_mode=mode,
    )
    sc.validate(reference.n_features)
    return sc


def _artifact_path(cfg: dict, name: str) -> Path:
    path = _out_dir(cfg) / name
    if not path.exists():
        raise DataError(f"missing input: {path} (run the earlier stage first)")
    return path


def _accuracy(probabilities: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return ((probabilities >= 0.5) == (targets >= 0.5)).mean(axis=0)


def cmd_train(cfg: dict) -> int:
    train_set, test_set, _, train_idx, test_idx = prepare_data(cfg)
    seed = int(cfg["seed"])
    model = build_model(train_set.n_features, train_set.n_labels,
                        ModelKind.CLASSIFIER, cfg["model"]["hidden_dims"],
                        seed=derive_seed(seed, "init-classifier"))
    tc = _train_config(cfg["model"], LossKind.BCE,
                       derive_seed(seed, "train-classifier"))
    model, report = train(model, train_set.X, train_set.Y, tc)

    out = _out_dir(cfg)
    save_model(model, out / MODEL_FILE, meta={
        "feature_names": [f.name for f in train_set.features],
        "label_names": train_set.label_names,
    })
    test_preds = forward(model, test_set.X)
    train_preds = forward(model, train_set.X)
    write_json(out / TRAIN_METRICS_FILE, {
        "labels": train_set.label_names,
        "epochs": tc.epochs,
        "loss_curve": report.epoch_losses,
        "final_train_loss": report.epoch_losses[-1] if report.epoch_losses else None,
        "test_loss": float(bce_loss(test_preds, test_set.Y)),
        "train_accuracy_per_label": _accuracy(train_preds, train_set.Y),
        "test_accuracy_per_label": _accuracy(test_preds, test_set.Y),
        "train_positive_rate": train_set.Y.mean(axis=0),
        "test_positive_rate": test_set.Y.mean(axis=0),
    })
    write_json(out / SPLIT_MANIFEST_FILE, {
        "seed": seed,
        "test_fraction": float(cfg["data"]["test_fraction"]),
        "train_rows": [int(i) for i in train_idx],
        "test_rows": [int(i) for i in test_idx],
    })
    return 0


def cmd_distill(cfg: dict) -> int:
    train_set, _, _, _, _ = prepare_data(cfg)
    model, _ = load_model(_artifact_path(cfg, MODEL_FILE))
    reference = ReferenceSet.from_dataset(train_set, ReferenceSource.TRAIN_SPLIT)
    seed = int(cfg["seed"])
    section = cfg["surrogate"]

    dset = build_distillation_set(
        model, reference,
        n_samples=int(section["n_samples"]),
        max_arity=None if section["max_arity"] is None else int(section["max_arity"]),
        seed=derive_seed(seed, "distill-sample"),
    )
    head, tail = split_holdout(dset, float(section["holdout_fraction"]))
    tc = _train_config(section, LossKind.MSE, derive_seed(seed, "train-surrogate"))
    surrogate, report = train_surrogate(head, tc)

    out = _out_dir(cfg)
    save_surrogate(surrogate, out / SURROGATE_FILE, train_set.n_features)
    write_json(out / DISTILL_REPORT_FILE, {
        "n_samples": dset.n_samples,
        "train_samples": head.n_samples,
        "holdout_samples": tail.n_samples,
        "final_train_loss": report.epoch_losses[-1] if report.epoch_losses else None,
        "r_squared_train": evaluate_surrogate(surrogate, head),
        "r_squared_holdout": evaluate_surrogate(surrogate, tail),
    })
    return 0


def _load_search_inputs(cfg: dict):
    train_set, _, scaler, _, _ = prepare_data(cfg)
    model, model_meta = load_model(_artifact_path(cfg, MODEL_FILE))
    reference = ReferenceSet.from_dataset(train_set, ReferenceSource.TRAIN_SPLIT)
    surrogate = None
    if cfg["search"]["mode"] == "surrogate":
        surrogate, _ = load_surrogate(_artifact_path(cfg, SURROGATE_FILE))
    feature_names = model_meta.get("feature_names") or [
        f.name for f in train_set.features
    ]
    return train_set, scaler, model, reference, surrogate, feature_names


def _candidate_doc(c, objective: Objective, omega: float, features) -> dict:
    if objective.direction is Direction.MINIMIZE_LABELS:
        gamma_per_label = omega * (1.0 - c.lambda_per_label) \
            + (1.0 - omega) * c.upsilon_per_label
    else:
        gamma_per_label = omega * c.lambda_per_label \
            + (1.0 - omega) * c.upsilon_per_label
    display = [
        f"{features[j].name}={format_value(features[j], v)}"
        for j, v in sorted(c.assignment.pairs)
    ]
    return {
        "assignment": [[int(j), float(v)] for j, v in sorted(c.assignment.pairs)],
        "assignment_text": ";".join(display),
        "gamma": float(c.gamma),
        "gamma_per_label": gamma_per_label,
        "lambda_per_label": c.lambda_per_label,
        "upsilon_per_label": c.upsilon_per_label,
        "mean_lambda": c.mean_lambda(objective),
    }


def cmd_optimize(cfg: dict) -> int:
    train_set, scaler, model, reference, surrogate, feature_names = \
        _load_search_inputs(cfg)
    sc = _search_config(cfg, reference)
    objective = _objective(cfg)
    sn, trace = run_search(model, reference, sc, objective, surrogate=surrogate)

    out = _out_dir(cfg)
    write_trace_csv(trace, out / TRACE_FILE, objective,
                    feature_names=feature_names)
    write_json(out / OPTIMIZE_REPORT_FILE, {
        "omega": sc.omega,
        "zeta": sc.zeta,
        "max_depth": sc.depth(),
        "mode": cfg["search"]["mode"],
        "direction": cfg["search"]["direction"],
        "labels": train_set.label_names,
        "selected": [
            _candidate_doc(c, objective, sc.omega, train_set.features)
            for c in sn
        ],
    })

    effects = top_feature_report(model, reference, sc, objective,
                                 k=int(cfg["search"]["top_k"]),
                                 surrogate=surrogate)
    with (out / TOP_FEATURES_FILE).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["rank", "feature", "value", "gamma", "gamma_delta",
                         "mean_lambda"])
        for rank, e in enumerate(effects, start=1):
            meta = train_set.features[e.feature]
            writer.writerow([
                rank, meta.name, format_value(meta, e.value), repr(e.gamma),
                repr(e.gamma_delta),
                repr(objective.collapse(e.lambda_per_label)),
            ])
    return 0


def _baseline_rows(result: BaselineResult, feature_names) -> list:
    rows = []
    for stage in result.stage_trace:
        rows.append([stage.stage, 1, "", repr(stage.mean_lambda),
                     format_assignment(stage.assignment, feature_names),
                     result.method])
    return rows


def cmd_baseline(cfg: dict) -> int:
    train_set, scaler, model, reference, _, feature_names = \
        _load_search_inputs(cfg)
    objective = _objective(cfg)
    section = cfg["baseline"]
    budget = int(section["budget"])
    max_arity = section["max_arity"]
    max_arity = reference.n_features if max_arity is None else int(max_arity)

    report: dict = {}
    rows = []
    try:
        brute = brute_force(model, reference, reference.domains, objective,
                            max_arity=max_arity, budget=budget)
        report["brute_force"] = {
            "best_assignment": [[int(j), float(v)] for j, v in brute.best_assignment],
            "best_assignment_text": format_assignment(brute.best_assignment,
                                                      feature_names),
            "best_mean_lambda": brute.best_objective,
            "evaluations": brute.evaluations,
        }
        rows += _baseline_rows(brute, feature_names)
    except BudgetExceededError as e:
        report["brute_force"] = {
            "skipped": True,
            "enumeration_size": e.size,
            "budget": e.budget,
        }

    seq = sequential_dp(model, reference, reference.domains, objective)
    report["sequential"] = {
        "best_assignment": [[int(j), float(v)] for j, v in seq.best_assignment],
        "best_assignment_text": format_assignment(seq.best_assignment,
                                                  feature_names),
        "best_mean_lambda": seq.best_objective,
        "evaluations": seq.evaluations,
    }
    rows += _baseline_rows(seq, feature_names)

    out = _out_dir(cfg)
    write_json(out / BASELINE_REPORT_FILE, report)
    with (out / BASELINE_TRACE_FILE).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["stage", "candidate_rank", "gamma", "mean_lambda",
                         "assignment", "method"])
        writer.writerows(rows)
    return 0


def _read_trace(path: Path) -> list:
    if not path.exists():
        raise DataError(f"missing input: {path} (run the earlier stage first)")
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def cmd_compare(cfg: dict) -> int:
    """Per-stage, per-method best mean lambda, values copied verbatim from
    the source traces."""
    out = _out_dir(cfg)
    direction = cfg["search"]["direction"]
    better = (lambda a, b: a < b) if direction == "minimize" else (lambda a, b: a > b)

    merged: dict = {}  # (stage, method) -> mean_lambda string
    for row in _read_trace(out / TRACE_FILE):
        key = (int(row["stage"]), "beam")
        value = row["mean_lambda"]
        if key not in merged or better(float(value), float(merged[key])):
            merged[key] = value
    for row in _read_trace(out / BASELINE_TRACE_FILE):
        key = (int(row["stage"]), row["method"])
        value = row["mean_lambda"]
        if key not in merged or better(float(value), float(merged[key])):
            merged[key] = value

    with (out / COMPARE_FILE).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["stage", "method", "mean_lambda"])
        for stage, method in sorted(merged):
            writer.writerow([stage, method, merged[(stage, method)]])
    return 0


def cmd_sweep_omega(cfg: dict, grid=None) -> int:
    train_set, scaler, model, reference, surrogate, feature_names = \
        _load_search_inputs(cfg)
    objective = _objective(cfg)
    if grid is None:
        grid = cfg["sweep"]["grid"]
    direction_best = min if objective.direction is Direction.MINIMIZE_LABELS else max

    out = _out_dir(cfg)
    with (out / SWEEP_FILE).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["omega", "best_mean_lambda", "best_gamma", "assignment"])
        for omega in grid:
            sc = _search_config(cfg, reference)
            sc.omega = float(omega)
            sc.validate(reference.n_features)
            sn, _ = run_search(model, reference, sc, objective,
                               surrogate=surrogate)
            by_lambda = direction_best(sn, key=lambda c: c.mean_lambda(objective))
            writer.writerow([
                repr(float(omega)),
                repr(by_lambda.mean_lambda(objective)),
                repr(sn[0].gamma),
                format_assignment(by_lambda.assignment, feature_names),
            ])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensopt",
        description="Train a multi-label classifier, score feature-value "
                    "sensitivities, and search for the best assignments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train", "fit the classifier and write model + metrics"),
        ("distill", "sample sensitivities and fit the surrogate"),
        ("optimize", "beam-search assignments, write SN report and traces"),
        ("baseline", "run exhaustive and sequential-greedy baselines"),
        ("compare", "merge search and baseline traces per stage"),
        ("sweep-omega", "rerun the search across a grid of omega weights"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to JSON config")
        p.add_argument("--omega", type=float, default=None)
        p.add_argument("--zeta", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", choices=["oracle", "surrogate"], default=None)
        p.add_argument("--labels", default=None,
                       help="comma-separated label column names")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def _overrides(args) -> dict:
    out: dict = {"search": {}, "data": {}}
    if args.omega is not None:
        out["search"]["omega"] = args.omega
    if args.zeta is not None:
        out["search"]["zeta"] = args.zeta
    if args.mode is not None:
        out["search"]["mode"] = args.mode
    if args.seed is not None:
        out["seed"] = args.seed
    if args.labels is not None:
        out["data"]["labels"] = [s for s in args.labels.split(",") if s]
    if args.out is not None:
        out["out_dir"] = args.out
    return out


COMMANDS = {
    "train": cmd_train,
    "distill": cmd_distill,
    "optimize": cmd_optimize,
    "baseline": cmd_baseline,
    "compare": cmd_compare,
    "sweep-omega": cmd_sweep_omega,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (TrainingDivergedError, DegenerateReferenceError, ArithmeticError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
