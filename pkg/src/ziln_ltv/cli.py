"""Command-line entry point: featurize, train, evaluate, simulate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training abort.
All data goes to files under ``--out-dir``; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as dt
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ziln_ltv import data, metrics, sim
from ziln_ltv.data import DataError, FeatureSchema
from ziln_ltv.loss import LossKind
from ziln_ltv.model import (
    Architecture,
    ModelConfig,
    Predictions,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from ziln_ltv.train import TrainConfig, TrainingAborted, train

log = logging.getLogger("ziln_ltv")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORT = 0, 1, 2, 3
PREDICTION_COLUMNS = ("id", "p_return", "mu", "sigma", "mean_ltv", "label", "first_purchase_value")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ziln-ltv", description=__doc__.splitlines()[0])
    p.add_argument("--command", choices=["featurize", "train", "evaluate", "simulate"])
    p.add_argument("--config", help="INI file with [data]/[model]/[train]/[evaluate]/[simulate] sections")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    # data
    p.add_argument("--transactions")
    p.add_argument("--examples")
    p.add_argument("--schema")
    p.add_argument("--cohort-start")
    p.add_argument("--cohort-end")
    p.add_argument("--horizon", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--min-count", type=int)
    # model / training
    p.add_argument("--loss", help="comma list of ziln, mse, bce")
    p.add_argument("--arch", help="comma list of linear, dnn")
    p.add_argument("--hidden", help="DNN hidden sizes, e.g. 64,32")
    p.add_argument("--repeats", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--model-out")
    # evaluation
    p.add_argument("--model-in", action="append", help="checkpoint; repeat for several runs")
    p.add_argument("--predictions", action="append", help="saved predictions CSV instead of a model")
    p.add_argument("--cost", type=float)
    # simulation
    p.add_argument("--sigmas", help="comma list, default 0.25,0.5,...,2.0")
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    return p


# name -> (section, type, default)
_SETTINGS = {
    "command": ("run", str, None),
    "out_dir": ("run", str, None),
    "seed": ("run", int, 0),
    "transactions": ("data", str, None),
    "examples": ("data", str, None),
    "schema": ("data", str, None),
    "cohort_start": ("data", str, None),
    "cohort_end": ("data", str, None),
    "horizon": ("data", int, 365),
    "test_fraction": ("data", float, None),
    "min_count": ("data", int, 1),
    "loss": ("model", str, "ziln"),
    "arch": ("model", str, "dnn"),
    "hidden": ("model", str, "64,32"),
    "repeats": ("train", int, 1),
    "batch_size": ("train", int, 1024),
    "learning_rate": ("train", float, 2e-4),
    "max_epochs": ("train", int, 400),
    "patience": ("train", int, 10),
    "model_out": ("train", str, None),
    "model_in": ("evaluate", list, None),
    "predictions": ("evaluate", list, None),
    "cost": ("evaluate", float, None),
    "sigmas": ("simulate", str, ",".join(str(s) for s in sim.DEFAULT_SIGMAS)),
    "n": ("simulate", int, 10_000),
    "reps": ("simulate", int, 2_000),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        # out_dir is where this file lives; leaving it out keeps outputs location-independent
        for name in sorted(self.values):
            if name == "out_dir":
                continue
            section, kind, _ = _SETTINGS[name]
            v = self.values[name]
            if v is None:
                continue
            cp.setdefault(section, {})
            cp[section][name] = ",".join(v) if kind is list else str(v)
        lines = []
        for section in sorted(cp.sections()):
            lines.append(f"[{section}]")
            lines += [f"{k} = {cp[section][k]}" for k in sorted(cp[section])]
            lines.append("")
        return "\n".join(lines)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the INI file, then explicit flags."""
    values = {name: default for name, (_, _, default) in _SETTINGS.items()}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        cp.read(path, encoding="utf-8")
        for name, (section, kind, _) in _SETTINGS.items():
            if cp.has_option(section, name):
                raw = cp.get(section, name)
                try:
                    values[name] = [s.strip() for s in raw.split(",")] if kind is list else kind(raw)
                except ValueError:
                    raise UsageError(f"config {section}.{name}: bad value {raw!r}") from None
    for name in _SETTINGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if not values["command"]:
        raise UsageError("--command is required")
    if not values["out_dir"]:
        raise UsageError("--out-dir is required")
    return RunConfig(values)


def _require_files(cfg: RunConfig, *names: str) -> None:
    for name in names:
        v = cfg.values.get(name)
        paths = v if isinstance(v, list) else [v]
        if not v:
            raise UsageError(f"--{name.replace('_', '-')} is required for {cfg.command}")
        for p in paths:
            if not Path(p).is_file():
                raise UsageError(f"--{name.replace('_', '-')}: file not found: {p}")


def _split_list(text: str, what: str) -> list[str]:
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    if not items:
        raise UsageError(f"empty {what} list")
    return items


def _parse_date(text, flag) -> dt.date:
    try:
        return dt.date.fromisoformat(str(text))
    except (TypeError, ValueError):
        raise UsageError(f"{flag}: expected YYYY-MM-DD, got {text!r}") from None


# ---------------------------------------------------------------------------
# featurize


def cmd_featurize(cfg: RunConfig, out: Path) -> None:
    _require_files(cfg, "transactions")
    if not cfg.cohort_start or not cfg.cohort_end:
        raise UsageError("--cohort-start and --cohort-end are required for featurize")
    start = _parse_date(cfg.cohort_start, "--cohort-start")
    end = _parse_date(cfg.cohort_end, "--cohort-end")
    if end <= start:
        raise UsageError("--cohort-end must be after --cohort-start")

    records = data.load_transactions(cfg.transactions)
    if not records:
        raise DataError("no transaction rows", cfg.transactions)
    summaries = data.summarize_customers(records, start, end, cfg.horizon)
    schema = data.transaction_schema(summaries, cfg.min_count)

    vocab_dir = out / "vocab"
    vocab_dir.mkdir(exist_ok=True)
    entries = []
    for name, vocab in schema.categorical_features:
        vocab.save(vocab_dir / f"{name}.txt")
        entries.append({"name": name, "vocabulary_file": f"vocab/{name}.txt"})
    schema_dict = schema.to_dict()
    schema_dict["categorical_features"] = entries
    (out / "schema.json").write_text(json.dumps(schema_dict, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    data.write_summaries_csv(out / "examples.csv", summaries)
    if cfg.test_fraction is not None and len(summaries) >= 2:
        tr, te = data.split(summaries, cfg.test_fraction, cfg.seed)
        data.write_summaries_csv(out / "train.csv", sorted(tr, key=lambda s: s.customer_id))
        data.write_summaries_csv(out / "test.csv", sorted(te, key=lambda s: s.customer_id))
    log.info("featurized %d customers from %d transactions", len(summaries), len(records))


# ---------------------------------------------------------------------------
# train


def _model_config(arch: str, loss: LossKind, hidden: str, seed: int) -> ModelConfig:
    architecture = Architecture(arch.upper())
    hidden_sizes = None
    if architecture is Architecture.DNN:
        try:
            hidden_sizes = tuple(int(h) for h in _split_list(hidden, "hidden"))
        except ValueError:
            raise UsageError(f"--hidden: bad sizes {hidden!r}") from None
    return ModelConfig(
        architecture=architecture,
        hidden_sizes=hidden_sizes,
        head="ZILN" if loss is LossKind.ZILN else "SCALAR",
        seed=seed,
        scalar_target="logit" if loss is LossKind.BCE else "value",
    )


def cmd_train(cfg: RunConfig, out: Path) -> None:
    _require_files(cfg, "schema", "examples")
    try:
        losses = [LossKind.parse(s) for s in _split_list(cfg.loss, "loss")]
        archs = [a.upper() for a in _split_list(cfg.arch, "arch")]
        for a in archs:
            Architecture(a)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if cfg.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    jobs = [(a, l, r) for a in archs for l in losses for r in range(cfg.repeats)]
    if cfg.model_out and len(jobs) > 1:
        raise UsageError("--model-out names a single model; use --out-dir for several")
    try:
        train_defaults = TrainConfig(
            batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
            max_epochs=cfg.max_epochs, early_stop_patience=cfg.patience,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None

    schema = FeatureSchema.load(cfg.schema)
    examples = data.load_examples(cfg.examples, schema)
    if len(examples) < 2:
        raise DataError("need at least 2 examples to train", cfg.examples)
    features, labels, _ = data.encode(examples, schema)

    for arch, loss, rep in jobs:
        seed = cfg.seed + rep
        tag = f"{arch.lower()}_{loss.value.lower()}_r{rep}"
        mcfg = _model_config(arch, loss, cfg.hidden, seed)
        tcfg = TrainConfig(**{**train_defaults.__dict__, "seed": seed, "loss_kind": loss})
        params = init_model(mcfg, schema)
        best, history = train(params, features, labels, tcfg, log_path=out / f"{tag}.log.jsonl")
        path = Path(cfg.model_out) if cfg.model_out else out / f"{tag}.ckpt"
        save_checkpoint(path, best)
        log.info("%s: best epoch %d of %d, val loss %.6g", tag, history.best_epoch,
                 history.stopped_epoch, history.best_val_loss)


# ---------------------------------------------------------------------------
# evaluate


def _fmt(x: float) -> str:
    return "" if x is None or math.isnan(x) else repr(float(x))


def write_predictions(path, ids, pred: Predictions, labels, fpv) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for i in range(len(ids)):
            w.writerow([ids[i], _fmt(pred.p_return[i]), _fmt(pred.mu[i]), _fmt(pred.sigma[i]),
                        _fmt(pred.mean_ltv[i]), _fmt(labels[i]), _fmt(fpv[i])])


def read_predictions(path):
    cols = {c: [] for c in PREDICTION_COLUMNS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"missing columns {missing}", str(path), 1)
        for row in reader:
            cols["id"].append(row["id"])
            for c in PREDICTION_COLUMNS[1:]:
                try:
                    cols[c].append(float(row[c]) if row[c] != "" else math.nan)
                except ValueError:
                    raise DataError(f"column {c!r}: bad number {row[c]!r}", str(path), reader.line_num) from None
    arr = {c: np.array(v, dtype=np.float64) for c, v in cols.items() if c != "id"}
    pred = Predictions(arr["p_return"], arr["mu"], arr["sigma"], arr["mean_ltv"])
    return cols["id"], pred, arr["label"], arr["first_purchase_value"]


def _safe(fn, *args):
    try:
        return fn(*args)
    except (ValueError, ZeroDivisionError) as e:
        log.warning("metric %s undefined: %s", fn.__name__, e)
        return None


def evaluate_predictions(pred: Predictions, labels, fpv, cost=None) -> tuple[dict, dict]:
    """Metrics dict plus plot-ready artefacts (gain curve, decile table)."""
    labels = np.asarray(labels, dtype=np.float64)
    has_value = not np.isnan(pred.mean_ltv).any()
    score = pred.mean_ltv if has_value else pred.p_return
    classify = pred.p_return if not np.isnan(pred.p_return).any() else pred.mean_ltv
    returned = (labels > 0).astype(np.float64)

    report: dict = {"n": int(labels.size)}
    report["spearman"] = _safe(metrics.spearman, score, labels)
    g = _safe(metrics.normalized_gini, score, labels, fpv if np.all(fpv >= 0) else None)
    artefacts: dict = {}
    if g is not None:
        report["gini"] = {
            "label": g.label_gini, "model": g.model_gini, "normalized": g.normalized_gini,
            "baseline": g.baseline_gini, "normalized_baseline": g.normalized_baseline_gini,
        }
        artefacts["gain_curve"] = g.model_curve
    else:
        report["gini"] = None
    report["hit_rate_top25"] = _safe(metrics.hit_rate, score, labels, 0.25)
    report["auc_roc"] = _safe(metrics.auc_roc, returned, classify)
    report["auc_pr"] = _safe(metrics.auc_pr, returned, classify)

    table = _safe(metrics.decile_table, pred.mean_ltv, labels) if has_value else None
    if table is not None:
        artefacts["deciles"] = table
        report["deciles"] = [
            {"decile": r.decile_index, "mean_prediction": r.mean_prediction,
             "mean_label": r.mean_label, "count": r.count} for r in table
        ]
        report["decile_mape"] = _safe(metrics.decile_mape, table)
    else:
        report["deciles"] = None
        report["decile_mape"] = None
    if cost is not None:
        report["total_profit"] = metrics.total_profit(pred.mean_ltv, labels, cost) if has_value else None
        report["cost"] = cost
    return report, artefacts


def _mean_of_reports(reports: list[dict]) -> dict:
    def scalar_paths(d, prefix=()):
        for k, v in d.items():
            if isinstance(v, dict):
                yield from scalar_paths(v, prefix + (k,))
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                yield prefix + (k,), v

    acc: dict = {}
    for r in reports:
        for path, v in scalar_paths(r):
            acc.setdefault(path, []).append(v)
    mean: dict = {}
    for path, vals in acc.items():
        if len(vals) != len(reports):
            continue
        node = mean
        for k in path[:-1]:
            node = node.setdefault(k, {})
        node[path[-1]] = math.fsum(vals) / len(vals)
    return mean


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    sources = []
    if cfg.predictions:
        _require_files(cfg, "predictions")
        for path in cfg.predictions:
            sources.append(read_predictions(path))
    else:
        _require_files(cfg, "model_in", "examples")
        models = [load_checkpoint(p) for p in cfg.model_in]
        schema = models[0].schema
        for m in models[1:]:
            if m.schema != schema:
                raise UsageError("all --model-in checkpoints must share one feature schema")
        if cfg.schema:
            _require_files(cfg, "schema")
            if FeatureSchema.load(cfg.schema) != schema:
                raise UsageError("--schema does not match the model's feature schema")
        examples = data.load_examples(cfg.examples, schema)
        if not examples:
            raise DataError("no examples to evaluate", cfg.examples)
        features, labels, fpv = data.encode(examples, schema)
        ids = [ex.id for ex in examples]
        for m in models:
            sources.append((ids, predict(m, features), labels, fpv))

    single = len(sources) == 1
    per_repeat = []
    for k, (ids, pred, labels, fpv) in enumerate(sources):
        suffix = "" if single else f"_r{k}"
        if not cfg.predictions:
            write_predictions(out / f"predictions{suffix}.csv", ids, pred, labels, fpv)
        report, art = evaluate_predictions(pred, labels, fpv, cfg.cost)
        if "gain_curve" in art:
            metrics.write_curve_csv(out / f"gain_curve{suffix}.csv", art["gain_curve"])
        if "deciles" in art:
            metrics.write_deciles_csv(out / f"deciles{suffix}.csv", art["deciles"])
        per_repeat.append(report)

    final = dict(per_repeat[0]) if single else {"repeats": len(per_repeat), "per_repeat": per_repeat,
                                                "mean": _mean_of_reports(per_repeat)}
    (out / "report.json").write_text(json.dumps(final, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: RunConfig, out: Path) -> None:
    try:
        sigmas = [float(s) for s in _split_list(cfg.sigmas, "sigmas")]
    except ValueError:
        raise UsageError(f"--sigmas: bad list {cfg.sigmas!r}") from None
    if any(not s > 0 for s in sigmas):
        raise UsageError("--sigmas must be positive")
    if cfg.n < 4 or cfg.n % 2 or cfg.reps < 2:
        raise UsageError("--n must be even and >= 4, --reps >= 2")
    rows = sim.run_efficiency_study(sigmas, cfg.n, cfg.reps, cfg.seed)
    sim.write_efficiency_csv(out / "efficiency.csv", rows)
    sim.write_efficiency_csv(out / "efficiency_extended.csv", rows, extended=True)


COMMANDS = {
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if cfg.command not in COMMANDS:
            raise UsageError(f"unknown command {cfg.command!r}")
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[cfg.command](cfg, out)
        (out / "resolved_config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    except UsageError as e:
        print(f"ziln-ltv: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as e:
        print(f"ziln-ltv: training aborted at {e}", file=sys.stderr)
        return EXIT_ABORT
    except (DataError, ValueError, OSError) as e:
        print(f"ziln-ltv: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
