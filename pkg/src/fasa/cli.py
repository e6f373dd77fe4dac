"""``fasa`` command: preprocess, train, eval, simulate.

Exit codes: 0 success, 1 domain error (bad data, degenerate labels, schema
problems), 2 usage or I/O error. Set ``FASA_LOG`` (DEBUG, INFO, WARNING,
ERROR) for log verbosity on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import anfis, detect, metrics, preprocess, simnet, traffic

log = logging.getLogger("fasa")

DOMAIN_ERRORS = (
    anfis.AnfisError,
    preprocess.PreprocessError,
    detect.DetectError,
    traffic.ScenarioError,
    metrics.MetricsError,
    simnet.SimulationError,
)


class UsageError(Exception):
    pass


def _read_json(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise preprocess.PreprocessError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise preprocess.PreprocessError(f"config {path} must be a JSON object")
    return doc


def _require_file(path: Optional[str], what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return p


def _dump(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _build(cls, doc: dict, what: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise preprocess.PreprocessError(f"unknown {what} config keys: {', '.join(unknown)}")
    return cls(**doc)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    src = _require_file(args.input, "input")
    if args.output is None:
        raise UsageError("--output is required")
    doc = _read_json(args.config)
    for key in ("drop_constant", "drop_categorical", "selected_features"):
        if key in doc:
            doc[key] = tuple(doc[key])
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = _build(preprocess.PreprocessConfig, doc, "preprocess")

    ds = preprocess.load_csv(src)
    result = preprocess.run_pipeline(ds, cfg)
    out = Path(args.output)
    preprocess.write_csv(result.dataset, out)
    preprocess.write_manifest(result, out.with_suffix(".manifest.json"))
    for s in result.stages:
        print(f"{s['stage']:<24} rows {s['rows_before']:>8} -> {s['rows_after']:<8} "
              f"cols {s['cols_before']:>4} -> {s['cols_after']}")
    print(f"features: {', '.join(result.dataset.columns)}")
    return 0


def _labelled(path: Path) -> preprocess.Dataset:
    return preprocess.encode_labels(preprocess.load_csv(path))


def cmd_train(args) -> int:
    src = _require_file(args.input, "input")
    if args.output is None:
        raise UsageError("--output is required")
    doc = _read_json(args.config)
    test_fraction = float(doc.pop("test_fraction", 0.2))
    mfs = int(doc.pop("mfs_per_input", 2))
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.epochs is not None:
        doc["epochs"] = args.epochs
    if args.folds is not None:
        doc["k_folds"] = args.folds
    cfg = _build(anfis.TrainConfig, doc, "train")

    ds = _labelled(src)
    if ds.text:
        raise preprocess.PreprocessError(f"non-numeric columns present: {sorted(ds.text)}; run preprocess first")
    y = ds.numeric_labels()
    if np.unique(y).size < 2:
        raise anfis.AnfisError("degenerate labels: both classes must be present")
    test = preprocess.stratified_split(y, test_fraction, cfg.seed)
    train_ds = ds.take_rows(~test)
    scaler = preprocess.fit_scaler(train_ds)
    model = anfis.init_grid(len(ds.columns), mfs, feature_names=ds.columns)
    model.scaler = scaler.to_dict()
    if args.threshold is not None:
        model.threshold = args.threshold
        model.check()
    report = anfis.fit(model, scaler.transform(train_ds.X), y[~test], cfg, cross_validate=args.folds is not None)

    out = Path(args.output)
    anfis.save(model, out)
    summary = {"train": report.to_dict(), "config": dataclasses.asdict(cfg)}
    pred, prob = anfis.classify(model, scaler.transform(train_ds.X))
    summary["train_metrics"] = metrics.evaluate(pred, y[~test], prob, model.threshold).to_dict()
    if test.any():
        pred, prob = anfis.classify(model, scaler.transform(ds.X[test]))
        summary["test_metrics"] = metrics.evaluate(pred, y[test], prob, model.threshold).to_dict()
    _dump(summary, out.with_suffix(".report.json"))
    key = "test_metrics" if "test_metrics" in summary else "train_metrics"
    print(f"{key}: accuracy {summary[key]['accuracy']:.4f}, fpr {summary[key]['fpr']}")
    for fold in report.fold_metrics:
        print(f"fold {fold['fold']}: accuracy {fold['accuracy']:.4f}")
    print(f"model {out} snapshot {report.snapshot_id}")
    return 0


def _model_matrix(model: anfis.AnfisModel, ds: preprocess.Dataset) -> np.ndarray:
    if not model.feature_names or model.scaler is None:
        raise anfis.AnfisError("model document has no feature names/scaler")
    idx = [ds.index(n) for n in model.feature_names]
    missing = [n for n, i in zip(model.feature_names, idx) if i is None]
    if missing:
        raise preprocess.PreprocessError(f"input is missing model feature columns: {missing}")
    scaler = preprocess.Scaler.from_dict(model.scaler)
    return scaler.transform(ds.X[:, idx])


def cmd_eval(args) -> int:
    model_path = _require_file(args.model, "model")
    src = _require_file(args.input, "input")
    if args.output is None:
        raise UsageError("--output is required")
    model = anfis.load(model_path)
    if args.threshold is not None:
        model.threshold = args.threshold
        model.check()
    ds = _labelled(src)
    y = ds.numeric_labels()
    pred, prob = anfis.classify(model, _model_matrix(model, ds))
    report = metrics.evaluate(pred, y, prob, model.threshold)
    out = Path(args.output)
    metrics.write_report(report, out)
    if report.auc is not None:
        metrics.write_roc_csv(metrics.roc_auc(prob, y), out.with_suffix(".roc.csv"))
    r = report.to_dict()
    print(" ".join(f"{k}={r[k]}" for k in ("accuracy", "precision", "recall", "fpr", "f1", "auc")))
    return 0


def cmd_simulate(args) -> int:
    if args.output is None:
        raise UsageError("--output is required")
    doc = _read_json(args.config)
    det_doc = doc.pop("detector", {})
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.no_attack:
        doc["attack_enabled"] = False
    cfg = traffic.ScenarioConfig.from_dict(doc)
    det_doc.setdefault("collection_interval", cfg.collection_interval)
    det_cfg = _build(detect.DetectorConfig, det_doc, "detector")
    model = anfis.load(_require_file(args.model, "model")) if args.model else detect.load_default_model()
    if args.threshold is not None:
        model.threshold = args.threshold
        model.check()

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    controller = detect.Controller(model, det_cfg)
    result = traffic.run_scenario(cfg, detector=controller)
    simnet.write_trace(result.trace, out / "trace.jsonl")
    traffic.write_timeline_csv(result.timeline, out / "timeline.csv")
    detect.write_decision_log(controller.decisions, out / "decisions.jsonl")
    first_bad, first_block = detect.first_event_times(controller)
    summary = {
        "scenario": cfg.to_dict(),
        "detector": dataclasses.asdict(det_cfg),
        "first_malicious_decision": first_bad,
        "first_block_install": first_block,
        "mitigations": [a.to_dict() for a in controller.actions if a.kind != "AllowFlow"],
        "allow_rules": sum(a.kind == "AllowFlow" for a in controller.actions),
        "generated_packets": len(result.truth),
    }
    if controller.decisions:
        summary["evaluation"] = detect.evaluate_decisions(controller, result.truth).to_dict()
    _dump(summary, out / "report.json")
    print(f"windows {len(controller.windows)}, decisions {len(controller.decisions)}, "
          f"block rules {len(summary['mitigations'])}")
    if first_bad is not None:
        print(f"first malicious decision at {first_bad:.3f} s, block installed at {first_block:.3f} s")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fasa", description="ANFIS SYN-flood detection and SDN mitigation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        p.add_argument("--input")
        p.add_argument("--output")
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        for f in flags:
            f(p)

    model = lambda p: p.add_argument("--model")  # noqa: E731
    threshold = lambda p: p.add_argument("--threshold", type=float)  # noqa: E731

    common(sub.add_parser("preprocess", help="clean a flow-feature CSV and write the selected features"))
    common(
        sub.add_parser("train", help="train an ANFIS model on a cleaned CSV"),
        threshold,
        lambda p: p.add_argument("--folds", type=int),
        lambda p: p.add_argument("--epochs", type=int),
    )
    common(sub.add_parser("eval", help="score a model on a labelled CSV"), model, threshold)
    common(
        sub.add_parser("simulate", help="run the fabric scenario with the detector in the loop"),
        model,
        threshold,
        lambda p: p.add_argument("--no-attack", action="store_true"),
    )
    return parser


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval, "simulate": cmd_simulate}


def main(argv: Optional[list[str]] = None) -> int:
    level = os.environ.get("FASA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fasa {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fasa {args.command}: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"fasa {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
