"""The operations behind the service endpoints.

Plain functions over the schema models, so they are callable without an
HTTP layer. Every output file is deterministic for a given (config,
seed, data); wall-clock numbers only ever appear under "timing" keys.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .. import ablation, metrics
from ..config import config_hash
from ..dataio import read_bundle, split, synth_generate, write_bundle
from ..errors import ParameterError
from ..rng import derive_seed
from ..trainer import load_checkpoint, model_config_hash, profile, save_checkpoint, train
from . import schemas


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def do_synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
    cfg = req.config.synth_config()
    bundle = synth_generate(cfg)
    out = Path(req.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(bundle, out)
    return schemas.SynthResponse(
        out_path=str(out),
        n_samples=len(bundle),
        n_real=cfg.n_real,
        n_fake=cfg.n_fake,
        provenance=bundle.provenance,
        config_hash=config_hash(req.config),
    )


def do_train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    t0 = time.perf_counter()
    config = req.config
    if req.epochs_override is not None:
        config = config.model_copy(deep=True)
        config.train.epochs = req.epochs_override
    train_cfg = config.train_config()
    bundle = read_bundle(_require_file(req.data_path, "data file"))
    tr, ev = split(
        bundle, train_cfg.eval_fraction, derive_seed(train_cfg.seed, "train-eval-split")
    )
    model = train(tr, ev, train_cfg)
    chash = config_hash(config)

    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.cckp"
    history_path = out_dir / "history.json"
    report_path = out_dir / "report.json"
    roc_path = out_dir / "roc.csv"
    det_path = out_dir / "det.csv"

    save_checkpoint(model, checkpoint_path)
    _write_json({"config_hash": chash, "history": model.history}, history_path)
    scores = model.scores(ev)
    report = metrics.metrics_report(scores, chash)
    metrics.write_report(report, report_path)
    metrics.write_curve_csv(metrics.roc_points(scores), ("fpr", "tpr"), roc_path)
    metrics.write_curve_csv(metrics.det_points(scores), ("fpr", "fnr"), det_path)
    return schemas.TrainResponse(
        checkpoint_path=str(checkpoint_path),
        history_path=str(history_path),
        report_path=str(report_path),
        roc_csv_path=str(roc_path),
        det_csv_path=str(det_path),
        final=report,
        config_hash=chash,
        timing={"train_seconds": time.perf_counter() - t0},
    )


def do_eval(req: schemas.EvalRequest) -> schemas.EvalResponse:
    t0 = time.perf_counter()
    model = load_checkpoint(_require_file(req.checkpoint_path, "checkpoint"))
    bundle = read_bundle(_require_file(req.data_path, "data file"))
    if not bundle.samples:
        raise ParameterError("evaluation set is empty")
    scores = model.scores(bundle)
    chash = model_config_hash(model)
    report = metrics.metrics_report(scores, chash, acc_threshold=req.acc_threshold)
    report_path = roc_path = det_path = None
    if req.report_path is not None:
        report_path = Path(req.report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        metrics.write_report(report, report_path)
        roc_path = report_path.with_suffix(".roc.csv")
        det_path = report_path.with_suffix(".det.csv")
        metrics.write_curve_csv(metrics.roc_points(scores), ("fpr", "tpr"), roc_path)
        metrics.write_curve_csv(metrics.det_points(scores), ("fpr", "fnr"), det_path)
    return schemas.EvalResponse(
        **report,
        report_path=str(report_path) if report_path else None,
        roc_csv_path=str(roc_path) if roc_path else None,
        det_csv_path=str(det_path) if det_path else None,
        timing={"eval_seconds": time.perf_counter() - t0},
    )


def do_ablate(req: schemas.AblateRequest) -> schemas.AblateResponse:
    t0 = time.perf_counter()
    bundle = read_bundle(_require_file(req.data_path, "data file"))
    grid = ablation.ablation_grid(bundle, req.config.train_config(), req.seeds)
    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "ablation.json"
    _write_json({"config_hash": config_hash(req.config), **grid}, report_path)
    return schemas.AblateResponse(
        report_path=str(report_path),
        n_seeds=grid["n_seeds"],
        cells=grid["cells"],
        panels=grid["panels"],
        timing={"ablate_seconds": time.perf_counter() - t0},
    )


def do_profile(req: schemas.ProfileRequest) -> schemas.ProfileResponse:
    model = load_checkpoint(_require_file(req.checkpoint_path, "checkpoint"))
    bundle = read_bundle(_require_file(req.data_path, "data file"))
    return schemas.ProfileResponse(**profile(model, bundle, req.repetitions))
