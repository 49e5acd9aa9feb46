"""Seeded ablation grid: contrastive weight x refiner depth x fusion.

Trains the 2x2x2 grid {lam in {0, base}} x {layers in {0, base}} x
{fusion in {mean, concat}} over N seeds and aggregates EER/AUC/ACC per
cell, plus three pairwise comparison panels (contrastive on/off, refiner
on/off, concat vs mean) against the full configuration. A failing cell
records its error and the rest of the grid still runs.
"""

from __future__ import annotations

import statistics

from .dataio import EmbeddingBundle, split
from .errors import CrossmodalError, ParameterError
from .metrics import accuracy, auc, eer
from .rng import derive_seed
from .trainer import TrainConfig, train

METRICS = ("eer", "auc", "acc")


def _cell_key(lam: float, layers: int, fusion: str) -> str:
    return f"lam={lam:g},L={layers},fusion={fusion}"


def _aggregate(rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    out: dict = {"n_ok": len(ok), "n_failed": len(rows) - len(ok)}
    for metric in METRICS:
        values = [r[metric] for r in ok if r.get(metric) is not None]
        if values:
            out[f"{metric}_mean"] = statistics.fmean(values)
            out[f"{metric}_sd"] = statistics.stdev(values) if len(values) > 1 else 0.0
        else:
            out[f"{metric}_mean"] = None
            out[f"{metric}_sd"] = None
    return out


def ablation_grid(
    bundle: EmbeddingBundle, base: TrainConfig, n_seeds: int, quiet: bool = True
) -> dict:
    if n_seeds < 3:
        raise ParameterError(f"ablation needs >= 3 seeds, got {n_seeds}")
    lam_values = (0.0, base.lam)
    layer_values = (0, base.refiner_layers)
    fusion_values = ("mean", "concat")

    runs: list[dict] = []
    cells: dict[str, dict] = {}
    for lam in lam_values:
        for layers in layer_values:
            for fusion in fusion_values:
                key = _cell_key(lam, layers, fusion)
                rows = []
                for i in range(n_seeds):
                    run_seed = derive_seed(base.seed, f"ablate:seed{i}")
                    cfg = base.model_copy(
                        update={
                            "lam": lam,
                            "refiner_layers": layers,
                            "fusion": fusion,
                            "fusion_weights": None,
                            "seed": run_seed,
                        }
                    )
                    row = {"cell": key, "seed_index": i, "seed": run_seed}
                    try:
                        tr, ev = split(
                            bundle, base.eval_fraction, derive_seed(run_seed, "ablate-split")
                        )
                        model = train(tr, ev, cfg)
                        scores = model.scores(ev)
                        row.update(
                            eer=eer(scores), auc=auc(scores), acc=accuracy(scores)
                        )
                    except CrossmodalError as e:
                        row["error"] = str(e)
                    rows.append(row)
                    if not quiet:
                        print(f"{key} seed {i}: {row.get('acc', row.get('error'))}")
                runs.extend(rows)
                cells[key] = _aggregate(rows)

    full = _cell_key(base.lam, base.refiner_layers, "concat")
    panels = {
        "contrastive": {
            "with": cells[full],
            "without": cells[_cell_key(0.0, base.refiner_layers, "concat")],
        },
        "refiner": {
            "with": cells[full],
            "without": cells[_cell_key(base.lam, 0, "concat")],
        },
        "fusion": {
            "concat": cells[full],
            "mean": cells[_cell_key(base.lam, base.refiner_layers, "mean")],
        },
    }
    return {"n_seeds": n_seeds, "cells": cells, "panels": panels, "runs": runs}
