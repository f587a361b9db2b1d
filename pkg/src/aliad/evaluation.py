"""Subset-sweep evaluation and post-hoc analyses of trained models."""

import csv
import statistics
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import torch

from .metrics import js_divergence
from .model import AliAdModel, _batch_to_tensors, evaluate_f1
from .moe import MoEHead


@dataclass
class SweepResult:
    k: int
    combos: list[tuple]
    scores: list[float]

    @property
    def mean(self) -> float:
        return sum(self.scores) / len(self.scores)

    @property
    def std(self) -> float:
        return statistics.pstdev(self.scores) if len(self.scores) > 1 else 0.0


def subset_sweep(model: AliAdModel, test_ds, k: int, max_combos=None, seed=0) -> SweepResult:
    """Macro-F1 of predict() over every size-k view subset.

    With missing test data k is an upper bound: samples whose present views
    miss the subset entirely are skipped for that combination. max_combos
    samples the combination list (seeded) to bound runtime.
    """
    v = model.config.num_views
    if not 1 <= k <= v:
        raise ValueError(f"k must be in [1, {v}], got {k}")
    combos = list(combinations(range(v), k))
    if max_combos is not None and len(combos) > max_combos:
        rng = np.random.default_rng(seed)
        keep = sorted(rng.choice(len(combos), size=max_combos, replace=False))
        combos = [combos[i] for i in keep]
    scores = [evaluate_f1(model, test_ds, subset=c) for c in combos]
    return SweepResult(k=k, combos=combos, scores=scores)


def analyze_experts(model: AliAdModel, ds, combos=None) -> dict[str, torch.Tensor]:
    """Per-expert total gating score of the fused token for each view
    combination. Rows cover every single view plus multi-view combinations
    (by default the full set and all size V-1 subsets)."""
    if not isinstance(model.head, MoEHead):
        raise ValueError("expert analysis requires a MoE head (no_moe model given)")
    v = model.config.num_views
    if combos is None:
        combos = [(i,) for i in range(v)]
        if v > 2:
            combos += list(combinations(range(v), v - 1))
        combos.append(tuple(range(v)))

    idx = np.arange(ds.num_samples)
    rows = {}
    with torch.no_grad():
        model.eval()
        for combo in combos:
            effective = ds.mask[:, list(combo)].any(1)
            if not effective.any():
                continue
            views, mask, _ = _batch_to_tensors(ds, idx[effective])
            keep = torch.zeros(v, 1, dtype=torch.bool)
            keep[list(combo)] = True
            e = model.encode_views(views, mask & keep)
            _, fused = model.fuse(e)
            gate_out = model.head.gate(fused, train_mode=False)
            label = "+".join(ds.view_specs[i].name for i in combo)
            rows[label] = gate_out.sparse_weights.sum(0)
        model.train()
    return rows


def one_vs_multi_js(rows: dict[str, torch.Tensor]) -> float:
    """Mean Jensen-Shannon divergence between every one-view usage row and
    every multi-view usage row."""
    singles = [u for label, u in rows.items() if "+" not in label]
    multis = [u for label, u in rows.items() if "+" in label]
    if not singles or not multis:
        raise ValueError("need both one-view and multi-view rows")
    divs = [
        js_divergence((s + 1e-12).tolist(), (m + 1e-12).tolist())
        for s in singles
        for m in multis
    ]
    return sum(divs) / len(divs)


def analyze_weights(log_path, out_path) -> None:
    """Project the training log onto per-epoch per-view mean attention
    weights plus the contrastive loss curve. No model recomputation."""
    with open(log_path, newline="") as f:
        reader = csv.DictReader(f)
        log_rows = list(reader)
        fields = reader.fieldnames or []
    w_cols = [c for c in fields if c.startswith("w_mean_view_")]
    if "epoch" not in fields or not w_cols:
        raise ValueError("training log is missing epoch or attention-weight columns")
    has_ac = "l_ac" in fields
    header = ["epoch"] + w_cols + (["l_ac"] if has_ac else [])
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in log_rows:
            out = [row["epoch"]] + [row[c] for c in w_cols]
            if has_ac:
                out.append(row["l_ac"])
            writer.writerow(out)
