"""Command-line surface tying the package together.

Configs are JSON, outputs are CSV with a header row; exit code 0 on
success, nonzero with a one-line diagnostic on failure.
"""

import argparse
import csv
import json
import statistics
import sys
from pathlib import Path

from . import contrastive, data, evaluation, model, moe


def _parse_int_list(text: str):
    """Accept "2..9" ranges or comma lists like "16,32,64"."""
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def cmd_gen_data(args):
    spec = data.SyntheticSpec.from_json(json.loads(Path(args.spec).read_text()))
    ds = data.gen_synthetic(spec)
    data.save_dataset(ds, args.out)
    print(f"wrote {ds.num_samples} samples x {ds.num_views} views to {args.out}")


def cmd_drop_views(args):
    ds = data.load_dataset(args.in_dir)
    if args.uniform:
        out = data.drop_views_uniform(ds, seed=args.seed)
    else:
        rates_obj = json.loads(Path(args.rates).read_text())
        if isinstance(rates_obj, dict):
            rates = [rates_obj[vs.name] for vs in ds.view_specs]
        else:
            rates = list(rates_obj)
        out = data.drop_views_rates(ds, rates, seed=args.seed)
    data.save_dataset(out, args.out)
    kept = out.num_samples
    print(f"kept {kept}/{ds.num_samples} samples after dropping")


def cmd_train(args):
    ds = data.load_dataset(args.data)
    cfg_obj = json.loads(Path(args.config).read_text()) if args.config else {}
    val_fraction = cfg_obj.pop("val_fraction", 0.2)
    config = model.AliAdConfig.for_dataset(ds, **cfg_obj)
    if args.ablation:
        flags = tuple(f for f in args.ablation.split(",") if f)
        config = model.AliAdConfig.from_json({**config.to_json(), "ablations": flags})
    train_ds, val_ds = data.split_dataset(ds, [1.0 - val_fraction], config.seed)
    m, logs = model.train(train_ds, val_ds, config)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    best = max(logs, key=lambda l: l.val_f1)
    model.save_checkpoint(m, run_dir, epoch=best.epoch, val_score=best.val_f1)
    model.write_train_log(
        logs, run_dir / "train_log.csv", include_l_ac=not config.has("no_contrast")
    )
    print(f"trained {config.epochs} epochs; best val macro-F1 {best.val_f1:.4f}")


def cmd_eval(args):
    m = model.load_checkpoint(args.model)
    ds = data.load_dataset(args.data)
    seeds = [int(s) for s in args.seeds.split(",")]
    means = []
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "k", "combination", "macro_f1"])
        for seed in seeds:
            sweep = evaluation.subset_sweep(
                m, ds, args.k, max_combos=args.max_combos, seed=seed
            )
            for combo, score in zip(sweep.combos, sweep.scores):
                writer.writerow([seed, args.k, "+".join(map(str, combo)), f"{score:.6f}"])
            means.append(sweep.mean)
    std = statistics.pstdev(means) if len(means) > 1 else 0.0
    print(f"k={args.k}: macro-F1 {statistics.mean(means):.4f} +/- {std:.4f} over {len(means)} seeds")


def cmd_bench_loss(args):
    losses = args.losses.split(",")
    views = _parse_int_list(args.views)
    batches = _parse_int_list(args.batch)
    with open(args.out, "w", newline="") as f:
        f.write(contrastive.BenchResult.CSV_HEADER + "\n")
        for kind in losses:
            for v in views:
                for n in batches:
                    res = contrastive.bench_loss(kind, v, n, args.embed_dim)
                    f.write(res.csv_row() + "\n")
    print(f"wrote benchmark results to {args.out}")


def cmd_analyze_experts(args):
    m = model.load_checkpoint(args.model)
    ds = data.load_dataset(args.data)
    rows = evaluation.analyze_experts(m, ds)
    moe.write_usage_csv(args.out, rows)
    print(f"wrote {len(rows)} usage rows to {args.out}")


def cmd_analyze_weights(args):
    evaluation.analyze_weights(args.log, args.out)
    print(f"wrote weight curves to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aliad")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic multiview dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("drop-views", help="simulate missing views")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--uniform", action="store_true")
    group.add_argument("--rates")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_drop_views)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--ablation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="subset-sweep evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--max-combos", type=int, default=None)
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-loss", help="contrastive loss runtime benchmark")
    p.add_argument("--losses", default="full_graph,adjusted_center")
    p.add_argument("--views", default="2..9")
    p.add_argument("--batch", default="16,32,64,128")
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_loss)

    p = sub.add_parser("analyze-experts", help="expert-usage distribution matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_experts)

    p = sub.add_parser("analyze-weights", help="attention-weight convergence curves")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_weights)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
