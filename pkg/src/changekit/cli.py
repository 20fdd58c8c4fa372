"""Command-line entry points.

Subcommands: gen-data, pretrain, finetune, eval, report. Each training or
evaluation command writes its artifacts (checkpoints, ledgers, report JSON)
into --out; `report` turns a directory of those artifacts into CSV tables
and figures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from . import datagen, pipeline, report as report_mod
from .config import PROFILES, ConfigError, RunConfig, load_config


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config, profile=args.profile)
    return PROFILES[args.profile]()


def _add_common(p, config=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    if config:
        p.add_argument("--config", type=Path, default=None, help="YAML run config")


def cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    gen_cfg = datagen.GeneratorConfig(canvas=cfg.pretrain.image_size)
    manifest = datagen.generate_dataset(
        args.out, count=args.count, seed=args.seed, cfg=gen_cfg,
        fractions=tuple(args.fractions),
    )
    print(f"wrote {len(manifest.entries)} pairs under {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_run_config(args)
    if args.no_diff:
        cfg.pretrain.use_differencing = False
    if args.no_ip:
        cfg.pretrain.use_ip = False
    if args.no_cr:
        cfg.pretrain.use_cr = False
    flags = (cfg.pretrain.use_differencing, cfg.pretrain.use_ip, cfg.pretrain.use_cr)
    strategy = {
        (True, True, True): "dsp",
        (True, False, True): "dsp_no_ip",
        (True, True, False): "dsp_ip_only",
        (True, False, False): "dsp_no_tc",
        (False, False, False): "ssl_baseline",
    }.get(flags, "custom")
    manifest = datagen.load_manifest(args.data)
    _, ledger = pipeline.pretrain(
        manifest, cfg.pretrain, cfg.augment, seed=args.seed,
        out_dir=args.out, strategy_name=strategy,
    )
    print(f"pretrained {ledger.rows[-1]['epoch'] + 1} epochs "
          f"(strategy {strategy}, final loss {ledger.rows[-1]['total']:.4f})")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_run_config(args)
    if args.label_fraction is not None:
        cfg.finetune.label_fraction = args.label_fraction
    init_ckpt = None
    if args.random_init:
        cfg.finetune.init = "random"
    else:
        if args.init is None:
            raise SystemExit("finetune needs --init CHECKPOINT or --random-init")
        init_ckpt = ckpt_io.load(args.init)
        strategy = init_ckpt.meta.get("strategy", "")
        cfg.finetune.init = (
            "ssl_nodiff_checkpoint" if strategy == "ssl_baseline" else "dsp_checkpoint"
        )
    manifest = datagen.load_manifest(args.data)
    _, ledger = pipeline.finetune(
        manifest, cfg.pretrain, cfg.finetune, seed=args.seed,
        init_checkpoint=init_ckpt, out_dir=args.out,
    )
    print(f"finetuned {ledger.rows[-1]['epoch'] + 1} epochs "
          f"(init {cfg.finetune.init}, final loss {ledger.rows[-1]['total']:.4f})")
    return 0


def cmd_eval(args) -> int:
    checkpoint = ckpt_io.load(args.checkpoint)
    manifest = datagen.load_manifest(args.data)
    ood_manifest = datagen.load_manifest(args.ood) if args.ood else None
    reports = pipeline.evaluate(
        checkpoint, manifest,
        corruptions=args.corruptions,
        ood_manifest=ood_manifest,
        seed=args.seed,
        threshold=args.threshold,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tag, rep in reports.items():
        path = out / f"report_{tag}.json"
        path.write_text(rep.to_json())
        extra = f", mPC {rep.mpc:.4f}, rPC {rep.rpc:.4f}" if rep.mpc is not None else ""
        print(f"{tag}: F1 {rep.f1:.4f} ({100 * rep.f1:.2f}%){extra} -> {path}")
    if args.baseline:
        base = _pixel_baseline_report(manifest, args.threshold)
        path = out / "report_pixel_baseline.json"
        path.write_text(base.to_json())
        print(f"pixel-diff baseline: F1 {base.f1:.4f} -> {path}")
    if args.dump_masks:
        pipeline.dump_prediction_masks(checkpoint, manifest, out / "masks", limit=args.dump_masks)
        print(f"dumped {args.dump_masks} mask comparisons under {out / 'masks'}")
    return 0


def _pixel_baseline_report(manifest, threshold):
    import numpy as np

    from . import metrics

    cache = pipeline.PairCache(manifest, split="test", need_masks=True)
    counts = metrics.ConfusionCounts()
    for t0, t1, mask in zip(cache.t0, cache.t1, cache.masks):
        pred = metrics.pixel_diff_baseline(t0, t1, threshold=threshold)
        counts = counts.add(metrics.confusion(pred, mask.astype(np.uint8)))
    p, r, f1 = metrics.precision_recall_f1(counts)
    return metrics.EvalReport(
        precision=p, recall=r, f1=f1, counts=counts,
        metadata={"method": "pixel_diff_baseline", "threshold": threshold,
                  "dataset": Path(manifest.root).name, "distribution": "in_distribution"},
    )


def cmd_report(args) -> int:
    written = report_mod.generate_report(args.run_dir, args.out)
    for path in written:
        print(f"wrote {path}")
    if not written:
        print(f"no report-able artifacts found under {args.run_dir}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="changekit",
        description="Self-supervised pretraining and evaluation for scene change detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    _add_common(p)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fractions", type=float, nargs=3, default=(0.7, 0.1, 0.2),
                   metavar=("TRAIN", "VAL", "TEST"))
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-diff", action="store_true", help="correlate embeddings without differencing")
    p.add_argument("--no-ip", action="store_true", help="drop the invariant-prediction term")
    p.add_argument("--no-cr", action="store_true", help="drop the change-consistency term")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised change-detection finetuning")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--init", type=Path, default=None, help="pretraining checkpoint")
    p.add_argument("--random-init", action="store_true")
    p.add_argument("--label-fraction", type=float, default=None)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="score a finetuned checkpoint")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--corruptions", action="store_true")
    p.add_argument("--ood", type=Path, default=None, help="out-of-distribution dataset root")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--baseline", action="store_true", help="also score the pixel-diff baseline")
    p.add_argument("--dump-masks", type=int, default=0, metavar="N")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="tables and figures from run artifacts")
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ckpt_io.CheckpointError, datagen.DatasetError,
            pipeline.PipelineError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
