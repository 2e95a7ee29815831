"""Command line entry points: train, eval, ablate, synth, check."""

import argparse
import logging
import os
import sys
from pathlib import Path

from .ablate import VARIANTS, run_ablation
from .checkpoint import load_model
from .config import ModelConfig
from .data import SyntheticScenes, TreeDataset, load_manifest, write_synthetic_tree
from .evaluate import evaluate_model, write_report
from .train import TrainParams, train

logger = logging.getLogger(__name__)

SPLIT_SEED_OFFSETS = {"train": 0, "val": 10_000, "test": 20_000}


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset root (default: $HAPNET_DATA_ROOT)")
    p.add_argument("--synthetic", type=int, default=0, help="use N generated scenes instead of a tree")
    p.add_argument("--synth-classes", type=int, default=4, help="classes in generated scenes, background included")


def _resolve_dataset(args, cfg: ModelConfig, split: str):
    if args.synthetic:
        return SyntheticScenes(
            args.synthetic,
            cfg.height,
            cfg.width,
            args.synth_classes,
            base_seed=SPLIT_SEED_OFFSETS.get(split, 0),
        )
    root = args.data or os.environ.get("HAPNET_DATA_ROOT")
    if not root:
        raise SystemExit("no dataset: pass --data or --synthetic, or set HAPNET_DATA_ROOT")
    manifest = load_manifest(root)
    if manifest.num_classes > cfg.num_real_classes:
        raise SystemExit(
            f"dataset has {manifest.num_classes} classes but the model only "
            f"covers {cfg.num_real_classes}"
        )
    return TreeDataset(manifest, split, size=(cfg.height, cfg.width))


def _load_config(args) -> ModelConfig:
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _train_params(args) -> TrainParams:
    return TrainParams(
        epochs=args.epochs,
        batch_size=args.batch_size,
        grad_accum=args.grad_accum,
        lr=args.lr,
        weight_decay=args.weight_decay,
        max_steps=args.steps,
        aux=not args.no_aux,
        hflip=args.hflip,
        save_every=args.save_every,
        threads=args.threads,
    )


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--steps", type=int, default=0, help="stop after this many steps (0 = no cap)")
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--grad-accum", type=int, default=1)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--weight-decay", type=float, default=5e-2)
    p.add_argument("--no-aux", action="store_true", help="disable the auxiliary dense loss")
    p.add_argument("--hflip", action="store_true", help="random horizontal flips")
    p.add_argument("--save-every", type=int, default=0, help="checkpoint every N epochs")
    p.add_argument("--threads", type=int, default=1)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset = _resolve_dataset(args, cfg, args.split)
    params = _train_params(args)
    result = train(cfg, dataset, params, args.out, resume=args.resume)
    logger.info("trained %d steps; checkpoint at %s", result.steps, result.checkpoint_path)
    if not args.skip_eval:
        cm = evaluate_model(result.model, dataset, batch_size=params.batch_size)
        write_report(cm, getattr(dataset, "class_names", None), args.out)
    return 0


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    cfg = model.cfg
    dataset = _resolve_dataset(args, cfg, args.split)
    out = args.out or str(Path(args.checkpoint).parent / f"eval_{args.split}")
    overlay_dir = Path(out) / "overlays" if args.overlays else None
    cm = evaluate_model(model, dataset, batch_size=args.batch_size, overlay_dir=overlay_dir)
    names = meta.get("class_names") or getattr(dataset, "class_names", None)
    macc, miou = write_report(cm, names, out)
    print(f"mAcc {macc:.4f} mIoU {miou:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    names = [n.strip() for n in args.variants.split(",") if n.strip()]
    train_ds = _resolve_dataset(args, cfg, "train")
    eval_args = args
    if args.synthetic:
        eval_ds = SyntheticScenes(
            args.eval_count, cfg.height, cfg.width, args.synth_classes,
            base_seed=SPLIT_SEED_OFFSETS["val"],
        )
    else:
        eval_ds = _resolve_dataset(eval_args, cfg, "val")
    params = _train_params(args)
    rows = run_ablation(cfg, names, train_ds, eval_ds, params, args.out)
    width = max(len(r["variant"]) for r in rows)
    for r in rows:
        print(f"{r['variant']:<{width}}  params {r['params']:>9d}  mAcc {r['macc']:.4f}  mIoU {r['miou']:.4f}")
    return 0


def cmd_synth(args) -> int:
    counts = {"train": args.train, "val": args.val, "test": args.test}
    manifest = write_synthetic_tree(
        args.out, counts, args.height, args.width, args.classes, base_seed=args.seed
    )
    total = sum(len(v) for v in manifest.splits.values())
    print(f"wrote {total} scenes under {manifest.root}")
    return 0


def cmd_check(args) -> int:
    from . import selfcheck

    return selfcheck.run()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hapnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--skip-eval", action="store_true", help="do not score the split after training")
    _add_train_args(p)
    _add_data_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", default=None)
    p.add_argument("--overlays", action="store_true", help="write colorized predictions")
    p.add_argument("--batch-size", type=int, default=2)
    _add_data_args(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and score config variants")
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--variants",
        default="full,glca_only,ccg_only,summation",
        help=f"comma list from: {','.join(VARIANTS)}",
    )
    p.add_argument("--eval-count", type=int, default=8, help="held-out scenes when --synthetic")
    _add_train_args(p)
    _add_data_args(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic dataset tree")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=16)
    p.add_argument("--val", type=int, default=4)
    p.add_argument("--test", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("check", help="run the fast self-check suite")
    p.set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
