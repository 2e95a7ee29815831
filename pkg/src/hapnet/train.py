"""Training loop: AdamW with layer-wise lr decay, constant schedule.

Runs single threaded by default so repeated runs with one seed produce
byte-identical checkpoints. The data order comes from a dedicated
generator whose state is checkpointed, making resumed runs match
uninterrupted ones exactly (checkpoints land on epoch boundaries).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .checkpoint import (
    load_archive,
    pack_model,
    pack_optimizer,
    save_archive,
    unpack_model,
    unpack_optimizer,
)
from .config import ModelConfig, seed_all
from .data import collate
from .losses import LossWeights, compute_losses
from .model import HapNet

logger = logging.getLogger(__name__)

FINAL_CHECKPOINT = "checkpoint_final.ckpt"


@dataclass
class TrainParams:
    epochs: int = 200
    batch_size: int = 2
    grad_accum: int = 1
    lr: float = 2e-4
    weight_decay: float = 5e-2
    max_steps: int = 0  # optimizer updates; 0 means no cap
    aux: bool = True
    hflip: bool = False
    save_every: int = 0  # in epochs; 0 saves only the final state
    threads: int = 1
    weights: LossWeights = field(default_factory=LossWeights)


@dataclass
class TrainResult:
    model: HapNet
    steps: int
    epochs_run: int
    history: list[dict]
    checkpoint_path: Path


def build_optimizer(model: HapNet, params: TrainParams) -> torch.optim.AdamW:
    groups = model.parameter_groups(params.lr, params.weight_decay)
    return torch.optim.AdamW(groups, lr=params.lr, betas=(0.9, 0.999), eps=1e-8)


def save_train_state(
    path,
    model: HapNet,
    optimizer: torch.optim.Optimizer,
    sampler: torch.Generator,
    meta: dict,
) -> None:
    arrays = pack_model(model)
    arrays.update(pack_optimizer(optimizer, model))
    arrays["rng/torch"] = torch.get_rng_state().numpy()
    arrays["rng/sampler"] = sampler.get_state().numpy()
    save_archive(path, arrays, meta)


def train(
    cfg: ModelConfig,
    dataset,
    params: TrainParams,
    out_dir,
    resume=None,
) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(params.threads)
    seed_all(cfg.seed)
    model = HapNet(cfg)
    model.train()
    optimizer = build_optimizer(model, params)
    sampler = torch.Generator()
    sampler.manual_seed(cfg.seed + 1)
    start_epoch = 0
    step = 0
    class_names = getattr(dataset, "class_names", None)
    if resume is not None:
        arrays, meta = load_archive(resume)
        if meta["config"] != cfg.to_dict():
            raise ValueError("resume checkpoint was trained with a different config")
        unpack_model(model, arrays)
        unpack_optimizer(optimizer, model, arrays)
        torch.set_rng_state(torch.from_numpy(arrays["rng/torch"].copy()))
        sampler.set_state(torch.from_numpy(arrays["rng/sampler"].copy()))
        start_epoch = int(meta["epoch"])
        step = int(meta["step"])
        logger.info("resumed from %s at epoch %d, step %d", resume, start_epoch, step)

    def meta_now(epoch_done: int) -> dict:
        return {
            "format": 1,
            "config": cfg.to_dict(),
            "epoch": epoch_done,
            "step": step,
            "class_names": class_names,
        }

    log_path = out / "train_log.txt"
    history: list[dict] = []
    done = False
    epoch = start_epoch
    for epoch in range(start_epoch, params.epochs):
        order = torch.randperm(len(dataset), generator=sampler).tolist()
        sums = {"bce": 0.0, "dice": 0.0, "cls": 0.0, "ce": 0.0, "total": 0.0}
        batches = 0
        pending = 0
        optimizer.zero_grad(set_to_none=True)
        for lo in range(0, len(order), params.batch_size):
            ids = order[lo : lo + params.batch_size]
            samples = [dataset[i] for i in ids]
            if params.hflip:
                samples = [
                    _flip(s) if torch.rand((), generator=sampler).item() < 0.5 else s
                    for s in samples
                ]
            rgb, thermal, labels = collate(samples)
            outputs = model(rgb, thermal, with_aux=params.aux)
            losses = compute_losses(
                outputs.class_logits,
                outputs.mask_logits,
                outputs.aux_logits,
                labels,
                params.weights,
            )
            if not torch.isfinite(losses["total"]):
                raise RuntimeError(
                    f"non-finite loss at step {step}, epoch {epoch}, "
                    f"samples {[s.sample_id for s in samples]}"
                )
            (losses["total"] / params.grad_accum).backward()
            pending += 1
            for k in sums:
                sums[k] += float(losses[k].detach())
            batches += 1
            if pending == params.grad_accum:
                optimizer.step()
                optimizer.zero_grad(set_to_none=True)
                pending = 0
                step += 1
                if params.max_steps and step >= params.max_steps:
                    done = True
                    break
        if pending:
            # Flush a short accumulation window at the epoch boundary.
            optimizer.step()
            optimizer.zero_grad(set_to_none=True)
            step += 1
            if params.max_steps and step >= params.max_steps:
                done = True
        means = {k: v / max(batches, 1) for k, v in sums.items()}
        record = {"epoch": epoch, "step": step, **means}
        history.append(record)
        line = (
            f"epoch {epoch} step {step} total {means['total']:.4f} "
            f"bce {means['bce']:.4f} dice {means['dice']:.4f} "
            f"cls {means['cls']:.4f} ce {means['ce']:.4f}"
        )
        logger.info(line)
        with open(log_path, "a") as f:
            f.write(line + "\n")
        if params.save_every and (epoch + 1) % params.save_every == 0:
            save_train_state(
                out / f"checkpoint_epoch{epoch + 1}.ckpt", model, optimizer, sampler, meta_now(epoch + 1)
            )
        if done:
            break
    final = out / FINAL_CHECKPOINT
    epochs_run = 0 if params.epochs <= start_epoch else epoch + 1
    save_train_state(final, model, optimizer, sampler, meta_now(max(epochs_run, start_epoch)))
    return TrainResult(
        model=model, steps=step, epochs_run=epochs_run, history=history, checkpoint_path=final
    )


def _flip(sample):
    from dataclasses import replace

    return replace(
        sample,
        rgb=sample.rgb.flip(-1),
        thermal=sample.thermal.flip(-1),
        labels=sample.labels.flip(-1),
    )
