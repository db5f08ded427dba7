"""Training loop: gradient accumulation over small batches, AdamW with
an exponential learning-rate schedule, JSONL logging, checkpointing.

Runs are reproducible: the per-epoch shuffle derives from (seed, epoch)
and every update happens in sorted parameter order.  A non-finite loss
aborts immediately with TrainingDiverged rather than continuing to burn
time on a dead run.
"""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import ops
from .config import RunConfig
from .fileio import save_checkpoint
from .model import MapModel
from .scenes import Scene
from .tensor import Tape


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; the run cannot recover."""


def _batches(order: np.ndarray, size: int):
    for i in range(0, order.size, size):
        yield order[i : i + size]


def train_model(
    model: MapModel,
    scenes: list[Scene],
    cfg: RunConfig,
    out_dir: str | Path,
    quiet: bool = False,
) -> dict:
    """Train in place; returns a summary with final loss and file paths."""
    if not scenes:
        raise ValueError("no training scenes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    log_path = out / "log.jsonl"

    opt = model.optimizer()
    tc = cfg.train
    summary = {"epochs": tc.epochs, "scenes": len(scenes), "params": model.param_count()}

    with log_path.open("w") as log:

        def emit(row: dict) -> None:
            log.write(json.dumps(row) + "\n")
            log.flush()

        emit({"type": "start", "scenes": len(scenes), "params": summary["params"]})
        step = 0
        epoch_loss = 0.0
        for epoch in range(tc.epochs):
            lr = model.epoch_lr(epoch)
            opt.lr = lr
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(scenes))
            t0 = time.perf_counter()
            totals = []
            for batch in _batches(order, tc.batch_size):
                opt.zero_grad()
                parts_acc = {}
                for idx in batch:
                    scene = scenes[int(idx)]
                    with Tape() as tape:
                        outputs = model.forward(scene.cam, scene.lidar)
                        loss, parts = model.loss(outputs, scene.gt_map, gt_flow=scene.gt_flow)
                        if not np.isfinite(parts["total"]):
                            emit({"type": "divergence", "epoch": epoch, "step": step,
                                  "scene": scene.scene_id, "parts": parts})
                            raise TrainingDiverged(
                                f"non-finite loss at epoch {epoch} scene {scene.scene_id}"
                            )
                        tape.backward(ops.scale(loss, 1.0 / len(batch)))
                    totals.append(parts["total"])
                    for k, v in parts.items():
                        parts_acc[k] = parts_acc.get(k, 0.0) + v / len(batch)
                opt.step()
                step += 1
                emit({"type": "step", "epoch": epoch, "step": step, "lr": lr,
                      **{k: round(v, 6) for k, v in sorted(parts_acc.items())}})
            epoch_loss = float(np.mean(totals))
            seconds = time.perf_counter() - t0
            emit({"type": "epoch", "epoch": epoch, "lr": lr,
                  "loss": round(epoch_loss, 6), "seconds": round(seconds, 3)})
            if not quiet:
                print(f"epoch {epoch + 1}/{tc.epochs}  loss {epoch_loss:.4f}  "
                      f"lr {lr:.2e}  {seconds:.1f}s")
            if tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
                _save(model, cfg, out / f"checkpoint_ep{epoch + 1}.vmck", epoch, epoch_loss)

        final = out / "checkpoint.vmck"
        _save(model, cfg, final, tc.epochs - 1, epoch_loss)
        emit({"type": "done", "loss": round(epoch_loss, 6)})

    summary.update({"final_loss": epoch_loss, "checkpoint": str(final), "log": str(log_path)})
    return summary


def _save(model: MapModel, cfg: RunConfig, path: Path, epoch: int, loss: float) -> None:
    save_checkpoint(
        path,
        model.state_dict(),
        cfg.model_hash(),
        meta={"epoch": epoch, "loss": loss, "seed": cfg.seed, "config": cfg.to_dict()},
    )
