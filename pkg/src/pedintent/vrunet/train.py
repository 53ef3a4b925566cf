"""Training loop, batched inference, evaluation and model checkpoints."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datapipe.augment import augment
from ..datapipe.schema import TASKS
from ..metrics import displacement_errors, task_ap
from ..nncore import AdamState, PlateauHalving, adam_step, clip_grad_norm, no_grad
from ..nncore import checkpoint
from .config import TrainConfig, VRUNetConfig
from .losses import action_loss, class_weights, total_loss, traj_loss
from .model import Batch, PredictionBundle, VRUNet, bundle_from, concat_bundles, make_batch
from .smooth import smooth_batch

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "lr"] + [f"ap_{t}" for t in TASKS]


class TrainingDiverged(ArithmeticError):
    """Raised when the loss becomes NaN or infinite."""


@dataclass
class TrainResult:
    model: VRUNet
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    best_state: dict | None = None
    stopped_early: bool = False


def batch_loss(model: VRUNet, batch: Batch, teacher_forcing: bool = False, class_w=None):
    cfg = model.cfg
    out = model(batch, teacher_forcing=teacher_forcing)
    la = action_loss(out.logits, batch.labels, cfg.loss_weights, class_w)
    lt = traj_loss(out.trajectory, batch.future, model.trajectory_parameters(), cfg.lambda_reg)
    return total_loss(la, lt, cfg.alpha_action, cfg.beta_traj), la, lt, out


def _augmented_batch(samples, idx, cfg, hyper: TrainConfig, rng, dtype) -> Batch:
    chosen = []
    for i in idx:
        s = samples[i]
        flip = hyper.flip and rng.random() < 0.5
        s = augment(s, flip=flip, pixel_dropout=hyper.pixel_dropout, noise=hyper.keypoint_noise,
                    seed=int(rng.integers(2**32)))
        chosen.append(s)
    return make_batch(chosen, cfg, dtype)


def train(train_samples, val_samples, cfg: VRUNetConfig, hyper: TrainConfig = TrainConfig(), seed: int = 0,
          out_dir=None, stop=None, model: VRUNet | None = None, resume=None) -> TrainResult:
    """Mini-batch Adam training with best-validation-loss retention.

    ``stop(epoch, model, row)`` may return True to end training early (the
    row is the epoch's log entry).  With ``out_dir`` set, ``metrics.csv``,
    ``best.ckpt`` and ``last.ckpt`` (model plus optimizer state) are written
    there.  ``resume`` names a ``last.ckpt`` to continue from; the run then
    adds ``hyper.epochs`` epochs and epoch numbering carries on.
    """
    if not train_samples or not val_samples:
        raise ValueError("training needs non-empty train and validation sets")
    dtype = np.dtype(hyper.dtype)
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    if model is None:
        model = VRUNet(cfg, seed=int(init_ss.generate_state(1)[0]), dtype=dtype)
    rng = np.random.default_rng(shuffle_ss)
    opt = AdamState(lr=hyper.lr)
    sched = PlateauHalving(hyper.patience, hyper.lr_factor)
    res = TrainResult(model)
    first = 1
    if resume is not None:
        model, opt, sched, res, rng_state = load_training_state(resume, sched)
        rng.bit_generator.state = rng_state
        first = res.log[-1]["epoch"] + 1 if res.log else 1
    params = model.named_parameters()
    augmenting = hyper.flip or hyper.pixel_dropout > 0 or hyper.keypoint_noise > 0
    full = None if augmenting else make_batch(train_samples, cfg, dtype)
    val = make_batch(val_samples, cfg, dtype)
    cw = class_weights(np.array([[s.label(t) for t in TASKS] for s in train_samples])) \
        if hyper.class_weights else None
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    n = len(train_samples)
    for epoch in range(first, first + hyper.epochs):
        t0 = time.perf_counter()
        tf = epoch <= hyper.teacher_forcing_epochs
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, hyper.batch_size)):
            idx = order[start:start + hyper.batch_size]
            batch = full.take(idx) if full is not None else _augmented_batch(train_samples, idx, cfg, hyper, rng,
                                                                             dtype)
            model.zero_grad()
            loss, la, lt, _ = batch_loss(model, batch, tf, cw)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"epoch {epoch}, batch {bi}: loss is {value} "
                                       f"(action {float(la.data)}, trajectory {float(lt.data)}, lr {opt.lr:g})")
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            clip_grad_norm(grads, hyper.clip_norm)
            adam_step(params, grads, opt)
            total += value
        train_loss = total / n
        val_loss, bundle = evaluate_loss(model, val, cw)
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": opt.lr}
        for t in TASKS:
            row[f"ap_{t}"] = task_ap(bundle.probs(t), val.labels[:, TASKS.index(t)])
        res.log.append(row)
        if val_loss < res.best_val:
            res.best_val, res.best_epoch = val_loss, epoch
            res.best_state = model.state_dict()
            if out_dir is not None:
                save_model(out_dir / "best.ckpt", model, {"epoch": epoch, "val_loss": val_loss, "seed": seed})
        sched.step(val_loss, opt)
        log.info("epoch %d train %.5f val %.5f lr %.2g (%.1fs)", epoch, train_loss, val_loss, opt.lr,
                 time.perf_counter() - t0)
        if out_dir is not None:
            write_log(out_dir / "metrics.csv", res.log)
        if stop is not None and stop(epoch, model, row):
            res.stopped_early = True
            break
    if out_dir is not None:
        save_training_state(out_dir / "last.ckpt", res, opt, sched, rng, seed)
    return res


def save_training_state(path, res: TrainResult, opt: AdamState, sched: PlateauHalving, rng, seed: int):
    """Model, Adam moments, scheduler counters, shuffle RNG and the epoch log."""
    model = res.model
    tensors = dict(model.state_dict())
    adam_t, adam_meta = checkpoint.pack_adam(opt)
    tensors.update(adam_t)
    meta = {"kind": "vrunet", "config": model.cfg.to_dict(), "dtype": str(model.dtype), "seed": seed,
            "adam": adam_meta, "sched": {"best": sched.best if math.isfinite(sched.best) else None,
                                         "bad_epochs": sched.bad_epochs},
            "rng": rng.bit_generator.state, "log": res.log, "best_epoch": res.best_epoch,
            "best_val": res.best_val if math.isfinite(res.best_val) else None,
            "epoch": res.log[-1]["epoch"] if res.log else 0}
    checkpoint.save(path, tensors, meta)


def load_training_state(path, sched: PlateauHalving | None = None):
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "vrunet" or "adam" not in meta:
        raise checkpoint.CheckpointError(f"{path}: not a resumable VRUNet training checkpoint")
    model = VRUNet(VRUNetConfig.from_dict(meta["config"]), dtype=np.dtype(meta["dtype"]))
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    opt = checkpoint.unpack_adam({k: v for k, v in tensors.items() if k.startswith("adam.")}, meta["adam"])
    sched = sched or PlateauHalving()
    best = meta["sched"]["best"]
    sched.best = math.inf if best is None else best
    sched.bad_epochs = meta["sched"]["bad_epochs"]
    res = TrainResult(model, log=list(meta["log"]), best_epoch=meta["best_epoch"],
                      best_val=math.inf if meta["best_val"] is None else meta["best_val"])
    res.best_state = model.state_dict() if res.best_epoch == meta["epoch"] else None
    return model, opt, sched, res, meta["rng"]


def evaluate_loss(model: VRUNet, batch: Batch, class_w=None, chunk: int = 64):
    """Mean per-instance loss (autoregressive decoding) and the predictions."""
    total = 0.0
    parts = []
    with no_grad():
        for s in range(0, len(batch), chunk):
            b = batch.take(slice(s, s + chunk))
            loss, _, _, out = batch_loss(model, b, False, class_w)
            total += float(loss.data)
            parts.append(bundle_from(out))
    return total / max(len(batch), 1), concat_bundles(parts)


def predict(model: VRUNet, samples, chunk: int = 64) -> PredictionBundle:
    parts = []
    with no_grad():
        for s in range(0, len(samples), chunk):
            b = make_batch(samples[s:s + chunk], model.cfg, model.dtype)
            parts.append(bundle_from(model(b)))
    return concat_bundles(parts)


def trajectories_px(bundle: PredictionBundle, samples, smooth: bool = True) -> np.ndarray:
    scale = np.array([s.image_size for s in samples], dtype=np.float64)[:, None, :]
    px = bundle.trajectory * scale
    return smooth_batch(px) if smooth else px


def evaluate(model: VRUNet, samples, smooth: bool = True) -> dict:
    """Per-task AP, accuracy, and mean ADE/FDE in pixels."""
    bundle = predict(model, samples)
    out = {}
    for j, t in enumerate(TASKS):
        y = np.array([s.label(t) for s in samples])
        p = bundle.probs(t)
        out[f"ap_{t}"] = task_ap(p, y)
        out[f"acc_{t}"] = float(np.mean(p.argmax(1) == y))
    px = trajectories_px(bundle, samples, smooth)
    errs = [displacement_errors(px[i], s.future_centers) for i, s in enumerate(samples)]
    out["ade"] = float(np.mean([e.ade for e in errs]))
    out["fde"] = float(np.mean([e.fde for e in errs]))
    return out


def write_log(path, rows: list[dict]):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def save_model(path, model: VRUNet, meta: dict | None = None):
    m = {"kind": "vrunet", "config": model.cfg.to_dict(), "dtype": str(model.dtype)}
    m.update(meta or {})
    checkpoint.save(path, model.state_dict(), m)


def load_model(path) -> tuple[VRUNet, dict]:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "vrunet":
        raise checkpoint.CheckpointError(f"{path}: not a VRUNet checkpoint")
    model = VRUNet(VRUNetConfig.from_dict(meta["config"]), dtype=np.dtype(meta.get("dtype", "float32")))
    model.load_state_dict(tensors)
    return model, meta
