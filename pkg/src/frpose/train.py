"""Training driver: Adam with step decay, stateless batch sampling, crash-safe
checkpointing, and OKS evaluation of a trained network.

Reproducibility rests on one rule — nothing about a batch depends on loop
state.  The sample order of epoch ``e`` comes from ``default_rng([seed, e])``
and the augmentation of the sample at position ``p`` of that epoch from
``default_rng([seed, e, p])``, so a run resumed from a checkpoint at step
``s`` sees exactly the batches the uninterrupted run saw, and its losses
continue bit for bit.
"""

from __future__ import annotations

import dataclasses
import math
import pathlib
from typing import Callable, Optional

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (AnnotationSet, AugmentPolicy, SyntheticSpec,
                   generate_synthetic, load_dataset, make_crop,
                   skeleton_by_name)
from .evaluation import Prediction, collect_records, metric_table
from .heatmaps import (decode_batch, encode_batch, heatmap_loss,
                       sigma_for_input)
from .network import PoseNetwork, build_network
from .optim import Adam
from .tensor import Graph, Tensor
from .transforms import flip_average

__all__ = [
    "LrSchedule",
    "make_schedule",
    "Dataset",
    "build_dataset",
    "TrainResult",
    "run_training",
    "EvalResult",
    "evaluate_model",
]


@dataclasses.dataclass
class LrSchedule:
    base_lr: float
    factor: float
    decay_steps: tuple[int, ...]   # lr drops once this many steps completed
    total_steps: int

    def lr_at(self, step: int) -> float:
        """Learning rate used for 0-based step index ``step``."""
        drops = sum(1 for d in self.decay_steps if step >= d)
        return self.base_lr * self.factor ** drops


def make_schedule(cfg: RunConfig, steps_per_epoch: int) -> LrSchedule:
    t = cfg.train
    if t.total_steps is not None:
        # shortened/lengthened runs keep the decay points at the same
        # fractions of the run (90/140 and 120/140 by default)
        total = t.total_steps
        decay = tuple(int(round(total * e / t.total_epochs))
                      for e in t.decay_epochs)
    else:
        total = steps_per_epoch * t.total_epochs
        decay = tuple(steps_per_epoch * e for e in t.decay_epochs)
    return LrSchedule(base_lr=t.base_lr, factor=t.decay_factor,
                      decay_steps=decay, total_steps=total)


@dataclasses.dataclass
class Dataset:
    images: dict[int, np.ndarray]
    annotations: AnnotationSet

    @property
    def instances(self):
        return self.annotations.instances


def build_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.source == "synthetic":
        spec = SyntheticSpec(
            num_images=d.num_images, canvas=(d.canvas_height, d.canvas_width),
            min_people=d.min_people, max_people=d.max_people,
            skeleton=d.skeleton, noise=d.noise, seed=d.seed)
        images, annotations = generate_synthetic(spec)
    else:
        images, annotations = load_dataset(d.manifest)
    if annotations.skeleton.num_joints != cfg.network.num_joints:
        raise ValueError(
            f"network outputs {cfg.network.num_joints} joints but the "
            f"dataset skeleton has {annotations.skeleton.num_joints}")
    return Dataset(images=images, annotations=annotations)


def _epoch_order(count: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(count)


def _training_sigma(cfg: RunConfig) -> float:
    if cfg.train.sigma is not None:
        return cfg.train.sigma
    return sigma_for_input(cfg.network.input_size[0])


def _assemble_batch(dataset: Dataset, cfg: RunConfig, positions, indices,
                    epoch: int, policy: AugmentPolicy):
    """Crop, augment, and encode the samples of one batch."""
    out_size = cfg.network.input_size
    stride = cfg.network.output_stride
    sigma = _training_sigma(cfg)
    skeleton = dataset.annotations.skeleton
    crops, joint_sets = [], []
    for position, index in zip(positions, indices):
        person = dataset.instances[index]
        rng = np.random.default_rng([cfg.train.seed, epoch, int(position)])
        params = None
        if policy.enabled:
            from .data import sample_augmentation
            params = sample_augmentation(policy, rng)
        crop, joints, _ = make_crop(dataset.images[person.image_id], person,
                                    skeleton, out_size,
                                    margin=cfg.data.crop_margin,
                                    augment=params)
        crops.append(crop)
        joint_sets.append(joints)
    images = np.stack(crops)
    targets, weights = encode_batch(joint_sets, out_size[0] // stride,
                                    out_size[1] // stride, stride, sigma)
    return images, targets, weights


@dataclasses.dataclass
class TrainResult:
    loss_rows: list           # (step, epoch, lr, loss) with 1-based step
    checkpoints: list
    metrics: Optional[dict]
    schedule: LrSchedule
    start_step: int

    @property
    def initial_loss(self) -> float:
        return self.loss_rows[0][3]

    @property
    def final_loss(self) -> float:
        return self.loss_rows[-1][3]


def run_training(cfg: RunConfig, out_dir=None,
                 resume=None, log: Optional[Callable[[str], None]] = None,
                 eval_at_end: bool = True,
                 net: Optional[PoseNetwork] = None) -> TrainResult:
    """Train from scratch or resume; returns the loss history and, when
    ``eval_at_end``, metrics of the final model on its training set."""
    dataset = build_dataset(cfg)
    if net is None:
        net = build_network(cfg.network, seed=cfg.train.seed)
    adam = Adam(dict(net.named_parameters()), lr=cfg.train.base_lr)
    num = len(dataset.instances)
    if num == 0:
        raise ValueError("dataset has no labeled people")
    steps_per_epoch = math.ceil(num / cfg.train.batch_size)
    schedule = make_schedule(cfg, steps_per_epoch)
    start_step = 0
    if resume is not None:
        meta = load_checkpoint(str(resume), net, adam)
        variant = meta.get("variant")
        if variant is not None and variant != cfg.network.variant:
            raise CheckpointError(
                f"checkpoint was trained as {variant!r}, config asks for "
                f"{cfg.network.variant!r}")
        start_step = int(meta.get("step", "0"))
    out_path = pathlib.Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    save_points = set(schedule.decay_steps) | {schedule.total_steps}
    net.train()
    rows, checkpoints = [], []
    batch = cfg.train.batch_size
    for step in range(start_step, schedule.total_steps):
        epoch = step // steps_per_epoch
        slot = step % steps_per_epoch
        order = _epoch_order(num, cfg.train.seed, epoch)
        positions = range(slot * batch, min((slot + 1) * batch, num))
        indices = order[positions.start:positions.stop]
        images, targets, weights = _assemble_batch(
            dataset, cfg, positions, indices, epoch, cfg.augment)
        adam.lr = schedule.lr_at(step)
        with Graph() as graph:
            pred = net.forward(Tensor(images))
            loss = heatmap_loss(pred, targets, weights)
            graph.backward(loss)
        adam.step()
        done = step + 1
        loss_value = loss.data.item()
        rows.append((done, epoch + 1, adam.lr, loss_value))
        if log is not None and (done % max(cfg.train.log_every, 1) == 0
                                or done == schedule.total_steps):
            log(f"step {done}/{schedule.total_steps} "
                f"lr {adam.lr:g} loss {loss_value:.6f}")
        if done in save_points and out_path is not None:
            name = ("final.ckpt" if done == schedule.total_steps
                    else f"checkpoint_step{done:06d}.ckpt")
            path = out_path / name
            save_checkpoint(str(path), net, adam,
                            meta={"step": str(done),
                                  "variant": cfg.network.variant})
            checkpoints.append(path)

    metrics = None
    if eval_at_end:
        metrics = evaluate_model(net, dataset, cfg).metrics
    if out_path is not None:
        from .report import write_csv
        write_csv(out_path / "loss.csv",
                  ("step", "epoch", "lr", "loss"), rows)
    return TrainResult(loss_rows=rows, checkpoints=checkpoints,
                       metrics=metrics, schedule=schedule,
                       start_step=start_step)


@dataclasses.dataclass
class EvalResult:
    metrics: dict
    predictions: list
    records: list


def evaluate_model(net: PoseNetwork, dataset: Dataset,
                   cfg: RunConfig) -> EvalResult:
    """Center-crop every annotated person, predict, decode, map back to the
    original image, and score with OKS AP/AR."""
    out_size = cfg.network.input_size
    stride = cfg.network.output_stride
    skeleton = dataset.annotations.skeleton
    params = cfg.eval.oks_params(cfg.network.num_joints)
    crops, transforms, people = [], [], []
    for person in dataset.instances:
        crop, _, transform = make_crop(dataset.images[person.image_id],
                                       person, skeleton, out_size,
                                       margin=cfg.data.crop_margin)
        crops.append(crop)
        transforms.append(transform)
        people.append(person)

    predictions = []
    batch = max(cfg.train.batch_size, 1)
    for start in range(0, len(crops), batch):
        images = np.stack(crops[start:start + batch])
        if cfg.eval.flip_average:
            maps = flip_average(net.predict, images, skeleton.flip_pairs,
                                aligned=cfg.eval.flip_aligned)
        else:
            maps = net.predict(images)
        for offset, (joints, confidence) in enumerate(
                decode_batch(maps, stride, mode=cfg.eval.decode)):
            transform = transforms[start + offset]
            person = people[start + offset]
            xy = transform.invert().apply_xy(joints.xy)
            predictions.append(Prediction(
                image_id=person.image_id, xy=xy,
                joint_scores=confidence,
                score=float(confidence.mean())))
    records = collect_records(predictions, dataset.instances, params,
                              max_dets=cfg.eval.max_dets)
    return EvalResult(metrics=metric_table(records, params),
                      predictions=predictions, records=records)
