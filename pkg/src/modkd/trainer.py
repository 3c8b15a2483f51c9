"""Non-dedicated training loop: one model learns every availability pattern.

Each iteration samples an availability mask, encodes the available
modalities, refreshes teachers on the election schedule, fills missing
feature slots, decodes, and takes one Nesterov-momentum SGD step on
task + alpha * distillation with a cosine-annealed learning rate.

The Nesterov recurrence evaluates the gradient at the lookahead point::

    g      = grad(loss)(theta - lr * mu * v)
    v_next = mu * v + g
    theta  = theta - lr * v_next

Run directory layout: ``config.snapshot``, ``losses.csv``, ``elections.log``,
``ckpt_<iter>.bin``, ``ckpt_final.bin``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from .availability import AvailabilityMask, generate_missing, sample_mask
from .backbone import ModelConfig, ModelParams, decode, encode, init_params, save_checkpoint
from .election import TeacherSet, ElectionRecord, append_record, compute_dice_matrix, elect, election_due
from .errors import NumericalError
from .losses import LossConfig, ckd_loss, task_loss, total_loss

LOSS_CSV_HEADER = "iteration,task_loss,ckd_loss,total_loss,n_missing,teachers"


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 2
    lr_init: float = 1e-2
    lr_min: float = 0.0
    momentum: float = 0.99
    election_interval: int = 200
    teacher_mode: str = "multi"
    seed: int = 0
    checkpoint_interval: int = 0  # 0: final checkpoint only
    validation_fraction: float = 0.2
    per_sample_masks: bool = False
    final_election: bool = False
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr_init > 0:
            raise ValueError("lr_init must be positive")
        if not 0 <= self.lr_min <= self.lr_init:
            raise ValueError("need 0 <= lr_min <= lr_init")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.teacher_mode not in ("multi", "single"):
            raise ValueError("teacher_mode must be 'multi' or 'single'")
        if self.election_interval < 1:
            raise ValueError("election_interval must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")


@dataclass
class TrainState:
    params: ModelParams
    velocity: dict[str, np.ndarray]
    iteration: int
    teachers: TeacherSet | None
    batch_rng: np.random.Generator
    mask_rng: np.random.Generator


@dataclass
class StepRecord:
    iteration: int
    task: float
    ckd: float
    total: float
    n_missing: str
    teachers: str


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Cosine annealing from lr_init to lr_min over the full run."""
    if not 0 <= iteration <= config.iterations:
        raise ValueError("iteration outside the configured run")
    span = config.lr_init - config.lr_min
    return config.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * iteration / config.iterations))


def lookahead_point(theta: np.ndarray, velocity: np.ndarray, lr: float, momentum: float) -> np.ndarray:
    return theta - lr * momentum * velocity


def nesterov_update(theta, velocity, grad, lr: float, momentum: float):
    """One update given the gradient already evaluated at the lookahead point."""
    v = momentum * velocity + grad
    return theta - lr * v, v


def init_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    params = init_params(model_config)
    velocity = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
    batch_ss, mask_ss = np.random.SeedSequence(train_config.seed).spawn(2)
    return TrainState(
        params=params,
        velocity=velocity,
        iteration=0,
        teachers=None,
        batch_rng=np.random.default_rng(batch_ss),
        mask_rng=np.random.default_rng(mask_ss),
    )


def _loss_for_mask(params, x, y, mask, teachers, loss_cfg):
    bundle = encode(params, x, mask)
    ckd = ckd_loss(bundle, teachers, mask, loss_cfg)
    pred = decode(params, generate_missing(bundle, mask))
    task = task_loss(pred, y, loss_cfg)
    return task, ckd, total_loss(task, ckd, loss_cfg.alpha)


def train_step(state: TrainState, batch, config: TrainConfig) -> StepRecord:
    """One optimization step on (x [B, N, *S], y [B, K, *S])."""
    if state.teachers is None:
        raise ValueError("teachers must be elected before training steps")
    x, y = batch
    n = state.params.config.n_modalities
    lr = lr_at(state.iteration, config)
    tensors = state.params.tensors

    saved = {name: t.data.copy() for name, t in tensors.items()}
    if config.momentum != 0.0:
        for name, t in tensors.items():
            t.data = lookahead_point(saved[name], state.velocity[name], lr, config.momentum)

    if config.per_sample_masks:
        masks = [sample_mask(n, state.mask_rng) for _ in range(x.shape[0])]
        task = ckd = total = None
        for b, m in enumerate(masks):
            t_b, c_b, tot_b = _loss_for_mask(
                state.params, x[b:b + 1], y[b:b + 1], m, state.teachers, config.loss
            )
            task = t_b if task is None else task + t_b
            ckd = c_b if ckd is None else ckd + c_b
            total = tot_b if total is None else total + tot_b
        scale = 1.0 / len(masks)
        task, ckd, total = task * scale, ckd * scale, total * scale
        missing_repr = ";".join(str(len(m.missing)) for m in masks)
    else:
        mask = sample_mask(n, state.mask_rng)
        task, ckd, total = _loss_for_mask(state.params, x, y, mask, state.teachers, config.loss)
        missing_repr = str(len(mask.missing))

    if not np.isfinite(total.data):
        raise NumericalError(
            f"non-finite loss at iteration {state.iteration}: "
            f"task={float(task.data)!r} ckd={float(ckd.data)!r}"
        )
    total.backward()

    for name, t in tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        t.data, state.velocity[name] = nesterov_update(
            saved[name], state.velocity[name], g, lr, config.momentum
        )
    state.params.zero_grads()
    if not state.params.all_finite():
        raise NumericalError(f"non-finite parameters after iteration {state.iteration}")

    record = StepRecord(
        iteration=state.iteration,
        task=float(task.data),
        ckd=float(ckd.data),
        total=float(total.data),
        n_missing=missing_repr,
        teachers=";".join(str(t) for t in state.teachers.unique),
    )
    state.iteration += 1
    return record


def _run_election(state, val_x, val_y, config, log_path):
    matrix = compute_dice_matrix(state.params, val_x, val_y)
    chosen = elect(matrix, config.teacher_mode, elected_at=state.iteration)
    state.teachers = chosen
    append_record(log_path, ElectionRecord(iteration=state.iteration, dice_matrix=matrix, chosen=chosen))


def run(manifest, model_config: ModelConfig, train_config: TrainConfig, out_dir) -> Path:
    """Full training run; returns the run directory."""
    from .configio import render_snapshot

    if not isinstance(manifest, dict):
        manifest = ds.read_manifest(manifest)
    if manifest["n_modalities"] != model_config.n_modalities:
        raise ValueError("model n_modalities does not match dataset")
    if manifest["n_tasks"] != model_config.n_tasks:
        raise ValueError("model n_tasks does not match dataset")
    if manifest["dims"] != model_config.spatial_dims:
        raise ValueError("model spatial_dims does not match dataset")

    train_ids, val_ids = ds.split(manifest, train_config.validation_fraction, train_config.seed)
    _, train_x, train_y = ds.load_arrays(manifest, train_ids)
    _, val_x, val_y = ds.load_arrays(manifest, val_ids)
    if train_config.batch_size > len(train_ids):
        raise ValueError("batch_size exceeds the number of training cases")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.snapshot").write_text(render_snapshot(model_config, train_config))
    log_path = out_dir / "elections.log"
    log_path.write_text("")

    state = init_state(model_config, train_config)
    with open(out_dir / "losses.csv", "w") as csv:
        csv.write(LOSS_CSV_HEADER + "\n")
        try:
            for t in range(train_config.iterations):
                if election_due(t, train_config.election_interval):
                    _run_election(state, val_x, val_y, train_config, log_path)
                idx = state.batch_rng.choice(len(train_ids), size=train_config.batch_size, replace=False)
                rec = train_step(state, (train_x[idx], train_y[idx]), train_config)
                csv.write(
                    f"{rec.iteration},{rec.task!r},{rec.ckd!r},{rec.total!r},{rec.n_missing},{rec.teachers}\n"
                )
                if (
                    train_config.checkpoint_interval > 0
                    and (t + 1) % train_config.checkpoint_interval == 0
                ):
                    save_checkpoint(out_dir / f"ckpt_{t + 1}.bin", state.params, t + 1)
        finally:
            csv.flush()

    if train_config.final_election:
        _run_election(state, val_x, val_y, train_config, log_path)
    save_checkpoint(out_dir / "ckpt_final.bin", state.params, train_config.iterations)
    return out_dir
