"""Training objectives: task loss, pairwise cross-modal distillation, total.

The distillation term sums, over every available teacher i and every other
available modality j, the p-norm of the flattened bottleneck difference
f_i - f_j. The sum is deliberately left unnormalized (no division by pair
count or element count); the trade-off factor alpha absorbs the scale.
Teachers that are both available act as students of each other, so the
(a, b) and (b, a) pairs both appear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .availability import AvailabilityMask
from .errors import NumericalError

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    p_norm: int = 1
    detach_teacher: bool = False
    task_ce_weight: float = 1.0
    task_dice_weight: float = 1.0
    dice_smooth: float = 1e-5
    squared_l2: bool = False  # p=2 variant: sum of squares instead of the root norm

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.p_norm not in (1, 2):
            raise ValueError("p_norm must be 1 or 2")
        if self.dice_smooth <= 0:
            raise ValueError("dice_smooth must be positive")


def _pair_distance(fi, fj, config: LossConfig):
    diff = ad.sub(fi, fj)
    if config.p_norm == 1:
        return ad.ssum(ad.absolute(diff))
    sq = ad.ssum(ad.square(diff))
    return sq if config.squared_l2 else ad.sqrt(sq)


def ckd_loss(features, teachers, mask: AvailabilityMask, config: LossConfig):
    """Pairwise teacher-to-student distance over available bottleneck features.

    Returns a scalar tensor; exactly 0 when every teacher is missing or no
    student is available. Slots filled in for missing modalities never enter
    (the mask gates both sides), so no gradient reaches generated features.
    """
    if not teachers.unique:
        raise ValueError("empty teacher set")
    missing = mask.missing
    avail = mask.available
    present_teachers = [i for i in teachers.unique if i not in missing]

    dtype = None
    for slot in features.bottleneck:
        if slot is not None:
            dtype = slot.data.dtype
            break
    total = None
    for i in present_teachers:
        fi = features.bottleneck[i - 1]
        if fi is None:
            raise ValueError(f"teacher modality {i} has no encoded features")
        if config.detach_teacher:
            fi = fi.detach()
        for j in avail:
            if j == i:
                continue
            fj = features.bottleneck[j - 1]
            if fj is None:
                raise ValueError(f"student modality {j} has no encoded features")
            d = _pair_distance(fi, fj, config)
            total = d if total is None else ad.add(total, d)
    if total is None:
        return ad.Tensor(np.zeros((), dtype=dtype if dtype is not None else np.float64))
    return total


def task_loss(prediction, target: np.ndarray, config: LossConfig):
    """Binary cross-entropy plus soft Dice, both averaged as documented.

    BCE is the mean over every task channel and voxel; the Dice term is the
    mean over tasks of 1 - (2*sum(p*y)+s)/(sum(p)+sum(y)+s) with sums taken
    over batch and voxels together.
    """
    pred = prediction if isinstance(prediction, ad.Tensor) else ad.Tensor(prediction)
    if pred.data.shape != target.shape:
        raise ValueError(f"prediction shape {pred.data.shape} != target shape {target.shape}")
    if not ((pred.data > 0.0).all() and (pred.data < 1.0).all()):
        raise ValueError("prediction values must lie strictly inside (0, 1)")
    y = target.astype(pred.data.dtype)
    n_tasks = target.shape[1]

    p = ad.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    one_minus_p = ad.clip(ad.sub(1.0, pred), BCE_EPS, 1.0 - BCE_EPS)
    bce = ad.mul(
        ad.mean(ad.add(ad.mul(ad.log(p), y), ad.mul(ad.log(one_minus_p), 1.0 - y))),
        -1.0,
    )

    dice_total = None
    smooth = config.dice_smooth
    for k in range(n_tasks):
        pk = ad.narrow(pred, 1, k, 1)
        yk = y[:, k:k + 1]
        inter = ad.ssum(ad.mul(pk, yk))
        denom = ad.add(ad.add(ad.ssum(pk), float(yk.sum())), smooth)
        soft = ad.mul(ad.add(ad.mul(inter, 2.0), smooth), ad.reciprocal(denom))
        term = ad.sub(1.0, soft)
        dice_total = term if dice_total is None else ad.add(dice_total, term)
    dice_loss = ad.mul(dice_total, 1.0 / n_tasks)

    return ad.add(ad.mul(bce, config.task_ce_weight), ad.mul(dice_loss, config.task_dice_weight))


def total_loss(task, ckd, alpha: float):
    """task + alpha * distillation; rejects non-finite inputs."""
    t = task if isinstance(task, ad.Tensor) else ad.Tensor(np.asarray(task, dtype=np.float64))
    c = ckd if isinstance(ckd, ad.Tensor) else ad.Tensor(np.asarray(ckd, dtype=np.float64))
    if not (np.isfinite(t.data).all() and np.isfinite(c.data).all() and np.isfinite(alpha)):
        raise NumericalError(
            f"non-finite loss inputs: task={float(t.data)!r} ckd={float(c.data)!r} alpha={alpha!r}"
        )
    return ad.add(t, ad.mul(c, float(alpha)))
