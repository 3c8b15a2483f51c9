"""Teacher election: single-modality validation, per-task argmax, reduction.

Every elected set starts from the per-task argmax of an [N x K] validation
Dice matrix. Multi-teacher mode keeps the deduplicated teachers in first-
appearance order; single-teacher mode reduces to the modality elected for
the most tasks (ties broken by higher mean Dice across tasks, then lower
modality index). Records append to a JSON-lines log that is never rewritten.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .availability import AvailabilityMask
from .backbone import ModelParams, forward
from .errors import DataError

MODES = ("multi", "single")


@dataclass(frozen=True)
class TeacherSet:
    per_task: tuple[int, ...]  # task k (position k-1) -> teacher modality, 1-based
    unique: tuple[int, ...]
    mode: str
    elected_at: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class ElectionRecord:
    iteration: int
    dice_matrix: np.ndarray  # [N, K]
    chosen: TeacherSet


def validate_single_modality(
    params: ModelParams,
    modalities: np.ndarray,
    masks: np.ndarray,
    modality: int,
    threshold: float = 0.5,
    chunk: int = 8,
) -> np.ndarray:
    """Mean per-task Dice over the given cases using only one modality.

    All other feature slots are filled from this modality alone, so the run
    measures what the model can do from modality ``modality`` by itself.
    """
    from .evaluator import dice

    if modalities.shape[0] == 0:
        raise ValueError("empty validation set")
    n = params.config.n_modalities
    k = params.config.n_tasks
    mask = AvailabilityMask.only(n, modality)
    scores = np.zeros((modalities.shape[0], k))
    with ad.no_grad():
        for lo in range(0, modalities.shape[0], chunk):
            x = modalities[lo:lo + chunk]
            pred, _ = forward(params, x, mask)
            hard = (pred.data >= threshold).astype(np.float32)
            for b in range(x.shape[0]):
                for t in range(k):
                    scores[lo + b, t] = dice(hard[b, t], masks[lo + b, t])
    return scores.mean(axis=0)


def compute_dice_matrix(params, modalities, masks, threshold=0.5) -> np.ndarray:
    """[N x K] matrix of single-modality validation Dice scores."""
    return np.stack([
        validate_single_modality(params, modalities, masks, i, threshold)
        for i in range(1, params.config.n_modalities + 1)
    ])


def elect(dice_matrix: np.ndarray, mode: str = "multi", elected_at: int = 0) -> TeacherSet:
    """Reduce a validation Dice matrix to a teacher set."""
    m = np.asarray(dice_matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"dice matrix must be [N x K], got shape {m.shape}")
    if not np.isfinite(m).all() or m.min() < 0 or m.max() > 1:
        raise ValueError("dice matrix entries must be finite and within [0, 1]")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")

    # np.argmax returns the first (lowest-index) maximum, the documented tie rule
    per_task = tuple(int(np.argmax(m[:, k])) + 1 for k in range(m.shape[1]))

    if mode == "multi":
        unique = tuple(dict.fromkeys(per_task))
    else:
        counts = {}
        for t in per_task:
            counts[t] = counts.get(t, 0) + 1
        best_count = max(counts.values())
        candidates = [t for t, c in counts.items() if c == best_count]
        # ties: higher mean Dice across tasks, then lower modality index
        candidates.sort(key=lambda t: (-m[t - 1].mean(), t))
        unique = (candidates[0],)

    return TeacherSet(per_task=per_task, unique=unique, mode=mode, elected_at=elected_at)


def election_due(iteration: int, interval: int) -> bool:
    """True on the fixed schedule, including iteration 0."""
    if interval < 1:
        raise ValueError("election interval must be >= 1")
    return iteration % interval == 0


# ---------------------------------------------------------------------------
# append-only election log (JSON lines)
# ---------------------------------------------------------------------------

def append_record(path, record: ElectionRecord):
    payload = {
        "iteration": record.iteration,
        "dice_matrix": [[float(v) for v in row] for row in record.dice_matrix],
        "per_task": list(record.chosen.per_task),
        "unique": list(record.chosen.unique),
        "mode": record.chosen.mode,
    }
    with open(path, "a") as f:
        f.write(json.dumps(payload) + "\n")


def read_records(path) -> list[ElectionRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no election log at {path}")
    records = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            chosen = TeacherSet(
                per_task=tuple(obj["per_task"]),
                unique=tuple(obj["unique"]),
                mode=obj["mode"],
                elected_at=obj["iteration"],
            )
            records.append(ElectionRecord(
                iteration=obj["iteration"],
                dice_matrix=np.array(obj["dice_matrix"], dtype=float),
                chosen=chosen,
            ))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"{path}:{line_no}: malformed election record ({e})") from e
    return records
