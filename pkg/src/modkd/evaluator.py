"""Hard-Dice evaluation over every availability combination, plus statistics.

A report covers all 2^N - 1 non-empty availability combinations: per
(combination, case, task) Dice on binarized predictions, per-combination
means, and a grand average per task (unweighted mean over combinations).
The one-tailed paired t-test computes its own Student-t CDF through the
regularized incomplete beta function, so no statistics library is needed.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .availability import all_combinations
from .backbone import ModelParams, forward
from .errors import DataError, NumericalError

THREADS_ENV = "LCKD_THREADS"
_EVAL_CHUNK = 8


def dice(pred_binary: np.ndarray, gt_binary: np.ndarray) -> float:
    """2|P∩G| / (|P|+|G|); 1.0 when both sets are empty."""
    p = np.asarray(pred_binary)
    g = np.asarray(gt_binary)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    if not (np.isin(p, (0, 1)).all() and np.isin(g, (0, 1)).all()):
        raise ValueError("dice inputs must be binary")
    p = p.astype(bool)
    g = g.astype(bool)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


@dataclass
class EvalReport:
    n_modalities: int
    n_tasks: int
    rows: list  # (combination bits, case_id, task 1-based, dice)

    def aggregate(self) -> dict:
        """(bits, task) -> mean dice over cases."""
        sums: dict = {}
        counts: dict = {}
        for bits, _case, task, value in self.rows:
            key = (bits, task)
            sums[key] = sums.get(key, 0.0) + value
            counts[key] = counts.get(key, 0) + 1
        return {k: sums[k] / counts[k] for k in sums}

    def grand_average(self) -> dict:
        """task -> unweighted mean over the per-combination means."""
        agg = self.aggregate()
        combos = sorted({bits for bits, _ in agg})
        return {
            task: float(np.mean([agg[(bits, task)] for bits in combos]))
            for task in range(1, self.n_tasks + 1)
        }

    def combination_bits(self) -> list[str]:
        seen = dict.fromkeys(bits for bits, *_ in self.rows)
        return list(seen)


def _predict_hard(params, x, mask, threshold):
    out = np.empty((x.shape[0], params.config.n_tasks) + x.shape[2:], dtype=np.float32)
    with ad.no_grad():
        for lo in range(0, x.shape[0], _EVAL_CHUNK):
            pred, _ = forward(params, x[lo:lo + _EVAL_CHUNK], mask)
            out[lo:lo + pred.data.shape[0]] = (pred.data >= threshold)
    return out


def evaluate(
    params: ModelParams,
    case_ids: list[str],
    modalities: np.ndarray,
    masks: np.ndarray,
    threshold: float = 0.5,
    workers: int | None = None,
) -> EvalReport:
    """Run every non-empty availability combination over the given cases.

    ``workers`` defaults to the LCKD_THREADS environment variable (else 1);
    combinations are computed independently and assembled in a fixed order,
    so the report does not depend on scheduling.
    """
    if len(case_ids) == 0:
        raise ValueError("empty evaluation id list")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    n = params.config.n_modalities
    k = params.config.n_tasks
    combos = all_combinations(n)
    if workers is None:
        workers = max(1, int(os.environ.get(THREADS_ENV, "1")))
    workers = min(workers, len(combos))

    def run_combo(mask):
        hard = _predict_hard(params, modalities, mask, threshold)
        rows = []
        for b, cid in enumerate(case_ids):
            for t in range(k):
                rows.append((mask.to_bitstring(), cid, t + 1, dice(hard[b, t], masks[b, t])))
        return rows

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_combo = list(pool.map(run_combo, combos))
    else:
        per_combo = [run_combo(m) for m in combos]

    rows = [row for combo_rows in per_combo for row in combo_rows]
    return EvalReport(n_modalities=n, n_tasks=k, rows=rows)


# ---------------------------------------------------------------------------
# report CSV formats
# ---------------------------------------------------------------------------

DETAIL_HEADER = "combination,case_id,task,dice"
PAIRING_NOTE = "# t-test pairing: per-case scores within a fixed (combination, task)"


def write_detail_csv(report: EvalReport, path):
    with open(path, "w") as f:
        f.write(PAIRING_NOTE + "\n")
        f.write(DETAIL_HEADER + "\n")
        for bits, cid, task, value in report.rows:
            f.write(f"{bits},{cid},{task},{value!r}\n")


def read_detail_csv(path) -> list[tuple[str, str, int, float]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no report at {path}")
    rows = []
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty report")
    if lines[0] != DETAIL_HEADER:
        raise DataError(f"{path}: unexpected header {lines[0]!r}")
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise DataError(f"{path}: malformed row {ln!r}")
        rows.append((parts[0], parts[1], int(parts[2]), float(parts[3])))
    if not rows:
        raise DataError(f"{path}: report has no data rows")
    return rows


def write_aggregate_csv(report: EvalReport, path):
    """Combination-by-task mean table plus the grand-average row."""
    agg = report.aggregate()
    tasks = range(1, report.n_tasks + 1)
    with open(path, "w") as f:
        f.write("combination," + ",".join(f"task_{t}" for t in tasks) + "\n")
        for bits in report.combination_bits():
            f.write(bits + "," + ",".join(repr(agg[(bits, t)]) for t in tasks) + "\n")
        grand = report.grand_average()
        f.write("average," + ",".join(repr(grand[t]) for t in tasks) + "\n")


# ---------------------------------------------------------------------------
# paired one-tailed t-test, t CDF via the regularized incomplete beta function
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise NumericalError("incomplete beta continued fraction failed to converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-14."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = df / (df + t * t)
    tail = 0.5 * betainc_reg(df / 2.0, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


def paired_ttest_one_tailed(scores_a, scores_b) -> tuple[float, float]:
    """Classic paired t on d = a - b, one-tailed p for mean(d) > 0."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise NumericalError("zero variance of paired differences (degenerate comparison)")
    t = d.mean() / (sd / math.sqrt(n))
    p = 1.0 - student_t_cdf(t, n - 1)
    return float(t), float(p)


def teacher_percentages(records) -> dict[int, float]:
    """Fraction of election records whose teacher set contains each modality."""
    records = list(records)
    if not records:
        raise ValueError("empty election log")
    n = records[0].dice_matrix.shape[0]
    counts = dict.fromkeys(range(1, n + 1), 0)
    for rec in records:
        for m in rec.chosen.unique:
            counts[m] += 1
    return {m: counts[m] / len(records) for m in counts}
