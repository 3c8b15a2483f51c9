"""Multi-modal phantom datasets: on-disk format, generator, loaders, split.

Directory layout::

    <root>/manifest.json            n_modalities, n_tasks, dims, side, cases[]
    <root>/cases/<id>/mod_<i>.f32   raw little-endian float32, C order, 1-based i
    <root>/cases/<id>/mask_<k>.f32  binary {0,1} stored as float32, 1-based k

Each case carries N scalar modality fields and K binary task masks over one
spatial grid. The generator plants per-task informativeness: task k's regions
appear at ``signal_contrast`` in one designated modality and at
``distractor_contrast`` everywhere else, so a model can only do well on task k
without the designated modality by exploiting the weaker cross-modal trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class DatasetSpec:
    n_modalities: int
    n_tasks: int
    spatial_dims: int
    side_length: int
    n_cases: int
    seed: int = 0

    def __post_init__(self):
        if self.n_modalities < 2:
            raise ValueError("need at least two modalities")
        if self.n_tasks < 1:
            raise ValueError("need at least one task")
        if self.spatial_dims not in (2, 3):
            raise ValueError("spatial_dims must be 2 or 3")
        if self.side_length < 8:
            raise ValueError("side_length must be >= 8")
        if self.n_cases < 2:
            raise ValueError("need at least two cases")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class InformativenessPlan:
    """Which modality is planted as the strong signal carrier for each task."""

    teacher_of_task: dict[int, int] = field(default_factory=dict)
    signal_contrast: float = 1.0
    distractor_contrast: float = 0.2
    noise_sigma: float = 0.1

    def __post_init__(self):
        if not self.signal_contrast > self.distractor_contrast >= 0.0:
            raise ValueError("need signal_contrast > distractor_contrast >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def validate_against(self, spec: DatasetSpec):
        expected = set(range(1, spec.n_tasks + 1))
        if set(self.teacher_of_task) != expected:
            raise ValueError(f"teacher_of_task must cover tasks {sorted(expected)}")
        for k, i in self.teacher_of_task.items():
            if not 1 <= i <= spec.n_modalities:
                raise ValueError(f"task {k}: planted modality {i} out of range 1..{spec.n_modalities}")


@dataclass
class Sample:
    """One case: N modality fields plus K binary masks over one grid."""

    case_id: str
    modalities: list[np.ndarray]
    masks: list[np.ndarray]


def _ellipsoid_union(rng: np.random.Generator, side: int, dims: int) -> np.ndarray:
    """Union of 1-3 random axis-aligned ellipsoids, radii 10-30% of the side."""
    grid = np.indices((side,) * dims).astype(np.float64)
    mask = np.zeros((side,) * dims, dtype=bool)
    n_blobs = int(rng.integers(1, 4))
    for _ in range(n_blobs):
        center = rng.uniform(0.2 * side, 0.8 * side, size=dims)
        radii = rng.uniform(0.1 * side, 0.3 * side, size=dims)
        d2 = np.zeros((side,) * dims)
        for ax in range(dims):
            d2 += ((grid[ax] - center[ax]) / radii[ax]) ** 2
        mask |= d2 <= 1.0
    return mask


def _render_case(spec: DatasetSpec, plan: InformativenessPlan, seed_seq: np.random.SeedSequence) -> Sample:
    """Pure function of (spec, plan, per-case seed); parallelizable across cases."""
    rng = np.random.default_rng(seed_seq)
    side, dims = spec.side_length, spec.spatial_dims
    masks = [_ellipsoid_union(rng, side, dims) for _ in range(spec.n_tasks)]

    modalities = []
    for i in range(1, spec.n_modalities + 1):
        fld = np.zeros((side,) * dims, dtype=np.float64)
        for k, m in enumerate(masks, start=1):
            contrast = plan.signal_contrast if plan.teacher_of_task[k] == i else plan.distractor_contrast
            # set semantics: overlapping regions take the strongest contrast
            np.maximum(fld, contrast * m, out=fld)
        fld += rng.normal(0.0, plan.noise_sigma, size=fld.shape) if plan.noise_sigma > 0 else 0.0
        std = fld.std()
        fld = (fld - fld.mean()) / (std if std > 0 else 1.0)
        modalities.append(fld.astype(np.float32))

    return Sample(
        case_id="",
        modalities=modalities,
        masks=[m.astype(np.float32) for m in masks],
    )


def _write_array(path: Path, arr: np.ndarray):
    arr.astype("<f4").tofile(path)


def _read_array(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    if not path.exists():
        raise DataError(f"missing array file: {path}")
    raw = path.read_bytes()
    if len(raw) != expected:
        raise DataError(f"{path}: size {len(raw)} does not match manifest shape {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def generate(spec: DatasetSpec, plan: InformativenessPlan, out_dir) -> Path:
    """Write a full dataset; returns the manifest path.

    Bit-identical for identical (spec, plan): the manifest is serialized with
    sorted keys and every case derives its own seed from ``spec.seed``.
    """
    plan.validate_against(spec)
    out_dir = Path(out_dir)
    try:
        (out_dir / "cases").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create dataset directory {out_dir}: {e}") from e

    case_ids = [f"case_{c:04d}" for c in range(spec.n_cases)]
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_cases)
    for case_id, child in zip(case_ids, children):
        sample = _render_case(spec, plan, child)
        case_dir = out_dir / "cases" / case_id
        case_dir.mkdir(exist_ok=True)
        for i, fld in enumerate(sample.modalities, start=1):
            _write_array(case_dir / f"mod_{i}.f32", fld)
        for k, m in enumerate(sample.masks, start=1):
            _write_array(case_dir / f"mask_{k}.f32", m)

    manifest = {
        "n_modalities": spec.n_modalities,
        "n_tasks": spec.n_tasks,
        "dims": spec.spatial_dims,
        "side": spec.side_length,
        "cases": case_ids,
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest_path


def read_manifest(manifest_path) -> dict:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"unparseable manifest {manifest_path}: {e}") from e
    for key in ("n_modalities", "n_tasks", "dims", "side", "cases"):
        if key not in manifest:
            raise DataError(f"manifest {manifest_path} missing key '{key}'")
    manifest["_root"] = str(manifest_path.parent)
    return manifest


def load_case(manifest, case_id: str) -> Sample:
    """Bit-exact round trip of one case; validates shapes and mask binarity."""
    if not isinstance(manifest, dict):
        manifest = read_manifest(manifest)
    if case_id not in manifest["cases"]:
        raise DataError(f"case '{case_id}' not listed in manifest")
    shape = (manifest["side"],) * manifest["dims"]
    case_dir = Path(manifest["_root"]) / "cases" / case_id

    modalities = [
        _read_array(case_dir / f"mod_{i}.f32", shape)
        for i in range(1, manifest["n_modalities"] + 1)
    ]
    for fld in modalities:
        if not np.isfinite(fld).all():
            raise DataError(f"{case_id}: non-finite modality values")
    masks = []
    for k in range(1, manifest["n_tasks"] + 1):
        m = _read_array(case_dir / f"mask_{k}.f32", shape)
        if not np.isin(m, (0.0, 1.0)).all():
            raise DataError(f"{case_id}: mask_{k} contains non-binary values")
        masks.append(m)
    return Sample(case_id=case_id, modalities=modalities, masks=masks)


def load_arrays(manifest, case_ids=None):
    """Bulk loader: (ids, X [n, N, *S], Y [n, K, *S]) as float32."""
    if not isinstance(manifest, dict):
        manifest = read_manifest(manifest)
    if case_ids is None:
        case_ids = list(manifest["cases"])
    xs, ys = [], []
    for cid in case_ids:
        s = load_case(manifest, cid)
        xs.append(np.stack(s.modalities))
        ys.append(np.stack(s.masks))
    return list(case_ids), np.stack(xs), np.stack(ys)


def split(manifest, validation_fraction: float, seed: int):
    """Disjoint, exhaustive, seed-deterministic (train_ids, validation_ids).

    Validation size is round(fraction * n) clamped to [1, n-1].
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError("validation_fraction must be in (0, 1)")
    if not isinstance(manifest, dict):
        manifest = read_manifest(manifest)
    ids = list(manifest["cases"])
    n = len(ids)
    if n < 2:
        raise ValueError("need at least two cases to split")
    n_val = int(round(validation_fraction * n))
    n_val = min(max(n_val, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    val_ids = [ids[i] for i in sorted(order[:n_val])]
    train_ids = [ids[i] for i in sorted(order[n_val:])]
    return train_ids, val_ids


def fingerprint(manifest) -> str:
    """Content hash over the manifest and every case file (order-independent)."""
    import hashlib

    if not isinstance(manifest, dict):
        manifest = read_manifest(manifest)
    root = Path(manifest["_root"])
    h = hashlib.sha256()
    h.update((root / MANIFEST_NAME).read_bytes())
    for cid in manifest["cases"]:
        case_dir = root / "cases" / cid
        for f in sorted(case_dir.iterdir()):
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()
