import json

import numpy as np
import pytest

from modkd import dataset as ds
from modkd.errors import DataError

from conftest import MICRO_PLAN, MICRO_SPEC, make_micro_dataset


def tree_bytes(root):
    """{relative path: bytes} over manifest + cases (run metadata excluded)."""
    root = root if root.is_dir() else root.parent
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and (p.name == "manifest.json" or "cases" in p.parts):
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


class TestSpecValidation:
    def test_rejects_bad_fields(self):
        good = dict(n_modalities=4, n_tasks=3, spatial_dims=3, side_length=32, n_cases=60, seed=7)
        for key, bad in [("n_modalities", 1), ("n_tasks", 0), ("spatial_dims", 4),
                         ("side_length", 7), ("n_cases", 1), ("seed", -1)]:
            with pytest.raises(ValueError):
                ds.DatasetSpec(**{**good, key: bad})

    def test_plan_invariants(self):
        with pytest.raises(ValueError):
            ds.InformativenessPlan(teacher_of_task={1: 1}, signal_contrast=0.5, distractor_contrast=0.5)
        with pytest.raises(ValueError):
            ds.InformativenessPlan(teacher_of_task={1: 1}, noise_sigma=-0.1)
        plan = ds.InformativenessPlan(teacher_of_task={1: 5}, signal_contrast=1.0)
        spec = ds.DatasetSpec(n_modalities=4, n_tasks=1, spatial_dims=2, side_length=16, n_cases=2)
        with pytest.raises(ValueError):
            plan.validate_against(spec)
        with pytest.raises(ValueError):
            ds.InformativenessPlan(teacher_of_task={2: 1}).validate_against(spec)


class TestGenerate:
    def test_deterministic_byte_identical(self, tmp_path):
        m1, *_ = make_micro_dataset(tmp_path / "a")
        m2, *_ = make_micro_dataset(tmp_path / "b")
        t1, t2 = tree_bytes(m1.parent), tree_bytes(m2.parent)
        assert t1.keys() == t2.keys()
        assert all(t1[k] == t2[k] for k in t1)

    def test_seed_changes_content(self, tmp_path):
        m1, *_ = make_micro_dataset(tmp_path / "a")
        m2, *_ = make_micro_dataset(tmp_path / "b", seed=MICRO_SPEC["seed"] + 1)
        t1, t2 = tree_bytes(m1.parent), tree_bytes(m2.parent)
        assert any(t1[k] != t2[k] for k in t1 if k.endswith(".f32"))

    def test_shapes_and_roundtrip(self, tmp_path):
        manifest_path, spec, _ = make_micro_dataset(tmp_path, n_cases=2)
        manifest = ds.read_manifest(manifest_path)
        assert manifest["cases"] == ["case_0000", "case_0001"]
        s = ds.load_case(manifest, "case_0000")
        assert len(s.modalities) == spec.n_modalities
        assert len(s.masks) == spec.n_tasks
        for arr in s.modalities + s.masks:
            assert arr.shape == (spec.side_length,) * spec.spatial_dims
            assert arr.dtype == np.float32
        # loader decodes exactly what generate wrote
        raw = (tmp_path / "cases" / "case_0000" / "mod_1.f32").read_bytes()
        assert raw == s.modalities[0].astype("<f4").tobytes()

    def test_planted_recoverability_noiseless(self, tmp_path):
        # injective teacher map, no distractor signal, no noise: thresholding the
        # planted modality at the mid-contrast level recovers each mask exactly
        spec = ds.DatasetSpec(n_modalities=3, n_tasks=2, spatial_dims=2,
                              side_length=32, n_cases=4, seed=2)
        plan = ds.InformativenessPlan(teacher_of_task={1: 2, 2: 3},
                                      signal_contrast=1.0, distractor_contrast=0.0,
                                      noise_sigma=0.0)
        manifest = ds.read_manifest(ds.generate(spec, plan, tmp_path))
        from modkd.evaluator import dice

        for cid in manifest["cases"]:
            s = ds.load_case(manifest, cid)
            for k in range(1, spec.n_tasks + 1):
                fld = s.modalities[plan.teacher_of_task[k] - 1]
                mid = (fld.min() + fld.max()) / 2.0
                recovered = (fld > mid).astype(np.float32)
                assert dice(recovered, s.masks[k - 1]) == 1.0

    def test_masks_nonempty_and_binary(self, tmp_path):
        manifest_path, spec, _ = make_micro_dataset(tmp_path)
        manifest = ds.read_manifest(manifest_path)
        for cid in manifest["cases"]:
            s = ds.load_case(manifest, cid)
            for m in s.masks:
                assert set(np.unique(m)) <= {0.0, 1.0}
                assert m.sum() > 0

    def test_modalities_standardized(self, tmp_path):
        manifest_path, *_ = make_micro_dataset(tmp_path)
        s = ds.load_case(ds.read_manifest(manifest_path), "case_0000")
        for fld in s.modalities:
            assert abs(float(fld.mean())) < 1e-5
            assert abs(float(fld.std()) - 1.0) < 1e-5


class TestLoadErrors:
    def test_unlisted_case(self, micro_dataset):
        with pytest.raises(DataError, match="not listed"):
            ds.load_case(micro_dataset["manifest"], "c9")

    def test_missing_file(self, tmp_path):
        manifest_path, *_ = make_micro_dataset(tmp_path, n_cases=2)
        (tmp_path / "cases" / "case_0001" / "mod_2.f32").unlink()
        with pytest.raises(DataError, match="missing array file"):
            ds.load_case(manifest_path, "case_0001")

    def test_shape_mismatch(self, tmp_path):
        manifest_path, *_ = make_micro_dataset(tmp_path, n_cases=2)
        f = tmp_path / "cases" / "case_0000" / "mod_1.f32"
        f.write_bytes(f.read_bytes()[:-8])
        with pytest.raises(DataError, match="does not match manifest shape"):
            ds.load_case(manifest_path, "case_0000")

    def test_non_binary_mask(self, tmp_path):
        manifest_path, spec, _ = make_micro_dataset(tmp_path, n_cases=2)
        f = tmp_path / "cases" / "case_0000" / "mask_1.f32"
        arr = np.frombuffer(f.read_bytes(), dtype="<f4").copy()
        arr[0] = 2.0
        f.write_bytes(arr.tobytes())
        with pytest.raises(DataError, match="non-binary"):
            ds.load_case(manifest_path, "case_0000")

    def test_manifest_missing_key(self, tmp_path):
        manifest_path, *_ = make_micro_dataset(tmp_path, n_cases=2)
        broken = json.loads(manifest_path.read_text())
        del broken["side"]
        manifest_path.write_text(json.dumps(broken))
        with pytest.raises(DataError, match="missing key"):
            ds.read_manifest(manifest_path)


class TestSplit:
    def test_sixty_cases_twenty_percent(self, tmp_path):
        manifest_path, *_ = make_micro_dataset(tmp_path, n_cases=60)
        train, val = ds.split(manifest_path, 0.2, seed=7)
        assert len(train) == 48 and len(val) == 12
        assert set(train).isdisjoint(val)
        assert sorted(train + val) == [f"case_{i:04d}" for i in range(60)]

    def test_deterministic(self, micro_dataset):
        a = ds.split(micro_dataset["manifest"], 0.25, seed=9)
        b = ds.split(micro_dataset["manifest"], 0.25, seed=9)
        assert a == b
        c = ds.split(micro_dataset["manifest"], 0.25, seed=10)
        assert a != c

    def test_minimum_sizes(self, tmp_path):
        manifest_path, *_ = make_micro_dataset(tmp_path, n_cases=2)
        train, val = ds.split(manifest_path, 0.2, seed=0)
        assert len(train) == 1 and len(val) == 1

    def test_bad_fraction(self, micro_dataset):
        for f in (0.0, 1.0, -0.3, 2.0):
            with pytest.raises(ValueError):
                ds.split(micro_dataset["manifest"], f, seed=0)


def test_fingerprint_tracks_content(tmp_path):
    m1, *_ = make_micro_dataset(tmp_path / "a")
    m2, *_ = make_micro_dataset(tmp_path / "b")
    assert ds.fingerprint(m1) == ds.fingerprint(m2)
    m3, *_ = make_micro_dataset(tmp_path / "c", seed=MICRO_SPEC["seed"] + 5)
    assert ds.fingerprint(m1) != ds.fingerprint(m3)
