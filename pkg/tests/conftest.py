import numpy as np
import pytest

from modkd import dataset as ds
from modkd.backbone import ModelConfig, init_params
from modkd.election import TeacherSet
from modkd.losses import LossConfig
from modkd.trainer import TrainConfig

# micro geometry shared by the fast tests: 2D, 16^2, 3 modalities, 2 tasks
MICRO_SPEC = dict(n_modalities=3, n_tasks=2, spatial_dims=2, side_length=16, n_cases=8, seed=11)
MICRO_PLAN = dict(teacher_of_task={1: 2, 2: 1}, signal_contrast=1.0,
                  distractor_contrast=0.2, noise_sigma=0.05)


def make_micro_dataset(root, **spec_overrides):
    spec = ds.DatasetSpec(**{**MICRO_SPEC, **spec_overrides})
    plan = ds.InformativenessPlan(**MICRO_PLAN)
    return ds.generate(spec, plan, root), spec, plan


def micro_model_config(**overrides):
    base = dict(spatial_dims=2, n_modalities=3, n_tasks=2, base_channels=2, depth=2, seed=5)
    base.update(overrides)
    return ModelConfig(**base)


def micro_train_config(**overrides):
    base = dict(iterations=30, batch_size=2, election_interval=10, seed=3,
                loss=LossConfig(alpha=0.1))
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro_data")
    manifest_path, spec, plan = make_micro_dataset(root)
    return {"manifest": manifest_path, "spec": spec, "plan": plan}


@pytest.fixture(scope="session")
def micro_params():
    return init_params(micro_model_config())


@pytest.fixture
def fixed_teachers():
    return TeacherSet(per_task=(2, 1), unique=(2, 1), mode="multi")


def random_bundle(rng, n_modalities, shape=(2, 4), depth=0, dtype=np.float64):
    """FeatureBundle with random filled bottleneck slots (and optional skips)."""
    from modkd.backbone import FeatureBundle
    from modkd import autodiff as ad

    def slot():
        return ad.Tensor(rng.standard_normal(shape).astype(dtype))

    return FeatureBundle(
        n_modalities=n_modalities,
        bottleneck=[slot() for _ in range(n_modalities)],
        skips=[[slot() for _ in range(n_modalities)] for _ in range(depth)],
    )
