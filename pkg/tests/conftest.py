import numpy as np
import pytest
import torch

from dsmtae.model import ModelConfig, Variant
from dsmtae.volume_data import PhantomConfig, generate_cohort

TINY_CHANNELS = (4, 8, 8, 16, 16)


def tiny_config(variant=Variant.DSMT_AE, side=16, **kw):
    params = dict(side=side, block_channels=TINY_CHANNELS, latent_dim=16, head_hidden=(8, 8), variant=variant)
    params.update(kw)
    return ModelConfig(**params).validate()


def small_phantom_config(side=16, seed=0):
    # geometry scaled down so the anatomy still fits a 16-voxel grid
    return PhantomConfig(side=side, base_cortex_thickness=2.2, cortex_thinning_rate=0.017,
                         ventricle_growth_rate=0.03, base_ventricle_radius=0.8, rng_seed=seed)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    yield


@pytest.fixture(scope="session")
def tiny_cohort():
    samples = generate_cohort(16, small_phantom_config(), seed=3)
    X = np.stack([s.voxels for s in samples]).astype(np.float32)
    age = np.array([s.age for s in samples])
    sex = np.array([s.sex for s in samples])
    return X, age, sex


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
