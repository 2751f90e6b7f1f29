"""Session fixtures for the desk-scale acceptance experiments.

The three trained models below back the learning criteria and are shared
across tests because each takes minutes of CPU. Everything is seeded, so a
rerun reproduces the same checkpoints bit for bit.
"""

import dataclasses
import time

import numpy as np
import pytest

from liediff.diffusion import TrainConfig, train
from liediff.lie_core import ParamMode
from liediff.symsol_synth import gen_orbit_dataset

# Training budgets established by calibration runs; the acceptance criteria
# allow up to 50k optimizer steps at batch 32 with fan-out 32 and L = 100.
SO3_TRAIN_STEPS = 20_000
SE3_TRAIN_STEPS = 20_000


@dataclasses.dataclass(frozen=True)
class TrainedModel:
    params: object
    config: TrainConfig
    shapes: tuple
    canonical: tuple
    train_seconds: float


def _train_model(mode, shapes, score_kind, total_steps, data_seed, train_seed):
    rng = np.random.default_rng(data_seed)
    samples, canonical = gen_orbit_dataset(shapes, 20_000, (-1.0, 1.0), rng,
                                           mode=mode)
    config = TrainConfig(mode=mode, n_shapes=len(shapes), score_kind=score_kind,
                         total_steps=total_steps, seed=train_seed)
    t0 = time.monotonic()
    params = train(config, samples)
    elapsed = time.monotonic() - t0
    return TrainedModel(params=params, config=config, shapes=tuple(shapes),
                        canonical=canonical, train_seconds=elapsed)


@pytest.fixture(scope="session")
def so3_symsol_model():
    """SO3 model conditioned on shape id over tet and cube orbits."""
    return _train_model(ParamMode.SO3, ("tet", "cube"), "surrogate",
                        SO3_TRAIN_STEPS, data_seed=101, train_seed=11)


@pytest.fixture(scope="session")
def se3_surrogate_model():
    """SE3 tet model trained on the surrogate target -z/sigma^2."""
    return _train_model(ParamMode.SE3, ("tet",), "surrogate",
                        SE3_TRAIN_STEPS, data_seed=102, train_seed=12)


@pytest.fixture(scope="session")
def se3_true_model():
    """SE3 tet model trained on the Jacobian-weighted true score.

    Identical to the surrogate model in data, seed, and budget; only the
    regression target differs.
    """
    return _train_model(ParamMode.SE3, ("tet",), "true",
                        SE3_TRAIN_STEPS, data_seed=102, train_seed=12)
