import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import djscc.autodiff as ad
from djscc.rng import stream

settings.register_profile(
    "ci", deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def rng():
    return stream(1234, "tests")


@pytest.fixture
def f64():
    """Run the test body in float64 with per-op finite checks."""
    with ad.dtype_scope(np.float64):
        ad.set_finite_checks(True)
        try:
            yield
        finally:
            ad.set_finite_checks(False)


@pytest.fixture
def finite_checks():
    ad.set_finite_checks(True)
    try:
        yield
    finally:
        ad.set_finite_checks(False)


@pytest.fixture(scope="session")
def desk_stack(tmp_path_factory):
    """Full four-stage training run at the reference desk scale.

    Takes several minutes; only the end-to-end suite requests it.
    """
    import time

    from djscc import pipeline as pl
    from djscc.config import ExperimentConfig
    from djscc.dataset import generate_dataset, load_dataset

    t0 = time.monotonic()
    ws = tmp_path_factory.mktemp("desk")
    data = ws / "data"
    generate_dataset(data, 2000, size=32, seed=7, split="train")
    generate_dataset(data, 200, size=32, seed=7, split="test")
    cfg = ExperimentConfig(dataset_path=str(data), out_dir=str(ws / "run"))
    cfg.validate()
    losses = {
        "jscc": pl.train_jscc_stage(cfg),
        "latent": pl.train_latent_stage(cfg),
        "base": pl.pretrain_stage(cfg),
        "control": pl.control_stage(cfg),
    }
    elapsed = time.monotonic() - t0
    return cfg, losses, load_dataset(data / "test"), elapsed
