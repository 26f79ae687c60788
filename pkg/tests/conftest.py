"""
Pytest fixtures for the histoad test suite.

Synthetic pools are generated once per session; most tests only read them.
"""

import numpy as np
import pytest

from histoad.config import PipelineConfig
from histoad.preprocessing.raster import raster_from_array
from histoad.synth.generator import SynthSpec, gen_features, write_pools


@pytest.fixture(scope="session")
def separable_spec():
    """D=8 pools with an anomaly shift of six standard deviations."""
    return SynthSpec(dim=8, n_normal=500, n_anomalous=200, n_near_oe=200, n_far_oe=200,
                     shift_norm=6.0, patches_per_slide=20, groups=("gastritis", "carcinoma"), seed=7)


@pytest.fixture(scope="session")
def separable_pools(separable_spec):
    return gen_features(separable_spec)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory, separable_pools):
    """Directory holding the separable pools as feature files plus manifest.csv."""
    out = tmp_path_factory.mktemp("synth")
    write_pools(separable_pools, out)
    return out


@pytest.fixture(scope="session")
def default_config():
    return PipelineConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pink_raster():
    """340x340 raster of saturated pink tissue."""
    pixels = np.empty((340, 340, 3), dtype=np.uint8)
    pixels[...] = (200, 80, 120)
    return raster_from_array("pink", pixels)
