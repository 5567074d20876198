import numpy as np
import pytest

from utils.dynamics import RotorSystem
from utils.fields import EnvelopeSpec, FieldWaveform
from utils.rotor import droplet_preset, gas_preset


@pytest.fixture
def droplet():
    return droplet_preset()


@pytest.fixture
def gas():
    return gas_preset()


@pytest.fixture
def small_system(droplet):
    return RotorSystem.build(droplet, 4)


@pytest.fixture
def short_pulse():
    """20 ps centrifuge pulse at the default intensity, rotating at 8.5 GHz."""
    return FieldWaveform(EnvelopeSpec(peak_intensity=2e12, fwhm=20.0), f0=8.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_state(rng):
    """Return a factory of normalized random complex vectors."""

    def make(size):
        vec = rng.normal(size=size) + 1j * rng.normal(size=size)
        return vec / np.linalg.norm(vec)

    return make
