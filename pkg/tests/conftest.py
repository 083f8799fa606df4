import os
import sys

import pytest

# Modules live flat in backend/, as main.py serves them
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__)), 'backend'))

from params import DetectionParams, ModulationParams, ProbeParams  # noqa: E402


@pytest.fixture
def probe():
    """Reference probe: 0.2 mW at 740 nm, coherent"""
    return ProbeParams(power_avg=0.2e-3, wavelength=740e-9)


@pytest.fixture
def mod():
    return ModulationParams(delta_m=1e-4, omega_mod=1e7)


@pytest.fixture
def det():
    return DetectionParams(eta=1.0, load_r=50.0, rbw=1e4, m_avg=1.0, var_h=1e-5, var_n=0.0)
