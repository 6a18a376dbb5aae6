import pytest

from freqlock.control import LockConfig
from freqlock.detection import DetectionChannel
from freqlock.spectra import FilterSettings, convolve, find_set_point, lorentzian_from_coherence


@pytest.fixture(scope="session")
def qd1_curve():
    return convolve(FilterSettings().curve(), lorentzian_from_coherence(153))


@pytest.fixture(scope="session")
def qd1_arm(qd1_curve):
    """Lock channel, lock configuration and out-of-loop monitor for a 3600 cps set point."""
    sp = find_set_point(qd1_curve)
    r_qd = 3600.0 / sp.transmission
    channel = DetectionChannel(r_qd, qd1_curve)
    monitor = DetectionChannel(5000.0 / sp.transmission, qd1_curve)
    lock = LockConfig(3600.0, sp.nu, sp.slope * r_qd)
    return channel, lock, monitor

