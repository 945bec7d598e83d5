import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from structnet_ce.channel import ChannelConfig, generate
from structnet_ce.numerics import RngStream
from structnet_ce.phy import PilotScheme, SubframeConfig, build_subframe, transmit

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_link(K=16, snr_db=None, seed=0, scheme=PilotScheme.NON_ORTHOGONAL, order=4, speed_mps=None, **chan):
    """Channel, subframe and received grid for a small 2x2 link."""
    cc = ChannelConfig(num_subcarriers=K, **chan)
    if speed_mps is not None:
        cc = cc.with_(speed_mps=speed_mps)
    from structnet_ce.phy import ModulationScheme

    sc = SubframeConfig(num_subcarriers=K, pilot_scheme=scheme, modulation=ModulationScheme(order), nt=cc.nt)
    real = generate(cc, seed)
    sf = build_subframe(sc, RngStream(seed, 1), RngStream(seed, 2))
    rx = transmit(sf, real, snr_db, RngStream(seed, 3))
    return real, sf, rx


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[crit])
