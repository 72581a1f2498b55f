import numpy as np
import pytest

from ncd_erp import dsp, ingest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_recording():
    cfg = ingest.SynthesisConfig(n_characters=2, n_channels=3, snr=2.0, rng_seed=11)
    return ingest.synthesize(cfg)


@pytest.fixture(scope="session")
def cz_segments():
    cfg = ingest.SynthesisConfig(n_characters=6, n_channels=1, snr=1.0, rng_seed=5, channel_names=("Cz",))
    rec = dsp.preprocess(ingest.synthesize(cfg))
    return dsp.extract_segments(rec, "Cz")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
