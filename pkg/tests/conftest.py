import numpy as np
import pytest

from roadstress import synthgen

# Corpus knobs shared by the end-to-end tests. The acceptance corpus uses
# four 112.5 s regime segments per driver (three regime switches), a 10 s
# label lag, and 48 px frames: large enough that per-class test partitions
# have a few hundred samples, small enough to train on a laptop CPU.
ACCEPT_SEED = 20260809
ACCEPT_SEGMENT_S = 112.5
ACCEPT_LAG_S = 10.0
ACCEPT_IMAGE_SIZE = 48
ACCEPT_FPS = 2.0

TOY_SEED = 7
TOY_SEGMENT_S = 30.0
TOY_LAG_S = 5.0
TOY_IMAGE_SIZE = 32


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Small 9-driver corpus for CLI and plumbing tests (3 x 30 s segments)."""
    out = tmp_path_factory.mktemp("toy_corpus")
    regimes = synthgen.default_regimes(lag_s=TOY_LAG_S)
    for i, driver in enumerate(synthgen.CANONICAL_DRIVERS):
        base = ("parking_z", "highway", "city")
        order = base[i % 3 :] + base[: i % 3]
        plan = synthgen.plan_session(
            driver,
            TOY_SEED,
            [(name, TOY_SEGMENT_S) for name in order],
            regimes,
            fps=ACCEPT_FPS,
            image_size=TOY_IMAGE_SIZE,
        )
        synthgen.generate_session(plan, out / driver)
    return out


@pytest.fixture(scope="session")
def accept_corpus(tmp_path_factory):
    """The full acceptance corpus; generated once per test session."""
    out = tmp_path_factory.mktemp("accept_corpus")
    synthgen.make_corpus(
        out,
        seed=ACCEPT_SEED,
        segment_s=ACCEPT_SEGMENT_S,
        fps=ACCEPT_FPS,
        image_size=ACCEPT_IMAGE_SIZE,
        lag_s=ACCEPT_LAG_S,
    )
    return out


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
